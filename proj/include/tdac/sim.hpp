#pragma once

#include <cstdint>
#include <vector>

#include "tdac/estim.hpp"

namespace tdac::sim {

using diffusion::BracCurve;
using diffusion::ParamQ;
using diffusion::SystemTemplate;
using estim::FitSettings;
using estim::Session;

/// BrAC contribution of one standard drink once fully absorbed (% alcohol).
inline constexpr double kBracPerStandardDrink = 0.025;

/// Drinking diary plus Michaelis-Menten elimination kinetics.
/// Absorption is first-order from a gut compartment; elimination saturates:
/// dC/dt = ka*S(t) - vmax*C/(km + C).
struct MMParams {
    std::vector<double> dose_times = {0.1};  // hours
    double dose_amount = 3.0;                // standard drinks per dose
    double absorption_rate = 6.0;            // 1/h
    double vmax = 0.017;                     // %/h
    double km = 0.005;                       // %

    void validate(double horizon_T) const;
};

/// Integrates the kinetics by fixed-step RK4 on a uniform grid and returns
/// the piecewise-constant curve with each level taken at the segment
/// midpoint. grid must be >= 10.
BracCurve mm_brac(const MMParams& params, double horizon_T, int grid);

/// Equispaced noisy observations of the model output: times j*T/m and
/// y_j = f(t_j; q0, mu) + e_j with e_j iid N(0, sigma^2) from the seed.
Session synthesize(const SystemTemplate& tpl, const ParamQ& q0, const BracCurve& mu, int m,
                   double sigma, std::uint64_t seed);

struct ReplicateRow {
    std::uint64_t seed = 0;
    double q1_hat = 0.0;
    double q2_hat = 0.0;
    double sigma2_hat = 0.0;
    bool converged = false;
};

/// Aggregate of a Monte-Carlo study at one observation count m.
struct McReport {
    int m = 0;
    int replicates = 0;  // requested
    int failures = 0;    // excluded from the statistics below
    double sigma = 0.0;
    Eigen::Vector2d mean_qhat = Eigen::Vector2d::Zero();
    Eigen::Vector2d sd_qhat = Eigen::Vector2d::Zero();  // per-coordinate sample sd
    Eigen::Matrix2d scaled_cov = Eigen::Matrix2d::Zero();  // m * SampleCov(q_hat)
    Eigen::Matrix2d theoretical_sigma = Eigen::Matrix2d::Zero();  // sigma^2 Gamma^{-1}
    double mahalanobis_ks_pvalue = 0.0;  // NaN when sigma == 0
    double mean_sigma2_hat = 0.0;
    std::vector<ReplicateRow> rows;  // one per replicate, in replicate order
};

struct McSettings {
    FitSettings fit;
    ParamQ fit_init{1.0, 1.0};
    int gamma_nodes = 10000;
    double abort_failure_fraction = 0.2;
    int threads = 0;  // 0 -> hardware concurrency
};

/// Thrown when more than the allowed fraction of replicate fits fail.
struct McAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Runs `replicates` independent synthesize+fit cycles with seeds derived
/// from the master seed by counter, excluding failed fits from the
/// aggregates. Replicates may run in parallel; aggregation is ordered by
/// replicate index, so reports are schedule-independent.
McReport monte_carlo(const SystemTemplate& tpl, const ParamQ& q0, const BracCurve& mu, int m,
                     double sigma, int replicates, std::uint64_t seed,
                     const McSettings& settings = {});

/// Kolmogorov-Smirnov p-value of the sample against the chi-square(2)
/// distribution (asymptotic Kolmogorov tail with the Stephens correction).
double ks_pvalue_chisq2(std::vector<double> sample);

/// The two-state demo system used by the simulation studies:
/// D = I2, E = 0, C = (1, 0), F = (1, 0)^T.
SystemTemplate demo_template();

}  // namespace tdac::sim
