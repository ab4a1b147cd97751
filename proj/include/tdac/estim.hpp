#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tdac/diffusion.hpp"

namespace tdac::estim {

using diffusion::BracCurve;
using diffusion::ParamQ;
using diffusion::SystemTemplate;

/// One drinking episode: TAC observation times/values plus the BrAC input
/// that drove them.
struct Session {
    double horizon_T = 0.0;
    std::vector<double> times;       // ascending, in [0, horizon_T]
    std::vector<double> tac_values;  // same length as times
    BracCurve brac;

    Session(double horizon, std::vector<double> t, std::vector<double> y, BracCurve mu);
    std::size_t size() const { return times.size(); }
};

struct Dataset {
    std::vector<Session> sessions;

    std::size_t total_observations() const;
    void validate() const;
};

/// Fit output: the estimate plus everything needed for asymptotic inference.
struct FitResult {
    ParamQ q_hat;
    double sigma2_hat = 0.0;
    Eigen::Matrix2d gamma_hat = Eigen::Matrix2d::Zero();
    Eigen::Matrix2d cov_qhat = Eigen::Matrix2d::Zero();
    double objective_value = 0.0;
    int iterations = 0;
    bool converged = false;
    double gradient_norm = 0.0;  // projected score norm at q_hat
    std::size_t observations = 0;
    double gamma_condition = 0.0;
    bool identifiable = false;
    bool at_bound = false;
};

struct FitSettings {
    double tol = 1e-8;  // on the projected score norm
    int max_iter = 200;
    double q1_min = 1e-8;
    double q2_min = 1e-8;
    bool multistart = true;
};

/// J_n(q) = (1/2M) sum of squared residuals against the model output.
double objective(const SystemTemplate& tpl, const Dataset& data, const ParamQ& q);

/// Score U_n(q) = dJ/dq = (1/M) sum (f_ij - y_ij) (d1 f_ij, d2 f_ij)^T.
Eigen::Vector2d score(const SystemTemplate& tpl, const Dataset& data, const ParamQ& q);

/// Damped Gauss-Newton (Levenberg-Marquardt) on the residual vector with the
/// analytic Jacobian, projected onto the box q1 >= q1_min, q2 >= q2_min.
/// Falls back to a deterministic 4-point log-grid multistart when the given
/// start fails to converge.
FitResult fit(const SystemTemplate& tpl, const Dataset& data, const ParamQ& init,
              const FitSettings& settings = {});

/// Empirical information matrix (1/M) sum_ij g_mu_i(t_ij) evaluated at q.
Eigen::Matrix2d gamma_n(const SystemTemplate& tpl, const Dataset& data, const ParamQ& q);

/// Sampling-measure limit of gamma_n for a single episode with (asymptotically)
/// uniform observation times: (1/T) int_0^T g_mu(u) du by composite midpoint
/// quadrature with panels aligned to the BrAC segments.
Eigen::Matrix2d gamma_limit(const SystemTemplate& tpl, const ParamQ& q, const BracCurve& mu,
                            int nodes);

/// Residual mean square (1/M) sum (y_ij - f_ij(q_hat))^2.
double sigma2_hat(const SystemTemplate& tpl, const Dataset& data, const ParamQ& q_hat);

/// Thrown when gamma_hat is numerically singular (e.g. a zero BrAC curve
/// carries no information about q).
struct IdentifiabilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// 0.95 quantile of the chi-square distribution with 2 degrees of freedom.
inline constexpr double kChi2Quantile95Dof2 = 5.991464547107979;

/// Asymptotic covariance of q_hat: sigma2_hat * gamma_hat^{-1} / M.
/// Requires cond(gamma_hat) <= 1e12.
Eigen::Matrix2d covariance(const FitResult& fit, std::size_t observations);

struct ConfidenceEllipse {
    Eigen::Vector2d center;
    Eigen::Matrix2d axes;   // unit-length principal directions, one per column
    Eigen::Vector2d radii;  // semi-axis lengths at the 95% level
    double level = 0.95;
    double chi2_quantile = kChi2Quantile95Dof2;

    bool contains(const Eigen::Vector2d& point) const;
};

ConfidenceEllipse confidence_ellipse(const Eigen::Vector2d& center, const Eigen::Matrix2d& cov);

/// A general estimating equation U_n(theta) = 0 in dimension p, with an
/// optional analytic Jacobian (finite differences otherwise) and the scale
/// a_n used to report Gamma_hat = a_n * U_n'(theta_hat).
struct EstimatingProblem {
    int dimension = 1;
    std::function<Vec(const Vec&)> score;
    std::function<Mat(const Vec&)> jacobian;  // empty -> central differences
    double a_n = 1.0;
};

struct RootResult {
    Vec theta;
    Mat gamma;
    int iterations = 0;
    bool converged = false;
    double score_norm = 0.0;
};

struct RootSettings {
    double tol = 1e-10;
    int max_iter = 100;
};

/// Newton iteration with backtracking line search on ||U_n||.
RootResult solve_estimating_equation(const EstimatingProblem& problem, const Vec& init,
                                     const RootSettings& settings = {});

/// Central-difference Jacobian of the problem's score.
Mat numeric_jacobian(const EstimatingProblem& problem, const Vec& theta);

}  // namespace tdac::estim
