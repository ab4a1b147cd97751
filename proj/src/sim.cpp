#include "tdac/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <thread>

#include "tdac/rng.hpp"

namespace tdac::sim {

namespace {

// Gut compartment from first-order absorption of the doses in `active`,
// each a (dose time, amount in %) pair already known to be released.
double gut_content(double absorption_rate, const std::vector<std::pair<double, double>>& active,
                   double t) {
    double s = 0.0;
    for (const auto& [td, amount] : active)
        s += amount * std::exp(-absorption_rate * std::max(t - td, 0.0));
    return s;
}

double elimination(const MMParams& p, double c) { return p.vmax * c / (p.km + c); }

}  // namespace

void MMParams::validate(double horizon_T) const {
    if (!(absorption_rate > 0.0) || !(vmax > 0.0) || !(km > 0.0))
        throw std::invalid_argument("MMParams: rates must be positive");
    if (dose_amount < 0.0) throw std::invalid_argument("MMParams: dose amount must be >= 0");
    for (const double td : dose_times)
        if (!(td >= 0.0) || td > horizon_T)
            throw std::invalid_argument("MMParams: dose times must lie in [0, T]");
}

BracCurve mm_brac(const MMParams& params, double horizon_T, int grid) {
    if (!(horizon_T > 0.0)) throw std::invalid_argument("mm_brac: horizon must be positive");
    if (grid < 10) throw std::invalid_argument("mm_brac: grid must be >= 10");
    params.validate(horizon_T);

    // RK4 in half-steps: even indices are the segment endpoints, odd indices
    // the midpoints used as the piecewise-constant levels. A dose becomes
    // active for the first step whose start is within half a step of its dose
    // time, so the right-hand side stays smooth inside every step and grids
    // of different resolution activate doses at the same instant.
    const double h = horizon_T / grid / 2.0;
    std::vector<double> c(2 * grid + 1, 0.0);
    std::vector<std::pair<double, double>> active;
    std::size_t next_dose = 0;
    std::vector<double> doses = params.dose_times;
    std::sort(doses.begin(), doses.end());
    for (int i = 0; i < 2 * grid; ++i) {
        const double t = i * h;
        while (next_dose < doses.size() && doses[next_dose] <= t + 0.5 * h)
            active.emplace_back(doses[next_dose++], params.dose_amount * kBracPerStandardDrink);
        const double y = c[i];
        const auto rhs = [&](double tt, double yy) {
            return params.absorption_rate * gut_content(params.absorption_rate, active, tt) -
                   elimination(params, std::max(yy, 0.0));
        };
        const double k1 = rhs(t, y);
        const double k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1);
        const double k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2);
        const double k4 = rhs(t + h, y + h * k3);
        c[i + 1] = std::max(0.0, y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    }

    std::vector<double> levels(grid);
    for (int i = 0; i < grid; ++i) levels[i] = c[2 * i + 1];
    return BracCurve::from_uniform_grid(horizon_T, std::move(levels));
}

Session synthesize(const SystemTemplate& tpl, const ParamQ& q0, const BracCurve& mu, int m,
                   double sigma, std::uint64_t seed) {
    if (m < 1) throw std::invalid_argument("synthesize: m must be >= 1");
    if (!(sigma >= 0.0)) throw std::invalid_argument("synthesize: sigma must be >= 0");
    const double horizon = mu.horizon();
    std::vector<double> times(m);
    for (int j = 0; j < m; ++j) times[j] = horizon * static_cast<double>(j + 1) / m;

    const auto f = diffusion::tac_profile(diffusion::realize(tpl, q0), mu, times);
    RandomStream rng(seed);
    std::vector<double> y(m);
    for (int j = 0; j < m; ++j) y[j] = f[j] + (sigma > 0.0 ? sigma * rng.normal() : 0.0);
    return Session(horizon, std::move(times), std::move(y), mu);
}

double ks_pvalue_chisq2(std::vector<double> sample) {
    if (sample.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    std::sort(sample.begin(), sample.end());
    const auto n = static_cast<double>(sample.size());
    const auto cdf = [](double x) { return x <= 0.0 ? 0.0 : 1.0 - std::exp(-0.5 * x); };

    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double f = cdf(sample[i]);
        d = std::max(d, f - static_cast<double>(i) / n);
        d = std::max(d, static_cast<double>(i + 1) / n - f);
    }
    const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
    double p = 0.0;
    for (int j = 1; j <= 100; ++j) {
        const double term = 2.0 * std::exp(-2.0 * j * j * lambda * lambda);
        p += (j % 2 == 1) ? term : -term;
    }
    return std::clamp(p, 0.0, 1.0);
}

McReport monte_carlo(const SystemTemplate& tpl, const ParamQ& q0, const BracCurve& mu, int m,
                     double sigma, int replicates, std::uint64_t seed,
                     const McSettings& settings) {
    if (replicates < 2) throw std::invalid_argument("monte_carlo: need at least 2 replicates");

    McReport report;
    report.m = m;
    report.replicates = replicates;
    report.sigma = sigma;

    std::vector<std::uint64_t> seeds(replicates);
    for (int r = 0; r < replicates; ++r) seeds[r] = RandomStream::derive(seed, r);

    std::vector<std::optional<estim::FitResult>> fits(replicates);
    const auto run_one = [&](int r) {
        try {
            const Session session = synthesize(tpl, q0, mu, m, sigma, seeds[r]);
            estim::FitResult fr =
                estim::fit(tpl, {{session}}, settings.fit_init, settings.fit);
            if (fr.converged) fits[r] = std::move(fr);
        } catch (const std::exception&) {
            // recorded as a failure below
        }
    };

    int threads = settings.threads > 0
                      ? settings.threads
                      : static_cast<int>(std::thread::hardware_concurrency());
    threads = std::clamp(threads, 1, replicates);
    if (threads == 1) {
        for (int r = 0; r < replicates; ++r) run_one(r);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (int w = 0; w < threads; ++w)
            pool.emplace_back([&] {
                for (int r = next.fetch_add(1); r < replicates; r = next.fetch_add(1)) run_one(r);
            });
        for (std::thread& t : pool) t.join();
    }

    report.rows.resize(replicates);
    std::vector<Eigen::Vector2d> estimates;
    estimates.reserve(replicates);
    double sigma2_sum = 0.0;
    for (int r = 0; r < replicates; ++r) {
        ReplicateRow row;
        row.seed = seeds[r];
        if (fits[r]) {
            row.q1_hat = fits[r]->q_hat.q1;
            row.q2_hat = fits[r]->q_hat.q2;
            row.sigma2_hat = fits[r]->sigma2_hat;
            row.converged = true;
            estimates.emplace_back(row.q1_hat, row.q2_hat);
            sigma2_sum += row.sigma2_hat;
        } else {
            ++report.failures;
        }
        report.rows[r] = row;
    }
    if (report.failures > settings.abort_failure_fraction * replicates)
        throw McAbort("monte_carlo: more than " +
                      std::to_string(static_cast<int>(settings.abort_failure_fraction * 100)) +
                      "% of replicate fits failed (" + std::to_string(report.failures) + "/" +
                      std::to_string(replicates) + ")");

    const auto n_ok = static_cast<double>(estimates.size());
    for (const auto& e : estimates) report.mean_qhat += e;
    report.mean_qhat /= n_ok;
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const auto& e : estimates) {
        const Eigen::Vector2d d = e - report.mean_qhat;
        cov.noalias() += d * d.transpose();
    }
    cov /= (n_ok - 1.0);
    report.scaled_cov = m * cov;
    report.sd_qhat = cov.diagonal().cwiseSqrt();
    report.mean_sigma2_hat = sigma2_sum / n_ok;

    const Eigen::Matrix2d gamma = estim::gamma_limit(tpl, q0, mu, settings.gamma_nodes);
    report.theoretical_sigma = sigma * sigma * gamma.inverse();
    report.theoretical_sigma =
        0.5 * (report.theoretical_sigma + report.theoretical_sigma.transpose()).eval();

    if (sigma > 0.0) {
        const Eigen::Matrix2d precision = report.theoretical_sigma.inverse();
        std::vector<double> distances;
        distances.reserve(estimates.size());
        const Eigen::Vector2d q0v(q0.q1, q0.q2);
        for (const auto& e : estimates) {
            const Eigen::Vector2d d = e - q0v;
            distances.push_back(m * d.dot(precision * d));
        }
        report.mahalanobis_ks_pvalue = ks_pvalue_chisq2(std::move(distances));
    } else {
        report.mahalanobis_ks_pvalue = std::numeric_limits<double>::quiet_NaN();
    }
    return report;
}

SystemTemplate demo_template() {
    SystemTemplate tpl;
    tpl.k = 2;
    tpl.D = Mat::Identity(2, 2);
    tpl.E = Mat::Zero(2, 2);
    tpl.F = Vec::Zero(2);
    tpl.F(0) = 1.0;
    tpl.C = RowVec::Zero(2);
    tpl.C(0) = 1.0;
    return tpl;
}

}  // namespace tdac::sim
