#include "tdac/estim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tdac::estim {

namespace {

using diffusion::TacGradient;

struct ResidualSystem {
    Vec residuals;          // f_ij(q) - y_ij, stacked over sessions
    Eigen::MatrixX2d jac;   // rows (d1 f_ij, d2 f_ij)
};

ResidualSystem residual_system(const SystemTemplate& tpl, const Dataset& data, const ParamQ& q) {
    const std::size_t m = data.total_observations();
    ResidualSystem rs;
    rs.residuals.resize(m);
    rs.jac.resize(m, 2);
    std::size_t row = 0;
    for (const Session& session : data.sessions) {
        const auto grads = diffusion::tac_grad_profile(tpl, q, session.brac, session.times);
        for (std::size_t j = 0; j < grads.size(); ++j, ++row) {
            rs.residuals(row) = grads[j].f - session.tac_values[j];
            rs.jac(row, 0) = grads[j].df_dq1;
            rs.jac(row, 1) = grads[j].df_dq2;
        }
    }
    return rs;
}

double sum_squared_residuals(const SystemTemplate& tpl, const Dataset& data, const ParamQ& q) {
    double ss = 0.0;
    for (const Session& session : data.sessions) {
        const auto f = diffusion::tac_profile(diffusion::realize(tpl, q), session.brac, session.times);
        for (std::size_t j = 0; j < f.size(); ++j) {
            const double r = f[j] - session.tac_values[j];
            ss += r * r;
        }
    }
    return ss;
}

Eigen::Vector2d project(const Eigen::Vector2d& q, const FitSettings& s) {
    return {std::max(q(0), s.q1_min), std::max(q(1), s.q2_min)};
}

// Gradient with bound-blocked components removed; zero iff q satisfies the
// first-order conditions of the box-constrained problem.
Eigen::Vector2d projected_gradient(const Eigen::Vector2d& q, const Eigen::Vector2d& grad,
                                   const FitSettings& s) {
    Eigen::Vector2d pg = grad;
    if (q(0) <= s.q1_min && pg(0) > 0.0) pg(0) = 0.0;
    if (q(1) <= s.q2_min && pg(1) > 0.0) pg(1) = 0.0;
    return pg;
}

FitResult fit_single_start(const SystemTemplate& tpl, const Dataset& data, const ParamQ& init,
                           const FitSettings& settings) {
    const std::size_t m = data.total_observations();
    const double inv_m = 1.0 / static_cast<double>(m);

    FitResult result;
    result.observations = m;

    Eigen::Vector2d q = project({init.q1, init.q2}, settings);
    ResidualSystem rs = residual_system(tpl, data, {q(0), q(1)});
    double ss = rs.residuals.squaredNorm();

    double lambda = 1e-3;
    int iter = 0;
    for (; iter < settings.max_iter; ++iter) {
        const Eigen::Vector2d grad = rs.jac.transpose() * rs.residuals;  // M * score
        const Eigen::Vector2d pg = projected_gradient(q, grad, settings) * inv_m;
        result.gradient_norm = pg.norm();
        if (result.gradient_norm <= settings.tol) {
            result.converged = true;
            break;
        }

        const Eigen::Matrix2d jtj = rs.jac.transpose() * rs.jac;
        Eigen::Vector2d diag = jtj.diagonal();
        const double diag_floor = 1e-12 * (1.0 + jtj.trace());
        diag = diag.cwiseMax(diag_floor);

        bool accepted = false;
        for (int attempt = 0; attempt < 25; ++attempt) {
            Eigen::Matrix2d lhs = jtj;
            lhs(0, 0) += lambda * diag(0);
            lhs(1, 1) += lambda * diag(1);
            const Eigen::Vector2d delta = lhs.ldlt().solve(-grad);
            const Eigen::Vector2d trial = project(q + delta, settings);
            if ((trial - q).norm() <= 1e-15 * (1.0 + q.norm())) break;  // step stalled

            const double trial_ss = sum_squared_residuals(tpl, data, {trial(0), trial(1)});
            if (trial_ss < ss) {
                q = trial;
                ss = trial_ss;
                lambda = std::max(lambda / 3.0, 1e-12);
                accepted = true;
                break;
            }
            lambda *= 4.0;
        }
        if (!accepted) break;  // trust region collapsed; pg is reported as-is
        rs = residual_system(tpl, data, {q(0), q(1)});
        ss = rs.residuals.squaredNorm();
    }
    if (!result.converged) {
        const Eigen::Vector2d grad = rs.jac.transpose() * rs.residuals;
        result.gradient_norm = (projected_gradient(q, grad, settings) * inv_m).norm();
        result.converged = result.gradient_norm <= settings.tol;
    }

    result.q_hat = {q(0), q(1)};
    result.iterations = iter;
    result.objective_value = 0.5 * ss * inv_m;
    result.at_bound = q(0) <= settings.q1_min || q(1) <= settings.q2_min;
    return result;
}

void finish_inference(const SystemTemplate& tpl, const Dataset& data, FitResult& result) {
    result.sigma2_hat = 2.0 * result.objective_value;
    result.gamma_hat = gamma_n(tpl, data, result.q_hat);

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(result.gamma_hat);
    const double lo = es.eigenvalues()(0);
    const double hi = es.eigenvalues()(1);
    result.gamma_condition =
        (lo > 0.0) ? hi / lo : std::numeric_limits<double>::infinity();
    result.identifiable = result.gamma_condition <= 1e12;
    if (result.identifiable) {
        result.cov_qhat = result.sigma2_hat * result.gamma_hat.inverse() /
                          static_cast<double>(result.observations);
        result.cov_qhat = 0.5 * (result.cov_qhat + result.cov_qhat.transpose()).eval();
    } else {
        result.cov_qhat.setConstant(std::numeric_limits<double>::quiet_NaN());
    }
}

}  // namespace

Session::Session(double horizon, std::vector<double> t, std::vector<double> y, BracCurve mu)
    : horizon_T(horizon), times(std::move(t)), tac_values(std::move(y)), brac(std::move(mu)) {
    if (!(horizon_T > 0.0)) throw std::invalid_argument("Session: horizon must be positive");
    if (times.empty() || times.size() != tac_values.size())
        throw std::invalid_argument("Session: need equally many times and TAC values (>= 1)");
    for (std::size_t j = 0; j < times.size(); ++j) {
        if (!(times[j] >= 0.0) || times[j] > horizon_T)
            throw std::invalid_argument("Session: observation times must lie in [0, T]");
        if (j > 0 && times[j] < times[j - 1])
            throw std::invalid_argument("Session: observation times must be ascending");
        if (!std::isfinite(tac_values[j]))
            throw std::invalid_argument("Session: TAC values must be finite");
    }
    if (brac.horizon() < horizon_T)
        throw std::invalid_argument("Session: BrAC curve must cover the session horizon");
}

std::size_t Dataset::total_observations() const {
    std::size_t m = 0;
    for (const Session& s : sessions) m += s.size();
    return m;
}

void Dataset::validate() const {
    if (sessions.empty()) throw std::invalid_argument("Dataset: needs at least one session");
    if (total_observations() < 2)
        throw std::invalid_argument("Dataset: needs at least two observations in total");
}

double objective(const SystemTemplate& tpl, const Dataset& data, const ParamQ& q) {
    data.validate();
    if (!q.in_domain()) throw std::domain_error("objective: q outside admissible set");
    return 0.5 * sum_squared_residuals(tpl, data, q) /
           static_cast<double>(data.total_observations());
}

Eigen::Vector2d score(const SystemTemplate& tpl, const Dataset& data, const ParamQ& q) {
    data.validate();
    if (!q.in_domain()) throw std::domain_error("score: q outside admissible set");
    const ResidualSystem rs = residual_system(tpl, data, q);
    return rs.jac.transpose() * rs.residuals / static_cast<double>(data.total_observations());
}

FitResult fit(const SystemTemplate& tpl, const Dataset& data, const ParamQ& init,
              const FitSettings& settings) {
    data.validate();
    if (!init.in_domain()) throw std::domain_error("fit: init outside admissible set");

    FitResult best = fit_single_start(tpl, data, init, settings);
    if (!best.converged && settings.multistart) {
        for (const double q1 : {0.1, 10.0}) {
            for (const double q2 : {0.1, 10.0}) {
                const FitResult alt = fit_single_start(tpl, data, {q1, q2}, settings);
                const bool better =
                    (alt.converged && !best.converged) ||
                    (alt.converged == best.converged &&
                     (alt.objective_value < best.objective_value ||
                      (alt.objective_value == best.objective_value &&
                       std::hypot(alt.q_hat.q1, alt.q_hat.q2) <
                           std::hypot(best.q_hat.q1, best.q_hat.q2))));
                if (better) best = alt;
            }
        }
    }
    finish_inference(tpl, data, best);
    return best;
}

Eigen::Matrix2d gamma_n(const SystemTemplate& tpl, const Dataset& data, const ParamQ& q) {
    data.validate();
    if (!q.in_domain()) throw std::domain_error("gamma_n: q outside admissible set");
    Eigen::Matrix2d total = Eigen::Matrix2d::Zero();
    for (const Session& session : data.sessions) {
        const auto grads = diffusion::tac_grad_profile(tpl, q, session.brac, session.times);
        for (const TacGradient& g : grads) {
            const Eigen::Vector2d v(g.df_dq1, g.f / q.q2);
            total.noalias() += v * v.transpose();
        }
    }
    return total / static_cast<double>(data.total_observations());
}

Eigen::Matrix2d gamma_limit(const SystemTemplate& tpl, const ParamQ& q, const BracCurve& mu,
                            int nodes) {
    if (nodes < 1) throw std::invalid_argument("gamma_limit: need at least one node");
    const double horizon = mu.horizon();

    // Midpoint panels distributed over the BrAC segments so that the kinks of
    // g at the segment boundaries never fall inside a panel.
    std::vector<double> midpoints;
    std::vector<double> weights;
    midpoints.reserve(nodes + mu.segments());
    weights.reserve(nodes + mu.segments());
    for (std::size_t seg = 0; seg < mu.segments(); ++seg) {
        const double a = mu.breakpoints()[seg];
        const double b = mu.segment_end(seg);
        const double len = b - a;
        const int local = std::max(1, static_cast<int>(std::lround(nodes * len / horizon)));
        const double h = len / local;
        for (int j = 0; j < local; ++j) {
            midpoints.push_back(a + (j + 0.5) * h);
            weights.push_back(h);
        }
    }
    const auto grads = diffusion::tac_grad_profile(tpl, q, mu, midpoints);
    Eigen::Matrix2d total = Eigen::Matrix2d::Zero();
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const Eigen::Vector2d v(grads[i].df_dq1, grads[i].f / q.q2);
        total.noalias() += weights[i] * (v * v.transpose());
    }
    return total / horizon;
}

double sigma2_hat(const SystemTemplate& tpl, const Dataset& data, const ParamQ& q_hat) {
    data.validate();
    if (!q_hat.in_domain()) throw std::domain_error("sigma2_hat: q outside admissible set");
    return sum_squared_residuals(tpl, data, q_hat) / static_cast<double>(data.total_observations());
}

Eigen::Matrix2d covariance(const FitResult& fit, std::size_t observations) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(fit.gamma_hat);
    const double lo = es.eigenvalues()(0);
    const double hi = es.eigenvalues()(1);
    if (!(lo > 0.0) || hi / lo > 1e12)
        throw IdentifiabilityError(
            "covariance: gamma_hat is numerically singular; the BrAC curve carries no "
            "information about q (is it identically zero?)");
    Eigen::Matrix2d cov =
        fit.sigma2_hat * fit.gamma_hat.inverse() / static_cast<double>(observations);
    return 0.5 * (cov + cov.transpose()).eval();
}

bool ConfidenceEllipse::contains(const Eigen::Vector2d& point) const {
    const Eigen::Vector2d d = axes.transpose() * (point - center);
    const double r0 = d(0) / radii(0);
    const double r1 = d(1) / radii(1);
    return r0 * r0 + r1 * r1 <= 1.0;
}

ConfidenceEllipse confidence_ellipse(const Eigen::Vector2d& center, const Eigen::Matrix2d& cov) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    if (!(es.eigenvalues()(0) > 0.0))
        throw IdentifiabilityError("confidence_ellipse: covariance is not positive definite");
    ConfidenceEllipse e;
    e.center = center;
    e.axes = es.eigenvectors();
    e.radii = (es.eigenvalues() * kChi2Quantile95Dof2).cwiseSqrt();
    return e;
}

Mat numeric_jacobian(const EstimatingProblem& problem, const Vec& theta) {
    const int p = problem.dimension;
    Mat jac(p, p);
    for (int j = 0; j < p; ++j) {
        const double h = 1e-6 * (1.0 + std::abs(theta(j)));
        Vec hi = theta, lo = theta;
        hi(j) += h;
        lo(j) -= h;
        jac.col(j) = (problem.score(hi) - problem.score(lo)) / (2.0 * h);
    }
    return jac;
}

RootResult solve_estimating_equation(const EstimatingProblem& problem, const Vec& init,
                                     const RootSettings& settings) {
    if (init.size() != problem.dimension)
        throw std::invalid_argument("solve_estimating_equation: init has wrong dimension");
    const auto jacobian = [&](const Vec& theta) {
        return problem.jacobian ? problem.jacobian(theta) : numeric_jacobian(problem, theta);
    };

    RootResult result;
    result.theta = init;
    Vec u = problem.score(result.theta);
    result.score_norm = u.norm();

    for (; result.iterations < settings.max_iter && result.score_norm > settings.tol;
         ++result.iterations) {
        const Mat jac = jacobian(result.theta);
        Eigen::FullPivLU<Mat> lu(jac);
        if (!lu.isInvertible())
            throw std::runtime_error("solve_estimating_equation: singular Jacobian at iterate");
        const Vec delta = lu.solve(-u);

        // Backtracking on ||U|| keeps Newton from overshooting. Trial points
        // outside the score's domain count as rejected.
        double step = 1.0;
        bool improved = false;
        for (int half = 0; half < 40; ++half, step *= 0.5) {
            const Vec trial = result.theta + step * delta;
            Vec u_trial;
            try {
                u_trial = problem.score(trial);
            } catch (const std::domain_error&) {
                continue;
            }
            if (u_trial.allFinite() && u_trial.norm() < result.score_norm) {
                result.theta = trial;
                u = u_trial;
                result.score_norm = u.norm();
                improved = true;
                break;
            }
        }
        if (!improved) break;
    }
    result.converged = result.score_norm <= settings.tol;
    result.gamma = problem.a_n * jacobian(result.theta);
    return result;
}

}  // namespace tdac::estim
