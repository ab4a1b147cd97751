#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "support/oracles.hpp"
#include "support/sine_problem.hpp"
#include "tdac/estim.hpp"
#include "tdac/rng.hpp"
#include "tdac/sim.hpp"

using namespace tdac;
using namespace tdac::estim;

namespace {

Dataset demo_dataset(int m, double sigma, std::uint64_t seed, const ParamQ& q0 = {1.0, 1.0}) {
    const auto tpl = sim::demo_template();
    const BracCurve mu = sim::mm_brac({}, 1.0, 600);
    return Dataset{{sim::synthesize(tpl, q0, mu, m, sigma, seed)}};
}

}  // namespace

TEST_CASE("session and dataset invariants are enforced") {
    const BracCurve mu = BracCurve::constant(1.0, 0.05);
    CHECK_THROWS_AS(Session(1.0, {0.5, 0.4}, {1.0, 2.0}, mu), std::invalid_argument);
    CHECK_THROWS_AS(Session(1.0, {0.5, 1.4}, {1.0, 2.0}, mu), std::invalid_argument);
    CHECK_THROWS_AS(Session(1.0, {0.5}, {1.0, 2.0}, mu), std::invalid_argument);

    Dataset empty;
    CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
    Dataset single{{Session(1.0, {0.5}, {1.0}, mu)}};
    CHECK_THROWS_AS(single.validate(), std::invalid_argument);  // M >= 2 overall
    Dataset ok{{Session(1.0, {0.5, 0.9}, {1.0, 2.0}, mu)}};
    ok.validate();
    CHECK(ok.total_observations() == 2);
}

TEST_CASE("objective vanishes on noise-free data at the true parameter") {
    const auto tpl = sim::demo_template();
    const Dataset data = demo_dataset(40, 0.0, 1);
    CHECK(objective(tpl, data, {1.0, 1.0}) <= 1e-26);
    CHECK(objective(tpl, data, {1.1, 1.0}) > 0.0);
    CHECK_THROWS_AS(objective(tpl, data, {1.0, -1.0}), std::domain_error);
}

TEST_CASE("objective is identically zero for zero input and zero output") {
    const auto tpl = sim::demo_template();
    const BracCurve zero = BracCurve::constant(1.0, 0.0);
    const Dataset data{{Session(1.0, {0.3, 0.6, 0.9}, {0.0, 0.0, 0.0}, zero)}};
    for (const double q1 : {0.2, 1.0, 4.0})
        CHECK(objective(tpl, data, {q1, 2.0}) == 0.0);
}

TEST_CASE("objective at the truth concentrates on sigma^2/2") {
    const auto tpl = sim::demo_template();
    const double sigma = 0.01;
    const int m = 50, replicates = 40;
    double total = 0.0;
    for (int r = 0; r < replicates; ++r)
        total += objective(tpl, demo_dataset(m, sigma, RandomStream::derive(99, r)), {1.0, 1.0});
    const double mean = total / replicates;
    // sd of J(q0) is sigma^2 / sqrt(2m)
    const double se = sigma * sigma / std::sqrt(2.0 * m * replicates);
    CHECK(std::abs(mean - 0.5 * sigma * sigma) <= 3.0 * se);
}

TEST_CASE("score vanishes on noise-free data and matches finite differences") {
    const auto tpl = sim::demo_template();
    const Dataset noise_free = demo_dataset(30, 0.0, 2);
    CHECK(score(tpl, noise_free, {1.0, 1.0}).norm() <= 1e-10);

    const Dataset data = demo_dataset(30, 0.01, 3);
    std::mt19937_64 rng(61);
    std::uniform_real_distribution<double> unif(0.4, 2.5);
    for (int trial = 0; trial < 20; ++trial) {
        const ParamQ q{unif(rng), unif(rng)};
        const Eigen::Vector2d s = score(tpl, data, q);
        Eigen::Vector2d fd;
        for (int c = 0; c < 2; ++c) {
            const double h = 1e-6 * (c == 0 ? q.q1 : q.q2);
            ParamQ hi = q, lo = q;
            (c == 0 ? hi.q1 : hi.q2) += h;
            (c == 0 ? lo.q1 : lo.q2) -= h;
            fd(c) = (objective(tpl, data, hi) - objective(tpl, data, lo)) / (2.0 * h);
        }
        CHECK((s - fd).norm() <= 1e-6 * fd.norm());
    }
}

TEST_CASE("fit recovers the truth exactly from noise-free data") {
    const auto tpl = sim::demo_template();
    const Dataset data = demo_dataset(60, 0.0, 4);
    const FitResult result = fit(tpl, data, {0.5, 2.0});
    CHECK(result.converged);
    CHECK(std::abs(result.q_hat.q1 - 1.0) < 1e-6);
    CHECK(std::abs(result.q_hat.q2 - 1.0) < 1e-6);
    CHECK(result.sigma2_hat <= 1e-14);
    CHECK(result.gradient_norm <= 1e-8);
    CHECK_THROWS_AS(fit(tpl, data, {1.0, -2.0}), std::domain_error);
}

TEST_CASE("converged fits satisfy the first-order condition") {
    const auto tpl = sim::demo_template();
    const Dataset data = demo_dataset(80, 0.01, 5);
    const FitResult result = fit(tpl, data, {1.0, 1.0});
    REQUIRE(result.converged);
    CHECK(score(tpl, data, result.q_hat).norm() <= 1e-8);
    CHECK(result.sigma2_hat == 2.0 * result.objective_value);
}

TEST_CASE("estimates are unbiased to within Monte-Carlo resolution") {
    const auto tpl = sim::demo_template();
    const BracCurve mu = sim::mm_brac({}, 1.0, 600);
    const int replicates = 30;
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    std::vector<Eigen::Vector2d> q_hats;
    for (int r = 0; r < replicates; ++r) {
        const auto session = sim::synthesize(tpl, {1.0, 1.0}, mu, 100, 0.01,
                                             RandomStream::derive(1234, r));
        const FitResult result = fit(tpl, Dataset{{session}}, {1.0, 1.0});
        REQUIRE(result.converged);
        q_hats.emplace_back(result.q_hat.q1, result.q_hat.q2);
        mean += q_hats.back();
    }
    mean /= replicates;
    Eigen::Vector2d var = Eigen::Vector2d::Zero();
    for (const auto& q : q_hats) var += (q - mean).cwiseAbs2();
    var /= (replicates - 1.0);
    const Eigen::Vector2d se = (var / replicates).cwiseSqrt();
    CHECK(std::abs(mean(0) - 1.0) <= 4.0 * se(0));
    CHECK(std::abs(mean(1) - 1.0) <= 4.0 * se(1));
}

TEST_CASE("scaling BrAC and TAC together leaves the estimate unchanged") {
    const auto tpl = sim::demo_template();
    const BracCurve mu = sim::mm_brac({}, 1.0, 600);
    const auto session = sim::synthesize(tpl, {1.0, 1.0}, mu, 60, 0.01, 77);

    const double c = 3.7;
    std::vector<double> scaled_levels = mu.levels();
    for (double& level : scaled_levels) level *= c;
    std::vector<double> scaled_y = session.tac_values;
    for (double& y : scaled_y) y *= c;
    const Session scaled(session.horizon_T, session.times, scaled_y,
                         BracCurve::from_uniform_grid(1.0, scaled_levels));

    // the score of the scaled problem is c^2 times the original, so the
    // stopping rule must scale along for the iterate paths to match
    FitSettings tight;
    tight.tol = 1e-12;
    FitSettings tight_scaled = tight;
    tight_scaled.tol = tight.tol * c * c;
    const FitResult base = fit(tpl, Dataset{{session}}, {1.0, 1.0}, tight);
    const FitResult same = fit(tpl, Dataset{{scaled}}, {1.0, 1.0}, tight_scaled);
    REQUIRE(base.converged);
    REQUIRE(same.converged);
    CHECK(std::abs(base.q_hat.q1 - same.q_hat.q1) <= 1e-8);
    CHECK(std::abs(base.q_hat.q2 - same.q_hat.q2) <= 1e-8);
}

TEST_CASE("gamma_n of a zero curve is zero and gamma_n is PSD") {
    const auto tpl = sim::demo_template();
    const BracCurve zero = BracCurve::constant(1.0, 0.0);
    const Dataset silent{{Session(1.0, {0.4, 0.9}, {0.0, 0.1}, zero)}};
    CHECK(gamma_n(tpl, silent, {1.0, 1.0}).norm() == 0.0);

    const Dataset data = demo_dataset(50, 0.01, 6);
    const Eigen::Matrix2d gamma = gamma_n(tpl, data, {1.0, 1.0});
    CHECK(gamma(0, 1) == gamma(1, 0));
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(gamma);
    CHECK(es.eigenvalues()(0) >= -1e-12);
}

TEST_CASE("dense equispaced gamma_n approaches the quadrature limit") {
    const auto tpl = sim::demo_template();
    const BracCurve mu = sim::mm_brac({}, 1.0, 600);
    const Dataset data{{sim::synthesize(tpl, {1.0, 1.0}, mu, 10000, 0.0, 7)}};
    const Eigen::Matrix2d empirical = gamma_n(tpl, data, {1.0, 1.0});
    const Eigen::Matrix2d limit = gamma_limit(tpl, {1.0, 1.0}, mu, 100000);
    CHECK((empirical - limit).norm() <= 0.01 * limit.norm());
}

TEST_CASE("asymptotic covariance has positive diagonal and negative off-diagonal") {
    const auto tpl = sim::demo_template();
    const BracCurve mu = sim::mm_brac({}, 1.0, 600);
    const Eigen::Matrix2d gamma = gamma_limit(tpl, {1.0, 1.0}, mu, 10000);
    const Eigen::Matrix2d sigma_matrix = 1e-4 * gamma.inverse();
    CHECK(sigma_matrix(0, 0) > 0.0);
    CHECK(sigma_matrix(1, 1) > 0.0);
    CHECK(sigma_matrix(0, 1) < 0.0);
    CHECK(std::abs(sigma_matrix(0, 1) - sigma_matrix(1, 0)) <=
          1e-12 * std::abs(sigma_matrix(0, 1)));
}

TEST_CASE("sigma2_hat matches its definition") {
    const auto tpl = sim::demo_template();
    const Dataset noise_free = demo_dataset(25, 0.0, 8);
    CHECK(sigma2_hat(tpl, noise_free, {1.0, 1.0}) <= 1e-26);

    const Dataset data = demo_dataset(25, 0.01, 9);
    const FitResult result = fit(tpl, data, {1.0, 1.0});
    CHECK(oracles::rel_err(sigma2_hat(tpl, data, result.q_hat), 2.0 * result.objective_value) <
          1e-12);
}

TEST_CASE("covariance scales like 1/M and keeps the identity case") {
    FitResult fake;
    fake.gamma_hat = Eigen::Matrix2d::Identity();
    fake.sigma2_hat = 1.0;
    CHECK((covariance(fake, 1) - Eigen::Matrix2d::Identity()).norm() == 0.0);
    CHECK((covariance(fake, 2) - 0.5 * Eigen::Matrix2d::Identity()).norm() == 0.0);

    fake.gamma_hat = Eigen::Matrix2d::Zero();
    CHECK_THROWS_AS(covariance(fake, 1), IdentifiabilityError);
}

TEST_CASE("zero BrAC with nonzero TAC is flagged as unidentifiable") {
    const auto tpl = sim::demo_template();
    const BracCurve zero = BracCurve::constant(1.0, 0.0);
    const Dataset data{{Session(1.0, {0.25, 0.5, 0.75}, {0.5, 0.4, 0.6}, zero)}};
    const FitResult result = fit(tpl, data, {1.0, 1.0});
    CHECK(!result.identifiable);
    CHECK_THROWS_AS(covariance(result, data.total_observations()), IdentifiabilityError);
}

TEST_CASE("appending an informative session never shrinks the information") {
    const auto tpl = sim::demo_template();
    const BracCurve mu = sim::mm_brac({}, 1.0, 600);
    const auto a = sim::synthesize(tpl, {1.0, 1.0}, mu, 20, 0.01, 10);
    const auto b = sim::synthesize(tpl, {1.0, 1.0}, mu, 15, 0.01, 11);
    const Dataset one{{a}};
    const Dataset two{{a, b}};
    const ParamQ q{1.0, 1.0};
    const auto info = [&](const Dataset& d) {
        return (static_cast<double>(d.total_observations()) * gamma_n(tpl, d, q)).eval();
    };
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> before(info(one));
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> after(info(two));
    CHECK(after.eigenvalues()(0) >= before.eigenvalues()(0) - 1e-12);
}

TEST_CASE("confidence ellipse geometry") {
    Eigen::Matrix2d cov;
    cov << 4.0, 0.0, 0.0, 1.0;
    const auto ellipse = confidence_ellipse({0.0, 0.0}, cov);
    // semi-axes sqrt(lambda * chi2): 2*sqrt(5.9915) and sqrt(5.9915)
    CHECK(oracles::rel_err(ellipse.radii.maxCoeff(), 2.0 * std::sqrt(kChi2Quantile95Dof2)) <
          1e-12);
    CHECK(ellipse.contains({2.0, 1.0}));
    CHECK(!ellipse.contains({5.0, 0.0}));
}

TEST_CASE("linear estimating equation solves in one Newton step") {
    EstimatingProblem problem;
    problem.dimension = 2;
    problem.a_n = 1.0;
    const Vec target = (Vec(2) << 2.5, -1.0).finished();
    problem.score = [target](const Vec& theta) { return (theta - target).eval(); };
    problem.jacobian = [](const Vec&) { return Mat::Identity(2, 2).eval(); };
    const RootResult result = solve_estimating_equation(problem, Vec::Zero(2));
    CHECK(result.converged);
    CHECK(result.iterations == 1);
    CHECK((result.theta - target).norm() <= 1e-12);
    CHECK((result.gamma - Mat::Identity(2, 2)).norm() <= 1e-6);
}

TEST_CASE("analytic and finite-difference jacobians agree on probe points") {
    RandomStream rng(15);
    std::vector<double> xs(200), ys(200);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        xs[i] = 3.0 * rng.uniform();
        ys[i] = std::sin(xs[i]) + 0.1 * rng.normal();
    }
    const auto problem = sine_problem::make(xs, ys);
    for (const double theta : {0.8, 1.0, 1.3}) {
        const Vec t = (Vec(1) << theta).finished();
        const Mat analytic = problem.jacobian(t);
        const Mat fd = numeric_jacobian(problem, t);
        CHECK(oracles::rel_err(fd(0, 0), analytic(0, 0)) < 1e-4);
    }
}

TEST_CASE("sine model: root recovery and variance in the asymptotic regime") {
    const double theta0 = 1.0, sigma = 0.1, b = 3.0;
    const int n = 400, replicates = 60;
    const double gamma = sine_problem::analytic_gamma(b);

    double mean = 0.0, var = 0.0;
    std::vector<double> roots(replicates);
    for (int r = 0; r < replicates; ++r) {
        RandomStream rng(RandomStream::derive(31337, r));
        std::vector<double> xs(n), ys(n);
        for (int i = 0; i < n; ++i) {
            xs[i] = b * rng.uniform();
            ys[i] = std::sin(theta0 * xs[i]) + sigma * rng.normal();
        }
        const auto problem = sine_problem::make(std::move(xs), std::move(ys));
        const RootResult result =
            solve_estimating_equation(problem, (Vec(1) << 0.9).finished());
        REQUIRE(result.converged);
        roots[r] = result.theta(0);
        mean += roots[r];
    }
    mean /= replicates;
    for (const double root : roots) var += (root - mean) * (root - mean);
    var /= (replicates - 1.0);

    CHECK(std::abs(mean - theta0) <= 4.0 * std::sqrt(var / replicates));
    // Var(sqrt(n)(theta_hat - theta0)) ~ sigma^2 / gamma, checked loosely here
    // (the acceptance suite runs the full-size study).
    CHECK(oracles::rel_err(n * var, sigma * sigma / gamma) < 0.5);
}

TEST_CASE("the generic solver agrees with the least-squares fit") {
    const auto tpl = sim::demo_template();
    const Dataset data = demo_dataset(50, 0.0, 12);
    FitSettings precise;
    precise.tol = 1e-13;
    const FitResult direct = fit(tpl, data, {0.7, 1.6}, precise);

    EstimatingProblem problem;
    problem.dimension = 2;
    problem.a_n = 1.0;
    problem.score = [&](const Vec& theta) {
        return score(tpl, data, {theta(0), theta(1)}).eval();
    };
    // Newton needs a start inside the right basin (the score has spurious
    // stationary points at unphysical negative diffusivities) and a tight
    // tolerance: the information matrix has a ~3e-6 eigenvalue, so ||U||
    // only pins q down to about 3e5 times the score norm.
    RootSettings tight;
    tight.tol = 1e-13;
    const RootResult root =
        solve_estimating_equation(problem, (Vec(2) << 0.9, 1.2).finished(), tight);
    REQUIRE(root.converged);
    CHECK(std::abs(root.theta(0) - direct.q_hat.q1) <= 1e-6);
    CHECK(std::abs(root.theta(1) - direct.q_hat.q2) <= 1e-6);
}
