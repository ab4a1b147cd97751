#include "tdac/diffusion.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>

namespace tdac::diffusion {

namespace {

// Zero-order-hold stepper for x' = Mx + c*level with the step exponentials
// memoized per interval length. BrAC grids are uniform, so a whole sweep
// touches only a handful of distinct dt values.
class HoldStepper {
  public:
    HoldStepper(Mat m, Vec c) : m_(std::move(m)), c_(std::move(c)) {}

    void advance(Vec& x, double dt, double level) {
        if (dt == 0.0) return;
        const auto& [phi, psi] = step(dt);
        tmp_.noalias() = phi * x;
        tmp_.noalias() += psi * level;
        x.swap(tmp_);
    }

  private:
    const std::pair<Mat, Vec>& step(double dt) {
        const auto key = std::bit_cast<std::uint64_t>(dt);
        auto it = cache_.find(key);
        if (it == cache_.end()) it = cache_.emplace(key, matexp::conv_step(m_, c_, dt)).first;
        return it->second;
    }

    Mat m_;
    Vec c_;
    Vec tmp_;
    std::unordered_map<std::uint64_t, std::pair<Mat, Vec>> cache_;
};

// Walks the constant-level segments of mu once, calling observe(i) with the
// state advanced exactly to times[i]. times must be ascending within [0, T].
template <typename Observe>
void sweep(const BracCurve& mu, const std::vector<double>& times, HoldStepper& stepper, Vec& x,
           Observe&& observe) {
    const double horizon = mu.horizon();
    std::size_t seg = 0;
    double t_cur = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double target = times[i];
        if (!(target >= 0.0) || target > horizon)
            throw std::domain_error("tac: query time outside [0, T]");
        if (target < t_cur) throw std::invalid_argument("tac: query times must be ascending");
        while (t_cur < target) {
            while (seg + 1 < mu.segments() && t_cur >= mu.segment_end(seg)) ++seg;
            const double stop = std::min(target, mu.segment_end(seg));
            stepper.advance(x, stop - t_cur, mu.levels()[seg]);
            t_cur = stop;
        }
        observe(i);
    }
}

}  // namespace

bool ParamQ::in_domain() const {
    return std::isfinite(q1) && std::isfinite(q2) && q2 > 0.0;
}

void SystemTemplate::validate() const {
    if (k < 1) throw std::invalid_argument("SystemTemplate: k must be positive");
    if (D.rows() != k || D.cols() != k || E.rows() != k || E.cols() != k || F.rows() != k ||
        C.cols() != k)
        throw std::invalid_argument("SystemTemplate: inconsistent matrix dimensions");
    if (!D.allFinite() || !E.allFinite() || !F.allFinite() || !C.allFinite())
        throw std::domain_error("SystemTemplate: non-finite entries");
}

BracCurve::BracCurve(double horizon_T, std::vector<double> breakpoints, std::vector<double> levels)
    : horizon_T_(horizon_T), breakpoints_(std::move(breakpoints)), levels_(std::move(levels)) {
    if (!(horizon_T_ > 0.0)) throw std::invalid_argument("BracCurve: horizon must be positive");
    if (breakpoints_.empty() || breakpoints_.front() != 0.0)
        throw std::invalid_argument("BracCurve: breakpoints must start at 0");
    if (breakpoints_.size() != levels_.size())
        throw std::invalid_argument("BracCurve: one level per breakpoint required");
    for (std::size_t i = 0; i < breakpoints_.size(); ++i) {
        if (i > 0 && !(breakpoints_[i] > breakpoints_[i - 1]))
            throw std::invalid_argument("BracCurve: breakpoints must be strictly ascending");
        if (breakpoints_[i] > horizon_T_)
            throw std::invalid_argument("BracCurve: breakpoints must lie in [0, T]");
        if (!std::isfinite(levels_[i]) || levels_[i] < 0.0)
            throw std::invalid_argument("BracCurve: levels must be finite and >= 0");
    }
}

BracCurve BracCurve::constant(double horizon_T, double level) {
    return BracCurve(horizon_T, {0.0}, {level});
}

BracCurve BracCurve::from_uniform_grid(double horizon_T, std::vector<double> levels) {
    std::vector<double> breaks(levels.size());
    for (std::size_t i = 0; i < levels.size(); ++i)
        breaks[i] = horizon_T * static_cast<double>(i) / static_cast<double>(levels.size());
    return BracCurve(horizon_T, std::move(breaks), std::move(levels));
}

double BracCurve::segment_end(std::size_t i) const {
    return i + 1 < breakpoints_.size() ? breakpoints_[i + 1] : horizon_T_;
}

double BracCurve::level_at(double s) const {
    if (s < 0.0 || s > horizon_T_) throw std::domain_error("BracCurve: time outside [0, T]");
    auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), s);
    const auto idx = static_cast<std::size_t>(it - breakpoints_.begin());
    return levels_[idx == 0 ? 0 : idx - 1];
}

SystemTemplate discretize_pde(int k) {
    if (k < 2) throw std::invalid_argument("discretize_pde: k must be >= 2");
    const double h = 1.0 / (k + 1);
    const double s2 = (k + 1.0) * (k + 1.0);

    SystemTemplate tpl;
    tpl.k = k;
    tpl.D = Mat::Zero(k, k);
    for (int i = 1; i + 1 < k; ++i) {
        tpl.D(i, i - 1) = s2;
        tpl.D(i, i) = -2.0 * s2;
        tpl.D(i, i + 1) = s2;
    }
    // Boundary rows after eliminating the boundary values through the flux
    // conditions: the q1-carrying parts stay in D, the rest moves to E and F.
    tpl.D(0, 0) = -s2;
    tpl.D(0, 1) = s2;
    tpl.D(k - 1, k - 2) = s2;
    tpl.D(k - 1, k - 1) = -s2;

    tpl.E = Mat::Zero(k, k);
    tpl.E(0, 0) = -1.0 / h;  // evaporation through the skin surface

    tpl.F = Vec::Zero(k);
    tpl.F(k - 1) = 1.0 / h;  // blood-side input flux

    tpl.C = RowVec::Zero(k);
    tpl.C(0) = 1.0;  // sensor reads the node nearest the skin
    return tpl;
}

SystemRealization realize(const SystemTemplate& tpl, const ParamQ& q) {
    tpl.validate();
    if (!q.in_domain()) throw std::domain_error("realize: q outside admissible set (q2 must be > 0)");
    SystemRealization sys;
    sys.A = q.q1 * tpl.D + tpl.E;
    sys.B = q.q2 * tpl.F;
    sys.C = tpl.C;
    sys.q = q;
    return sys;
}

std::vector<double> tac_profile(const SystemRealization& sys, const BracCurve& mu,
                                const std::vector<double>& times) {
    HoldStepper stepper(sys.A, sys.B);
    Vec x = Vec::Zero(sys.A.rows());
    std::vector<double> out(times.size());
    sweep(mu, times, stepper, x, [&](std::size_t i) { out[i] = sys.C * x; });
    return out;
}

double tac(const SystemRealization& sys, const BracCurve& mu, double t) {
    return tac_profile(sys, mu, {t}).front();
}

std::vector<TacGradient> tac_grad_profile(const SystemTemplate& tpl, const ParamQ& q,
                                          const BracCurve& mu, const std::vector<double>& times) {
    const SystemRealization sys = realize(tpl, q);
    const int k = tpl.k;

    // Joint propagation of z = [S; x] with S = dx/dq1:
    //   z' = [[A, D], [0, A]] z + [0; B] mu.
    Mat big = Mat::Zero(2 * k, 2 * k);
    big.topLeftCorner(k, k) = sys.A;
    big.topRightCorner(k, k) = tpl.D;
    big.bottomRightCorner(k, k) = sys.A;
    Vec input = Vec::Zero(2 * k);
    input.tail(k) = sys.B;

    HoldStepper stepper(std::move(big), std::move(input));
    Vec z = Vec::Zero(2 * k);
    std::vector<TacGradient> out(times.size());
    sweep(mu, times, stepper, z, [&](std::size_t i) {
        TacGradient g;
        g.f = sys.C * z.tail(k);
        g.df_dq1 = sys.C * z.head(k);
        g.df_dq2 = g.f / q.q2;  // q2 enters only as a multiplier of F
        out[i] = g;
    });
    return out;
}

TacGradient tac_grad(const SystemTemplate& tpl, const ParamQ& q, const BracCurve& mu, double t) {
    return tac_grad_profile(tpl, q, mu, {t}).front();
}

Eigen::Matrix2d g_matrix(const SystemTemplate& tpl, const ParamQ& q0, const BracCurve& mu,
                         double u) {
    const TacGradient g = tac_grad(tpl, q0, mu, u);
    Eigen::Vector2d v(g.df_dq1, g.f / q0.q2);
    return v * v.transpose();
}

}  // namespace tdac::diffusion
