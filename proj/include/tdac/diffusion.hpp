#pragma once

#include <vector>

#include "tdac/matexp.hpp"

namespace tdac::diffusion {

/// The estimation target q = (q1, q2): normalized diffusivity and input
/// gain. Admissible whenever q2 > 0 and both entries are finite.
struct ParamQ {
    double q1 = 1.0;
    double q2 = 1.0;

    bool in_domain() const;
};

/// Parameter-independent system data (D, E, F, C) at discretization depth k.
/// The realized dynamics are A = q1*D + E, B = q2*F with output row C.
struct SystemTemplate {
    int k = 0;
    Mat D;
    Mat E;
    Vec F;
    RowVec C;

    void validate() const;
};

/// A and B evaluated at a concrete q.
struct SystemRealization {
    Mat A;
    Vec B;
    RowVec C;
    ParamQ q;
};

/// Piecewise-constant input curve on [0, T]: levels[i] applies on
/// [breakpoints[i], breakpoints[i+1]) and the last level up to T.
class BracCurve {
  public:
    BracCurve(double horizon_T, std::vector<double> breakpoints, std::vector<double> levels);

    /// Constant level over the whole horizon.
    static BracCurve constant(double horizon_T, double level);
    /// Uniform grid: levels[i] on [i*T/n, (i+1)*T/n).
    static BracCurve from_uniform_grid(double horizon_T, std::vector<double> levels);

    double horizon() const { return horizon_T_; }
    const std::vector<double>& breakpoints() const { return breakpoints_; }
    const std::vector<double>& levels() const { return levels_; }
    std::size_t segments() const { return levels_.size(); }

    double level_at(double s) const;
    double segment_end(std::size_t i) const;

  private:
    double horizon_T_;
    std::vector<double> breakpoints_;
    std::vector<double> levels_;
};

/// Model output and its exact q-partials at one time point.
struct TacGradient {
    double f = 0.0;
    double df_dq1 = 0.0;
    double df_dq2 = 0.0;
};

/// Finite-difference scheme for the skin diffusion equation on k interior
/// nodes of a uniform depth grid (spacing 1/(k+1)). The flux boundary
/// conditions are folded into the first and last rows so that the affine
/// split A = q1*D + E holds exactly: the evaporation term lands in E, the
/// input-flux coefficient in F, and C reads the node nearest the skin.
SystemTemplate discretize_pde(int k);

SystemRealization realize(const SystemTemplate& tpl, const ParamQ& q);

/// f(t) = int_0^t C e^{A(t-s)} B mu(s) ds, advanced segment-exactly with
/// zero-order-hold steps. t must lie in [0, T].
double tac(const SystemRealization& sys, const BracCurve& mu, double t);

/// f at several query times (ascending) in one sweep over the segments.
std::vector<double> tac_profile(const SystemRealization& sys, const BracCurve& mu,
                                const std::vector<double>& times);

/// f together with both q-partials. df_dq1 propagates through the
/// order-1 augmented block system (direction D); df_dq2 = f / q2 exactly.
TacGradient tac_grad(const SystemTemplate& tpl, const ParamQ& q, const BracCurve& mu, double t);

std::vector<TacGradient> tac_grad_profile(const SystemTemplate& tpl, const ParamQ& q,
                                          const BracCurve& mu, const std::vector<double>& times);

/// Rank-one information kernel at time u: outer product of (d1 f, f/q2).
Eigen::Matrix2d g_matrix(const SystemTemplate& tpl, const ParamQ& q0, const BracCurve& mu,
                         double u);

}  // namespace tdac::diffusion
