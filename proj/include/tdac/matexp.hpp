#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

namespace tdac {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

namespace matexp {

/// Matrix exponential e^M by scaling-and-squaring with diagonal Pade
/// approximants (orders 3/5/7/9/13, 1-norm based switching). Intended for
/// small dense matrices; relative accuracy ~1e-13 for ||M|| up to ~50.
///
/// Throws std::invalid_argument for non-square input, std::domain_error for
/// non-finite entries.
Mat expm(const Mat& m);

/// The (n+1)k x (n+1)k block upper-bidiagonal matrix with A on the diagonal
/// and V on the superdiagonal. Its exponential carries the directional
/// derivatives of e^{uA} in direction V in its first block row.
Mat build_block(const Mat& a, const Mat& v, int order);

/// Directional derivatives of the matrix exponential.
/// blocks[j] = (d/dh)^j e^{u(A+hV)} at h=0; blocks[0] = e^{uA}.
struct DirDerivStack {
    int order = 0;
    std::vector<Mat> blocks;
};

/// Computes DirDerivStack via one exponential of the augmented block matrix:
/// blocks[j] = j! * (block (0,j) of e^{u B_n}).
DirDerivStack directional_derivs(const Mat& a, const Mat& v, double u, int order);

/// One zero-order-hold step for x' = Ax + b*level over an interval of
/// length dt: returns Phi = e^{A dt} and Psi = (int_0^dt e^{As} ds) b,
/// both obtained from exp(dt*[[A,b],[0,0]]) so that singular A is fine.
std::pair<Mat, Vec> conv_step(const Mat& a, const Vec& b, double dt);

}  // namespace matexp
}  // namespace tdac
