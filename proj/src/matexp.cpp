#include "tdac/matexp.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace tdac::matexp {

namespace {

using Eigen::Index;

// Pade numerator coefficients for the diagonal [m/m] approximants.
constexpr std::array<double, 4> kPade3 = {120.0, 60.0, 12.0, 1.0};
constexpr std::array<double, 6> kPade5 = {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
constexpr std::array<double, 8> kPade7 = {17297280.0, 8648640.0, 1995840.0, 277200.0,
                                          25200.0,    1512.0,    56.0,      1.0};
constexpr std::array<double, 10> kPade9 = {17643225600.0, 8821612800.0, 2075673600.0,
                                           302702400.0,   30270240.0,   2162160.0,
                                           110880.0,      3960.0,       90.0,
                                           1.0};
constexpr std::array<double, 14> kPade13 = {64764752532480000.0,
                                            32382376266240000.0,
                                            7771770303897600.0,
                                            1187353796428800.0,
                                            129060195264000.0,
                                            10559470521600.0,
                                            670442572800.0,
                                            33522128640.0,
                                            1323241920.0,
                                            40840800.0,
                                            960960.0,
                                            16380.0,
                                            182.0,
                                            1.0};

// 1-norm switching thresholds (theta_m for double precision).
constexpr double kTheta3 = 1.495585217958292e-2;
constexpr double kTheta5 = 2.539398330063230e-1;
constexpr double kTheta7 = 9.504178996162932e-1;
constexpr double kTheta9 = 2.097847961257068;
constexpr double kTheta13 = 5.371920351148152;

double norm1(const Mat& a) { return a.cwiseAbs().colwise().sum().maxCoeff(); }

// U (odd part, pre-multiplied by A) and V (even part) for orders 3..9.
template <std::size_t N>
void pade_low(const Mat& a, const Mat& a2, const std::array<double, N>& b, Mat& u, Mat& v) {
    const Index n = a.rows();
    Mat even = Mat::Identity(n, n) * b[0];
    Mat odd = Mat::Identity(n, n) * b[1];
    Mat power = Mat::Identity(n, n);
    for (std::size_t j = 2; j < N; j += 2) {
        power = power * a2;
        even.noalias() += b[j] * power;
        if (j + 1 < N) odd.noalias() += b[j + 1] * power;
    }
    u.noalias() = a * odd;
    v = even;
}

void pade13(const Mat& a, Mat& u, Mat& v) {
    const Index n = a.rows();
    const auto& b = kPade13;
    const Mat a2 = a * a;
    const Mat a4 = a2 * a2;
    const Mat a6 = a4 * a2;
    Mat w = a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2);
    w.noalias() += b[7] * a6 + b[5] * a4 + b[3] * a2;
    w += b[1] * Mat::Identity(n, n);
    u.noalias() = a * w;
    v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2);
    v.noalias() += b[6] * a6 + b[4] * a4 + b[2] * a2;
    v += b[0] * Mat::Identity(n, n);
}

}  // namespace

Mat expm(const Mat& m) {
    if (m.rows() != m.cols() || m.rows() == 0)
        throw std::invalid_argument("expm: input must be a nonempty square matrix");
    if (!m.allFinite()) throw std::domain_error("expm: input has non-finite entries");

    const Index n = m.rows();
    const double eta = norm1(m);

    Mat u(n, n), v(n, n);
    int squarings = 0;
    if (eta <= kTheta9) {
        const Mat a2 = m * m;
        if (eta <= kTheta3) {
            pade_low(m, a2, kPade3, u, v);
        } else if (eta <= kTheta5) {
            pade_low(m, a2, kPade5, u, v);
        } else if (eta <= kTheta7) {
            pade_low(m, a2, kPade7, u, v);
        } else {
            pade_low(m, a2, kPade9, u, v);
        }
    } else {
        squarings = std::max(0, static_cast<int>(std::ceil(std::log2(eta / kTheta13))));
        const Mat scaled = m * std::ldexp(1.0, -squarings);
        pade13(scaled, u, v);
    }

    // e^A ~ (V - U)^{-1} (V + U), then undo the scaling by repeated squaring.
    Mat result = (v - u).partialPivLu().solve(v + u);
    for (int i = 0; i < squarings; ++i) result = result * result;
    return result;
}

Mat build_block(const Mat& a, const Mat& v, int order) {
    if (a.rows() != a.cols() || v.rows() != v.cols() || a.rows() != v.rows())
        throw std::invalid_argument("build_block: A and V must be square with equal dimension");
    if (order < 0) throw std::invalid_argument("build_block: order must be >= 0");
    const Index k = a.rows();
    Mat block = Mat::Zero(k * (order + 1), k * (order + 1));
    for (int j = 0; j <= order; ++j) {
        block.block(j * k, j * k, k, k) = a;
        if (j < order) block.block(j * k, (j + 1) * k, k, k) = v;
    }
    return block;
}

DirDerivStack directional_derivs(const Mat& a, const Mat& v, double u, int order) {
    if (!std::isfinite(u)) throw std::domain_error("directional_derivs: u must be finite");
    const Mat big = expm(u * build_block(a, v, order));
    const Index k = a.rows();
    DirDerivStack stack;
    stack.order = order;
    stack.blocks.reserve(order + 1);
    double factorial = 1.0;
    for (int j = 0; j <= order; ++j) {
        if (j > 0) factorial *= j;
        stack.blocks.push_back(factorial * big.block(0, j * k, k, k));
    }
    return stack;
}

std::pair<Mat, Vec> conv_step(const Mat& a, const Vec& b, double dt) {
    if (a.rows() != a.cols() || b.rows() != a.rows())
        throw std::invalid_argument("conv_step: A must be square and b a matching column");
    if (!(dt >= 0.0)) throw std::domain_error("conv_step: dt must be >= 0");
    const Index k = a.rows();
    Mat aug = Mat::Zero(k + 1, k + 1);
    aug.topLeftCorner(k, k) = a;
    aug.topRightCorner(k, 1) = b;
    const Mat e = expm(dt * aug);
    return {e.topLeftCorner(k, k), e.topRightCorner(k, 1)};
}

}  // namespace tdac::matexp
