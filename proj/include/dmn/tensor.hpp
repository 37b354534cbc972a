#pragma once

// Small fixed-size tensor algebra for the material network.
//
// Two vector notations are used throughout:
//  * Mandel 6-vectors for symmetric tensors, ordered
//    {11, 22, 33, sqrt2*23, sqrt2*13, sqrt2*12}. Index 2 (33) is the
//    interface-normal component of a building block.
//  * Full 9-vectors for deformation gradients and first Piola-Kirchhoff
//    stresses, ordered {11, 22, 33, 23, 32, 13, 31, 12, 21}.
//
// The elementary rotation matrices X, Y, Z (both notations) are the images of
// the 3x3 rotations Rx(-a), Ry(-b), Rz(-g), so every rotation operator in this
// file is a group homomorphism of Q = Rx(-a) Ry(-b) Rz(-g).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace dmn {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat9 = Eigen::Matrix<double, 9, 9>;
using Mat96 = Eigen::Matrix<double, 9, 6>;

// Domain names. Stiffness and tangent matrices are stored dense.
using MandelVec6 = Vec6;
using StiffnessM6 = Mat6;
using Tangent9 = Mat9;

inline constexpr double kSqrt2 = std::numbers::sqrt2;
inline constexpr double kPi = std::numbers::pi;

/// Tait-Bryan angles in radians.
struct EulerAngles {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  friend bool operator==(const EulerAngles&, const EulerAngles&) = default;
};

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

inline EulerAngles canonical(const EulerAngles& e) {
  return {wrap_angle(e.alpha), wrap_angle(e.beta), wrap_angle(e.gamma)};
}

// ---------------------------------------------------------------------------
// Index maps between 3x3 tensors and the vector notations.

/// (i, j) pairs of the Mandel components.
inline constexpr std::array<std::array<int, 2>, 6> kMandelPairs{
    {{0, 0}, {1, 1}, {2, 2}, {1, 2}, {0, 2}, {0, 1}}};

/// (i, j) pairs of the 9-vector components.
inline constexpr std::array<std::array<int, 2>, 9> kVec9Pairs{
    {{0, 0}, {1, 1}, {2, 2}, {1, 2}, {2, 1}, {0, 2}, {2, 0}, {0, 1}, {1, 0}}};

/// Position of tensor entry (i, j) in the 9-vector.
inline constexpr int vec9_index(int i, int j) {
  constexpr int table[3][3] = {{0, 7, 5}, {8, 1, 3}, {6, 4, 2}};
  return table[i][j];
}

inline Vec6 to_mandel(const Mat3& t) {
  Vec6 v;
  v << t(0, 0), t(1, 1), t(2, 2), kSqrt2 * t(1, 2), kSqrt2 * t(0, 2), kSqrt2 * t(0, 1);
  return v;
}

/// Symmetric 3x3 tensor from its Mandel vector.
inline Mat3 from_mandel(const Vec6& v) {
  const double s = 1.0 / kSqrt2;
  Mat3 t;
  t << v(0), s * v(5), s * v(4),
       s * v(5), v(1), s * v(3),
       s * v(4), s * v(3), v(2);
  return t;
}

inline Vec9 to_vec9(const Mat3& t) {
  Vec9 v;
  for (int a = 0; a < 9; ++a) v(a) = t(kVec9Pairs[a][0], kVec9Pairs[a][1]);
  return v;
}

inline Mat3 from_vec9(const Vec9& v) {
  Mat3 t;
  for (int a = 0; a < 9; ++a) t(kVec9Pairs[a][0], kVec9Pairs[a][1]) = v(a);
  return t;
}

inline Vec9 identity_vec9() { return to_vec9(Mat3::Identity()); }

/// Embedding of Mandel vectors into 9-vectors: v9 = P * v6 for symmetric
/// tensors, and P^T maps 9-vector stresses back to Mandel.
inline Mat96 mandel_embedding() {
  Mat96 p = Mat96::Zero();
  p(0, 0) = p(1, 1) = p(2, 2) = 1.0;
  const double s = 1.0 / kSqrt2;
  p(3, 3) = p(4, 3) = s;  // 23, 32
  p(5, 4) = p(6, 4) = s;  // 13, 31
  p(7, 5) = p(8, 5) = s;  // 12, 21
  return p;
}

/// Mandel stiffness of a tangent with minor symmetries.
inline Mat6 project_to_mandel(const Mat9& a) {
  const Mat96 p = mandel_embedding();
  return p.transpose() * a * p;
}

/// 9x9 tangent with minor symmetries built from a Mandel stiffness.
inline Mat9 embed_mandel(const Mat6& c) {
  const Mat96 p = mandel_embedding();
  return p * c * p.transpose();
}

// ---------------------------------------------------------------------------
// 3x3 rotations.

inline Mat3 rot_x(double t) {
  const double c = std::cos(t), s = std::sin(t);
  Mat3 r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

inline Mat3 rot_y(double t) {
  const double c = std::cos(t), s = std::sin(t);
  Mat3 r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

inline Mat3 rot_z(double t) {
  const double c = std::cos(t), s = std::sin(t);
  Mat3 r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

/// The 3x3 rotation whose Mandel image is rotation6(e).
inline Mat3 rotation3(const EulerAngles& e) {
  return rot_x(-e.alpha) * rot_y(-e.beta) * rot_z(-e.gamma);
}

/// Inverse of rotation3. At the gimbal point (|sin beta| = 1) gamma is set
/// to zero.
inline EulerAngles euler_from_rotation3(const Mat3& q) {
  // q = Rx(a) Ry(b) Rz(c) with (a, b, c) = -(alpha, beta, gamma).
  const double sb = std::clamp(q(0, 2), -1.0, 1.0);
  double a, b, c;
  if (std::abs(sb) > 1.0 - 1e-12) {
    b = sb > 0 ? kPi / 2 : -kPi / 2;
    c = 0.0;
    a = std::atan2(q(1, 0) * sb, q(1, 1));
  } else {
    b = std::asin(sb);
    a = std::atan2(-q(1, 2), q(2, 2));
    c = std::atan2(-q(0, 1), q(0, 0));
  }
  return {-a, -b, -c};
}

// ---------------------------------------------------------------------------
// Elementary rotation matrices.

enum class Axis { X = 0, Y = 1, Z = 2 };

namespace detail {

// In-plane block r^p (Mandel) and its derivative.
inline Eigen::Matrix3d rp(double t, bool deriv) {
  const double c = std::cos(t), s = std::sin(t);
  Eigen::Matrix3d m;
  if (!deriv) {
    m << c * c, s * s, kSqrt2 * s * c,
         s * s, c * c, -kSqrt2 * s * c,
         -kSqrt2 * s * c, kSqrt2 * s * c, c * c - s * s;
  } else {
    const double s2 = std::sin(2 * t), c2 = std::cos(2 * t);
    m << -s2, s2, kSqrt2 * c2,
         s2, -s2, -kSqrt2 * c2,
         -kSqrt2 * c2, kSqrt2 * c2, -2 * s2;
  }
  return m;
}

// In-plane block r^pf (9-vector) and its derivative.
inline Eigen::Matrix4d rpf(double t, bool deriv) {
  const double c = std::cos(t), s = std::sin(t);
  Eigen::Matrix4d m;
  if (!deriv) {
    m << c * c, s * s, s * c, s * c,
         s * s, c * c, -s * c, -s * c,
         -s * c, s * c, c * c, -s * s,
         -s * c, s * c, -s * s, c * c;
  } else {
    const double s2 = std::sin(2 * t), c2 = std::cos(2 * t);
    m << -s2, s2, c2, c2,
         s2, -s2, -c2, -c2,
         -c2, c2, -s2, -s2,
         -c2, c2, -s2, -s2;
  }
  return m;
}

// Out-of-plane block r^v (shared by both notations) and its derivative.
inline Eigen::Matrix2d rv(double t, bool deriv) {
  const double c = std::cos(t), s = std::sin(t);
  Eigen::Matrix2d m;
  if (!deriv) {
    m << c, -s, s, c;
  } else {
    m << -s, -c, c, -s;
  }
  return m;
}

template <class Dst, class Src, std::size_t K>
void scatter(Dst& dst, const Src& src, const std::array<int, K>& idx) {
  for (std::size_t r = 0; r < K; ++r)
    for (std::size_t c = 0; c < K; ++c) dst(idx[r], idx[c]) = src(r, c);
}

}  // namespace detail

/// Elementary Mandel rotation about `axis`; with `deriv` the entrywise
/// derivative with respect to the angle.
inline Mat6 elementary6(Axis axis, double t, bool deriv = false) {
  Mat6 m = Mat6::Zero();
  // Y uses r(-t): its derivative picks up a sign.
  const double sign = axis == Axis::Y ? -1.0 : 1.0;
  const double arg = sign * t;
  const Eigen::Matrix3d p = detail::rp(arg, deriv) * (deriv ? sign : 1.0);
  const Eigen::Matrix2d v = detail::rv(arg, deriv) * (deriv ? sign : 1.0);
  const int fixed = static_cast<int>(axis);
  if (!deriv) m(fixed, fixed) = 1.0;
  switch (axis) {
    case Axis::X:
      detail::scatter(m, p, std::array<int, 3>{1, 2, 3});
      detail::scatter(m, v, std::array<int, 2>{4, 5});
      break;
    case Axis::Y:
      detail::scatter(m, p, std::array<int, 3>{0, 2, 4});
      detail::scatter(m, v, std::array<int, 2>{3, 5});
      break;
    case Axis::Z:
      detail::scatter(m, p, std::array<int, 3>{0, 1, 5});
      detail::scatter(m, v, std::array<int, 2>{3, 4});
      break;
  }
  return m;
}

/// Elementary 9-vector rotation about `axis` (or its angle derivative).
inline Mat9 elementary9(Axis axis, double t, bool deriv = false) {
  Mat9 m = Mat9::Zero();
  const double sign = axis == Axis::Y ? -1.0 : 1.0;
  const double arg = sign * t;
  const Eigen::Matrix4d p = detail::rpf(arg, deriv) * (deriv ? sign : 1.0);
  const Eigen::Matrix2d v = detail::rv(arg, deriv) * (deriv ? sign : 1.0);
  const int fixed = static_cast<int>(axis);
  if (!deriv) m(fixed, fixed) = 1.0;
  switch (axis) {
    case Axis::X:
      detail::scatter(m, p, std::array<int, 4>{1, 2, 3, 4});
      detail::scatter(m, v, std::array<int, 2>{5, 7});
      detail::scatter(m, v, std::array<int, 2>{6, 8});
      break;
    case Axis::Y:
      detail::scatter(m, p, std::array<int, 4>{0, 2, 5, 6});
      detail::scatter(m, v, std::array<int, 2>{3, 8});
      detail::scatter(m, v, std::array<int, 2>{4, 7});
      break;
    case Axis::Z:
      detail::scatter(m, p, std::array<int, 4>{0, 1, 7, 8});
      detail::scatter(m, v, std::array<int, 2>{3, 5});
      detail::scatter(m, v, std::array<int, 2>{4, 6});
      break;
  }
  return m;
}

/// R = X(alpha) Y(beta) Z(gamma) in Mandel notation (orthogonal).
inline Mat6 rotation6(const EulerAngles& e) {
  return elementary6(Axis::X, e.alpha) * elementary6(Axis::Y, e.beta) *
         elementary6(Axis::Z, e.gamma);
}

/// R^f = X^f(alpha) Y^f(beta) Z^f(gamma) in 9-vector notation (orthogonal).
inline Mat9 rotation9(const EulerAngles& e) {
  return elementary9(Axis::X, e.alpha) * elementary9(Axis::Y, e.beta) *
         elementary9(Axis::Z, e.gamma);
}

struct Rotation6Derivatives {
  Mat6 dx;  // X'(alpha)
  Mat6 dy;  // Y'(beta)
  Mat6 dz;  // Z'(gamma)
};

inline Rotation6Derivatives rotation6_derivatives(const EulerAngles& e) {
  return {elementary6(Axis::X, e.alpha, true), elementary6(Axis::Y, e.beta, true),
          elementary6(Axis::Z, e.gamma, true)};
}


// ---------------------------------------------------------------------------
// Fourth-order helpers.

/// Mandel position of the symmetric pair (i, j).
inline constexpr int mandel_index(int i, int j) {
  constexpr int table[3][3] = {{0, 5, 4}, {5, 1, 3}, {4, 3, 2}};
  return table[i][j];
}

inline double mandel_weight(int i, int j) { return i == j ? 1.0 : kSqrt2; }

/// Component D_ijkl of the fourth-order tensor with Mandel matrix `d`.
inline double mandel_component(const Mat6& d, int i, int j, int k, int l) {
  return d(mandel_index(i, j), mandel_index(k, l)) / (mandel_weight(i, j) * mandel_weight(k, l));
}

/// Mandel matrix of the linear map X -> Q X Q^T on symmetric tensors.
inline Mat6 mandel_congruence(const Mat3& q) {
  Mat6 m;
  for (int b = 0; b < 6; ++b) {
    Mat3 e = Mat3::Zero();
    const int k = kMandelPairs[b][0], l = kMandelPairs[b][1];
    if (k == l) {
      e(k, l) = 1.0;
    } else {
      e(k, l) = e(l, k) = 1.0 / kSqrt2;
    }
    m.col(b) = to_mandel(q * e * q.transpose());
  }
  return m;
}

/// dP/dF for P = F S(E), E = (F^T F - I)/2, given the second Piola-Kirchhoff
/// stress S and its Mandel tangent D = dS/dE:
/// A_iJkL = delta_ik S_JL + F_iM D_MJNL F_kN.
inline Mat9 first_piola_tangent(const Mat3& f, const Mat3& s, const Mat6& d) {
  // FD_{iJ,NL} = F_iM D_MJNL, contracted once, then with F_kN.
  double fd[3][3][3][3];
  for (int i = 0; i < 3; ++i)
    for (int jj = 0; jj < 3; ++jj)
      for (int n = 0; n < 3; ++n)
        for (int l = 0; l < 3; ++l) {
          double acc = 0.0;
          for (int m = 0; m < 3; ++m) acc += f(i, m) * mandel_component(d, m, jj, n, l);
          fd[i][jj][n][l] = acc;
        }
  Mat9 a;
  for (int r = 0; r < 9; ++r) {
    const int i = kVec9Pairs[r][0], jj = kVec9Pairs[r][1];
    for (int c = 0; c < 9; ++c) {
      const int k = kVec9Pairs[c][0], l = kVec9Pairs[c][1];
      double acc = i == k ? s(jj, l) : 0.0;
      for (int n = 0; n < 3; ++n) acc += fd[i][jj][n][l] * f(k, n);
      a(r, c) = acc;
    }
  }
  return a;
}

/// Green-Lagrange strain of a deformation gradient.
inline Mat3 green_strain(const Mat3& f) { return 0.5 * (f.transpose() * f - Mat3::Identity()); }

/// Symmetric part, used to clean roundoff from congruence products.
template <class M>
M symmetrized(const M& m) {
  return 0.5 * (m + m.transpose());
}

}  // namespace dmn
