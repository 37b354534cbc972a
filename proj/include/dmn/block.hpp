#pragma once

// The two-layer building block.
//
// Two materials are stacked along axis 3. Across the interface the traction
// components are continuous (equilibrium set) and the in-plane strain
// components are shared (kinematic set). Eliminating the equilibrium-set
// strains of material 1 leaves a 3x3 interface system whose matrix is
// hat = f2 * C1_EE + f1 * C2_EE. The same algebra serves the small-strain
// Mandel notation and the finite-strain 9-vector notation; only the index
// sets differ.

#include "dmn/errors.hpp"
#include "dmn/tensor.hpp"

#include <array>
#include <string>
#include <tuple>
#include <utility>

namespace dmn {

/// Volume fractions below this are treated as a vanished branch.
inline constexpr double kVanishingFraction = 1e-12;
/// Reciprocal condition estimate below which the interface system is singular.
inline constexpr double kInterfaceRcondMin = 1e-14;

/// Index layout of a notation: equilibrium (traction) components and
/// kinematic (shared strain) components.
template <int Dim>
struct InterfaceLayout;

template <>
struct InterfaceLayout<6> {
  static constexpr std::array<int, 3> equilibrium{2, 3, 4};
  static constexpr std::array<int, 3> kinematic{0, 1, 5};
};

template <>
struct InterfaceLayout<9> {
  static constexpr std::array<int, 3> equilibrium{2, 3, 5};
  static constexpr std::array<int, 6> kinematic{0, 1, 4, 6, 7, 8};
};

/// Data kept from a forward homogenization for the backward passes.
struct InterfaceCache {
  double f1 = 0.5;
  double f2 = 0.5;
  /// 0 when both materials are present, otherwise the surviving material.
  int dominant = 0;
  /// Inverse of the 3x3 interface matrix (unset when dominant != 0).
  Mat3 hat_inv = Mat3::Zero();
};

struct BlockInputsLinear {
  StiffnessM6 cbar1;
  StiffnessM6 cbar2;
  double w1 = 1.0;
  double w2 = 1.0;
};

struct BlockInputsFinite {
  Tangent9 abar1;
  Tangent9 abar2;
  Vec9 dpbar1 = Vec9::Zero();
  Vec9 dpbar2 = Vec9::Zero();
  double w1 = 1.0;
  double w2 = 1.0;
};

struct LinearHomogenization {
  StiffnessM6 c;  // homogenized, before rotation
  Mat6 s1;        // strain concentration tensor of material 1
  InterfaceCache cache;
};

struct FiniteHomogenization {
  Tangent9 a;
  Vec9 dp;
  Mat9 s1;
  InterfaceCache cache;
};

namespace detail {

template <int D>
using MatD = Eigen::Matrix<double, D, D>;
template <int D>
using VecD = Eigen::Matrix<double, D, 1>;

inline std::pair<double, double> volume_fractions(double w1, double w2) {
  if (!(w1 >= 0.0 && w2 >= 0.0) || !(w1 + w2 > 0.0))
    throw ValidationError("building block weights must be nonnegative with a positive sum");
  const double f1 = w1 / (w1 + w2);
  return {f1, 1.0 - f1};
}

template <int D>
Mat3 sub_ee(const MatD<D>& m) {
  constexpr auto e = InterfaceLayout<D>::equilibrium;
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = m(e[i], e[j]);
  return r;
}

template <int D>
Eigen::Vector3d sub_e(const VecD<D>& v) {
  constexpr auto e = InterfaceLayout<D>::equilibrium;
  return {v(e[0]), v(e[1]), v(e[2])};
}

template <int D>
VecD<D> lift_e(const Eigen::Vector3d& v) {
  constexpr auto e = InterfaceLayout<D>::equilibrium;
  VecD<D> r = VecD<D>::Zero();
  for (int i = 0; i < 3; ++i) r(e[i]) = v(i);
  return r;
}

/// Solves the interface system and returns (homogenized matrix, S1, cache).
template <int D>
std::tuple<MatD<D>, MatD<D>, InterfaceCache> interface_homogenize(const MatD<D>& m1,
                                                                   const MatD<D>& m2, double w1,
                                                                   double w2) {
  constexpr auto e = InterfaceLayout<D>::equilibrium;
  constexpr auto k = InterfaceLayout<D>::kinematic;
  InterfaceCache cache;
  std::tie(cache.f1, cache.f2) = volume_fractions(w1, w2);
  const double f1 = cache.f1, f2 = cache.f2;

  if (f2 < kVanishingFraction) {
    cache.dominant = 1;
    return {m1, MatD<D>::Identity(), cache};
  }
  if (f1 < kVanishingFraction) {
    cache.dominant = 2;
    return {m2, MatD<D>::Identity(), cache};
  }

  const Mat3 hat = f2 * sub_ee<D>(m1) + f1 * sub_ee<D>(m2);
  Eigen::PartialPivLU<Mat3> lu(hat);
  const double rc = lu.rcond();
  if (!(rc >= kInterfaceRcondMin))
    throw SingularInterfaceSystem("interface system is singular (rcond " + std::to_string(rc) +
                                  ")");
  cache.hat_inv = lu.inverse();

  const MatD<D> delta = m2 - m1;
  Eigen::Matrix<double, 3, D> rhs;
  for (int i = 0; i < 3; ++i) {
    for (int kk : k) rhs(i, kk) = f2 * delta(e[i], kk);
    for (int j : e) rhs(i, j) = m2(e[i], j);
  }
  const Eigen::Matrix<double, 3, D> t = cache.hat_inv * rhs;

  MatD<D> s1 = MatD<D>::Identity();
  for (int i = 0; i < 3; ++i) s1.row(e[i]) = t.row(i);

  MatD<D> homogenized = m2 - f1 * delta * s1;
  return {homogenized, s1, cache};
}

/// Relaxation strain of material 1 on the equilibrium components when the
/// average strain increment is zero.
template <int D>
Eigen::Vector3d relaxation_strain(const InterfaceCache& cache, const VecD<D>& r1,
                                  const VecD<D>& r2) {
  return cache.f2 * (cache.hat_inv * (sub_e<D>(r2) - sub_e<D>(r1)));
}

template <int D>
VecD<D> interface_residual(const MatD<D>& m1, const MatD<D>& m2, const VecD<D>& r1,
                           const VecD<D>& r2, const InterfaceCache& cache) {
  if (cache.dominant == 1) return r1;
  if (cache.dominant == 2) return r2;
  constexpr auto e = InterfaceLayout<D>::equilibrium;
  const MatD<D> delta = m2 - m1;
  Eigen::Matrix<double, D, 3> delta_e;
  for (int j = 0; j < 3; ++j) delta_e.col(j) = delta.col(e[j]);
  const Eigen::Vector3d x1 = relaxation_strain<D>(cache, r1, r2);
  return -cache.f1 * (delta_e * x1) + cache.f1 * r1 + cache.f2 * r2;
}

template <int D>
std::pair<VecD<D>, VecD<D>> interface_dehomogenize(const MatD<D>& s1, const VecD<D>& r1,
                                                    const VecD<D>& r2,
                                                    const InterfaceCache& cache,
                                                    const VecD<D>& d_parent) {
  if (cache.dominant != 0) return {d_parent, d_parent};
  const VecD<D> d1 = s1 * d_parent + lift_e<D>(relaxation_strain<D>(cache, r1, r2));
  const VecD<D> d2 = (d_parent - cache.f1 * d1) / cache.f2;
  return {d1, d2};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear (small-strain) block.

/// C = C2 - f1 (C2 - C1) s1.
inline LinearHomogenization homogenize_linear(const BlockInputsLinear& in) {
  auto [c, s1, cache] = detail::interface_homogenize<6>(in.cbar1, in.cbar2, in.w1, in.w2);
  return {c, s1, cache};
}

/// Intermediates of the three-step rotation, kept for differentiation.
struct RotationSteps {
  Mat6 x, y, z;
  Mat6 c_a;   // after the alpha step
  Mat6 c_ab;  // after the beta step
  Mat6 out;
};

inline RotationSteps rotate_linear_steps(const StiffnessM6& c, const EulerAngles& e) {
  RotationSteps r;
  r.x = elementary6(Axis::X, e.alpha);
  r.y = elementary6(Axis::Y, e.beta);
  r.z = elementary6(Axis::Z, e.gamma);
  r.c_a = r.x.transpose() * c * r.x;
  r.c_ab = r.y.transpose() * r.c_a * r.y;
  r.out = r.z.transpose() * r.c_ab * r.z;
  return r;
}

/// Cbar = R^-1 C R with R = X(alpha) Y(beta) Z(gamma).
inline StiffnessM6 rotate_linear(const StiffnessM6& c, const EulerAngles& e) {
  return rotate_linear_steps(c, e).out;
}

struct RotationGradient {
  Mat6 d_c = Mat6::Zero();
  double d_alpha = 0.0;
  double d_beta = 0.0;
  double d_gamma = 0.0;
};

/// Reverse-mode derivative of rotate_linear for an upstream sensitivity
/// `g` = dJ/dCbar.
inline RotationGradient grad_rotate_linear(const StiffnessM6& c, const EulerAngles& e,
                                           const Mat6& g) {
  const RotationSteps s = rotate_linear_steps(c, e);
  const Rotation6Derivatives d = rotation6_derivatives(e);
  RotationGradient out;
  out.d_gamma = (g.array() *
                 (d.dz.transpose() * s.c_ab * s.z + s.z.transpose() * s.c_ab * d.dz).array())
                    .sum();
  const Mat6 g_ab = s.z * g * s.z.transpose();
  out.d_beta = (g_ab.array() *
                (d.dy.transpose() * s.c_a * s.y + s.y.transpose() * s.c_a * d.dy).array())
                   .sum();
  const Mat6 g_a = s.y * g_ab * s.y.transpose();
  out.d_alpha =
      (g_a.array() * (d.dx.transpose() * c * s.x + s.x.transpose() * c * d.dx).array()).sum();
  out.d_c = s.x * g_a * s.x.transpose();
  return out;
}

struct HomogenizationGradient {
  Mat6 d_cbar1 = Mat6::Zero();
  Mat6 d_cbar2 = Mat6::Zero();
  double d_w1 = 0.0;
  double d_w2 = 0.0;
};

/// Reverse-mode derivative of homogenize_linear for an upstream sensitivity
/// `g` = dJ/dC, reusing the forward result `h`.
inline HomogenizationGradient grad_homogenize_linear(const BlockInputsLinear& in,
                                                     const LinearHomogenization& h,
                                                     const Mat6& g) {
  constexpr auto e = InterfaceLayout<6>::equilibrium;
  constexpr auto k = InterfaceLayout<6>::kinematic;
  HomogenizationGradient out;
  const InterfaceCache& cache = h.cache;
  // A vanished branch contributes nothing; the survivor passes straight through.
  if (cache.dominant == 1) {
    out.d_cbar1 = g;
    return out;
  }
  if (cache.dominant == 2) {
    out.d_cbar2 = g;
    return out;
  }
  const double f1 = cache.f1, f2 = cache.f2;
  const Mat6 delta = in.cbar2 - in.cbar1;

  Mat6 g_delta = -f1 * g * h.s1.transpose();
  const Mat6 g_s1 = -f1 * delta.transpose() * g;
  double g_f1 = -(g.array() * (delta * h.s1).array()).sum();

  Eigen::Matrix<double, 3, 6> g_t;
  for (int i = 0; i < 3; ++i) g_t.row(i) = g_s1.row(e[i]);
  Eigen::Matrix<double, 3, 6> t;
  for (int i = 0; i < 3; ++i) t.row(i) = h.s1.row(e[i]);

  // t = hat^-1 * rhs
  const Eigen::Matrix<double, 3, 6> g_rhs = cache.hat_inv.transpose() * g_t;
  const Mat3 g_hat = -g_rhs * t.transpose();

  const Mat3 c1_ee = detail::sub_ee<6>(in.cbar1);
  const Mat3 c2_ee = detail::sub_ee<6>(in.cbar2);
  g_f1 += (g_hat.array() * (c2_ee - c1_ee).array()).sum();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      out.d_cbar1(e[i], e[j]) += f2 * g_hat(i, j);
      out.d_cbar2(e[i], e[j]) += f1 * g_hat(i, j) + g_rhs(i, e[j]);
    }
    for (int kk : k) {
      g_delta(e[i], kk) += f2 * g_rhs(i, kk);
      g_f1 -= g_rhs(i, kk) * delta(e[i], kk);
    }
  }

  out.d_cbar2 += g + g_delta;
  out.d_cbar1 -= g_delta;
  const double w = in.w1 + in.w2;
  out.d_w1 = g_f1 * f2 / w;
  out.d_w2 = -g_f1 * f1 / w;
  return out;
}

struct LinearBlockGradient {
  Mat6 d_cbar1 = Mat6::Zero();
  Mat6 d_cbar2 = Mat6::Zero();
  double d_w1 = 0.0;
  double d_w2 = 0.0;
  double d_alpha = 0.0;
  double d_beta = 0.0;
  double d_gamma = 0.0;
};

/// Gradients of <upstream, rotate_linear(homogenize_linear(in).c, angles)>.
inline LinearBlockGradient grad_linear(const BlockInputsLinear& in, const EulerAngles& angles,
                                       const Mat6& upstream) {
  const LinearHomogenization h = homogenize_linear(in);
  const RotationGradient rg = grad_rotate_linear(h.c, angles, upstream);
  const HomogenizationGradient hg = grad_homogenize_linear(in, h, rg.d_c);
  return {hg.d_cbar1, hg.d_cbar2, hg.d_w1, hg.d_w2, rg.d_alpha, rg.d_beta, rg.d_gamma};
}

// ---------------------------------------------------------------------------
// Finite-strain block.

/// H_A and H_P: A = A2 - f1 (A2 - A1) S1, together with the homogenized
/// residual stress.
inline FiniteHomogenization homogenize_finite(const BlockInputsFinite& in) {
  auto [a, s1, cache] = detail::interface_homogenize<9>(in.abar1, in.abar2, in.w1, in.w2);
  const Vec9 dp =
      detail::interface_residual<9>(in.abar1, in.abar2, in.dpbar1, in.dpbar2, cache);
  return {a, dp, s1, cache};
}

/// Abar = (R^f)^-1 A R^f and dPbar = (R^f)^-1 dP.
inline std::pair<Tangent9, Vec9> rotate_finite(const Tangent9& a, const Vec9& dp,
                                               const EulerAngles& e) {
  const Mat9 r = rotation9(e);
  return {r.transpose() * a * r, r.transpose() * dp};
}

/// Distributes a block-frame increment of deformation gradient to the two
/// materials, consistent with the interface conditions and the residual
/// stresses of the forward pass.
inline std::pair<Vec9, Vec9> dehomogenize_finite(const BlockInputsFinite& in,
                                                 const FiniteHomogenization& h,
                                                 const Vec9& df_parent) {
  return detail::interface_dehomogenize<9>(h.s1, in.dpbar1, in.dpbar2, h.cache, df_parent);
}

}  // namespace dmn
