#pragma once

// Constitutive laws for the online stage.
//
// Every law maps (previous state, new kinematic vector, time step) to the
// new stress, a tangent and the residual stress dP = (P_new - P_prev) - A dF
// that carries the nonlinearity through the network. Finite-strain
// evaluation works on 9-vectors (F, P); the small-strain form works on Mandel
// 6-vectors (strain, Cauchy stress) and is offered by the laws for which it
// is meaningful.

#include "dmn/errors.hpp"
#include "dmn/tensor.hpp"

#include <json.hpp>

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace dmn {

/// History of one material point. `strain` is F (9) in finite-strain mode
/// and the Mandel strain (6) in small-strain mode; `stress` is P or sigma.
struct MaterialState {
  Eigen::VectorXd strain;
  Eigen::VectorXd stress;
  std::vector<double> internal;
  std::vector<MaterialState> children;  // sub-network leaves of a graft
};

template <int D>
struct MaterialResponse {
  Eigen::Matrix<double, D, 1> p;
  Eigen::Matrix<double, D, D> a;
  Eigen::Matrix<double, D, 1> dp;
  MaterialState state;
};

using FiniteResponse = MaterialResponse<9>;
using SmallResponse = MaterialResponse<6>;

/// dP = (P_new - P_prev) - A dF.
template <class V, class M>
V residual_from_update(const V& p_new, const V& p_prev, const M& a, const V& df) {
  return (p_new - p_prev) - a * df;
}

class Material {
 public:
  virtual ~Material() = default;
  virtual std::string model() const = 0;
  virtual std::unique_ptr<Material> clone() const = 0;
  virtual nlohmann::json params() const = 0;

  /// State at the undeformed configuration for the given dimension (9 or 6).
  virtual MaterialState initial_state(int dim) const {
    MaterialState s;
    if (dim == 9) {
      s.strain = identity_vec9();
      s.stress = Vec9::Zero();
    } else {
      s.strain = Vec6::Zero();
      s.stress = Vec6::Zero();
    }
    s.internal = initial_internal();
    return s;
  }

  virtual FiniteResponse evaluate_finite(const MaterialState& prev, const Vec9& f_new,
                                         double dt) const = 0;

  virtual SmallResponse evaluate_small(const MaterialState&, const Vec6&, double) const {
    throw ValidationError("model '" + model() + "' has no small-strain form");
  }

  virtual bool supports_small_strain() const { return false; }

 protected:
  virtual std::vector<double> initial_internal() const { return {}; }
};

namespace detail {

inline Mat3 checked_gradient(const Vec9& f_new) {
  const Mat3 f = from_vec9(f_new);
  const double j = f.determinant();
  if (!(j > 0.0))
    throw NonPositiveJacobian("deformation gradient with det F = " + std::to_string(j));
  return f;
}

inline Vec6 mandel_identity() {
  Vec6 i;
  i << 1, 1, 1, 0, 0, 0;
  return i;
}

inline Mat6 isotropic_stiffness(double e, double nu) {
  const double lam = e * nu / ((1 + nu) * (1 - 2 * nu));
  const double mu = e / (2 * (1 + nu));
  Mat6 c = Mat6::Zero();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) c(i, j) = lam;
    c(i, i) += 2 * mu;
    c(i + 3, i + 3) = 2 * mu;
  }
  return c;
}

/// Assemble a finite-strain response from S(E) and dS/dE.
inline FiniteResponse finite_from_pk2(const MaterialState& prev, const Vec9& f_new,
                                      const Mat3& f, const Vec6& s6, const Mat6& d6,
                                      std::vector<double> internal) {
  FiniteResponse r;
  const Mat3 s = from_mandel(s6);
  r.p = to_vec9(f * s);
  r.a = symmetrized(first_piola_tangent(f, s, d6));
  const Vec9 p_prev = prev.stress;
  const Vec9 f_prev = prev.strain;
  r.dp = residual_from_update<Vec9, Mat9>(r.p, p_prev, r.a, f_new - f_prev);
  r.state.strain = f_new;
  r.state.stress = r.p;
  r.state.internal = std::move(internal);
  return r;
}

inline SmallResponse small_from_stress(const MaterialState& prev, const Vec6& eps_new,
                                       const Vec6& sigma, const Mat6& d6,
                                       std::vector<double> internal) {
  SmallResponse r;
  r.p = sigma;
  r.a = symmetrized(d6);
  const Vec6 s_prev = prev.stress;
  const Vec6 e_prev = prev.strain;
  r.dp = residual_from_update<Vec6, Mat6>(r.p, s_prev, r.a, eps_new - e_prev);
  r.state.strain = eps_new;
  r.state.stress = r.p;
  r.state.internal = std::move(internal);
  return r;
}

inline double get(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number())
    throw ValidationError(std::string("material parameter '") + key + "' missing or not a number");
  return j.at(key).get<double>();
}

inline double get_or(const nlohmann::json& j, const char* key, double fallback) {
  return j.contains(key) ? get(j, key) : fallback;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear elasticity (St. Venant-Kirchhoff in finite strain).

struct OrthotropicElastic {
  double E1 = 1, E2 = 1, E3 = 1;
  double G12 = 0.5, G13 = 0.5, G23 = 0.5;
  double nu12 = 0, nu13 = 0, nu23 = 0;

  /// Compliance with D_ij = -nu_ij / E_j (nu_ij: contraction along i under
  /// load along j).
  Mat6 compliance() const {
    Mat6 d = Mat6::Zero();
    d(0, 0) = 1 / E1;
    d(1, 1) = 1 / E2;
    d(2, 2) = 1 / E3;
    d(0, 1) = d(1, 0) = -nu12 / E2;
    d(0, 2) = d(2, 0) = -nu13 / E3;
    d(1, 2) = d(2, 1) = -nu23 / E3;
    d(3, 3) = 1 / (2 * G23);
    d(4, 4) = 1 / (2 * G13);
    d(5, 5) = 1 / (2 * G12);
    return d;
  }

  Mat6 stiffness() const {
    const Mat6 d = compliance();
    Eigen::LLT<Mat6> llt(d);
    if (llt.info() != Eigen::Success)
      throw ValidationError("orthotropic compliance is not positive definite");
    return symmetrized(Mat6(llt.solve(Mat6::Identity())));
  }

  static OrthotropicElastic isotropic(double e, double nu) {
    const double g = e / (2 * (1 + nu));
    return {e, e, e, g, g, g, nu, nu, nu};
  }
};

/// Linear elastic law with a fixed Mandel stiffness (optionally given in a
/// rotated material frame).
class LinearElastic final : public Material {
 public:
  explicit LinearElastic(const Mat6& c, nlohmann::json params = {})
      : c_(c), params_(std::move(params)) {}

  static LinearElastic orthotropic(const OrthotropicElastic& p,
                                   const EulerAngles& frame = {}) {
    const Mat6 c = p.stiffness();
    const Mat6 r = rotation6(frame);
    nlohmann::json j = {{"model", "orthotropic_elastic"}, {"E1", p.E1},   {"E2", p.E2},
                        {"E3", p.E3},                     {"G12", p.G12}, {"G13", p.G13},
                        {"G23", p.G23},                   {"nu12", p.nu12}, {"nu13", p.nu13},
                        {"nu23", p.nu23}};
    if (!(frame == EulerAngles{}))
      j["frame"] = {frame.alpha, frame.beta, frame.gamma};
    return LinearElastic(symmetrized(Mat6(r.transpose() * c * r)), j);
  }

  const Mat6& stiffness() const { return c_; }

  std::string model() const override { return "linear_elastic"; }
  std::unique_ptr<Material> clone() const override { return std::make_unique<LinearElastic>(*this); }
  nlohmann::json params() const override { return params_; }
  bool supports_small_strain() const override { return true; }

  FiniteResponse evaluate_finite(const MaterialState& prev, const Vec9& f_new,
                                 double) const override {
    const Mat3 f = detail::checked_gradient(f_new);
    const Vec6 s = c_ * to_mandel(green_strain(f));
    return detail::finite_from_pk2(prev, f_new, f, s, c_, {});
  }

  SmallResponse evaluate_small(const MaterialState& prev, const Vec6& eps,
                               double) const override {
    return detail::small_from_stress(prev, eps, c_ * eps, c_, {});
  }

 private:
  Mat6 c_;
  nlohmann::json params_;
};

// ---------------------------------------------------------------------------
// Compressible Mooney-Rivlin with Mullins-type damage on the deviatoric part.

struct MooneyRivlinParams {
  double C10 = 1.0;
  double C01 = 0.5;
  double nu = 0.495;
  double eta = 0.8;
  double a = 1.0;  // 1 J/cm^3 = 1 MPa
  double b = 1.0;

  double shear_modulus() const { return 2 * (C10 + C01); }
  double bulk_modulus() const { return 4 * (C10 + C01) * (1 + nu) / (3 * (1 - 2 * nu)); }
};

/// Strain energy split with first and second derivatives in the right
/// Cauchy-Green tensor (Mandel form).
struct MooneyRivlinEnergy {
  double wd = 0.0;  // deviatoric (damageable) energy
  Vec6 sd;          // 2 dWd/dC
  Vec6 sh;          // 2 dWh/dC
  Mat6 dd;          // 4 d2Wd/dC2
  Mat6 dh;          // 4 d2Wh/dC2
};

inline MooneyRivlinEnergy mooney_rivlin_energy(const MooneyRivlinParams& p, const Mat3& c) {
  const double i1 = c.trace();
  const double i2 = 0.5 * (i1 * i1 - (c * c).trace());
  const double i3 = c.determinant();
  const Mat3 cinv = c.inverse();

  const Vec6 one = detail::mandel_identity();
  const Vec6 g1 = one;
  const Vec6 g2 = i1 * one - to_mandel(c);
  const Vec6 cinv6 = to_mandel(cinv);
  const Vec6 g3 = i3 * cinv6;
  const Mat6 h2 = one * one.transpose() - Mat6::Identity();
  const Mat6 h3 = i3 * (cinv6 * cinv6.transpose() - mandel_congruence(cinv));

  const double m13 = std::pow(i3, -1.0 / 3), m23 = std::pow(i3, -2.0 / 3);
  const double k = p.bulk_modulus();

  const double wd1 = p.C10 * m13;
  const double wd2 = p.C01 * m23;
  const double wd3 = -p.C10 * i1 * m13 / (3 * i3) - 2 * p.C01 * i2 * m23 / (3 * i3);
  const double wd13 = -p.C10 * m13 / (3 * i3);
  const double wd23 = -2 * p.C01 * m23 / (3 * i3);
  const double wd33 = 4 * p.C10 * i1 * m13 / (9 * i3 * i3) + 10 * p.C01 * i2 * m23 / (9 * i3 * i3);

  const double sq = std::sqrt(i3);
  const double wh3 = k * (0.5 / sq - 0.5 / i3);
  const double wh33 = k * (-0.25 / (sq * i3) + 0.5 / (i3 * i3));

  MooneyRivlinEnergy e;
  e.wd = p.C10 * (i1 * m13 - 3) + p.C01 * (i2 * m23 - 3);
  e.sd = 2 * (wd1 * g1 + wd2 * g2 + wd3 * g3);
  e.sh = 2 * wh3 * g3;
  const Mat6 hd = wd13 * (g1 * g3.transpose() + g3 * g1.transpose()) +
                  wd23 * (g2 * g3.transpose() + g3 * g2.transpose()) +
                  wd33 * g3 * g3.transpose() + wd2 * h2 + wd3 * h3;
  e.dd = 4 * hd;
  e.dh = 4 * (wh33 * g3 * g3.transpose() + wh3 * h3);
  return e;
}

class MooneyRivlinMullins final : public Material {
 public:
  explicit MooneyRivlinMullins(const MooneyRivlinParams& p) : p_(p) {
    if (!(p.C10 + p.C01 > 0)) throw ValidationError("Mooney-Rivlin needs C10 + C01 > 0");
    if (!(p.nu < 0.5 && p.nu > -1)) throw ValidationError("Mooney-Rivlin needs -1 < nu < 0.5");
    if (!(p.eta >= 0 && p.eta <= 1)) throw ValidationError("Mullins eta must lie in [0, 1]");
    if (!(p.a > 0 && p.b >= 0)) throw ValidationError("Mullins needs a > 0 and b >= 0");
  }

  const MooneyRivlinParams& parameters() const { return p_; }

  std::string model() const override { return "mooney_rivlin_mullins"; }
  std::unique_ptr<Material> clone() const override {
    return std::make_unique<MooneyRivlinMullins>(*this);
  }
  nlohmann::json params() const override {
    return {{"model", model()}, {"C10", p_.C10}, {"C01", p_.C01}, {"nu", p_.nu},
            {"eta", p_.eta},    {"a", p_.a},     {"b", p_.b}};
  }

  /// internal = {Wd_max}
  FiniteResponse evaluate_finite(const MaterialState& prev, const Vec9& f_new,
                                 double) const override {
    const Mat3 f = detail::checked_gradient(f_new);
    const MooneyRivlinEnergy e = mooney_rivlin_energy(p_, f.transpose() * f);
    const double wmax_old = prev.internal.at(0);
    const double wmax = std::max(wmax_old, e.wd);
    const double denom = p_.a + p_.b * wmax;
    const double x = (wmax - e.wd) / denom;
    const double damage = 1.0 - p_.eta * std::erf(x);
    // On the primary loading path wmax tracks wd, x stays 0 and D = 1.
    const double d_damage =
        e.wd < wmax_old ? p_.eta * (2.0 / std::sqrt(kPi)) * std::exp(-x * x) / denom : 0.0;
    const Vec6 s = damage * e.sd + e.sh;
    const Mat6 d = damage * e.dd + e.dh + d_damage * e.sd * e.sd.transpose();
    return detail::finite_from_pk2(prev, f_new, f, s, d, {wmax});
  }

 protected:
  std::vector<double> initial_internal() const override { return {0.0}; }

 private:
  MooneyRivlinParams p_;
};

// ---------------------------------------------------------------------------
// J2 plasticity with exponential isotropic hardening, in the S/E pair.

struct J2Params {
  double E_m = 3800.0;
  double nu_m = 0.387;
  double a1 = 200.0;
  double a2 = 10.0;
  double a3 = 20.0;

  double yield(double ep) const { return -a2 * std::exp(-a1 * ep) + a3; }
  double hardening(double ep) const { return a1 * a2 * std::exp(-a1 * ep); }
};

class J2Exponential final : public Material {
 public:
  explicit J2Exponential(const J2Params& p) : p_(p) {
    if (!(p.E_m > 0 && p.nu_m > -1 && p.nu_m < 0.5))
      throw ValidationError("J2 needs E_m > 0 and -1 < nu_m < 0.5");
    if (!(p.a3 - p.a2 > 0 && p.a2 >= 0 && p.a1 >= 0))
      throw ValidationError("J2 needs a3 - a2 > 0, a2 >= 0, a1 >= 0");
  }

  std::string model() const override { return "j2_exponential"; }
  std::unique_ptr<Material> clone() const override { return std::make_unique<J2Exponential>(*this); }
  nlohmann::json params() const override {
    return {{"model", model()}, {"E_m", p_.E_m}, {"nu_m", p_.nu_m},
            {"a1", p_.a1},      {"a2", p_.a2},   {"a3", p_.a3}};
  }
  bool supports_small_strain() const override { return true; }

  struct Update {
    Vec6 stress;
    Mat6 tangent;
    std::vector<double> internal;  // {eps_bar, Ep (6)}
  };

  /// Radial return for a total strain in Mandel form.
  Update update(const std::vector<double>& internal, const Vec6& strain) const {
    const double g = p_.E_m / (2 * (1 + p_.nu_m));
    const double k = p_.E_m / (3 * (1 - 2 * p_.nu_m));
    const Vec6 one = detail::mandel_identity();
    const Mat6 idev = Mat6::Identity() - one * one.transpose() / 3.0;
    const Mat6 c = k * one * one.transpose() + 2 * g * idev;

    const double ep_n = internal.at(0);
    Vec6 eps_p;
    for (int i = 0; i < 6; ++i) eps_p(i) = internal.at(1 + i);

    const Vec6 s_trial = c * (strain - eps_p);
    const Vec6 dev = idev * s_trial;
    const double norm = dev.norm();
    const double q_trial = std::sqrt(1.5) * norm;
    const double f_trial = q_trial - p_.yield(ep_n);

    Update u;
    if (f_trial <= 1e-12 * p_.yield(ep_n)) {
      u.stress = s_trial;
      u.tangent = c;
      u.internal = internal;
      return u;
    }
    double dep = 0.0;
    int it = 0;
    for (; it < 50; ++it) {
      const double r = q_trial - 3 * g * dep - p_.yield(ep_n + dep);
      if (std::abs(r) <= 1e-12 * p_.a3) break;
      dep -= r / (-3 * g - p_.hardening(ep_n + dep));
    }
    if (it == 50) throw NoConvergence("J2 return mapping did not converge");
    const Vec6 n = dev / norm;
    const double dgamma = std::sqrt(1.5) * dep;
    u.stress = s_trial - 2 * g * dgamma * n;
    const double theta = 1 - 3 * g * dep / q_trial;
    const double theta_bar = 1 / (1 + p_.hardening(ep_n + dep) / (3 * g)) - (1 - theta);
    u.tangent = k * one * one.transpose() + 2 * g * theta * idev - 2 * g * theta_bar * n * n.transpose();
    const Vec6 eps_p_new = eps_p + dgamma * n;
    u.internal.assign(7, 0.0);
    u.internal[0] = ep_n + dep;
    for (int i = 0; i < 6; ++i) u.internal[1 + i] = eps_p_new(i);
    return u;
  }

  FiniteResponse evaluate_finite(const MaterialState& prev, const Vec9& f_new,
                                 double) const override {
    const Mat3 f = detail::checked_gradient(f_new);
    Update u = update(prev.internal, to_mandel(green_strain(f)));
    return detail::finite_from_pk2(prev, f_new, f, u.stress, u.tangent, std::move(u.internal));
  }

  SmallResponse evaluate_small(const MaterialState& prev, const Vec6& eps,
                               double) const override {
    Update u = update(prev.internal, eps);
    return detail::small_from_stress(prev, eps, u.stress, u.tangent, std::move(u.internal));
  }

 protected:
  std::vector<double> initial_internal() const override { return std::vector<double>(7, 0.0); }

 private:
  J2Params p_;
};

// ---------------------------------------------------------------------------
// Rate-dependent FCC crystal plasticity.

struct CrystalParams {
  double C1111 = 196400.0;  // MPa
  double C1122 = 84200.0;
  double C2323 = 56100.0;
  double gamma_dot0 = 0.00242;  // 1/s
  double m = 58.8;
  double tau0 = 171.85;  // initial reference shear stress, MPa
  double H = 1.0;
  double R = 0.0;
  double chi = 1.0;
  double a0 = 0.0;
  double h = 500.0;
  double r = 0.0;
  EulerAngles orientation{};  // crystal-to-sample rotation (3x3 of rotation3)

  Mat6 stiffness() const {
    Mat6 c = Mat6::Zero();
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) c(i, j) = C1122;
      c(i, i) = C1111;
      c(i + 3, i + 3) = 2 * C2323;
    }
    return c;
  }
};

/// The 12 {111}<110> systems: unit slip directions and plane normals.
inline std::array<std::pair<Vec3, Vec3>, 12> fcc_slip_systems() {
  const double a = 1 / std::sqrt(2.0), b = 1 / std::sqrt(3.0);
  const Vec3 n[4] = {Vec3(1, 1, 1) * b, Vec3(-1, 1, 1) * b, Vec3(1, -1, 1) * b,
                     Vec3(1, 1, -1) * b};
  const Vec3 s[4][3] = {{Vec3(0, 1, -1), Vec3(1, 0, -1), Vec3(1, -1, 0)},
                        {Vec3(0, 1, -1), Vec3(1, 0, 1), Vec3(1, 1, 0)},
                        {Vec3(0, 1, 1), Vec3(1, 0, -1), Vec3(1, 1, 0)},
                        {Vec3(0, 1, 1), Vec3(1, 0, 1), Vec3(1, -1, 0)}};
  std::array<std::pair<Vec3, Vec3>, 12> out;
  for (int p = 0; p < 4; ++p)
    for (int d = 0; d < 3; ++d) out[3 * p + d] = {s[p][d] * a, n[p]};
  return out;
}

class CrystalPlasticity final : public Material {
 public:
  static constexpr int kSlip = 12;
  using VecS = Eigen::Matrix<double, kSlip, 1>;
  using MatS = Eigen::Matrix<double, kSlip, kSlip>;

  explicit CrystalPlasticity(const CrystalParams& p) : p_(p) {
    if (!(p.gamma_dot0 > 0 && p.m > 0 && p.tau0 > 0))
      throw ValidationError("crystal plasticity needs gamma_dot0, m, tau0 > 0");
    const Mat3 q = rotation3(p_.orientation);
    const Mat6 m = mandel_congruence(q);
    c_ = m * p_.stiffness() * m.transpose();
    const auto sys = fcc_slip_systems();
    for (int k = 0; k < kSlip; ++k) schmid_[k] = (q * sys[k].first) * (q * sys[k].second).transpose();
  }

  const CrystalParams& parameters() const { return p_; }

  std::string model() const override { return "crystal_fcc"; }
  std::unique_ptr<Material> clone() const override {
    return std::make_unique<CrystalPlasticity>(*this);
  }
  nlohmann::json params() const override {
    return {{"model", model()},
            {"C1111", p_.C1111},
            {"C1122", p_.C1122},
            {"C2323", p_.C2323},
            {"gamma_dot0", p_.gamma_dot0},
            {"m", p_.m},
            {"tau0", p_.tau0},
            {"H", p_.H},
            {"R", p_.R},
            {"chi", p_.chi},
            {"a0", p_.a0},
            {"h", p_.h},
            {"r", p_.r},
            {"orientation", {p_.orientation.alpha, p_.orientation.beta, p_.orientation.gamma}}};
  }

  // internal layout: Fp^-1 (9, vec9 order) | tau0 (12) | a (12) | gamma (12) | last dgamma (12)
  static constexpr int kFpInv = 0, kTau0 = 9, kBack = 21, kGamma = 33, kLast = 45, kSize = 57;

  struct Local {
    Mat3 fp_inv;
    Vec6 se;  // Mandel second Piola-Kirchhoff stress, intermediate frame
    VecS dgamma;
    VecS tau0;
    VecS back;
    int iterations = 0;
  };

  /// Implicit update of the slip increments for a given F.
  Local solve_local(const std::vector<double>& internal, const Mat3& f, double dt,
                    const VecS* warm = nullptr) const {
    if (!(dt > 0.0)) throw ValidationError("crystal plasticity needs a positive time step");
    Step st;
    Vec9 fpi9;
    for (int i = 0; i < 9; ++i) fpi9(i) = internal.at(kFpInv + i);
    VecS last;
    for (int k = 0; k < kSlip; ++k) {
      st.tau0_old(k) = internal.at(kTau0 + k);
      st.back_old(k) = internal.at(kBack + k);
      last(k) = internal.at(kLast + k);
    }
    st.f = f;
    st.fpi_old = from_vec9(fpi9);
    st.je = f.determinant();
    st.rate_dt = p_.gamma_dot0 * dt;

    VecS d;
    if (warm) {
      d = *warm;
    } else {
      // Explicit predictor from the elastic trial, bounded by the current
      // elastic distortion.
      const Eval trial = evaluate(st, VecS::Zero());
      const double bound = 4.0 * (f * st.fpi_old - Mat3::Identity()).norm() + 1e-8;
      for (int k = 0; k < kSlip; ++k) {
        const double v = st.rate_dt * std::pow(std::abs(trial.x(k)), p_.m);
        d(k) = std::copysign(std::min(v, bound), trial.x(k));
      }
      if (last.cwiseAbs().sum() > 0.0 &&
          residual(st, evaluate(st, last), last, stiff_mask(evaluate(st, last))).norm() <
              residual(st, evaluate(st, d), d, stiff_mask(evaluate(st, d))).norm())
        d = last;
    }

    Eval cur = evaluate(st, d);
    Mask mask = stiff_mask(cur);
    VecS res = residual(st, cur, d, mask);
    int it = 0;
    for (; it < 50 && res.norm() > 1e-10; ++it) {
      // Systems on the steep branch need a slip of matching sign and at
      // least the reference magnitude to make the inverse law regular.
      bool moved = false;
      for (int k = 0; k < kSlip; ++k)
        if (mask[k] && (d(k) * cur.x(k) <= 0.0 || std::abs(d(k)) < 1e-3 * st.rate_dt)) {
          d(k) = std::copysign(1e-3 * st.rate_dt, cur.x(k));
          moved = true;
        }
      if (moved) {
        cur = evaluate(st, d);
        res = residual(st, cur, d, mask);
      }
      const VecS step = jacobian(st, cur, d, mask).fullPivLu().solve(-res);
      const double r0 = res.norm();
      double lambda = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 40; ++ls) {
        const VecS trial_d = d + lambda * step;
        const Eval e = evaluate(st, trial_d);
        const VecS r = residual(st, e, trial_d, mask);
        if (std::isfinite(r.norm()) && r.norm() < (1 - 1e-4 * lambda) * r0) {
          d = trial_d;
          cur = e;
          accepted = true;
          break;
        }
        lambda *= 0.5;
      }
      if (!accepted) break;
      mask = stiff_mask(cur);
      res = residual(st, cur, d, mask);
    }
    if (!(res.norm() <= 1e-10))
      throw NoConvergence("crystal plasticity local solve stalled at residual " +
                          std::to_string(res.norm()));
    Local out;
    out.fp_inv = cur.fpi;
    out.se = cur.se;
    out.dgamma = d;
    out.tau0 = cur.tau0;
    out.back = cur.back;
    out.iterations = it;
    return out;
  }

  /// First Piola-Kirchhoff stress of a converged local state.
  static Mat3 first_piola(const Mat3& f, const Local& l) {
    return f * l.fp_inv * from_mandel(l.se) * l.fp_inv.transpose();
  }

  FiniteResponse evaluate_finite(const MaterialState& prev, const Vec9& f_new,
                                 double dt) const override {
    const Mat3 f = detail::checked_gradient(f_new);
    const Local l = solve_local(prev.internal, f, dt);
    const Mat3 p = first_piola(f, l);

    // Algorithmic tangent by central differences of the full update.
    Mat9 a;
    const double h = 1e-6;
    for (int c = 0; c < 9; ++c) {
      Vec9 fp = f_new, fm = f_new;
      fp(c) += h;
      fm(c) -= h;
      const Mat3 ffp = from_vec9(fp), ffm = from_vec9(fm);
      const Mat3 pp = first_piola(ffp, solve_local(prev.internal, ffp, dt, &l.dgamma));
      const Mat3 pm = first_piola(ffm, solve_local(prev.internal, ffm, dt, &l.dgamma));
      a.col(c) = (to_vec9(pp) - to_vec9(pm)) / (2 * h);
    }

    FiniteResponse r;
    r.p = to_vec9(p);
    r.a = a;
    const Vec9 p_prev = prev.stress, f_prev = prev.strain;
    r.dp = residual_from_update<Vec9, Mat9>(r.p, p_prev, r.a, f_new - f_prev);
    r.state.strain = f_new;
    r.state.stress = r.p;
    r.state.internal = prev.internal;
    std::vector<double>& in = r.state.internal;
    const Vec9 fpi9 = to_vec9(l.fp_inv);
    for (int i = 0; i < 9; ++i) in[kFpInv + i] = fpi9(i);
    for (int k = 0; k < kSlip; ++k) {
      in[kTau0 + k] = l.tau0(k);
      in[kBack + k] = l.back(k);
      in[kGamma + k] += l.dgamma(k);
      in[kLast + k] = l.dgamma(k);
    }
    return r;
  }

 protected:
  std::vector<double> initial_internal() const override {
    std::vector<double> in(kSize, 0.0);
    const Vec9 id = identity_vec9();
    for (int i = 0; i < 9; ++i) in[kFpInv + i] = id(i);
    for (int k = 0; k < kSlip; ++k) {
      in[kTau0 + k] = p_.tau0;
      in[kBack + k] = p_.a0;
    }
    return in;
  }

 private:
  double latent(int a, int b) const { return p_.chi + (1 - p_.chi) * (a == b ? 1.0 : 0.0); }

  struct Step {
    Mat3 f, fpi_old;
    double je = 1.0;
    double rate_dt = 1.0;
    VecS tau0_old, back_old;
  };

  struct Eval {
    VecS x, tau0, back;
    Mat3 inc_inv, fpi, fe, ce;
    double scale = 1.0;  // det^(-1/3) normalization of Fp^-1
    Vec6 se;
  };

  using Mask = std::array<bool, kSlip>;

  Eval evaluate(const Step& st, const VecS& d) const {
    Eval e;
    Mat3 inc = Mat3::Identity();
    for (int k = 0; k < kSlip; ++k) inc -= d(k) * schmid_[k];
    e.inc_inv = inc.inverse();
    const Mat3 raw = st.fpi_old * inc;
    e.scale = 1.0 / std::cbrt(raw.determinant());
    e.fpi = e.scale * raw;
    e.fe = st.f * e.fpi;
    e.ce = e.fe.transpose() * e.fe;
    e.se = c_ * to_mandel(0.5 * (e.ce - Mat3::Identity()));
    const Mat3 m = e.ce * from_mandel(e.se);
    const double sum_abs = d.cwiseAbs().sum();
    for (int a = 0; a < kSlip; ++a) {
      double hsum = 0.0;
      for (int b = 0; b < kSlip; ++b) hsum += latent(a, b) * d(b);
      e.tau0(a) = (st.tau0_old(a) + p_.H * hsum) / (1 + p_.R * sum_abs);
      e.back(a) = (st.back_old(a) + p_.h * d(a)) / (1 + p_.r * std::abs(d(a)));
      const double tau = m.cwiseProduct(schmid_[a]).sum() / st.je;
      e.x(a) = (tau - e.back(a)) / e.tau0(a);
    }
    return e;
  }

  /// Systems past the reference stress use the inverse law x = psi(d);
  /// the others use d = rate_dt * phi(x), scaled by 1/rate_dt.
  static Mask stiff_mask(const Eval& e) {
    Mask m;
    for (int k = 0; k < kSlip; ++k) m[k] = std::abs(e.x(k)) >= 1.0;
    return m;
  }

  VecS residual(const Step& st, const Eval& e, const VecS& d, const Mask& mask) const {
    VecS r;
    for (int k = 0; k < kSlip; ++k)
      r(k) = mask[k] ? e.x(k) - flow_inverse(d(k), st.rate_dt)
                     : d(k) / st.rate_dt - std::copysign(std::pow(std::abs(e.x(k)), p_.m), e.x(k));
    return r;
  }

  /// Inverse of the power law: (tau - a)/tau0 reached by a slip increment d.
  double flow_inverse(double d, double rate_dt) const {
    if (d == 0.0) return 0.0;
    return std::copysign(std::pow(std::abs(d) / rate_dt, 1.0 / p_.m), d);
  }

  double flow_inverse_slope(double d, double rate_dt) const {
    const double ad = std::max(std::abs(d), 1e-300);
    return std::pow(ad / rate_dt, 1.0 / p_.m) / (p_.m * ad);
  }

  MatS jacobian(const Step& st, const Eval& e, const VecS& d, const Mask& mask) const {
    MatS dx;
    const double sum_abs = d.cwiseAbs().sum();
    const double den0 = 1 + p_.R * sum_abs;
    const Mat3 se = from_mandel(e.se);
    for (int b = 0; b < kSlip; ++b) {
      // dFe/dd_b = -G_b, including the variation of the det normalization.
      const Mat3 g = e.scale * st.f * st.fpi_old * schmid_[b] -
                     ((e.inc_inv * schmid_[b]).trace() / 3.0) * e.fe;
      const Mat3 dce = -(g.transpose() * e.fe + e.fe.transpose() * g);
      const Mat3 dse = from_mandel(c_ * to_mandel(0.5 * dce));
      const Mat3 dm = dce * se + e.ce * dse;
      const double sb = d(b) >= 0 ? 1.0 : -1.0;
      for (int a = 0; a < kSlip; ++a) {
        const double dtau = dm.cwiseProduct(schmid_[a]).sum() / st.je;
        double dback = 0.0;
        if (a == b) {
          const double den = 1 + p_.r * std::abs(d(a));
          dback = (p_.h - e.back(a) * p_.r * sb) / den;
        }
        const double dtau0 = (p_.H * latent(a, b) - e.tau0(a) * p_.R * sb) / den0;
        dx(a, b) = (dtau - dback) / e.tau0(a) - e.x(a) * dtau0 / e.tau0(a);
      }
    }
    MatS jac;
    for (int a = 0; a < kSlip; ++a) {
      if (mask[a]) {
        jac.row(a) = dx.row(a);
        jac(a, a) -= flow_inverse_slope(d(a), st.rate_dt);
      } else {
        const double slope = p_.m * std::pow(std::abs(e.x(a)), p_.m - 1);
        jac.row(a) = -slope * dx.row(a);
        jac(a, a) += 1.0 / st.rate_dt;
      }
    }
    return jac;
  }

  CrystalParams p_;
  Mat6 c_;
  std::array<Mat3, kSlip> schmid_;
};

// ---------------------------------------------------------------------------
// Construction from JSON records.

inline std::unique_ptr<Material> make_material(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("model") || !j.at("model").is_string())
    throw ValidationError("material record needs a string 'model' field");
  const std::string model = j.at("model").get<std::string>();
  using detail::get;
  using detail::get_or;
  auto angles = [&](const char* key) {
    EulerAngles e;
    if (j.contains(key)) {
      const auto& a = j.at(key);
      if (!a.is_array() || a.size() != 3) throw ValidationError(std::string(key) + " needs 3 angles");
      e = {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
    }
    return e;
  };
  if (model == "orthotropic_elastic") {
    OrthotropicElastic p{get(j, "E1"),   get(j, "E2"),   get(j, "E3"),
                         get(j, "G12"),  get(j, "G13"),  get(j, "G23"),
                         get(j, "nu12"), get(j, "nu13"), get(j, "nu23")};
    return std::make_unique<LinearElastic>(LinearElastic::orthotropic(p, angles("frame")));
  }
  if (model == "isotropic_elastic") {
    const double e = get(j, "E"), nu = get(j, "nu");
    return std::make_unique<LinearElastic>(detail::isotropic_stiffness(e, nu),
                                           nlohmann::json{{"model", model}, {"E", e}, {"nu", nu}});
  }
  if (model == "mooney_rivlin_mullins") {
    MooneyRivlinParams p;
    p.C10 = get(j, "C10");
    p.C01 = get_or(j, "C01", 0.0);
    p.nu = get(j, "nu");
    p.eta = get_or(j, "eta", 0.0);
    p.a = get_or(j, "a", 1.0);
    p.b = get_or(j, "b", 1.0);
    return std::make_unique<MooneyRivlinMullins>(p);
  }
  if (model == "j2_exponential") {
    return std::make_unique<J2Exponential>(
        J2Params{get(j, "E_m"), get(j, "nu_m"), get(j, "a1"), get(j, "a2"), get(j, "a3")});
  }
  if (model == "crystal_fcc") {
    CrystalParams p;
    p.C1111 = get_or(j, "C1111", p.C1111);
    p.C1122 = get_or(j, "C1122", p.C1122);
    p.C2323 = get_or(j, "C2323", p.C2323);
    p.gamma_dot0 = get_or(j, "gamma_dot0", p.gamma_dot0);
    p.m = get_or(j, "m", p.m);
    p.tau0 = get_or(j, "tau0", p.tau0);
    p.H = get_or(j, "H", p.H);
    p.R = get_or(j, "R", p.R);
    p.chi = get_or(j, "chi", p.chi);
    p.a0 = get_or(j, "a0", p.a0);
    p.h = get_or(j, "h", p.h);
    p.r = get_or(j, "r", p.r);
    p.orientation = angles("orientation");
    return std::make_unique<CrystalPlasticity>(p);
  }
  throw ValidationError("unknown material model '" + model + "'");
}

}  // namespace dmn
