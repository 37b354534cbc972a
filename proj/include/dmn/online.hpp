#pragma once

// Online stage: incremental nonlinear response of a trained network.
//
// Each load step runs a fixed point on the leaf increments. Leaves are
// linearized by their material laws into (A, dP), the pair is homogenized up
// the tree, the macro increment is solved under mixed control, and the macro
// increment is distributed back down. The template parameter selects the
// kinematics: 9 for finite strain (F, P) and 6 for small strain (Mandel
// strain and stress).

#include "dmn/block.hpp"
#include "dmn/errors.hpp"
#include "dmn/materials.hpp"
#include "dmn/network.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dmn {

enum class Control { Strain, Stress };

template <int D>
using VecN = Eigen::Matrix<double, D, 1>;
template <int D>
using MatN = Eigen::Matrix<double, D, D>;

template <int D>
struct MacroControl {
  std::array<Control, D> mode;

  static MacroControl all_strain() {
    MacroControl c;
    c.mode.fill(Control::Strain);
    return c;
  }

  /// Tension along axis 1 with traction-free lateral faces. In finite strain
  /// the lower-triangle shear components of F stay fixed, which removes the
  /// rigid rotation without constraining the stretch.
  static MacroControl uniaxial() {
    MacroControl c;
    c.mode.fill(Control::Stress);
    c.mode[0] = Control::Strain;
    if constexpr (D == 9) {
      c.mode[vec9_index(2, 1)] = Control::Strain;
      c.mode[vec9_index(2, 0)] = Control::Strain;
      c.mode[vec9_index(1, 0)] = Control::Strain;
    }
    return c;
  }

  void validate() const {
    for (Control m : mode)
      if (m == Control::Strain) return;
    throw ValidationError("macro control needs at least one strain-controlled component");
  }
};

struct SolveConfig {
  double tol = 1e-8;
  int max_iterations = 50;
  int max_cutbacks = 4;
  double cutback_factor = 0.5;
};

template <int D>
struct MacroIncrement {
  VecN<D> df;
  VecN<D> dp;
};

/// Condensed macro system: dP = A dF + r with the strain-controlled
/// components of dF and the stress-controlled components of dP given.
template <int D>
MacroIncrement<D> macro_solve(const MatN<D>& a, const VecN<D>& r, const MacroControl<D>& ctl,
                              const VecN<D>& df_given, const VecN<D>& dp_given) {
  std::vector<int> u, k;
  for (int i = 0; i < D; ++i) (ctl.mode[i] == Control::Stress ? u : k).push_back(i);
  MacroIncrement<D> out;
  out.df = df_given;
  for (int i : u) out.df(i) = 0.0;
  if (!u.empty()) {
    const int n = static_cast<int>(u.size());
    Eigen::MatrixXd auu(n, n);
    Eigen::VectorXd rhs(n);
    for (int i = 0; i < n; ++i) {
      rhs(i) = dp_given(u[i]) - r(u[i]);
      for (int j = 0; j < n; ++j) auu(i, j) = a(u[i], u[j]);
      for (int j : k) rhs(i) -= a(u[i], j) * df_given(j);
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(auu);
    if (!(lu.rcond() > 1e-14))
      throw SingularMacroTangent("macro tangent is singular on the stress-controlled components");
    const Eigen::VectorXd x = lu.solve(rhs);
    for (int i = 0; i < n; ++i) out.df(u[i]) = x(i);
  }
  out.dp = a * out.df + r;
  for (int i : u) out.dp(i) = dp_given(i);
  return out;
}

using PhaseMaterials = std::vector<std::shared_ptr<const Material>>;

namespace detail {

template <int D>
MatN<D> rotation_of(const EulerAngles& e) {
  if constexpr (D == 9)
    return rotation9(e);
  else
    return rotation6(e);
}

template <int D>
MaterialResponse<D> evaluate_material(const Material& m, const MaterialState& prev,
                                      const VecN<D>& x, double dt) {
  if constexpr (D == 9)
    return m.evaluate_finite(prev, x, dt);
  else
    return m.evaluate_small(prev, x, dt);
}

template <int D>
VecN<D> reference_strain() {
  if constexpr (D == 9)
    return identity_vec9();
  else
    return VecN<D>::Zero();
}

}  // namespace detail

/// History of the whole RVE: macro strain and stress plus the state of every
/// active leaf (indexed by node id, empty elsewhere).
template <int D>
struct RveState {
  VecN<D> f;
  VecN<D> p;
  std::vector<MaterialState> leaves;
  double time = 0.0;
};

template <int D>
struct StepResult {
  VecN<D> df;
  VecN<D> dp;
  MatN<D> a_rve;     // homogenized tangent of the last pass
  VecN<D> dp_rve;    // homogenized residual stress of the last pass
  int iterations = 0;  // corrector passes summed over sub-steps
  int cutbacks = 0;
  std::size_t ops = 0;  // building-block and material operations
};

/// Fixed-point solver bound to one network and its phase materials.
template <int D>
class OnlineSolver {
  static_assert(D == 6 || D == 9);

 public:
  using Vec = VecN<D>;
  using Mat = MatN<D>;

  OnlineSolver(MaterialNetwork net, PhaseMaterials phases, SolveConfig cfg = {})
      : net_(std::move(net)), phases_(std::move(phases)), cfg_(cfg) {
    net_.validate();
    w_ = weights(net_);
    order_ = net_.reachable();
    rot_.resize(net_.size());
    for (int id : order_) {
      rot_[id] = detail::rotation_of<D>(net_.node(id).angles);
      if (net_.node(id).is_leaf() && w_.w[id] > 0.0) leaves_.push_back(id);
    }
    for (int id : leaves_) {
      const int ph = net_.node(id).phase;
      if (ph < 1 || ph > static_cast<int>(phases_.size()) || !phases_[ph - 1])
        throw ValidationError("no material given for phase " + std::to_string(ph));
      if (D == 6 && !phases_[ph - 1]->supports_small_strain())
        throw ValidationError("material '" + phases_[ph - 1]->model() +
                              "' has no small-strain form");
    }
  }

  const MaterialNetwork& network() const { return net_; }
  const PhaseMaterials& phases() const { return phases_; }
  const SolveConfig& config() const { return cfg_; }

  const std::vector<int>& active_leaves() const { return leaves_; }
  const NetworkWeights& network_weights() const { return w_; }

  RveState<D> initial_state() const {
    RveState<D> s;
    s.f = detail::reference_strain<D>();
    s.p = Vec::Zero();
    s.leaves.resize(net_.size());
    for (int id : active_leaves()) s.leaves[id] = material(id).initial_state(D);
    return s;
  }

  /// Advances `state` to the targets. Strain-controlled components of
  /// `target` are total strains, stress-controlled ones total stresses. The
  /// state is modified only on success.
  StepResult<D> solve_step(RveState<D>& state, const MacroControl<D>& ctl, const Vec& target,
                           double dt) const {
    ctl.validate();
    StepResult<D> total;
    total.df.setZero();
    total.dp.setZero();
    RveState<D> work = state;
    advance(work, ctl, target, dt, 0, total);
    total.df = work.f - state.f;
    total.dp = work.p - state.p;
    state = std::move(work);
    return total;
  }

  /// One predictor pass: leaves linearized at zero increment, macro solve and
  /// distribution. Returns the leaf increments (local frames).
  std::vector<Vec> predictor(const RveState<D>& state, const MacroControl<D>& ctl,
                             const Vec& target, double dt) const {
    Pass pass = run_pass(state, std::vector<Vec>(net_.size(), Vec::Zero()), ctl, target, dt);
    return pass.leaf_df;
  }

 private:
  struct NodeEval {
    Mat a_pre = Mat::Zero();
    Vec dp_pre = Vec::Zero();
    Mat a_out = Mat::Zero();
    Vec dp_out = Vec::Zero();
    Mat s1 = Mat::Identity();
    InterfaceCache cache{};
  };

  struct Pass {
    std::vector<MaterialResponse<D>> responses;  // per node id, leaves only
    std::vector<Vec> leaf_df;                    // new leaf increments
    MacroIncrement<D> macro;
    Mat a_rve;
    Vec dp_rve;
    std::size_t ops = 0;
  };

  const Material& material(int leaf) const { return *phases_[net_.node(leaf).phase - 1]; }

  Pass run_pass(const RveState<D>& state, const std::vector<Vec>& leaf_df,
                const MacroControl<D>& ctl, const Vec& target, double dt) const {
    Pass pass;
    pass.responses.resize(net_.size());
    std::vector<NodeEval> ev(net_.size());
    // Forward: leaves to root.
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      const int id = *it;
      if (w_.w[id] <= 0.0) continue;
      const NetworkNode& nd = net_.node(id);
      NodeEval& e = ev[id];
      if (nd.is_leaf()) {
        const MaterialState& prev = state.leaves[id];
        try {
          pass.responses[id] = detail::evaluate_material<D>(material(id), prev,
                                                            Vec(prev.strain) + leaf_df[id], dt);
        } catch (const NoConvergence& ex) {
          throw NoConvergence("leaf " + std::to_string(id) + ": " + ex.what());
        } catch (const NonPositiveJacobian& ex) {
          throw NonPositiveJacobian("leaf " + std::to_string(id) + ": " + ex.what());
        }
        e.a_pre = pass.responses[id].a;
        e.dp_pre = pass.responses[id].dp;
        pass.ops += 1;
      } else {
        const NodeEval& l = ev[nd.left];
        const NodeEval& r = ev[nd.right];
        try {
          std::tie(e.a_pre, e.s1, e.cache) = detail::interface_homogenize<D>(
              l.a_out, r.a_out, w_.w[nd.left], w_.w[nd.right]);
        } catch (const SingularInterfaceSystem& ex) {
          throw SingularInterfaceSystem(ex.what(), id);
        }
        e.dp_pre = detail::interface_residual<D>(l.a_out, r.a_out, l.dp_out, r.dp_out, e.cache);
        pass.ops += 1;
      }
      const Mat& q = rot_[id];
      e.a_out = q.transpose() * e.a_pre * q;
      e.dp_out = q.transpose() * e.dp_pre;
      pass.ops += 1;
    }
    const int root = net_.root();
    pass.a_rve = ev[root].a_out;
    pass.dp_rve = ev[root].dp_out;

    Vec df_given = target - state.f, dp_given = target - state.p;
    pass.macro = macro_solve<D>(pass.a_rve, pass.dp_rve, ctl, df_given, dp_given);

    // Backward: root to leaves.
    pass.leaf_df.assign(net_.size(), Vec::Zero());
    std::vector<Vec> df_out(net_.size(), Vec::Zero());
    df_out[root] = pass.macro.df;
    for (int id : order_) {
      if (w_.w[id] <= 0.0) continue;
      const NetworkNode& nd = net_.node(id);
      const Vec df_pre = rot_[id] * df_out[id];
      pass.ops += 1;
      if (nd.is_leaf()) {
        pass.leaf_df[id] = df_pre;
        continue;
      }
      const NodeEval& e = ev[id];
      const auto [d1, d2] = detail::interface_dehomogenize<D>(e.s1, ev[nd.left].dp_out,
                                                              ev[nd.right].dp_out, e.cache, df_pre);
      df_out[nd.left] = d1;
      df_out[nd.right] = d2;
      pass.ops += 1;
    }
    return pass;
  }

  /// Fixed point for one (sub-)increment; throws NoConvergence.
  void converge(RveState<D>& state, const MacroControl<D>& ctl, const Vec& target, double dt,
                StepResult<D>& acc) const {
    std::vector<Vec> df(net_.size(), Vec::Zero());
    Pass pass = run_pass(state, df, ctl, target, dt);
    acc.ops += pass.ops;
    for (int it = 1; it <= cfg_.max_iterations; ++it) {
      df = pass.leaf_df;
      pass = run_pass(state, df, ctl, target, dt);
      acc.ops += pass.ops;
      double err = 0.0;
      for (int id : active_leaves()) {
        const double n = std::max(df[id].norm(), 1e-12);
        err = std::max(err, (pass.leaf_df[id] - df[id]).norm() / n);
      }
      if (!std::isfinite(err)) break;
      if (err < cfg_.tol) {
        acc.iterations += it;
        acc.a_rve = pass.a_rve;
        acc.dp_rve = pass.dp_rve;
        // Leaf responses were evaluated at `df`, within tolerance of the
        // distributed increment.
        for (int id : active_leaves()) state.leaves[id] = std::move(pass.responses[id].state);
        state.f += pass.macro.df;
        state.p += pass.macro.dp;
        state.time += dt;
        return;
      }
    }
    throw NoConvergence("online fixed point did not converge");
  }

  void advance(RveState<D>& state, const MacroControl<D>& ctl, const Vec& target, double dt,
               int level, StepResult<D>& acc) const {
    try {
      RveState<D> trial = state;
      converge(trial, ctl, target, dt, acc);
      state = std::move(trial);
      return;
    } catch (const NumericalError&) {
      if (level >= cfg_.max_cutbacks) throw;
    }
    ++acc.cutbacks;
    const double c = cfg_.cutback_factor;
    Vec mid;
    for (int i = 0; i < D; ++i) {
      const double from = ctl.mode[i] == Control::Strain ? state.f(i) : state.p(i);
      mid(i) = from + c * (target(i) - from);
    }
    advance(state, ctl, mid, c * dt, level + 1, acc);
    advance(state, ctl, target, (1 - c) * dt, level + 1, acc);
  }

  MaterialNetwork net_;
  PhaseMaterials phases_;
  SolveConfig cfg_;
  NetworkWeights w_;
  std::vector<int> order_;
  std::vector<int> leaves_;
  std::vector<Mat> rot_;
};

// ---------------------------------------------------------------------------
// Load paths.

template <int D>
struct LoadStep {
  VecN<D> target;
  double dt = 1.0;
};

template <int D>
struct LoadPath {
  MacroControl<D> control;
  std::vector<LoadStep<D>> steps;
};

/// Uniaxial program through the listed axial values (F11 or eps11), with
/// `steps_per_leg` equal increments per leg and constant strain rate.
template <int D>
LoadPath<D> uniaxial_path(const std::vector<double>& waypoints, int steps_per_leg, double rate) {
  if (steps_per_leg < 1) throw ValidationError("steps per leg must be positive");
  if (!(rate > 0)) throw ValidationError("strain rate must be positive");
  LoadPath<D> path;
  path.control = MacroControl<D>::uniaxial();
  double from = D == 9 ? 1.0 : 0.0;
  const VecN<D> ref = detail::reference_strain<D>();
  for (double to : waypoints) {
    const double inc = (to - from) / steps_per_leg;
    for (int s = 1; s <= steps_per_leg; ++s) {
      LoadStep<D> st;
      st.target = VecN<D>::Zero();
      for (int i = 0; i < D; ++i)
        if (path.control.mode[i] == Control::Strain) st.target(i) = ref(i);
      st.target(0) = from + s * inc;
      st.dt = std::max(std::abs(inc), 1e-300) / rate;
      path.steps.push_back(st);
    }
    from = to;
  }
  return path;
}

template <int D>
struct HistoryRow {
  int step = 0;
  double time = 0.0;
  VecN<D> f;
  VecN<D> p;
  int iterations = 0;
};

/// Runs every step of the path. Rows start with the initial state. On
/// failure the rows computed so far are handed to `on_row` before the error
/// propagates.
template <int D>
std::vector<HistoryRow<D>> run_path(const OnlineSolver<D>& solver, const LoadPath<D>& path,
                                    const std::function<void(const HistoryRow<D>&)>& on_row = {},
                                    RveState<D>* final_state = nullptr) {
  RveState<D> state = solver.initial_state();
  std::vector<HistoryRow<D>> rows;
  auto emit = [&](HistoryRow<D> r) {
    if (on_row) on_row(r);
    rows.push_back(std::move(r));
  };
  emit({0, state.time, state.f, state.p, 0});
  for (std::size_t s = 0; s < path.steps.size(); ++s) {
    const StepResult<D> r = solver.solve_step(state, path.control, path.steps[s].target,
                                              path.steps[s].dt);
    emit({static_cast<int>(s + 1), state.time, state.f, state.p, r.iterations});
  }
  if (final_state) *final_state = state;
  return rows;
}

// ---------------------------------------------------------------------------
// Single material point under the same mixed control.

template <int D>
class MaterialPoint {
 public:
  explicit MaterialPoint(std::shared_ptr<const Material> m, SolveConfig cfg = {})
      : m_(std::move(m)), cfg_(cfg), state_(m_->initial_state(D)) {}

  const MaterialState& state() const { return state_; }
  VecN<D> strain() const { return state_.strain; }
  VecN<D> stress() const { return state_.stress; }

  /// Newton on the stress-controlled components. Returns the iteration count.
  int step(const MacroControl<D>& ctl, const VecN<D>& target, double dt) {
    const VecN<D> x0 = state_.strain, s0 = state_.stress;
    VecN<D> x = x0;
    for (int i = 0; i < D; ++i)
      if (ctl.mode[i] == Control::Strain) x(i) = target(i);
    for (int it = 1; it <= cfg_.max_iterations; ++it) {
      const MaterialResponse<D> r = detail::evaluate_material<D>(*m_, state_, x, dt);
      VecN<D> res = VecN<D>::Zero();
      double scale = 1e-300;
      for (int i = 0; i < D; ++i)
        if (ctl.mode[i] == Control::Stress) {
          res(i) = r.p(i) - target(i);
          scale = std::max(scale, std::abs(target(i) - s0(i)));
        }
      scale = std::max(scale, r.p.norm() * 1e-3);
      if (res.norm() <= cfg_.tol * scale + 1e-14) {
        state_ = r.state;
        return it;
      }
      // Zero strain-controlled change, Newton step on the others.
      const MacroIncrement<D> inc =
          macro_solve<D>(r.a, r.p, ctl, VecN<D>::Zero(), VecN<D>(target));
      x += inc.df;
    }
    throw NoConvergence("material point did not converge");
  }

 private:
  std::shared_ptr<const Material> m_;
  SolveConfig cfg_;
  MaterialState state_;
};

// ---------------------------------------------------------------------------
// Concatenation.

/// Material whose response is a converged sub-network under full strain
/// control. Sub-leaf states live in MaterialState::children.
class NetworkMaterial final : public Material {
 public:
  NetworkMaterial(MaterialNetwork net, PhaseMaterials phases, SolveConfig cfg = {})
      : finite_(std::make_shared<OnlineSolver<9>>(net, phases, cfg)) {
    bool small = true;
    for (int id : finite_->active_leaves())
      small = small && phases[net.node(id).phase - 1]->supports_small_strain();
    if (small) small_ = std::make_shared<OnlineSolver<6>>(net, phases, cfg);
  }

  std::string model() const override { return "network"; }
  std::unique_ptr<Material> clone() const override {
    return std::make_unique<NetworkMaterial>(*this);
  }
  nlohmann::json params() const override {
    return {{"model", model()}, {"active_leaves", finite_->active_leaves().size()}};
  }
  bool supports_small_strain() const override { return small_ != nullptr; }
  const OnlineSolver<9>& solver() const { return *finite_; }

  MaterialState initial_state(int dim) const override {
    MaterialState s;
    if (dim == 9) {
      const RveState<9> r = finite_->initial_state();
      s.strain = r.f;
      s.stress = r.p;
      s.children = r.leaves;
    } else {
      if (!small_) throw ValidationError("graft materials have no small-strain form");
      const RveState<6> r = small_->initial_state();
      s.strain = r.f;
      s.stress = r.p;
      s.children = r.leaves;
    }
    return s;
  }

  FiniteResponse evaluate_finite(const MaterialState& prev, const Vec9& f_new,
                                 double dt) const override {
    return sub_solve<9>(*finite_, prev, f_new, dt);
  }

  SmallResponse evaluate_small(const MaterialState& prev, const Vec6& eps,
                               double dt) const override {
    if (!small_) return Material::evaluate_small(prev, eps, dt);
    return sub_solve<6>(*small_, prev, eps, dt);
  }

 private:
  template <int D>
  static MaterialResponse<D> sub_solve(const OnlineSolver<D>& s, const MaterialState& prev,
                                       const VecN<D>& x, double dt) {
    RveState<D> st;
    st.f = prev.strain;
    st.p = prev.stress;
    st.leaves = prev.children;
    const StepResult<D> r = s.solve_step(st, MacroControl<D>::all_strain(), x, dt);
    MaterialResponse<D> out;
    out.p = st.p;
    out.a = r.a_rve;
    out.dp = residual_from_update<VecN<D>, MatN<D>>(out.p, VecN<D>(prev.stress), out.a,
                                                    x - VecN<D>(prev.strain));
    out.state.strain = st.f;
    out.state.stress = st.p;
    out.state.children = std::move(st.leaves);
    return out;
  }

  std::shared_ptr<const OnlineSolver<9>> finite_;
  std::shared_ptr<const OnlineSolver<6>> small_;
};

struct DofReport {
  int root_non_target = 0;
  int root_target = 0;
  int graft_leaves = 0;
  int before = 0;  // active leaves of the root network
  int after = 0;   // independent material inputs after concatenation
};

inline DofReport dof_report(const MaterialNetwork& root, const MaterialNetwork& graft,
                            int target_phase) {
  const NetworkWeights wr = weights(root), wg = weights(graft);
  DofReport d;
  for (int id : root.leaves())
    if (wr.w[id] > 0.0) (root.node(id).phase == target_phase ? d.root_target : d.root_non_target)++;
  if (d.root_target == 0)
    throw ValidationError("phase " + std::to_string(target_phase) + " has no active leaf");
  d.graft_leaves = wg.n_active;
  d.before = d.root_target + d.root_non_target;
  d.after = d.root_non_target + d.root_target * d.graft_leaves;
  return d;
}

/// Root network whose `target_phase` leaves each carry a private copy of the
/// graft network (sub-cycled per outer iteration).
struct MultiscaleAssembly {
  MaterialNetwork root;
  int target_phase = 1;
  PhaseMaterials root_phases;  // target entry replaced by the graft material
  DofReport dofs;
};

inline MultiscaleAssembly concatenate(const MaterialNetwork& root, int target_phase,
                                      PhaseMaterials root_phases, const MaterialNetwork& graft,
                                      PhaseMaterials graft_phases, SolveConfig cfg = {}) {
  MultiscaleAssembly a;
  a.root = root;
  a.target_phase = target_phase;
  a.dofs = dof_report(root, graft, target_phase);
  if (static_cast<int>(root_phases.size()) < target_phase) root_phases.resize(target_phase);
  root_phases[target_phase - 1] =
      std::make_shared<NetworkMaterial>(graft, std::move(graft_phases), cfg);
  a.root_phases = std::move(root_phases);
  return a;
}

/// Single-loop variant: every target leaf is replaced by a copy of the graft
/// tree. The graft root absorbs the leaf rotation and graft activations are
/// rescaled to the leaf weight. Graft phases p become `root phases + p`.
inline MaterialNetwork flatten(const MaterialNetwork& root, int target_phase,
                               const MaterialNetwork& graft) {
  const NetworkWeights wr = weights(root), wg = weights(graft);
  std::vector<NetworkNode> nodes = root.nodes();
  const int offset = root.num_phases();
  for (int leaf : root.leaves()) {
    if (wr.w[leaf] <= 0.0 || root.node(leaf).phase != target_phase) continue;
    const double scale = wr.w[leaf] / wg.total;
    std::vector<int> map(graft.size(), -1);
    for (int id : graft.reachable()) {
      map[id] = static_cast<int>(nodes.size());
      nodes.push_back(graft.node(id));
    }
    for (int id : graft.reachable()) {
      NetworkNode& nd = nodes[map[id]];
      if (nd.is_leaf()) {
        nd.z = relu(nd.z) * scale;
        nd.phase += offset;
      } else {
        nd.left = map[nd.left];
        nd.right = map[nd.right];
      }
    }
    NetworkNode& g = nodes[map[graft.root()]];
    const Mat3 q = rotation3(g.angles) * rotation3(root.node(leaf).angles);
    g.angles = euler_from_rotation3(q);
    nodes[leaf] = g;
    nodes[map[graft.root()]].active = false;
    nodes[map[graft.root()]].left = nodes[map[graft.root()]].right = -1;
  }
  MaterialNetwork out =
      NetworkAccess::make(root.depth() + graft.depth() - 1, offset + graft.num_phases(),
                          root.root(), std::move(nodes));
  out.validate();
  return out;
}

}  // namespace dmn
