#pragma once

// Binary tree of building blocks.
//
// Nodes live in a flat vector and link to their children by index, so that
// compression can splice nodes out without renumbering. A freshly created
// tree of depth N uses heap order (root 0, children 2i+1, 2i+2) and has
// 2^(N-1) bottom-layer nodes ("leaves"). Leaves carry the activation z and a
// phase id; every node carries three rotation angles.

#include "dmn/block.hpp"
#include "dmn/errors.hpp"
#include "dmn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace dmn {

struct NetworkNode {
  int left = -1;
  int right = -1;
  EulerAngles angles;
  double z = 0.0;      // leaves only
  int phase = 0;       // leaves only: 1 or 2
  bool active = true;  // false once spliced out by compression

  bool is_leaf() const { return left < 0 && right < 0; }
};

inline double relu(double z) { return z > 0.0 ? z : 0.0; }
inline double relu_derivative(double z) { return z > 0.0 ? 1.0 : 0.0; }

class MaterialNetwork {
 public:
  MaterialNetwork() = default;

  /// Complete tree of depth `depth` with zero angles and unit activations.
  /// Two-phase trees alternate phases 1, 2 from the left; single-phase trees
  /// map every leaf to phase 1.
  static MaterialNetwork full_tree(int depth, int num_phases = 2) {
    if (depth < 2 || depth > 20) throw ValidationError("network depth must be in [2, 20]");
    if (num_phases != 1 && num_phases != 2) throw ValidationError("num_phases must be 1 or 2");
    MaterialNetwork net;
    net.depth_ = depth;
    net.num_phases_ = num_phases;
    const int n = (1 << depth) - 1;
    const int first_leaf = (1 << (depth - 1)) - 1;
    net.nodes_.resize(n);
    for (int i = 0; i < first_leaf; ++i) {
      net.nodes_[i].left = 2 * i + 1;
      net.nodes_[i].right = 2 * i + 2;
    }
    for (int i = first_leaf; i < n; ++i) {
      const int j = i - first_leaf + 1;  // 1-based leaf number
      net.nodes_[i].z = 1.0;
      net.nodes_[i].phase = num_phases == 1 ? 1 : (j % 2 == 1 ? 1 : 2);
    }
    return net;
  }

  /// Uniform initialization: z in U(z_lo, z_hi), angles in U(-a, a).
  template <class Rng>
  void randomize(Rng& rng, double z_lo = 0.2, double z_hi = 0.8, double angle_range = kPi / 2) {
    std::uniform_real_distribution<double> uz(z_lo, z_hi);
    std::uniform_real_distribution<double> ua(-angle_range, angle_range);
    for (int id : reachable()) {
      NetworkNode& nd = nodes_[id];
      if (nd.is_leaf()) nd.z = uz(rng);
      nd.angles = {ua(rng), ua(rng), ua(rng)};
    }
  }

  int depth() const { return depth_; }
  int num_phases() const { return num_phases_; }
  int root() const { return root_; }
  void set_root(int r) { root_ = r; }
  const std::vector<NetworkNode>& nodes() const { return nodes_; }
  std::vector<NetworkNode>& nodes() { return nodes_; }
  const NetworkNode& node(int id) const { return nodes_.at(id); }
  NetworkNode& node(int id) { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  /// Node ids in the tree, parents before children (preorder).
  std::vector<int> reachable() const {
    std::vector<int> out;
    if (nodes_.empty()) return out;
    std::vector<int> stack{root_};
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      out.push_back(id);
      const NetworkNode& nd = nodes_[id];
      if (nd.right >= 0) stack.push_back(nd.right);
      if (nd.left >= 0) stack.push_back(nd.left);
    }
    return out;
  }

  /// Leaves in left-to-right order.
  std::vector<int> leaves() const {
    std::vector<int> out;
    for (int id : reachable())
      if (nodes_[id].is_leaf()) out.push_back(id);
    return out;
  }

  /// Leaves with positive weight.
  std::vector<int> active_leaves() const {
    std::vector<int> out;
    for (int id : leaves())
      if (nodes_[id].z > 0.0) out.push_back(id);
    return out;
  }

  /// Number of trainable parameters in the current tree: one activation per
  /// leaf and three angles per node. 7 * 2^(N-1) - 3 for a full tree.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (int id : reachable()) n += nodes_[id].is_leaf() ? 4 : 3;
    return n;
  }

  /// Parent of every node (-1 for the root and unreachable nodes).
  std::vector<int> parents() const {
    std::vector<int> p(nodes_.size(), -1);
    for (int id : reachable()) {
      const NetworkNode& nd = nodes_[id];
      if (nd.left >= 0) p[nd.left] = id;
      if (nd.right >= 0) p[nd.right] = id;
    }
    return p;
  }

  /// Throws ValidationError when links are inconsistent.
  void validate() const {
    if (nodes_.empty()) throw ValidationError("network has no nodes");
    if (root_ < 0 || root_ >= static_cast<int>(nodes_.size()))
      throw ValidationError("network root out of range");
    std::vector<int> seen(nodes_.size(), 0);
    std::vector<int> stack{root_};
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      if (seen[id]++) throw ValidationError("network links contain a cycle or shared node");
      const NetworkNode& nd = nodes_[id];
      if (!nd.active) throw ValidationError("inactive node linked into the tree");
      if ((nd.left < 0) != (nd.right < 0))
        throw ValidationError("interior node " + std::to_string(id) + " has one child link");
      for (int c : {nd.left, nd.right}) {
        if (c >= static_cast<int>(nodes_.size())) throw ValidationError("child index out of range");
        if (c >= 0) stack.push_back(c);
      }
      if (nd.is_leaf() && (nd.phase < 1 || nd.phase > num_phases_))
        throw ValidationError("leaf " + std::to_string(id) + " has an invalid phase");
    }
  }

  // Free-form provenance stored with the model (seed, epochs, ...).
  std::vector<std::pair<std::string, std::string>> metadata;

 private:
  friend struct NetworkAccess;
  int depth_ = 0;
  int num_phases_ = 2;
  int root_ = 0;
  std::vector<NetworkNode> nodes_;
};

/// Grants the file reader write access to the private layout.
struct NetworkAccess {
  static MaterialNetwork make(int depth, int num_phases, int root, std::vector<NetworkNode> nodes) {
    MaterialNetwork net;
    net.depth_ = depth;
    net.num_phases_ = num_phases;
    net.root_ = root;
    net.nodes_ = std::move(nodes);
    return net;
  }
};

// ---------------------------------------------------------------------------
// Weights.

struct NetworkWeights {
  std::vector<double> w;  // per node id; zero for unreachable nodes
  double total = 0.0;
  double vf1 = 0.0;
  int n_active = 0;
};

inline NetworkWeights weights(const MaterialNetwork& net) {
  NetworkWeights out;
  out.w.assign(net.size(), 0.0);
  const std::vector<int> order = net.reachable();
  double phase1 = 0.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const NetworkNode& nd = net.node(*it);
    if (nd.is_leaf()) {
      out.w[*it] = relu(nd.z);
      if (out.w[*it] > 0.0) {
        ++out.n_active;
        if (nd.phase == 1) phase1 += out.w[*it];
      }
    } else {
      out.w[*it] = out.w[nd.left] + out.w[nd.right];
    }
  }
  out.total = out.w[net.root()];
  if (!(out.total > 0.0)) throw AllLeavesDeactivated();
  out.vf1 = phase1 / out.total;
  return out;
}

// ---------------------------------------------------------------------------
// Linear forward pass and backpropagation.

struct NodeEvalLinear {
  Mat6 pre = Mat6::Zero();  // matrix entering the rotation step
  Mat6 out = Mat6::Zero();  // rotated output of the node
  LinearHomogenization h{};  // interior nodes only
  bool evaluated = false;
};

struct NetworkOutputLinear {
  StiffnessM6 cbar_rve;
  std::vector<NodeEvalLinear> cache;
  NetworkWeights weights;
  /// Building-block operations performed (one per rotation, one per
  /// homogenization).
  std::size_t block_ops = 0;
};

namespace detail {

inline const Mat6& phase_stiffness(const NetworkNode& leaf, const Mat6& c1, const Mat6* c2) {
  if (leaf.phase == 2) {
    if (c2 == nullptr) throw ValidationError("phase-2 leaf without a phase-2 stiffness");
    return *c2;
  }
  return c1;
}

inline BlockInputsLinear block_inputs(const MaterialNetwork& net, const NetworkOutputLinear& o,
                                      int id) {
  const NetworkNode& nd = net.node(id);
  return {o.cache[nd.left].out, o.cache[nd.right].out, o.weights.w[nd.left],
          o.weights.w[nd.right]};
}

}  // namespace detail

/// Evaluates the network on phase stiffnesses. For single-phase networks
/// pass only `c_p1`.
inline NetworkOutputLinear forward_linear(const MaterialNetwork& net, const StiffnessM6& c_p1,
                                          const std::optional<StiffnessM6>& c_p2 = std::nullopt) {
  NetworkOutputLinear o;
  o.weights = weights(net);
  o.cache.resize(net.size());
  const Mat6* c2 = c_p2 ? &*c_p2 : nullptr;
  const std::vector<int> order = net.reachable();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int id = *it;
    if (o.weights.w[id] <= 0.0) continue;  // dead subtree
    const NetworkNode& nd = net.node(id);
    NodeEvalLinear& ev = o.cache[id];
    if (nd.is_leaf()) {
      ev.pre = detail::phase_stiffness(nd, c_p1, c2);
      o.block_ops += 1;
    } else {
      try {
        ev.h = homogenize_linear(detail::block_inputs(net, o, id));
      } catch (const SingularInterfaceSystem& e) {
        throw SingularInterfaceSystem(e.what(), id);
      }
      ev.pre = ev.h.c;
      o.block_ops += 2;
    }
    ev.out = rotate_linear(ev.pre, nd.angles);
    ev.evaluated = true;
  }
  o.cbar_rve = o.cache[net.root()].out;
  return o;
}

struct NetworkGradient {
  std::vector<double> dz;              // per node id (leaves)
  std::vector<EulerAngles> dangles;    // per node id

  explicit NetworkGradient(std::size_t n = 0) : dz(n, 0.0), dangles(n) {}

  NetworkGradient& operator+=(const NetworkGradient& o) {
    for (std::size_t i = 0; i < dz.size(); ++i) {
      dz[i] += o.dz[i];
      dangles[i].alpha += o.dangles[i].alpha;
      dangles[i].beta += o.dangles[i].beta;
      dangles[i].gamma += o.dangles[i].gamma;
    }
    return *this;
  }
  NetworkGradient& operator*=(double s) {
    for (std::size_t i = 0; i < dz.size(); ++i) {
      dz[i] *= s;
      dangles[i].alpha *= s;
      dangles[i].beta *= s;
      dangles[i].gamma *= s;
    }
    return *this;
  }
};

/// Gradient of <upstream, cbar_rve> with respect to every z and angle.
inline NetworkGradient backprop_linear(const MaterialNetwork& net, const NetworkOutputLinear& o,
                                       const Mat6& upstream) {
  NetworkGradient g(net.size());
  std::vector<Mat6> g_out(net.size(), Mat6::Zero());
  std::vector<double> g_w(net.size(), 0.0);
  g_out[net.root()] = upstream;
  for (int id : net.reachable()) {  // parents first
    if (!o.cache[id].evaluated) continue;
    const NetworkNode& nd = net.node(id);
    const RotationGradient rg = grad_rotate_linear(o.cache[id].pre, nd.angles, g_out[id]);
    g.dangles[id] = {rg.d_alpha, rg.d_beta, rg.d_gamma};
    if (nd.is_leaf()) {
      g.dz[id] = g_w[id] * relu_derivative(nd.z);
      continue;
    }
    const BlockInputsLinear in = detail::block_inputs(net, o, id);
    const HomogenizationGradient hg = grad_homogenize_linear(in, o.cache[id].h, rg.d_c);
    g_out[nd.left] = hg.d_cbar1;
    g_out[nd.right] = hg.d_cbar2;
    // w(node) = w(left) + w(right): its sensitivity reaches both children.
    g_w[nd.left] = g_w[id] + hg.d_w1;
    g_w[nd.right] = g_w[id] + hg.d_w2;
  }
  return g;
}


// ---------------------------------------------------------------------------
// Compression.

struct CompressOptions {
  /// Rotation similarity tolerance.
  double rotation_tol = 0.05;
  /// Tolerance on child volume fractions compared node by node.
  double fraction_tol = 0.01;
  bool merge = true;
};

struct CompressReport {
  int removed_dead = 0;          // leaves dropped because their weight is zero
  int removed_single_child = 0;  // parents spliced out
  int merged = 0;                // sibling subtrees merged
  int n_active_before = 0;
  int n_active_after = 0;
  double total_weight_before = 0.0;
  double total_weight_after = 0.0;
  /// Relative change of the forward output on a fixed probe phase pair.
  double output_delta = 0.0;
};

namespace detail {

inline double subtree_weight(const MaterialNetwork& net, int id) {
  const NetworkNode& nd = net.node(id);
  if (nd.is_leaf()) return relu(nd.z);
  return subtree_weight(net, nd.left) + subtree_weight(net, nd.right);
}

inline void deactivate_subtree(MaterialNetwork& net, int id, int* dead_leaves) {
  NetworkNode& nd = net.node(id);
  nd.active = false;
  if (nd.is_leaf()) {
    if (dead_leaves) ++*dead_leaves;
    return;
  }
  deactivate_subtree(net, nd.left, dead_leaves);
  deactivate_subtree(net, nd.right, dead_leaves);
}

/// True when Q1^T Q2 is close to the identity or to a half-turn: every
/// eigenvalue has |Re(lambda)| within tol of 1.
inline bool leaf_rotation_similar(const Mat3& q1, const Mat3& q2, double tol) {
  const Eigen::EigenSolver<Mat3> es(q1.transpose() * q2, false);
  for (int i = 0; i < 3; ++i)
    if (std::abs(std::abs(es.eigenvalues()(i).real()) - 1.0) >= tol) return false;
  return true;
}

inline bool similar_subtrees(const MaterialNetwork& net, int a, int b,
                             const CompressOptions& opt) {
  const NetworkNode& na = net.node(a);
  const NetworkNode& nb = net.node(b);
  if (na.is_leaf() != nb.is_leaf()) return false;
  const Mat3 qa = rotation3(na.angles), qb = rotation3(nb.angles);
  if (na.is_leaf())
    return na.phase == nb.phase && leaf_rotation_similar(qa, qb, opt.rotation_tol);
  if ((qa.transpose() * qb - Mat3::Identity()).norm() >= opt.rotation_tol) return false;
  const double wal = subtree_weight(net, na.left), war = subtree_weight(net, na.right);
  const double wbl = subtree_weight(net, nb.left), wbr = subtree_weight(net, nb.right);
  if (std::abs(wal / (wal + war) - wbl / (wbl + wbr)) >= opt.fraction_tol) return false;
  return similar_subtrees(net, na.left, nb.left, opt) &&
         similar_subtrees(net, na.right, nb.right, opt);
}

/// Adds the leaf weights of subtree b onto the matching leaves of a.
inline void merge_weights(MaterialNetwork& net, int a, int b) {
  NetworkNode& na = net.node(a);
  const NetworkNode& nb = net.node(b);
  if (na.is_leaf()) {
    na.z = relu(na.z) + relu(nb.z);
    return;
  }
  merge_weights(net, na.left, nb.left);
  merge_weights(net, na.right, nb.right);
}

/// Removes `id`, whose only surviving child is `child`; the child inherits
/// the composed rotation and takes the parent's place.
inline int absorb_into_child(MaterialNetwork& net, int id, int child) {
  NetworkNode& c = net.node(child);
  c.angles = euler_from_rotation3(rotation3(c.angles) * rotation3(net.node(id).angles));
  net.node(id).active = false;
  net.node(id).left = net.node(id).right = -1;
  return child;
}

inline int simplify(MaterialNetwork& net, int id, const CompressOptions& opt,
                    CompressReport& rep) {
  if (net.node(id).is_leaf()) return id;
  const int l = simplify(net, net.node(id).left, opt, rep);
  const int r = simplify(net, net.node(id).right, opt, rep);
  NetworkNode& nd = net.node(id);
  nd.left = l;
  nd.right = r;
  const double wl = subtree_weight(net, l), wr = subtree_weight(net, r);
  if (wl <= 0.0 && wr <= 0.0) return id;  // removed by an ancestor
  if (wl <= 0.0 || wr <= 0.0) {
    const int dead = wl <= 0.0 ? l : r;
    const int alive = wl <= 0.0 ? r : l;
    deactivate_subtree(net, dead, &rep.removed_dead);
    ++rep.removed_single_child;
    return absorb_into_child(net, id, alive);
  }
  if (wr > wl) std::swap(nd.left, nd.right);  // heavier subtree first
  if (opt.merge && similar_subtrees(net, nd.left, nd.right, opt)) {
    const int keep = nd.left, drop = nd.right;
    merge_weights(net, keep, drop);
    deactivate_subtree(net, drop, nullptr);
    ++rep.merged;
    ++rep.removed_single_child;
    return absorb_into_child(net, id, keep);
  }
  return id;
}

inline std::pair<Mat6, Mat6> probe_phases() {
  Mat6 c1 = Mat6::Zero();
  const double lam = 0.5769, mu = 0.3846;  // E = 1, nu = 0.3
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) c1(i, j) = lam;
    c1(i, i) += 2 * mu;
    c1(i + 3, i + 3) = 2 * mu;
  }
  Mat6 c2 = Mat6::Zero();
  c2.topLeftCorner<3, 3>() << 60.0, 4.0, 3.0, 4.0, 20.0, 2.5, 3.0, 2.5, 8.0;
  c2(3, 3) = 6.0;
  c2(4, 4) = 9.0;
  c2(5, 5) = 14.0;
  return {c1, c2};
}

inline Mat6 probe_output(const MaterialNetwork& net) {
  const auto [c1, c2] = probe_phases();
  return net.num_phases() == 1 ? forward_linear(net, c1).cbar_rve
                               : forward_linear(net, c1, c2).cbar_rve;
}

}  // namespace detail

/// Shrinks the network in place: drops zero-weight branches, splices out
/// parents left with one child, orders children by descending weight and
/// merges similar sibling subtrees.
inline CompressReport compress(MaterialNetwork& net, const CompressOptions& opt = {}) {
  CompressReport rep;
  const NetworkWeights before = weights(net);
  rep.n_active_before = before.n_active;
  rep.total_weight_before = before.total;
  const Mat6 out_before = detail::probe_output(net);
  net.set_root(detail::simplify(net, net.root(), opt, rep));
  const NetworkWeights after = weights(net);
  rep.n_active_after = after.n_active;
  rep.total_weight_after = after.total;
  rep.output_delta = (detail::probe_output(net) - out_before).norm() / out_before.norm();
  return rep;
}

// ---------------------------------------------------------------------------
// Orientation export.

struct LeafOrientation {
  int id = -1;
  int phase = 0;
  double weight = 0.0;  // volume fraction
  Mat3 rotation;        // composed along the root path
  EulerAngles angles;   // canonical angles of `rotation`
};

/// Composed rotation of every active leaf: Q_leaf * Q_parent * ... * Q_root.
inline std::vector<LeafOrientation> leaf_orientations(const MaterialNetwork& net) {
  const NetworkWeights w = weights(net);
  std::vector<Mat3> composed(net.size(), Mat3::Identity());
  std::vector<LeafOrientation> out;
  for (int id : net.reachable()) {
    const NetworkNode& nd = net.node(id);
    const Mat3 q = rotation3(nd.angles) * composed[id];
    if (nd.is_leaf()) {
      if (w.w[id] > 0.0)
        out.push_back({id, nd.phase, w.w[id] / w.total, q, canonical(euler_from_rotation3(q))});
      continue;
    }
    composed[nd.left] = q;
    composed[nd.right] = q;
  }
  return out;
}

}  // namespace dmn
