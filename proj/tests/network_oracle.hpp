#pragma once

// Extended-precision re-evaluation of a network, built only from the
// laminate and rotation oracles. Reads the tree layout but none of the
// library's numerical routines.

#include "dmn/network.hpp"
#include "oracles.hpp"

#include <functional>
#include <utility>

namespace dmn::oracle {

using LD = long double;
using Mat6L = Eigen::Matrix<LD, 6, 6>;

/// Parameter perturbation applied during evaluation: which = 0..2 angles of
/// node `id`, 3 = activation of leaf `id`.
struct Perturb {
  int id = -1;
  int which = -1;
  LD h = 0;
};

inline std::pair<Mat6L, LD> eval_node(const MaterialNetwork& net, int id, const Mat6L& c1,
                                      const Mat6L& c2, const Perturb& p) {
  const NetworkNode& nd = net.node(id);
  LD a = nd.angles.alpha, b = nd.angles.beta, g = nd.angles.gamma, z = nd.z;
  if (p.id == id) {
    if (p.which == 0) a += p.h;
    if (p.which == 1) b += p.h;
    if (p.which == 2) g += p.h;
    if (p.which == 3) z += p.h;
  }
  if (nd.is_leaf()) {
    const LD w = z > 0 ? z : LD(0);
    if (w == 0) return {Mat6L::Zero(), 0};
    return {rotated_block<LD>(nd.phase == 2 ? c2 : c1, a, b, g), w};
  }
  const auto [m1, w1] = eval_node(net, nd.left, c1, c2, p);
  const auto [m2, w2] = eval_node(net, nd.right, c1, c2, p);
  if (w1 + w2 == 0) return {Mat6L::Zero(), 0};
  Mat6L c;
  if (w1 == 0) {
    c = m2;
  } else if (w2 == 0) {
    c = m1;
  } else {
    c = laminate_stiffness<LD>(m1, m2, w1 / (w1 + w2));
  }
  return {rotated_block<LD>(c, a, b, g), w1 + w2};
}

inline Mat6L network_forward(const MaterialNetwork& net, const Eigen::Matrix<double, 6, 6>& c1,
                             const Eigen::Matrix<double, 6, 6>& c2, const Perturb& p = {}) {
  return eval_node(net, net.root(), c1.cast<LD>(), c2.cast<LD>(), p).first;
}

}  // namespace dmn::oracle
