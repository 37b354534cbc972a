#include "dmn/network.hpp"
#include "dmn/network_io.hpp"
#include "network_oracle.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace dmn;

namespace {

MaterialNetwork random_net(int depth, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MaterialNetwork net = MaterialNetwork::full_tree(depth);
  net.randomize(rng);
  return net;
}

double rel(const Mat6& a, const Mat6& b) { return (a - b).norm() / b.norm(); }

Mat6 orthotropic_probe() {
  Mat6 c = Mat6::Zero();
  c.topLeftCorner<3, 3>() << 60.0, 4.0, 3.0, 4.0, 20.0, 2.5, 3.0, 2.5, 8.0;
  c(3, 3) = 6.0;
  c(4, 4) = 9.0;
  c(5, 5) = 14.0;
  return c;
}

}  // namespace

TEST(Network, FullTreeLayoutAndParameterCount) {
  for (int n = 2; n <= 8; ++n) {
    const MaterialNetwork net = MaterialNetwork::full_tree(n);
    EXPECT_EQ(net.leaves().size(), std::size_t(1) << (n - 1));
    EXPECT_EQ(net.parameter_count(), std::size_t(7 * (1 << (n - 1)) - 3));
    const auto leaves = net.leaves();
    for (std::size_t j = 0; j < leaves.size(); ++j)
      EXPECT_EQ(net.node(leaves[j]).phase, j % 2 == 0 ? 1 : 2);
  }
  const MaterialNetwork single = MaterialNetwork::full_tree(3, 1);
  for (int id : single.leaves()) EXPECT_EQ(single.node(id).phase, 1);
}

TEST(Network, WeightsAndVolumeFraction) {
  MaterialNetwork net = MaterialNetwork::full_tree(3);
  EXPECT_DOUBLE_EQ(weights(net).vf1, 0.5);
  const auto leaves = net.leaves();
  const double z[4] = {1, -1, 1, 1};
  for (int j = 0; j < 4; ++j) net.node(leaves[j]).z = z[j];
  const NetworkWeights w = weights(net);
  EXPECT_NEAR(w.vf1, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(w.n_active, 3);
  for (int j = 0; j < 4; ++j) net.node(leaves[j]).z = -0.1;
  EXPECT_THROW(weights(net), AllLeavesDeactivated);
}

TEST(Network, WeightConservation) {
  const MaterialNetwork net = random_net(6, 3);
  const NetworkWeights w = weights(net);
  for (int id : net.reachable()) {
    const NetworkNode& nd = net.node(id);
    if (!nd.is_leaf()) EXPECT_NEAR(w.w[id], w.w[nd.left] + w.w[nd.right], 1e-14 * w.w[id]);
  }
}

TEST(ForwardLinear, EqualIsotropicPhasesGiveThePhase) {
  const MaterialNetwork net = MaterialNetwork::full_tree(2);
  const Mat6 c = oracle::isotropic6(2.0, 0.3);
  EXPECT_LT(rel(forward_linear(net, c, c).cbar_rve, c), 1e-14);
}

TEST(ForwardLinear, DepthTwoIsOneBuildingBlock) {
  MaterialNetwork net = random_net(2, 4);
  std::mt19937_64 rng(5);
  const Mat6 c1 = oracle::random_spd6(rng), c2 = oracle::random_spd6(rng);
  const NetworkNode& r = net.node(0);
  const NetworkNode& a = net.node(1);
  const NetworkNode& b = net.node(2);
  const Mat6 direct = rotate_linear(
      homogenize_linear({rotate_linear(c1, a.angles), rotate_linear(c2, b.angles), a.z, b.z}).c,
      r.angles);
  EXPECT_LT(rel(forward_linear(net, c1, c2).cbar_rve, direct), 1e-14);
}

TEST(ForwardLinear, MatchesExtendedPrecisionOracle) {
  std::mt19937_64 rng(6);
  for (int n = 2; n <= 6; ++n) {
    const MaterialNetwork net = random_net(n, 100 + n);
    const Mat6 c1 = oracle::random_spd6(rng), c2 = oracle::random_spd6(rng, 0.01, 50.0);
    const Mat6 ref = oracle::network_forward(net, c1, c2).cast<double>();
    EXPECT_LT(rel(forward_linear(net, c1, c2).cbar_rve, ref), 1e-10);
  }
}

TEST(ForwardLinear, RootSubtreeSwapInvariance) {
  MaterialNetwork net = random_net(4, 7);
  std::mt19937_64 rng(8);
  const Mat6 c1 = oracle::random_spd6(rng), c2 = oracle::random_spd6(rng);
  const Mat6 before = forward_linear(net, c1, c2).cbar_rve;
  std::swap(net.node(0).left, net.node(0).right);
  EXPECT_LT(rel(forward_linear(net, c1, c2).cbar_rve, before), 1e-10);
}

TEST(ForwardLinear, SinglePhaseUsesOneStiffness) {
  const MaterialNetwork net = [] {
    MaterialNetwork n = MaterialNetwork::full_tree(3, 1);
    std::mt19937_64 rng(9);
    n.randomize(rng);
    return n;
  }();
  const Mat6 iso = oracle::isotropic6(5.0, 0.2);
  EXPECT_LT(rel(forward_linear(net, iso).cbar_rve, iso), 1e-12);
  EXPECT_THROW(forward_linear(random_net(3, 1), iso), ValidationError);
}

TEST(Backprop, MatchesExtendedPrecisionFiniteDifferences) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> nd(0, 1);
  for (int n = 2; n <= 4; ++n) {
    MaterialNetwork net = random_net(n, 200 + n);
    net.node(net.leaves()[0]).z = -0.3;  // one dead leaf
    const Mat6 c1 = oracle::random_spd6(rng), c2 = oracle::random_spd6(rng, 0.1, 30.0);
    Mat6 g;
    for (int i = 0; i < 36; ++i) g(i / 6, i % 6) = nd(rng);
    const NetworkGradient grad = backprop_linear(net, forward_linear(net, c1, c2), g);
    auto fd = [&](int id, int which) {
      const oracle::LD h = 1e-6L;
      const oracle::Mat6L p = oracle::network_forward(net, c1, c2, {id, which, h});
      const oracle::Mat6L m = oracle::network_forward(net, c1, c2, {id, which, -h});
      return static_cast<double>(((p - m).array() * g.cast<oracle::LD>().array()).sum() / (2 * h));
    };
    for (int id : net.reachable()) {
      const double an[3] = {grad.dangles[id].alpha, grad.dangles[id].beta, grad.dangles[id].gamma};
      for (int k = 0; k < 3; ++k) {
        const double f = fd(id, k);
        if (std::max(std::abs(f), std::abs(an[k])) > 1e-10)
          EXPECT_LT(std::abs(an[k] - f) / std::max(std::abs(f), std::abs(an[k])), 1e-5);
      }
      if (net.node(id).is_leaf() && net.node(id).z > 0) {
        const double f = fd(id, 3);
        if (std::max(std::abs(f), std::abs(grad.dz[id])) > 1e-10)
          EXPECT_LT(std::abs(grad.dz[id] - f) / std::max(std::abs(f), std::abs(grad.dz[id])), 1e-5);
      }
    }
    EXPECT_EQ(grad.dz[net.leaves()[0]], 0.0);
  }
}

TEST(Compress, SingleChildParentIsSplicedExactly) {
  MaterialNetwork net = random_net(3, 11);
  const auto leaves = net.leaves();
  net.node(leaves[0]).z = 0.7;
  net.node(leaves[1]).z = -0.2;
  std::mt19937_64 rng(12);
  const Mat6 c1 = oracle::random_spd6(rng), c2 = oracle::random_spd6(rng);
  const Mat6 before = forward_linear(net, c1, c2).cbar_rve;
  CompressOptions opt;
  opt.merge = false;
  const CompressReport rep = compress(net, opt);
  EXPECT_EQ(rep.removed_dead, 1);
  EXPECT_EQ(rep.removed_single_child, 1);
  EXPECT_FALSE(net.node(1).active);
  EXPECT_LT(rel(forward_linear(net, c1, c2).cbar_rve, before), 1e-12);
  EXPECT_EQ(net.leaves().size(), 3u);
  net.validate();
}

TEST(Compress, IdenticalSubtreesMerge) {
  MaterialNetwork net = random_net(3, 13);
  // Copy the left subtree parameters onto the right one.
  net.node(2).angles = net.node(1).angles;
  net.node(5).angles = net.node(3).angles;
  net.node(6).angles = net.node(4).angles;
  net.node(5).z = net.node(3).z;
  net.node(6).z = net.node(4).z;
  std::mt19937_64 rng(14);
  const Mat6 c1 = oracle::random_spd6(rng), c2 = oracle::random_spd6(rng);
  const Mat6 before = forward_linear(net, c1, c2).cbar_rve;
  const double w_before = weights(net).total;
  const CompressReport rep = compress(net);
  EXPECT_EQ(rep.merged, 1);
  EXPECT_EQ(rep.n_active_after, 2);
  EXPECT_NEAR(weights(net).total, w_before, 1e-14);
  EXPECT_LT(rel(forward_linear(net, c1, c2).cbar_rve, before), 1e-12);
}

TEST(Compress, AxisFlippedLeavesMergeWithSmallDelta) {
  MaterialNetwork net = random_net(3, 15);
  const Mat3 flip = rot_z(kPi);
  net.node(2).angles = net.node(1).angles;
  net.node(5).angles = euler_from_rotation3(flip * rotation3(net.node(3).angles));
  net.node(6).angles = euler_from_rotation3(flip * rotation3(net.node(4).angles));
  net.node(5).z = net.node(3).z * 1.002;
  net.node(6).z = net.node(4).z;
  const Mat6 c1 = oracle::isotropic6(1.0, 0.3), c2 = orthotropic_probe();
  const Mat6 before = forward_linear(net, c1, c2).cbar_rve;
  const CompressReport rep = compress(net);
  EXPECT_EQ(rep.merged, 1);
  EXPECT_LT(rep.output_delta, 0.01);
  EXPECT_LT(rel(forward_linear(net, c1, c2).cbar_rve, before), 0.01);
}

TEST(Compress, NeverChangesTotalWeightOrIncreasesActiveCount) {
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> u(-0.4, 1.0);
  for (int k = 0; k < 20; ++k) {
    MaterialNetwork net = random_net(5, 300 + k);
    for (int id : net.leaves()) net.node(id).z = u(rng);
    if (net.active_leaves().empty()) continue;
    const NetworkWeights w = weights(net);
    const CompressReport rep = compress(net);
    EXPECT_NEAR(rep.total_weight_after, w.total, 1e-12 * w.total);
    EXPECT_LE(rep.n_active_after, rep.n_active_before);
    net.validate();
    for (int id : net.leaves()) EXPECT_GT(net.node(id).z, 0.0);
  }
}

TEST(Orientations, ZeroAnglesGiveIdentity) {
  const MaterialNetwork net = MaterialNetwork::full_tree(4);
  for (const LeafOrientation& o : leaf_orientations(net))
    EXPECT_LT((o.rotation - Mat3::Identity()).norm(), 1e-15);
}

TEST(Orientations, ComposedAlongRootPath) {
  const MaterialNetwork net = random_net(5, 17);
  const std::vector<int> parent = net.parents();
  for (const LeafOrientation& o : leaf_orientations(net)) {
    Mat3 q = Mat3::Identity();
    for (int id = o.id; id >= 0; id = parent[id]) q = q * rotation3(net.node(id).angles);
    EXPECT_LT((o.rotation - q).norm(), 1e-12);
    EXPECT_LT((o.rotation.transpose() * o.rotation - Mat3::Identity()).norm(), 1e-12);
  }
}

TEST(Treemap, FractionsSumToOne) {
  const MaterialNetwork two = MaterialNetwork::full_tree(2);
  const Json t2 = export_treemap(two);
  EXPECT_DOUBLE_EQ(t2["tree"]["children"][0]["weight"].get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(t2["tree"]["children"][1]["weight"].get<double>(), 0.5);

  MaterialNetwork net = random_net(5, 18);
  net.node(net.leaves()[3]).z = -1;
  const Json t = export_treemap(net);
  double sum = 0.0;
  int count = 0;
  std::function<void(const Json&)> walk = [&](const Json& j) {
    if (j.contains("children")) {
      for (const Json& c : j["children"]) walk(c);
    } else {
      sum += j["weight"].get<double>();
      ++count;
    }
  };
  walk(t["tree"]);
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_EQ(count, weights(net).n_active);
  EXPECT_EQ(t["n_active"].get<int>(), count);
  EXPECT_DOUBLE_EQ(t["vf1"].get<double>(), weights(net).vf1);
}

TEST(ModelFile, BitExactRoundTrip) {
  MaterialNetwork net = random_net(5, 19);
  net.metadata.emplace_back("seed", "19");
  compress(net);
  const Json j = to_json(net);
  const MaterialNetwork back = network_from_json(Json::parse(j.dump()));
  ASSERT_EQ(back.size(), net.size());
  for (std::size_t i = 0; i < net.size(); ++i) {
    const NetworkNode& a = net.node(static_cast<int>(i));
    const NetworkNode& b = back.node(static_cast<int>(i));
    EXPECT_EQ(a.angles, b.angles);
    EXPECT_EQ(a.z, b.z);
    EXPECT_EQ(a.left, b.left);
    EXPECT_EQ(a.right, b.right);
    EXPECT_EQ(a.phase, b.phase);
    EXPECT_EQ(a.active, b.active);
  }
  EXPECT_EQ(back.root(), net.root());
  EXPECT_EQ(to_json(back).dump(), j.dump());
}

TEST(ModelFile, UnknownVersionFailsLoudly) {
  Json j = to_json(MaterialNetwork::full_tree(2));
  j["version"] = 99;
  EXPECT_THROW(network_from_json(j), ValidationError);
  j["version"] = 1;
  j["nodes"][0]["left"] = 7;
  EXPECT_THROW(network_from_json(j), ValidationError);
}
