#include "dmn/doe.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace dmn;

namespace {

double rel(const Mat6& a, const Mat6& b) { return (a - b).norm() / b.norm(); }

MaterialNetwork random_net(int depth, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MaterialNetwork net = MaterialNetwork::full_tree(depth);
  net.randomize(rng);
  return net;
}

DatasetSettings small_settings(std::uint64_t seed) {
  DatasetSettings s;
  s.count = 30;
  s.train = 24;
  s.seed = seed;
  return s;
}

// Loewner order a <= b.
bool loewner_le(const Mat6& a, const Mat6& b, double tol) {
  const Eigen::SelfAdjointEigenSolver<Mat6> es(b - a);
  return es.eigenvalues().minCoeff() >= -tol * b.norm();
}

}  // namespace

TEST(Doe, PhaseOneGeometricMeanIsOne) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto [p1, p2] = sample_phase_pair(rng);
    EXPECT_NEAR(std::cbrt(p1.E11 * p1.E22 * p1.E33), 1.0, 1e-12);
  }
}

TEST(Doe, NormalizedRatiosStayInTheirIntervals) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 2000; ++i) {
    const SampledOrthotropic p = sample_phase(rng, 3.7);
    EXPECT_NEAR(std::cbrt(p.E11 * p.E22 * p.E33), 3.7, 1e-12);
    for (double r : {p.G12 / std::sqrt(p.E11 * p.E22), p.G23 / std::sqrt(p.E22 * p.E33),
                     p.G31 / std::sqrt(p.E33 * p.E11)}) {
      EXPECT_GE(r, 0.25);
      EXPECT_LE(r, 0.5);
    }
    for (double r : {p.nu12 / std::sqrt(p.E22 / p.E11), p.nu23 / std::sqrt(p.E33 / p.E22),
                     p.nu31 / std::sqrt(p.E11 / p.E33)}) {
      EXPECT_GT(r, 0.0);
      EXPECT_LT(r, 0.5);
    }
    // Unscaled moduli span one decade either side of the geometric mean.
    for (double e : {p.E11, p.E22, p.E33}) {
      EXPECT_LE(std::abs(std::log10(e / 3.7)), 2.0 + 1e-12);
    }
  }
}

TEST(Doe, EveryDrawnComplianceIsPositiveDefinite) {
  std::mt19937_64 rng(3);
  double min_eig = 1e300;
  for (int i = 0; i < 10000; ++i) {
    const auto [p1, p2] = sample_phase_pair(rng);
    for (const SampledOrthotropic* p : {&p1, &p2}) {
      const Mat6 d = p->compliance();
      const Eigen::SelfAdjointEigenSolver<Mat6> es(d);
      const double lo = es.eigenvalues().minCoeff() / es.eigenvalues().maxCoeff();
      min_eig = std::min(min_eig, lo);
      ASSERT_GT(es.eigenvalues().minCoeff(), 0.0);
    }
  }
  EXPECT_GT(min_eig, 0.0);
}

TEST(Doe, ContrastSpansSixDecades) {
  std::mt19937_64 rng(4);
  double lo = 1e300, hi = -1e300;
  for (int i = 0; i < 10000; ++i) {
    const auto [p1, p2] = sample_phase_pair(rng);
    const double c = std::log10(std::cbrt(p2.E11 * p2.E22 * p2.E33));
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  EXPECT_GE(lo, -3.0);
  EXPECT_LE(hi, 3.0);
  EXPECT_LT(lo, -2.95);
  EXPECT_GT(hi, 2.95);

  // Tension-modulus contrast over 500 draws reaches 10^3 and beyond.
  std::mt19937_64 rng2(5);
  double max_contrast = 0.0;
  for (int i = 0; i < 500; ++i) {
    const auto [p1, p2] = sample_phase_pair(rng2);
    for (double a : {p1.E11, p1.E22, p1.E33})
      for (double b : {p2.E11, p2.E22, p2.E33})
        max_contrast = std::max({max_contrast, a / b, b / a});
  }
  EXPECT_GT(max_contrast, 1e3);
}

TEST(Doe, ComplianceEncodesPoissonRatios) {
  std::mt19937_64 rng(6);
  const SampledOrthotropic p = sample_phase(rng, 1.0);
  const Mat6 d = p.compliance();
  // Uniaxial stress along j: eps_i / eps_j = -nu_ij.
  EXPECT_NEAR(d(0, 1) / d(1, 1), -p.nu12, 1e-14);
  EXPECT_NEAR(d(1, 2) / d(2, 2), -p.nu23, 1e-14);
  EXPECT_NEAR(d(2, 0) / d(0, 0), -p.nu31, 1e-14);
  EXPECT_NEAR(1.0 / d(0, 0), p.E11, 1e-12 * p.E11);
  // Mandel shear: sigma_23 = 2 G23 eps_23.
  EXPECT_NEAR(1.0 / d(3, 3), 2 * p.G23, 1e-12 * p.G23);
  // Same material through the engineering parameterization.
  EXPECT_LT(rel(p.engineering().compliance(), d), 1e-14);
  EXPECT_LT(rel(p.stiffness() * d, Mat6::Identity()), 1e-12);
}

TEST(Doe, RejectionLoopGivesUp) {
  // Scale NaN makes every draw fail the check.
  std::mt19937_64 rng(7);
  EXPECT_THROW(sample_phase(rng, std::nan("")), NumericalError);
}

TEST(Doe, DefaultSplitIs400And100) {
  const DatasetSettings s;
  EXPECT_EQ(s.count, 500);
  EXPECT_EQ(s.train, 400);
  const Dataset d = generate_dataset(laminate_oracle(0.4), s);
  EXPECT_EQ(d.train.size(), 400u);
  EXPECT_EQ(d.test.size(), 100u);
  EXPECT_EQ(d.train.front().id, 0);
  EXPECT_EQ(d.test.front().id, 400);
}

TEST(Doe, SameSeedGivesIdenticalFiles) {
  const Oracle o = teacher_oracle(random_net(3, 11));
  const std::string a = dataset_to_jsonl(generate_dataset(o, small_settings(42)));
  const std::string b = dataset_to_jsonl(generate_dataset(o, small_settings(42)));
  const std::string c = dataset_to_jsonl(generate_dataset(o, small_settings(43)));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Doe, TeacherWithTwoEqualLeavesIsOneBlock) {
  MaterialNetwork net = MaterialNetwork::full_tree(2);
  const Dataset d = generate_dataset(teacher_oracle(net), small_settings(1));
  for (const Sample& s : d.train) {
    const Mat6 expect = homogenize_linear({s.c_p1, *s.c_p2, 1.0, 1.0}).c;
    EXPECT_LT(rel(s.c_target, expect), 1e-13);
    EXPECT_LT(rel(s.c_target, oracle::laminate_stiffness(s.c_p1, *s.c_p2, 0.5)), 1e-9);
  }
}

TEST(Doe, TeacherObeysVoigtReussBounds) {
  const MaterialNetwork net = random_net(4, 12);
  const Dataset d = generate_dataset(teacher_oracle(net), small_settings(2));
  const auto leaves = leaf_orientations(net);
  for (const Sample& s : d.train) {
    Mat6 voigt = Mat6::Zero(), reuss_c = Mat6::Zero();
    for (const LeafOrientation& o : leaves) {
      const Mat6 r = oracle::mandel_rotation(o.rotation);
      // Leaf stiffness expressed in the macro frame.
      const Mat6 c = r.transpose() * (o.phase == 1 ? s.c_p1 : *s.c_p2) * r;
      voigt += o.weight * c;
      reuss_c += o.weight * c.inverse();
    }
    const Mat6 reuss = reuss_c.inverse();
    EXPECT_TRUE(loewner_le(s.c_target, voigt, 1e-10));
    EXPECT_TRUE(loewner_le(reuss, s.c_target, 1e-10));
  }
}

TEST(Doe, TargetsDoNotDependOnSampleOrder) {
  const Oracle o = teacher_oracle(random_net(3, 13));
  const Dataset d = generate_dataset(o, small_settings(3));
  std::vector<Sample> all = d.train;
  all.insert(all.end(), d.test.begin(), d.test.end());
  std::reverse(all.begin(), all.end());
  for (const Sample& s : all) {
    const Mat6 t = o(s);
    EXPECT_EQ(Mat6(0.5 * (t + t.transpose())), s.c_target);
  }
}

TEST(Doe, LaminateOracleMatchesIndependentSolve) {
  const Dataset d = generate_dataset(laminate_oracle(0.3), small_settings(4));
  for (const Sample& s : d.test)
    EXPECT_LT(rel(s.c_target, oracle::laminate_stiffness(s.c_p1, *s.c_p2, 0.3)), 1e-9);
}

TEST(Doe, JsonLinesRoundTripIsExact) {
  Dataset d = generate_dataset(teacher_oracle(random_net(3, 14)), small_settings(5));
  d.oracle_info = {{"depth", 3}};
  std::istringstream in(dataset_to_jsonl(d));
  const Dataset back = dataset_from_jsonl(in);
  ASSERT_EQ(back.train.size(), d.train.size());
  ASSERT_EQ(back.test.size(), d.test.size());
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    EXPECT_EQ(back.train[i].id, d.train[i].id);
    EXPECT_EQ(back.train[i].c_p1, d.train[i].c_p1);
    EXPECT_EQ(*back.train[i].c_p2, *d.train[i].c_p2);
    EXPECT_EQ(back.train[i].c_target, d.train[i].c_target);
  }
  EXPECT_EQ(back.settings.seed, 5u);
  EXPECT_EQ(dataset_to_jsonl(back), dataset_to_jsonl(d));
}

TEST(Doe, SinglePhaseDatasetsOmitPhaseTwo) {
  MaterialNetwork net = MaterialNetwork::full_tree(3, 1);
  std::mt19937_64 rng(15);
  net.randomize(rng);
  DatasetSettings s = small_settings(6);
  s.num_phases = 1;
  const Dataset d = generate_dataset(teacher_oracle(net), s);
  for (const Sample& x : d.train) EXPECT_FALSE(x.c_p2.has_value());
  std::istringstream in(dataset_to_jsonl(d));
  EXPECT_EQ(dataset_from_jsonl(in).train.size(), d.train.size());
}

TEST(Doe, ExternalOracleReplaysImportedTargets) {
  const Dataset d = generate_dataset(laminate_oracle(0.6), small_settings(7));
  std::vector<Sample> recs = d.train;
  recs.insert(recs.end(), d.test.begin(), d.test.end());
  const Dataset again = generate_dataset(external_oracle(recs), small_settings(7));
  EXPECT_EQ(dataset_to_jsonl(again).substr(dataset_to_jsonl(again).find('\n')),
            dataset_to_jsonl(d).substr(dataset_to_jsonl(d).find('\n')));
  // Different seed: inputs disagree with the records.
  EXPECT_THROW(generate_dataset(external_oracle(recs), small_settings(8)), OracleFailure);
}

TEST(Doe, FailingOracleReportsSampleId) {
  const Oracle bad = [](const Sample& s) -> Mat6 {
    if (s.id == 5) return -Mat6::Identity();
    return s.c_p1;
  };
  try {
    generate_dataset(bad, small_settings(9));
    FAIL();
  } catch (const OracleFailure& e) {
    EXPECT_EQ(e.sample_id(), 5);
  }
}

TEST(Doe, MalformedFilesAreRejected) {
  std::istringstream empty("");
  EXPECT_THROW(dataset_from_jsonl(empty), ValidationError);
  std::istringstream wrong("{\"format\":\"other\",\"version\":1}\n");
  EXPECT_THROW(dataset_from_jsonl(wrong), ValidationError);
  std::istringstream broken(
      "{\"format\":\"dmn-dataset\",\"version\":1,\"num_phases\":2}\n{\"id\":0,\"split\":\"train\"}\n");
  EXPECT_THROW(dataset_from_jsonl(broken), ValidationError);
  EXPECT_THROW(load_dataset("/nonexistent/file.jsonl"), IoError);
}
