#pragma once

// Offline data generation: orthotropic phase sampling, target oracles and
// the JSON-lines dataset format.

#include "dmn/block.hpp"
#include "dmn/errors.hpp"
#include "dmn/materials.hpp"
#include "dmn/network.hpp"
#include "dmn/network_io.hpp"
#include "dmn/tensor.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace dmn {

/// Sampled orthotropic phase. Poisson ratios follow D_ij = -nu_ij / E_j with
/// the 1-3 coupling stored as nu31 (D13 = -nu31 / E11).
struct SampledOrthotropic {
  double E11 = 1, E22 = 1, E33 = 1;
  double G23 = 0.5, G31 = 0.5, G12 = 0.5;
  double nu12 = 0, nu23 = 0, nu31 = 0;

  Mat6 compliance() const {
    Mat6 d = Mat6::Zero();
    d(0, 0) = 1 / E11;
    d(1, 1) = 1 / E22;
    d(2, 2) = 1 / E33;
    d(0, 1) = d(1, 0) = -nu12 / E22;
    d(0, 2) = d(2, 0) = -nu31 / E11;
    d(1, 2) = d(2, 1) = -nu23 / E33;
    d(3, 3) = 1 / (2 * G23);
    d(4, 4) = 1 / (2 * G31);
    d(5, 5) = 1 / (2 * G12);
    return d;
  }

  bool positive_definite() const {
    if (!(E11 > 0 && E22 > 0 && E33 > 0 && G23 > 0 && G31 > 0 && G12 > 0)) return false;
    return Eigen::LLT<Mat6>(compliance()).info() == Eigen::Success;
  }

  StiffnessM6 stiffness() const {
    const Eigen::LLT<Mat6> llt(compliance());
    if (llt.info() != Eigen::Success) throw ValidationError("sampled compliance is not positive definite");
    Mat6 c = llt.solve(Mat6::Identity());
    return 0.5 * (c + c.transpose());
  }

  /// Same material in the online engineering parameterization.
  OrthotropicElastic engineering() const {
    return {E11, E22, E33, G12, G31, G23, nu12, nu31 * E33 / E11, nu23};
  }

  Json to_json() const {
    return {{"E11", E11}, {"E22", E22}, {"E33", E33}, {"G23", G23}, {"G31", G31},
            {"G12", G12}, {"nu12", nu12}, {"nu23", nu23}, {"nu31", nu31}};
  }
};

inline constexpr int kMaxSampleTries = 1000;

/// One phase: random tension moduli rescaled to geometric mean `ebar`, then
/// normalized shear moduli and Poisson ratios.
template <class Rng>
SampledOrthotropic sample_phase(Rng& rng, double ebar) {
  std::uniform_real_distribution<double> ulog(-1.0, 1.0);
  std::uniform_real_distribution<double> ushear(0.25, 0.5);
  std::uniform_real_distribution<double> unu(0.0, 0.5);
  auto open_nu = [&] {
    double v = 0.0;
    while (v == 0.0) v = unu(rng);
    return v;
  };
  for (int attempt = 0; attempt < kMaxSampleTries; ++attempt) {
    SampledOrthotropic p;
    p.E11 = std::pow(10.0, ulog(rng));
    p.E22 = std::pow(10.0, ulog(rng));
    p.E33 = std::pow(10.0, ulog(rng));
    const double scale = ebar / std::cbrt(p.E11 * p.E22 * p.E33);
    p.E11 *= scale;
    p.E22 *= scale;
    p.E33 *= scale;
    p.G12 = ushear(rng) * std::sqrt(p.E11 * p.E22);
    p.G23 = ushear(rng) * std::sqrt(p.E22 * p.E33);
    p.G31 = ushear(rng) * std::sqrt(p.E33 * p.E11);
    p.nu12 = open_nu() * std::sqrt(p.E22 / p.E11);
    p.nu23 = open_nu() * std::sqrt(p.E33 / p.E22);
    p.nu31 = open_nu() * std::sqrt(p.E11 / p.E33);
    if (p.positive_definite()) return p;
  }
  throw NumericalError("phase sampling: no positive definite compliance after 1000 tries");
}

/// Phase 1 at unit scale, phase 2 with log10 scale in U[-3, 3].
template <class Rng>
std::pair<SampledOrthotropic, SampledOrthotropic> sample_phase_pair(Rng& rng) {
  SampledOrthotropic p1 = sample_phase(rng, 1.0);
  std::uniform_real_distribution<double> ucontrast(-3.0, 3.0);
  const double ebar2 = std::pow(10.0, ucontrast(rng));
  SampledOrthotropic p2 = sample_phase(rng, ebar2);
  return {p1, p2};
}

struct Sample {
  int id = 0;
  StiffnessM6 c_p1 = Mat6::Identity();
  std::optional<StiffnessM6> c_p2;
  StiffnessM6 c_target = Mat6::Identity();
};

// ---------------------------------------------------------------------------
// Oracles.

/// Maps phase stiffnesses (with sample id) to the overall stiffness.
using Oracle = std::function<StiffnessM6(const Sample&)>;

/// Frozen reference network.
inline Oracle teacher_oracle(MaterialNetwork net) {
  net.validate();
  return [net = std::move(net)](const Sample& s) {
    return forward_linear(net, s.c_p1, s.c_p2).cbar_rve;
  };
}

/// Two-phase laminate stacked along direction 3 with phase-1 fraction f.
inline Oracle laminate_oracle(double f1) {
  if (!(f1 > 0.0 && f1 < 1.0)) throw ValidationError("laminate fraction must lie in (0, 1)");
  return [f1](const Sample& s) {
    if (!s.c_p2) throw ValidationError("laminate oracle needs two phases");
    return homogenize_linear({s.c_p1, *s.c_p2, f1, 1.0 - f1}).c;
  };
}

/// Targets looked up by sample id from externally computed data; inputs must
/// match the imported record.
inline Oracle external_oracle(const std::vector<Sample>& records) {
  std::map<int, Sample> by_id;
  for (const Sample& s : records) by_id[s.id] = s;
  return [by_id = std::move(by_id)](const Sample& s) {
    const auto it = by_id.find(s.id);
    if (it == by_id.end()) throw ValidationError("no external record");
    const Sample& r = it->second;
    const double tol = 1e-9 * r.c_p1.norm();
    bool same = (r.c_p1 - s.c_p1).norm() <= tol && r.c_p2.has_value() == s.c_p2.has_value();
    if (same && r.c_p2) same = (*r.c_p2 - *s.c_p2).norm() <= 1e-9 * r.c_p2->norm();
    if (!same) throw ValidationError("external record inputs differ from the sampled phases");
    return r.c_target;
  };
}

// ---------------------------------------------------------------------------
// Dataset generation.

struct DatasetSettings {
  int count = 500;
  int train = 400;
  int num_phases = 2;
  std::uint64_t seed = 0;
  std::string oracle = "teacher";  // recorded only
};

struct Dataset {
  DatasetSettings settings;
  std::vector<Sample> train;
  std::vector<Sample> test;
  Json oracle_info = Json::object();

  std::size_t size() const { return train.size() + test.size(); }
};

inline void check_sample(const Sample& s) {
  auto spd = [](const Mat6& m) {
    if (!m.allFinite()) return false;
    if ((m - m.transpose()).norm() > 1e-9 * m.norm()) return false;
    return Eigen::LLT<Mat6>(0.5 * (m + m.transpose())).info() == Eigen::Success;
  };
  if (!spd(s.c_p1) || (s.c_p2 && !spd(*s.c_p2)))
    throw ValidationError("sample " + std::to_string(s.id) + ": phase stiffness is not SPD");
  if (!spd(s.c_target))
    throw ValidationError("sample " + std::to_string(s.id) + ": target is not SPD");
}

/// Draws all phase inputs sequentially from a generator seeded with
/// `settings.seed`, then evaluates targets. The first `train` samples form
/// the training split.
inline Dataset generate_dataset(const Oracle& oracle, const DatasetSettings& settings) {
  if (settings.count < 1 || settings.train < 0 || settings.train > settings.count)
    throw ValidationError("dataset split must satisfy 0 <= train <= count, count >= 1");
  if (settings.num_phases != 1 && settings.num_phases != 2)
    throw ValidationError("num_phases must be 1 or 2");
  std::mt19937_64 rng(settings.seed);
  std::vector<Sample> all(settings.count);
  for (int i = 0; i < settings.count; ++i) {
    Sample& s = all[i];
    s.id = i;
    if (settings.num_phases == 2) {
      const auto [p1, p2] = sample_phase_pair(rng);
      s.c_p1 = p1.stiffness();
      s.c_p2 = p2.stiffness();
    } else {
      s.c_p1 = sample_phase(rng, 1.0).stiffness();
    }
  }
  for (Sample& s : all) {
    try {
      Mat6 t = oracle(s);
      s.c_target = 0.5 * (t + t.transpose());
      check_sample(s);
    } catch (const Error& e) {
      throw OracleFailure(e.what(), s.id);
    }
  }
  Dataset d;
  d.settings = settings;
  d.train.assign(all.begin(), all.begin() + settings.train);
  d.test.assign(all.begin() + settings.train, all.end());
  return d;
}

// ---------------------------------------------------------------------------
// JSON-lines I/O.

inline constexpr const char* kDatasetFormat = "dmn-dataset";
inline constexpr int kDatasetVersion = 1;

namespace detail {

inline Json matrix_json(const Mat6& m) {
  Json rows = Json::array();
  for (int i = 0; i < 6; ++i) {
    Json r = Json::array();
    for (int j = 0; j < 6; ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

inline Mat6 matrix_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 6) throw ValidationError("stiffness must be a 6x6 array");
  Mat6 m;
  for (int i = 0; i < 6; ++i) {
    if (!j[i].is_array() || j[i].size() != 6) throw ValidationError("stiffness must be a 6x6 array");
    for (int k = 0; k < 6; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

}  // namespace detail

inline Json sample_to_json(const Sample& s, const std::string& split) {
  Json j = {{"id", s.id}, {"split", split}, {"c_p1", detail::matrix_json(s.c_p1)}};
  if (s.c_p2) j["c_p2"] = detail::matrix_json(*s.c_p2);
  j["c_target"] = detail::matrix_json(s.c_target);
  return j;
}

inline Json dataset_header(const Dataset& d) {
  return {{"format", kDatasetFormat},
          {"version", kDatasetVersion},
          {"mandel_order", {"11", "22", "33", "sqrt2*23", "sqrt2*13", "sqrt2*12"}},
          {"count", d.size()},
          {"train", d.train.size()},
          {"test", d.test.size()},
          {"num_phases", d.settings.num_phases},
          {"seed", d.settings.seed},
          {"generator", "mt19937_64"},
          {"oracle", d.settings.oracle},
          {"oracle_info", d.oracle_info}};
}

inline std::string dataset_to_jsonl(const Dataset& d) {
  std::ostringstream out;
  out << dataset_header(d).dump() << '\n';
  for (const Sample& s : d.train) out << sample_to_json(s, "train").dump() << '\n';
  for (const Sample& s : d.test) out << sample_to_json(s, "test").dump() << '\n';
  return out.str();
}

inline void save_dataset(const Dataset& d, const std::string& path) {
  write_text_file(path, dataset_to_jsonl(d));
}

inline Dataset dataset_from_jsonl(std::istream& in, const std::string& name = "dataset") {
  std::string line;
  Dataset d;
  int lineno = 0;
  try {
    if (!std::getline(in, line)) throw ValidationError(name + ": empty dataset file");
    ++lineno;
    const Json h = Json::parse(line);
    if (h.at("format").get<std::string>() != kDatasetFormat)
      throw ValidationError(name + ": not a dataset file (format field)");
    if (h.at("version").get<int>() != kDatasetVersion)
      throw ValidationError(name + ": unsupported dataset version");
    d.settings.num_phases = h.at("num_phases").get<int>();
    d.settings.seed = h.value("seed", std::uint64_t{0});
    d.settings.oracle = h.value("oracle", std::string("external"));
    d.oracle_info = h.value("oracle_info", Json::object());
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const Json j = Json::parse(line);
      Sample s;
      s.id = j.at("id").get<int>();
      s.c_p1 = detail::matrix_from_json(j.at("c_p1"));
      if (j.contains("c_p2")) s.c_p2 = detail::matrix_from_json(j.at("c_p2"));
      if ((d.settings.num_phases == 2) != s.c_p2.has_value())
        throw ValidationError("phase count disagrees with the header");
      s.c_target = detail::matrix_from_json(j.at("c_target"));
      check_sample(s);
      const std::string split = j.at("split").get<std::string>();
      if (split == "train")
        d.train.push_back(std::move(s));
      else if (split == "test")
        d.test.push_back(std::move(s));
      else
        throw ValidationError("split must be train or test");
    }
    d.settings.count = static_cast<int>(d.size());
    d.settings.train = static_cast<int>(d.train.size());
    if (h.contains("count") && h.at("count").get<std::size_t>() != d.size())
      throw ValidationError("record count disagrees with the header");
  } catch (const ValidationError& e) {
    throw ValidationError(name + ":" + std::to_string(lineno) + ": " + e.what());
  } catch (const Json::exception& e) {
    throw ValidationError(name + ":" + std::to_string(lineno) + ": " + e.what());
  }
  return d;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return dataset_from_jsonl(in, path);
}

}  // namespace dmn
