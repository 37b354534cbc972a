#pragma once

// JSON persistence of networks and the structural reports (treemap and
// leaf orientations).

#include "dmn/errors.hpp"
#include "dmn/network.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>

namespace dmn {

using Json = nlohmann::json;

inline constexpr const char* kModelFormat = "dmn-model";
inline constexpr int kModelVersion = 1;

inline Json to_json(const MaterialNetwork& net) {
  Json nodes = Json::array();
  for (std::size_t i = 0; i < net.size(); ++i) {
    const NetworkNode& nd = net.node(static_cast<int>(i));
    nodes.push_back({{"id", i},
                     {"left", nd.left},
                     {"right", nd.right},
                     {"alpha", nd.angles.alpha},
                     {"beta", nd.angles.beta},
                     {"gamma", nd.angles.gamma},
                     {"z", nd.z},
                     {"phase", nd.phase},
                     {"active", nd.active}});
  }
  Json meta = Json::object();
  for (const auto& [k, v] : net.metadata) meta[k] = v;
  return {{"format", kModelFormat}, {"version", kModelVersion}, {"depth", net.depth()},
          {"num_phases", net.num_phases()}, {"root", net.root()}, {"nodes", nodes},
          {"metadata", meta}};
}

inline MaterialNetwork network_from_json(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != kModelFormat)
      throw ValidationError("not a model file (format field)");
    const int version = j.at("version").get<int>();
    if (version != kModelVersion)
      throw ValidationError("unsupported model file version " + std::to_string(version));
    std::vector<NetworkNode> nodes;
    for (const Json& n : j.at("nodes")) {
      if (n.at("id").get<std::size_t>() != nodes.size())
        throw ValidationError("model nodes must be listed in id order");
      NetworkNode nd;
      nd.left = n.at("left").get<int>();
      nd.right = n.at("right").get<int>();
      nd.angles = {n.at("alpha").get<double>(), n.at("beta").get<double>(),
                   n.at("gamma").get<double>()};
      nd.z = n.at("z").get<double>();
      nd.phase = n.at("phase").get<int>();
      nd.active = n.at("active").get<bool>();
      nodes.push_back(nd);
    }
    MaterialNetwork net = NetworkAccess::make(j.at("depth").get<int>(), j.at("num_phases").get<int>(),
                                              j.at("root").get<int>(), std::move(nodes));
    if (j.contains("metadata"))
      for (const auto& [k, v] : j.at("metadata").items())
        net.metadata.emplace_back(k, v.is_string() ? v.get<std::string>() : v.dump());
    net.validate();
    return net;
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed model file: ") + e.what());
  }
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

inline void save_network(const MaterialNetwork& net, const std::string& path) {
  write_text_file(path, to_json(net).dump(1) + "\n");
}

inline MaterialNetwork load_network(const std::string& path) {
  return network_from_json(read_json_file(path));
}

/// Nested weight/phase tree of the active nodes (no rotations).
inline Json export_treemap(const MaterialNetwork& net) {
  const NetworkWeights w = weights(net);
  std::function<Json(int)> rec = [&](int id) -> Json {
    const NetworkNode& nd = net.node(id);
    Json j = {{"id", id}, {"weight", w.w[id] / w.total}};
    if (nd.is_leaf()) {
      j["phase"] = nd.phase;
      return j;
    }
    Json children = Json::array();
    for (int c : {nd.left, nd.right})
      if (w.w[c] > 0.0) children.push_back(rec(c));
    j["children"] = children;
    return j;
  };
  return {{"n_active", w.n_active}, {"vf1", w.vf1}, {"tree", rec(net.root())}};
}

inline Json export_orientations(const MaterialNetwork& net) {
  Json leaves = Json::array();
  for (const LeafOrientation& o : leaf_orientations(net)) {
    Json q = Json::array();
    for (int r = 0; r < 3; ++r) q.push_back({o.rotation(r, 0), o.rotation(r, 1), o.rotation(r, 2)});
    leaves.push_back({{"id", o.id},
                      {"phase", o.phase},
                      {"weight", o.weight},
                      {"rotation", q},
                      {"alpha", o.angles.alpha},
                      {"beta", o.angles.beta},
                      {"gamma", o.angles.gamma}});
  }
  return {{"convention", "Q = Rx(-alpha) Ry(-beta) Rz(-gamma); leaf Q composed as "
                         "Q_leaf * Q_parent * ... * Q_root"},
          {"leaves", leaves}};
}

}  // namespace dmn
