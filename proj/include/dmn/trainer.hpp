#pragma once

// Offline training: cost, gradient, mini-batch SGD with periodic
// compression, checkpoints and error history.

#include "dmn/doe.hpp"
#include "dmn/errors.hpp"
#include "dmn/network.hpp"
#include "dmn/network_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace dmn {

using Batch = std::vector<const Sample*>;

inline Batch batch_of(const std::vector<Sample>& samples) {
  Batch b;
  b.reserve(samples.size());
  for (const Sample& s : samples) b.push_back(&s);
  return b;
}

/// Relative Frobenius error of one prediction.
inline double sample_error(const Mat6& predicted, const Mat6& target) {
  return (target - predicted).norm() / target.norm();
}

inline double regularization_target(const MaterialNetwork& net) {
  return std::ldexp(1.0, net.depth() - 2);
}

/// Sum of relu(z) over the leaves of the current tree.
inline double activation_sum(const MaterialNetwork& net) {
  double s = 0.0;
  for (int id : net.leaves()) s += relu(net.node(id).z);
  return s;
}

struct CostValue {
  double j = 0.0;    // total
  double mse = 0.0;  // (1 / 2Ns) sum J_s
  double reg = 0.0;  // lambda (sum a(z) - 2^(N-2))^2
  std::vector<double> js;
};

struct CostGradient {
  CostValue cost;
  NetworkGradient grad;
};

namespace detail {

inline Mat6 predict(const MaterialNetwork& net, const Sample& s) {
  return forward_linear(net, s.c_p1, s.c_p2).cbar_rve;
}

/// Runs f(i) for i in [0, n) on up to `threads` workers.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& f) {
  const std::size_t workers = std::min<std::size_t>(std::max(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

inline CostValue cost(const MaterialNetwork& net, const Batch& batch, double lambda) {
  if (batch.empty()) throw ValidationError("cost needs a nonempty batch");
  CostValue c;
  c.js.reserve(batch.size());
  for (const Sample* s : batch) {
    const double e = sample_error(detail::predict(net, *s), s->c_target);
    c.js.push_back(e * e);
  }
  c.mse = std::accumulate(c.js.begin(), c.js.end(), 0.0) / (2.0 * batch.size());
  const double dev = activation_sum(net) - regularization_target(net);
  c.reg = lambda * dev * dev;
  c.j = c.mse + c.reg;
  return c;
}

/// Cost and its exact gradient over a batch. Per-sample gradients are
/// computed independently and summed in batch order.
inline CostGradient cost_gradient(const MaterialNetwork& net, const Batch& batch, double lambda,
                                  int threads = 1) {
  if (batch.empty()) throw ValidationError("cost needs a nonempty batch");
  const std::size_t n = batch.size();
  std::vector<NetworkGradient> per(n);
  std::vector<double> js(n);
  detail::parallel_for(n, threads, [&](std::size_t i) {
    const Sample& s = *batch[i];
    const NetworkOutputLinear o = forward_linear(net, s.c_p1, s.c_p2);
    const Mat6 diff = o.cbar_rve - s.c_target;
    const double nt2 = s.c_target.squaredNorm();
    js[i] = diff.squaredNorm() / nt2;
    per[i] = backprop_linear(net, o, diff / (nt2 * static_cast<double>(n)));
  });
  CostGradient out;
  out.grad = NetworkGradient(net.size());
  for (const NetworkGradient& g : per) out.grad += g;
  out.cost.js = std::move(js);
  out.cost.mse =
      std::accumulate(out.cost.js.begin(), out.cost.js.end(), 0.0) / (2.0 * static_cast<double>(n));
  const double dev = activation_sum(net) - regularization_target(net);
  out.cost.reg = lambda * dev * dev;
  out.cost.j = out.cost.mse + out.cost.reg;
  for (int id : net.leaves()) out.grad.dz[id] += 2.0 * lambda * dev * relu_derivative(net.node(id).z);
  return out;
}

struct ErrorSummary {
  double mean = 0.0;
  double max = 0.0;
};

inline ErrorSummary evaluate_errors(const MaterialNetwork& net, const std::vector<Sample>& samples,
                                    int threads = 1) {
  ErrorSummary r;
  if (samples.empty()) return r;
  std::vector<double> e(samples.size());
  detail::parallel_for(samples.size(), threads, [&](std::size_t i) {
    e[i] = sample_error(detail::predict(net, samples[i]), samples[i].c_target);
  });
  r.mean = std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size());
  r.max = *std::max_element(e.begin(), e.end());
  return r;
}

// ---------------------------------------------------------------------------
// SGD driver.

struct TrainConfig {
  int batch_size = 20;
  int epochs = 5000;
  double lr_z = 0.01;
  double lr_angles = 0.02;
  /// Epochs after which both rates are doubled.
  std::vector<int> lr_doubling_epochs;
  double lambda = 0.001;
  int compress_every = 10;  // 0 disables compression
  CompressOptions compress;
  double clip = 10.0;
  std::uint64_t seed = 0;
  int eval_every = 1;
  int checkpoint_every = 0;  // 0 disables checkpoints
  std::string checkpoint_path;
  int threads = 1;

  void validate() const {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (epochs < 0) throw ValidationError("epochs must be >= 0");
    if (!(lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
    if (!(lr_z >= 0.0) || !(lr_angles >= 0.0)) throw ValidationError("learning rates must be >= 0");
    if (compress_every < 0 || eval_every < 1 || checkpoint_every < 0)
      throw ValidationError("periods must be nonnegative (eval_every >= 1)");
    if (!(clip > 0.0)) throw ValidationError("clip must be positive");
    if (checkpoint_every > 0 && checkpoint_path.empty())
      throw ValidationError("checkpoint_every needs a checkpoint path");
  }

  Json to_json() const {
    return {{"batch_size", batch_size},
            {"epochs", epochs},
            {"lr_z", lr_z},
            {"lr_angles", lr_angles},
            {"lr_doubling_epochs", lr_doubling_epochs},
            {"lambda", lambda},
            {"compress_every", compress_every},
            {"compress_rotation_tol", compress.rotation_tol},
            {"compress_fraction_tol", compress.fraction_tol},
            {"compress_merge", compress.merge},
            {"clip", clip},
            {"seed", seed},
            {"eval_every", eval_every},
            {"optimizer", "sgd"}};
  }
};

struct EpochRecord {
  int epoch = 0;
  double e_train = 0.0;
  double e_test = 0.0;
  double max_test = 0.0;
  double cost = 0.0;  // mean batch cost over the epoch
  int n_active = 0;
  double vf1 = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> history;
  std::vector<CompressReport> compressions;
  double seconds = 0.0;

  const EpochRecord& last() const {
    if (history.empty()) throw ValidationError("empty training history");
    return history.back();
  }

  std::string csv() const {
    std::ostringstream out;
    out << "epoch,e_train,e_test,max_e_test,n_active,vf1,cost\n";
    out << std::setprecision(10);
    for (const EpochRecord& r : history)
      out << r.epoch << ',' << r.e_train << ',' << r.e_test << ',' << r.max_test << ','
          << r.n_active << ',' << r.vf1 << ',' << r.cost << '\n';
    return out.str();
  }

  /// One table row: epochs, mean train error, mean test error, max test
  /// error (percent) and vf1.
  std::string table() const {
    const EpochRecord& r = last();
    std::ostringstream out;
    out << std::fixed << std::setprecision(2);
    out << "epochs  train_err%  test_err%  max_test_err%  vf1    N_a\n";
    out << std::setw(6) << r.epoch << "  " << std::setw(10) << 100 * r.e_train << "  "
        << std::setw(9) << 100 * r.e_test << "  " << std::setw(13) << 100 * r.max_test << "  "
        << std::setprecision(3) << r.vf1 << "  " << r.n_active << '\n';
    return out.str();
  }
};

inline constexpr const char* kCheckpointFormat = "dmn-checkpoint";
inline constexpr int kCheckpointVersion = 1;

class Trainer {
 public:
  Trainer(MaterialNetwork net, TrainConfig cfg)
      : net_(std::move(net)), cfg_(std::move(cfg)), rng_(cfg_.seed),
        lr_z_(cfg_.lr_z), lr_angles_(cfg_.lr_angles) {
    cfg_.validate();
    net_.validate();
  }

  const MaterialNetwork& network() const { return net_; }
  const TrainConfig& config() const { return cfg_; }
  const TrainReport& report() const { return report_; }
  int epoch() const { return epoch_; }
  double lr_z() const { return lr_z_; }
  double lr_angles() const { return lr_angles_; }

  /// One pass over the shuffled training set.
  double run_epoch(const std::vector<Sample>& train) {
    if (train.empty()) throw ValidationError("training set is empty");
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng_);
    double cost_sum = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      Batch b;
      const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
      for (std::size_t k = start; k < end; ++k) b.push_back(&train[order[k]]);
      const CostGradient cg = cost_gradient(net_, b, cfg_.lambda, cfg_.threads);
      apply(cg.grad);
      cost_sum += cg.cost.j;
      ++steps;
    }
    ++epoch_;
    if (std::find(cfg_.lr_doubling_epochs.begin(), cfg_.lr_doubling_epochs.end(), epoch_) !=
        cfg_.lr_doubling_epochs.end()) {
      lr_z_ *= 2.0;
      lr_angles_ *= 2.0;
    }
    if (cfg_.compress_every > 0 && epoch_ % cfg_.compress_every == 0)
      report_.compressions.push_back(dmn::compress(net_, cfg_.compress));
    return cost_sum / steps;
  }

  /// Trains until `cfg.epochs` total epochs have run. `on_epoch` sees every
  /// recorded row.
  const TrainReport& train(const Dataset& data,
                           const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    while (epoch_ < cfg_.epochs) {
      const double c = run_epoch(data.train);
      if (epoch_ % cfg_.eval_every == 0 || epoch_ == cfg_.epochs) {
        EpochRecord r = evaluate(data);
        r.cost = c;
        report_.history.push_back(r);
        if (on_epoch) on_epoch(r);
      }
      if (cfg_.checkpoint_every > 0 && epoch_ % cfg_.checkpoint_every == 0)
        write_text_file(cfg_.checkpoint_path, checkpoint().dump(1) + "\n");
    }
    report_.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report_;
  }

  EpochRecord evaluate(const Dataset& data) const {
    EpochRecord r;
    r.epoch = epoch_;
    r.e_train = evaluate_errors(net_, data.train, cfg_.threads).mean;
    const ErrorSummary te = evaluate_errors(net_, data.test, cfg_.threads);
    r.e_test = te.mean;
    r.max_test = te.max;
    const NetworkWeights w = weights(net_);
    r.n_active = w.n_active;
    r.vf1 = w.vf1;
    return r;
  }

  Json checkpoint() const {
    std::ostringstream rng;
    rng << rng_;
    return {{"format", kCheckpointFormat}, {"version", kCheckpointVersion},
            {"epoch", epoch_},             {"lr_z", lr_z_},
            {"lr_angles", lr_angles_},     {"rng", rng.str()},
            {"config", cfg_.to_json()},    {"model", to_json(net_)}};
  }

  /// Restores network, epoch, rates and generator state; `cfg` supplies the
  /// remaining settings (typically a larger epoch budget).
  static Trainer resume(const Json& ck, TrainConfig cfg) {
    try {
      if (ck.at("format").get<std::string>() != kCheckpointFormat ||
          ck.at("version").get<int>() != kCheckpointVersion)
        throw ValidationError("not a version-1 checkpoint");
      Trainer t(network_from_json(ck.at("model")), std::move(cfg));
      t.epoch_ = ck.at("epoch").get<int>();
      t.lr_z_ = ck.at("lr_z").get<double>();
      t.lr_angles_ = ck.at("lr_angles").get<double>();
      std::istringstream in(ck.at("rng").get<std::string>());
      in >> t.rng_;
      if (!in) throw ValidationError("bad generator state in checkpoint");
      return t;
    } catch (const Json::exception& e) {
      throw ValidationError(std::string("malformed checkpoint: ") + e.what());
    }
  }

 private:
  void apply(const NetworkGradient& g) {
    auto clip = [c = cfg_.clip](double v) { return std::clamp(v, -c, c); };
    for (int id : net_.reachable()) {
      NetworkNode& nd = net_.node(id);
      if (nd.is_leaf()) nd.z -= lr_z_ * clip(g.dz[id]);
      nd.angles.alpha -= lr_angles_ * clip(g.dangles[id].alpha);
      nd.angles.beta -= lr_angles_ * clip(g.dangles[id].beta);
      nd.angles.gamma -= lr_angles_ * clip(g.dangles[id].gamma);
    }
  }

  MaterialNetwork net_;
  TrainConfig cfg_;
  std::mt19937_64 rng_;
  double lr_z_;
  double lr_angles_;
  int epoch_ = 0;
  TrainReport report_;
};

}  // namespace dmn
