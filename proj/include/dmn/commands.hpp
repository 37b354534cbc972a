#pragma once

// Command implementations behind the `dmn` executable. Each command loads
// every input before writing any output and leaves a run manifest next to
// its primary output.

#include "dmn/doe.hpp"
#include "dmn/errors.hpp"
#include "dmn/materials.hpp"
#include "dmn/network.hpp"
#include "dmn/network_io.hpp"
#include "dmn/online.hpp"
#include "dmn/trainer.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace dmn {

inline constexpr const char* kArtifactVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Run manifest.

inline constexpr const char* kManifestFormat = "dmn-manifest";
inline constexpr int kManifestVersion = 1;

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  Json config = Json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string artifact_version = kArtifactVersion;
  std::string started;
  double seconds = 0.0;

  Json to_json() const {
    return {{"format", kManifestFormat}, {"version", kManifestVersion},
            {"command", command},         {"argv", argv},
            {"config", config},           {"seed", seed},
            {"inputs", inputs},           {"outputs", outputs},
            {"artifact_version", artifact_version},
            {"started", started},         {"seconds", seconds}};
  }

  static RunManifest from_json(const Json& j) {
    try {
      if (j.at("format").get<std::string>() != kManifestFormat ||
          j.at("version").get<int>() != kManifestVersion)
        throw ValidationError("not a version-1 manifest");
      RunManifest m;
      m.command = j.at("command").get<std::string>();
      m.argv = j.at("argv").get<std::vector<std::string>>();
      m.config = j.at("config");
      m.seed = j.at("seed").get<std::uint64_t>();
      m.inputs = j.at("inputs").get<std::vector<std::string>>();
      m.outputs = j.at("outputs").get<std::vector<std::string>>();
      m.artifact_version = j.at("artifact_version").get<std::string>();
      m.started = j.at("started").get<std::string>();
      m.seconds = j.at("seconds").get<double>();
      return m;
    } catch (const Json::exception& e) {
      throw ValidationError(std::string("malformed manifest: ") + e.what());
    }
  }
};

inline std::string manifest_path(const std::string& primary_output) {
  return primary_output + ".manifest.json";
}

/// Timing and bookkeeping shared by all commands.
class Run {
 public:
  Run(std::string command, std::vector<std::string> argv) : t0_(std::chrono::steady_clock::now()) {
    m_.command = std::move(command);
    m_.argv = std::move(argv);
    const std::time_t now = std::time(nullptr);
    std::ostringstream ts;
    ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
    m_.started = ts.str();
  }

  RunManifest& manifest() { return m_; }

  /// Path of the manifest that will describe this run.
  std::string reference(const std::string& primary) const { return manifest_path(primary); }

  void finish(const std::string& primary) {
    m_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    write_text_file(manifest_path(primary), m_.to_json().dump(1) + "\n");
  }

 private:
  RunManifest m_;
  std::chrono::steady_clock::time_point t0_;
};

// ---------------------------------------------------------------------------
// Material and load-path files.

inline constexpr const char* kMaterialsFormat = "dmn-materials";
inline constexpr const char* kPathFormat = "dmn-path";

/// {"format": "dmn-materials", "version": 1, "phases": [record | null, ...]}
/// Records follow make_material; {"model": "network", "network": file,
/// "materials": file} nests a sub-network solved by sub-cycling.
inline PhaseMaterials load_materials(const std::string& path, SolveConfig cfg = {},
                                     int nesting = 0) {
  if (nesting > 8) throw ValidationError("materials files nest too deeply");
  const Json j = read_json_file(path);
  try {
    if (j.at("format").get<std::string>() != kMaterialsFormat)
      throw ValidationError(path + ": not a materials file (format field)");
    if (j.at("version").get<int>() != 1)
      throw ValidationError(path + ": unsupported materials version");
    const std::filesystem::path dir = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
      const std::filesystem::path fp(p);
      return (fp.is_absolute() ? fp : dir / fp).string();
    };
    PhaseMaterials out;
    for (const Json& rec : j.at("phases")) {
      if (rec.is_null()) {
        out.push_back(nullptr);
      } else if (rec.value("model", std::string()) == "network") {
        MaterialNetwork sub = load_network(resolve(rec.at("network").get<std::string>()));
        PhaseMaterials sub_phases =
            load_materials(resolve(rec.at("materials").get<std::string>()), cfg, nesting + 1);
        out.push_back(std::make_shared<NetworkMaterial>(std::move(sub), std::move(sub_phases), cfg));
      } else {
        out.push_back(make_material(rec));
      }
    }
    if (out.empty()) throw ValidationError(path + ": no phases listed");
    return out;
  } catch (const Json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

/// Load program. Uniaxial:
///   {"format": "dmn-path", "version": 1, "kinematics": "finite" | "small",
///    "control": "uniaxial", "waypoints": [...], "steps_per_leg": n, "rate": r}
/// waypoints are F11 (finite) or eps11 (small). Full strain control:
///   {..., "control": "strain", "steps": [{"target": [...], "dt": t}, ...]}
/// with 9-vector F or Mandel strain targets.
struct PathSpec {
  std::string kinematics;
  Json body;
};

inline PathSpec load_path_spec(const std::string& path) {
  const Json j = read_json_file(path);
  try {
    if (j.at("format").get<std::string>() != kPathFormat)
      throw ValidationError(path + ": not a load-path file (format field)");
    if (j.at("version").get<int>() != 1) throw ValidationError(path + ": unsupported path version");
    PathSpec p{j.at("kinematics").get<std::string>(), j};
    if (p.kinematics != "finite" && p.kinematics != "small")
      throw ValidationError(path + ": kinematics must be 'finite' or 'small'");
    return p;
  } catch (const Json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

template <int D>
LoadPath<D> build_path(const PathSpec& spec) {
  const Json& j = spec.body;
  try {
    const std::string control = j.at("control").get<std::string>();
    if (control == "uniaxial")
      return uniaxial_path<D>(j.at("waypoints").get<std::vector<double>>(),
                              j.at("steps_per_leg").get<int>(), j.at("rate").get<double>());
    if (control == "strain") {
      LoadPath<D> p;
      p.control = MacroControl<D>::all_strain();
      for (const Json& s : j.at("steps")) {
        const std::vector<double> t = s.at("target").get<std::vector<double>>();
        if (static_cast<int>(t.size()) != D)
          throw ValidationError("strain targets need " + std::to_string(D) + " components");
        LoadStep<D> st;
        for (int i = 0; i < D; ++i) st.target(i) = t[i];
        st.dt = s.at("dt").get<double>();
        if (!(st.dt > 0)) throw ValidationError("step dt must be positive");
        p.steps.push_back(st);
      }
      if (p.steps.empty()) throw ValidationError("path has no steps");
      return p;
    }
    throw ValidationError("control must be 'uniaxial' or 'strain'");
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed load path: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Commands.

struct GenDataOptions {
  std::string oracle = "teacher";  // teacher | laminate | import
  std::string teacher;             // model file; generated when empty
  int teacher_depth = 3;
  std::uint64_t teacher_seed = 1;
  double laminate_fraction = 0.5;
  std::string import;
  std::optional<int> count;  // 500 unless --split is given
  std::optional<std::pair<int, int>> split;
  std::uint64_t seed = 0;
  int num_phases = 2;
  std::string out = "dataset.jsonl";
};

inline MaterialNetwork random_teacher(int depth, std::uint64_t seed, int num_phases) {
  std::mt19937_64 rng(seed);
  MaterialNetwork net = MaterialNetwork::full_tree(depth, num_phases);
  net.randomize(rng);
  net.metadata.emplace_back("role", "teacher");
  net.metadata.emplace_back("seed", std::to_string(seed));
  return net;
}

inline Dataset resplit(Dataset d, int train, int test) {
  std::vector<Sample> all = std::move(d.train);
  all.insert(all.end(), d.test.begin(), d.test.end());
  if (static_cast<int>(all.size()) != train + test)
    throw ValidationError("split " + std::to_string(train) + "," + std::to_string(test) +
                          " does not match " + std::to_string(all.size()) + " records");
  d.train.assign(all.begin(), all.begin() + train);
  d.test.assign(all.begin() + train, all.end());
  d.settings.count = train + test;
  d.settings.train = train;
  return d;
}

inline int cmd_gen_data(const GenDataOptions& o, const std::vector<std::string>& argv,
                        std::ostream& log) {
  Run run("gen-data", argv);
  int count = o.count.value_or(500);
  int train = count == 500 ? 400 : count * 4 / 5;
  if (o.split) {
    if (o.split->first < 0 || o.split->second < 0) throw ValidationError("split sizes must be >= 0");
    if (o.count && *o.count != o.split->first + o.split->second)
      throw ValidationError("--count differs from the sum of --split");
    count = o.split->first + o.split->second;
    train = o.split->first;
  }
  DatasetSettings s;
  s.count = count;
  s.train = train;
  s.seed = o.seed;
  s.num_phases = o.num_phases;
  s.oracle = o.oracle;

  Dataset d;
  std::optional<MaterialNetwork> generated_teacher;
  if (o.oracle == "teacher") {
    MaterialNetwork t;
    if (o.teacher.empty()) {
      t = random_teacher(o.teacher_depth, o.teacher_seed, o.num_phases);
      generated_teacher = t;
    } else {
      t = load_network(o.teacher);
      run.manifest().inputs.push_back(o.teacher);
    }
    if (t.num_phases() != o.num_phases)
      throw ValidationError("teacher phase count differs from --num-phases");
    const NetworkWeights w = weights(t);
    d = generate_dataset(teacher_oracle(t), s);
    d.oracle_info = {{"depth", t.depth()}, {"n_active", w.n_active}, {"vf1", w.vf1}};
    if (!o.teacher.empty()) d.oracle_info["model"] = o.teacher;
  } else if (o.oracle == "laminate") {
    if (o.num_phases != 2) throw ValidationError("laminate oracle needs two phases");
    d = generate_dataset(laminate_oracle(o.laminate_fraction), s);
    d.oracle_info = {{"fraction_phase1", o.laminate_fraction}, {"normal", 3}};
  } else if (o.oracle == "import") {
    if (o.import.empty()) throw ValidationError("--oracle import needs --import FILE");
    d = load_dataset(o.import);
    run.manifest().inputs.push_back(o.import);
    if (o.split) d = resplit(std::move(d), o.split->first, o.split->second);
    d.settings.oracle = "import";
    d.oracle_info = {{"source", o.import}};
  } else {
    throw ValidationError("--oracle must be teacher, laminate or import");
  }
  d.oracle_info["manifest"] = run.reference(o.out);

  if (generated_teacher) {
    const std::string tpath = o.out + ".teacher.json";
    generated_teacher->metadata.emplace_back("manifest", run.reference(o.out));
    save_network(*generated_teacher, tpath);
    d.oracle_info["model"] = tpath;
    run.manifest().outputs.push_back(tpath);
  }
  save_dataset(d, o.out);
  run.manifest().outputs.insert(run.manifest().outputs.begin(), o.out);
  run.manifest().seed = o.seed;
  run.manifest().config = {{"oracle", o.oracle},           {"count", d.size()},
                           {"train", d.train.size()},      {"test", d.test.size()},
                           {"num_phases", o.num_phases},   {"teacher_depth", o.teacher_depth},
                           {"teacher_seed", o.teacher_seed},
                           {"laminate_fraction", o.laminate_fraction}};
  run.finish(o.out);
  log << "wrote " << d.train.size() << " training and " << d.test.size() << " test samples to "
      << o.out << '\n';
  return 0;
}

struct TrainOptions {
  std::string data;
  int depth = 4;
  TrainConfig cfg;
  std::string init;    // start from an existing model instead of a random tree
  std::string resume;  // checkpoint file
  std::string out = "model.json";
  std::string log_csv;  // defaults to <out>.log.csv
};

inline int cmd_train(TrainOptions o, const std::vector<std::string>& argv, std::ostream& log) {
  Run run("train", argv);
  const Dataset data = load_dataset(o.data);
  run.manifest().inputs.push_back(o.data);
  if (o.log_csv.empty()) o.log_csv = o.out + ".log.csv";
  if (o.cfg.checkpoint_every > 0 && o.cfg.checkpoint_path.empty())
    o.cfg.checkpoint_path = o.out + ".ckpt.json";

  std::optional<Trainer> trainer;
  if (!o.resume.empty()) {
    trainer.emplace(Trainer::resume(read_json_file(o.resume), o.cfg));
    run.manifest().inputs.push_back(o.resume);
  } else {
    MaterialNetwork student;
    if (!o.init.empty()) {
      student = load_network(o.init);
      run.manifest().inputs.push_back(o.init);
    } else {
      student = MaterialNetwork::full_tree(o.depth, data.settings.num_phases);
      std::seed_seq seq{o.cfg.seed, std::uint64_t{0x5eed}};
      std::mt19937_64 rng(seq);
      student.randomize(rng);
    }
    if (student.num_phases() != data.settings.num_phases)
      throw ValidationError("model phase count differs from the dataset");
    trainer.emplace(std::move(student), o.cfg);
  }

  std::ofstream csv(o.log_csv);
  if (!csv) throw IoError("cannot write " + o.log_csv);
  csv << "epoch,e_train,e_test,max_e_test,n_active,vf1,cost\n" << std::setprecision(10);
  const TrainReport& rep = trainer->train(data, [&](const EpochRecord& r) {
    csv << r.epoch << ',' << r.e_train << ',' << r.e_test << ',' << r.max_test << ','
        << r.n_active << ',' << r.vf1 << ',' << r.cost << '\n';
    csv.flush();
  });
  csv.close();

  MaterialNetwork net = trainer->network();
  const EpochRecord last = trainer->evaluate(data);
  net.metadata.emplace_back("manifest", run.reference(o.out));
  net.metadata.emplace_back("epochs", std::to_string(trainer->epoch()));
  net.metadata.emplace_back("e_train", std::to_string(last.e_train));
  net.metadata.emplace_back("e_test", std::to_string(last.e_test));
  save_network(net, o.out);

  TrainReport summary = rep;
  summary.history.push_back(last);
  run.manifest().outputs = {o.out, o.log_csv};
  if (o.cfg.checkpoint_every > 0) run.manifest().outputs.push_back(o.cfg.checkpoint_path);
  run.manifest().seed = o.cfg.seed;
  run.manifest().config = o.cfg.to_json();
  run.manifest().config["depth"] = net.depth();
  run.manifest().config["note"] = "learning rates are this implementation's defaults";
  run.finish(o.out);
  log << summary.table();
  return 0;
}

struct EvalOptions {
  std::string model;
  std::string data;
  std::string materials;
  std::string out;  // optional JSON report
};

/// Zero-strain small-strain tangent of each phase.
inline std::vector<Mat6> linear_stiffnesses(const PhaseMaterials& phases) {
  std::vector<Mat6> c;
  for (const auto& m : phases) {
    if (!m) {
      c.push_back(Mat6::Identity());
      continue;
    }
    if (!m->supports_small_strain())
      throw ValidationError("material '" + m->model() + "' has no linear stiffness");
    c.push_back(m->evaluate_small(m->initial_state(6), Vec6::Zero(), 1.0).a);
  }
  return c;
}

inline Json matrix_to_json(const Mat6& m) { return detail::matrix_json(m); }

inline int cmd_eval(const EvalOptions& o, const std::vector<std::string>& argv, std::ostream& log) {
  Run run("eval", argv);
  const MaterialNetwork net = load_network(o.model);
  run.manifest().inputs.push_back(o.model);
  Json report = {{"model", o.model}};
  if (!o.data.empty()) {
    const Dataset d = load_dataset(o.data);
    run.manifest().inputs.push_back(o.data);
    const ErrorSummary tr = evaluate_errors(net, d.train), te = evaluate_errors(net, d.test);
    report["e_train"] = tr.mean;
    report["max_e_train"] = tr.max;
    report["e_test"] = te.mean;
    report["max_e_test"] = te.max;
    log << std::fixed << std::setprecision(4) << "train_err% " << 100 * tr.mean << "  test_err% "
        << 100 * te.mean << "  max_test_err% " << 100 * te.max << '\n';
  }
  if (!o.materials.empty()) {
    const std::vector<Mat6> c = linear_stiffnesses(load_materials(o.materials));
    run.manifest().inputs.push_back(o.materials);
    if (static_cast<int>(c.size()) < net.num_phases())
      throw ValidationError("materials file lists fewer phases than the model");
    const Mat6 cbar = net.num_phases() == 1 ? forward_linear(net, c[0]).cbar_rve
                                            : forward_linear(net, c[0], c[1]).cbar_rve;
    report["stiffness"] = matrix_to_json(cbar);
    log << std::scientific << std::setprecision(8) << cbar << '\n';
  }
  if (o.data.empty() && o.materials.empty())
    throw ValidationError("eval needs --data and/or --materials");
  const NetworkWeights w = weights(net);
  report["n_active"] = w.n_active;
  report["vf1"] = w.vf1;
  if (!o.out.empty()) {
    report["manifest"] = run.reference(o.out);
    write_text_file(o.out, report.dump(1) + "\n");
    run.manifest().outputs.push_back(o.out);
    run.finish(o.out);
  }
  return 0;
}

struct PredictOptions {
  std::string model;
  std::string materials;
  std::string path;
  bool small_strain = false;
  std::string out = "history.csv";
  std::string tangent_out;
  SolveConfig solve;
};

namespace detail {

template <int D>
std::string history_header() {
  std::ostringstream h;
  h << "step,time";
  const char* comps[9] = {"11", "22", "33", "23", "32", "13", "31", "12", "21"};
  if (D == 9) {
    for (const char* c : comps) h << ",F" << c;
    for (const char* c : comps) h << ",P" << c;
  } else {
    for (const char* c : {"11", "22", "33", "23", "13", "12"}) h << ",eps" << c;
    for (const char* c : {"11", "22", "33", "23", "13", "12"}) h << ",sig" << c;
  }
  h << ",iterations";
  return h.str();
}

/// Tensor components: 9-vectors as stored, Mandel shears divided by sqrt 2.
template <int D>
void write_vector(std::ostream& out, const VecN<D>& v) {
  for (int i = 0; i < D; ++i) out << ',' << (D == 6 && i >= 3 ? v(i) / kSqrt2 : v(i));
}

/// Streams one history row per step; rows already written survive a failure.
template <int D>
void run_predict(const OnlineSolver<D>& solver, const LoadPath<D>& path, std::ostream& csv,
                 MatN<D>* tangent) {
  csv << history_header<D>() << '\n' << std::setprecision(12);
  RveState<D> state = solver.initial_state();
  auto row = [&](int step) {
    csv << step << ',' << state.time;
    write_vector<D>(csv, state.f);
    write_vector<D>(csv, state.p);
  };
  row(0);
  csv << ",0\n";
  csv.flush();
  for (std::size_t s = 0; s < path.steps.size(); ++s) {
    const StepResult<D> r =
        solver.solve_step(state, path.control, path.steps[s].target, path.steps[s].dt);
    row(static_cast<int>(s + 1));
    csv << ',' << r.iterations << '\n';
    csv.flush();
    *tangent = r.a_rve;
  }
}

template <int D>
Json matrix_json_n(const MatN<D>& a) {
  Json rows = Json::array();
  for (int i = 0; i < D; ++i) {
    Json r = Json::array();
    for (int k = 0; k < D; ++k) r.push_back(a(i, k));
    rows.push_back(r);
  }
  return rows;
}

}  // namespace detail

inline int cmd_predict(const PredictOptions& o, const std::vector<std::string>& argv,
                       std::ostream& log) {
  Run run("predict", argv);
  const MaterialNetwork net = load_network(o.model);
  PhaseMaterials phases = load_materials(o.materials, o.solve);
  const PathSpec spec = load_path_spec(o.path);
  if (o.small_strain && spec.kinematics != "small")
    throw ValidationError("--small-strain needs a path with \"kinematics\": \"small\"");
  if (!o.small_strain && spec.kinematics != "finite")
    throw ValidationError("a small-strain path needs --small-strain");
  run.manifest().inputs = {o.model, o.materials, o.path};
  run.manifest().outputs.push_back(o.out);
  run.manifest().config = {{"small_strain", o.small_strain},
                           {"tol", o.solve.tol},
                           {"max_iterations", o.solve.max_iterations},
                           {"max_cutbacks", o.solve.max_cutbacks},
                           {"path", spec.body}};

  Json tangent;
  auto solve = [&](auto solver, auto path) {
    constexpr int D = static_cast<int>(std::tuple_size_v<decltype(path.control.mode)>);
    std::ofstream csv(o.out);
    if (!csv) throw IoError("cannot write " + o.out);
    MatN<D> a = MatN<D>::Zero();
    try {
      detail::run_predict<D>(solver, path, csv, &a);
    } catch (const NumericalError&) {
      run.manifest().config["status"] = "failed";
      run.finish(o.out);
      throw;
    }
    tangent = detail::matrix_json_n<D>(a);
  };
  // Solver and path are built before the output file is created.
  if (o.small_strain)
    solve(OnlineSolver<6>(net, std::move(phases), o.solve), build_path<6>(spec));
  else
    solve(OnlineSolver<9>(net, std::move(phases), o.solve), build_path<9>(spec));
  if (!o.tangent_out.empty()) {
    write_text_file(o.tangent_out,
                    Json{{"tangent", tangent}, {"manifest", run.reference(o.out)}}.dump(1) + "\n");
    run.manifest().outputs.push_back(o.tangent_out);
  }
  run.finish(o.out);
  log << "wrote " << o.out << '\n';
  return 0;
}

struct ConcatOptions {
  std::string root;
  std::string graft;
  int phase = 1;
  std::string out = "assembly.json";
};

inline std::string format_dofs(const DofReport& d) {
  std::ostringstream s;
  s << "N_DOF before = " << d.root_non_target << " + " << d.root_target << " = " << d.before
    << '\n'
    << "N_DOF after  = " << d.root_non_target << " + " << d.root_target << " x " << d.graft_leaves
    << " = " << d.after << '\n';
  return s.str();
}

inline int cmd_concat(const ConcatOptions& o, const std::vector<std::string>& argv,
                      std::ostream& log) {
  Run run("concat", argv);
  const MaterialNetwork root = load_network(o.root);
  const MaterialNetwork graft = load_network(o.graft);
  if (o.phase < 1 || o.phase > root.num_phases())
    throw ValidationError("phase " + std::to_string(o.phase) + " not found in the root model");
  const DofReport d = dof_report(root, graft, o.phase);
  MaterialNetwork flat = flatten(root, o.phase, graft);
  flat.metadata.emplace_back("manifest", run.reference(o.out));
  flat.metadata.emplace_back("concatenated_phase", std::to_string(o.phase));
  flat.metadata.emplace_back(
      "phase_map", "phases 1.." + std::to_string(root.num_phases()) + " from the root; " +
                       std::to_string(root.num_phases() + 1) + ".." +
                       std::to_string(root.num_phases() + graft.num_phases()) + " from the graft");
  flat.metadata.emplace_back("dof_before", std::to_string(d.before));
  flat.metadata.emplace_back("dof_after", std::to_string(d.after));
  save_network(flat, o.out);
  run.manifest().inputs = {o.root, o.graft};
  run.manifest().outputs = {o.out};
  run.manifest().config = {{"phase", o.phase},
                           {"dof",
                            {{"root_non_target", d.root_non_target},
                             {"root_target", d.root_target},
                             {"graft_leaves", d.graft_leaves},
                             {"before", d.before},
                             {"after", d.after}}}};
  run.finish(o.out);
  log << format_dofs(d);
  return 0;
}

struct ExportOptions {
  std::string model;
  std::string out;
};

inline int cmd_export(const std::string& what, const ExportOptions& o,
                      const std::vector<std::string>& argv, std::ostream& log) {
  Run run("export-" + what, argv);
  const MaterialNetwork net = load_network(o.model);
  Json j = what == "treemap" ? export_treemap(net) : export_orientations(net);
  j["manifest"] = run.reference(o.out);
  write_text_file(o.out, j.dump(1) + "\n");
  run.manifest().inputs = {o.model};
  run.manifest().outputs = {o.out};
  run.finish(o.out);
  log << "wrote " << o.out << '\n';
  return 0;
}

struct MakeTeacherOptions {
  int depth = 3;
  std::uint64_t seed = 1;
  int num_phases = 2;
  std::string out = "teacher.json";
};

inline int cmd_make_teacher(const MakeTeacherOptions& o, const std::vector<std::string>& argv,
                            std::ostream& log) {
  Run run("make-teacher", argv);
  MaterialNetwork t = random_teacher(o.depth, o.seed, o.num_phases);
  t.metadata.emplace_back("manifest", run.reference(o.out));
  save_network(t, o.out);
  run.manifest().seed = o.seed;
  run.manifest().outputs = {o.out};
  run.manifest().config = {{"depth", o.depth}, {"num_phases", o.num_phases}};
  run.finish(o.out);
  const NetworkWeights w = weights(t);
  log << "teacher depth " << o.depth << ", vf1 " << w.vf1 << ", N_a " << w.n_active << '\n';
  return 0;
}

/// Exit code for an exception escaping a command.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e)) return 2;
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  if (dynamic_cast<const IoError*>(&e)) return 4;
  return 1;
}

}  // namespace dmn
