#include "dmn/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

namespace {

std::pair<int, int> parse_split(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw dmn::ValidationError("--split expects TRAIN,TEST");
  try {
    std::size_t a = 0, b = 0;
    const int train = std::stoi(s.substr(0, comma), &a);
    const int test = std::stoi(s.substr(comma + 1), &b);
    if (a != comma || b != s.size() - comma - 1) throw std::invalid_argument(s);
    return {train, test};
  } catch (const std::logic_error&) {
    throw dmn::ValidationError("--split expects TRAIN,TEST, got '" + s + "'");
  }
}

void add_solver_flags(CLI::App* c, dmn::SolveConfig& s) {
  c->add_option("--tol", s.tol, "fixed-point tolerance")->capture_default_str();
  c->add_option("--max-iter", s.max_iterations, "fixed-point iterations per step")
      ->capture_default_str();
  c->add_option("--max-cutbacks", s.max_cutbacks, "step halvings before giving up")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Deep material network toolkit: offline training and online prediction"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(dmn::kArtifactVersion));

  dmn::GenDataOptions gen;
  std::string split;
  int count = 500;
  auto* c_gen = app.add_subcommand("gen-data", "sample phases and compute targets");
  c_gen->add_option("--oracle", gen.oracle, "teacher, laminate or import")
      ->check(CLI::IsMember({"teacher", "laminate", "import"}))
      ->capture_default_str();
  c_gen->add_option("--teacher", gen.teacher, "teacher model (random teacher if omitted)");
  c_gen->add_option("--teacher-depth", gen.teacher_depth)->capture_default_str();
  c_gen->add_option("--teacher-seed", gen.teacher_seed)->capture_default_str();
  c_gen->add_option("--laminate-fraction", gen.laminate_fraction)->capture_default_str();
  c_gen->add_option("--import", gen.import, "dataset file with external targets");
  auto* count_opt = c_gen->add_option("--count", count, "number of samples")->capture_default_str();
  c_gen->add_option("--split", split, "TRAIN,TEST sizes (default 400,100)");
  c_gen->add_option("--seed", gen.seed)->capture_default_str();
  c_gen->add_option("--num-phases", gen.num_phases)->check(CLI::Range(1, 2))->capture_default_str();
  c_gen->add_option("--out", gen.out)->capture_default_str();

  dmn::TrainOptions train;
  auto* c_train = app.add_subcommand("train", "fit a network to a dataset");
  c_train->add_option("--data", train.data)->required();
  c_train->add_option("--depth", train.depth)->capture_default_str();
  c_train->add_option("--epochs", train.cfg.epochs)->capture_default_str();
  c_train->add_option("--lr", train.cfg.lr_z, "learning rate on activations")->capture_default_str();
  c_train->add_option("--lr-angles", train.cfg.lr_angles)->capture_default_str();
  c_train->add_option("--lambda", train.cfg.lambda)->capture_default_str();
  c_train->add_option("--batch", train.cfg.batch_size)->capture_default_str();
  c_train->add_option("--compress-every", train.cfg.compress_every)->capture_default_str();
  c_train->add_option("--tol", train.cfg.compress.rotation_tol, "rotation similarity tolerance")
      ->capture_default_str();
  c_train->add_option("--fraction-tol", train.cfg.compress.fraction_tol)->capture_default_str();
  c_train->add_option("--restart-double-at", train.cfg.lr_doubling_epochs,
                      "epochs after which the learning rates double");
  c_train->add_option("--clip", train.cfg.clip)->capture_default_str();
  c_train->add_option("--seed", train.cfg.seed)->capture_default_str();
  c_train->add_option("--eval-every", train.cfg.eval_every)->capture_default_str();
  c_train->add_option("--checkpoint-every", train.cfg.checkpoint_every)->capture_default_str();
  c_train->add_option("--checkpoint", train.cfg.checkpoint_path, "default <out>.ckpt.json");
  c_train->add_option("--resume", train.resume, "continue from a checkpoint");
  c_train->add_option("--init", train.init, "start from an existing model");
  c_train->add_option("--threads", train.cfg.threads)->capture_default_str();
  c_train->add_option("--log", train.log_csv, "default <out>.log.csv");
  c_train->add_option("--out", train.out)->capture_default_str();

  dmn::EvalOptions eval;
  auto* c_eval = app.add_subcommand("eval", "errors on a dataset and/or linear stiffness");
  c_eval->add_option("--model", eval.model)->required();
  c_eval->add_option("--data", eval.data);
  c_eval->add_option("--materials", eval.materials);
  c_eval->add_option("--out", eval.out);

  dmn::PredictOptions pred;
  auto* c_pred = app.add_subcommand("predict", "online response along a load path");
  c_pred->add_option("--model", pred.model)->required();
  c_pred->add_option("--materials", pred.materials)->required();
  c_pred->add_option("--path", pred.path)->required();
  c_pred->add_flag("--small-strain", pred.small_strain);
  c_pred->add_option("--out", pred.out)->capture_default_str();
  c_pred->add_option("--tangent-out", pred.tangent_out, "final macro tangent (JSON)");
  add_solver_flags(c_pred, pred.solve);

  dmn::ConcatOptions cat;
  auto* c_cat = app.add_subcommand("concat", "graft a network into one phase of another");
  c_cat->add_option("--root", cat.root)->required();
  c_cat->add_option("--graft", cat.graft)->required();
  c_cat->add_option("--phase", cat.phase)->required();
  c_cat->add_option("--out", cat.out)->capture_default_str();

  dmn::ExportOptions tree, orient;
  auto* c_tree = app.add_subcommand("export-treemap", "nested weights and phases");
  c_tree->add_option("--model", tree.model)->required();
  c_tree->add_option("--out", tree.out)->required();
  auto* c_orient = app.add_subcommand("export-orientations", "composed leaf rotations");
  c_orient->add_option("--model", orient.model)->required();
  c_orient->add_option("--out", orient.out)->required();

  dmn::MakeTeacherOptions teach;
  auto* c_teach = app.add_subcommand("make-teacher", "random frozen reference network");
  c_teach->add_option("--depth", teach.depth)->capture_default_str();
  c_teach->add_option("--seed", teach.seed)->capture_default_str();
  c_teach->add_option("--num-phases", teach.num_phases)->check(CLI::Range(1, 2))->capture_default_str();
  c_teach->add_option("--out", teach.out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (c_gen->parsed()) {
      if (count_opt->count() > 0) gen.count = count;
      if (!split.empty()) gen.split = parse_split(split);
      return dmn::cmd_gen_data(gen, args, std::cout);
    }
    if (c_train->parsed()) return dmn::cmd_train(train, args, std::cout);
    if (c_eval->parsed()) return dmn::cmd_eval(eval, args, std::cout);
    if (c_pred->parsed()) return dmn::cmd_predict(pred, args, std::cout);
    if (c_cat->parsed()) return dmn::cmd_concat(cat, args, std::cout);
    if (c_tree->parsed()) return dmn::cmd_export("treemap", tree, args, std::cout);
    if (c_orient->parsed()) return dmn::cmd_export("orientations", orient, args, std::cout);
    if (c_teach->parsed()) return dmn::cmd_make_teacher(teach, args, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return dmn::exit_code_for(e);
  }
  return 1;
}
