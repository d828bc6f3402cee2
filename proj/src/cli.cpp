#include "dtld/cli.hpp"

#include "dtld/checkpoint.hpp"
#include "dtld/config.hpp"
#include "dtld/dataset_io.hpp"
#include "dtld/gradcheck.hpp"
#include "dtld/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>

namespace dtld {

namespace fs = std::filesystem;

namespace {

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string f6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("-c,--config", opts.config_path, "INI config file (default: $" + std::string(kConfigEnvVar) + ")");
  cmd->add_option("--set", opts.overrides, "Override a config value, section.key=value (repeatable)");
}

RunConfig resolve_config(const CommonOptions& opts) {
  std::string path = opts.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv(kConfigEnvVar); env && *env) path = env;
  }
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
  for (const auto& o : opts.overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  return out;
}

void check_landmarks(const Dataset& data, int expected, const std::string& where) {
  for (const auto& s : data)
    if (s.landmarks.size() != expected)
      throw ValidationError(where + ": dataset has " + std::to_string(s.landmarks.size()) +
                            " landmarks per sample, model expects " + std::to_string(expected));
}

// gen-data ------------------------------------------------------------------

struct GenDataArgs {
  CommonOptions common;
  std::string out;
  std::optional<int> count;
  std::optional<uint64_t> seed;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  RunConfig cfg = resolve_config(a.common);
  if (a.count) cfg.data.count = *a.count;
  if (a.seed) cfg.data.seed = *a.seed;
  if (cfg.data.count < 1) throw ValidationError("data.count must be >= 1");
  const fs::path dir = a.out.empty() ? fs::path(cfg.data.dir) : fs::path(a.out);
  const Dataset data = gen_synthetic(cfg.synth_spec(), cfg.data.count, cfg.data.seed);
  write_dataset(dir, data, config_hash(cfg));
  out << "wrote " << data.size() << " samples to " << dir.string() << "\n";
  return 0;
}

// train ---------------------------------------------------------------------

struct TrainArgs {
  CommonOptions common;
  std::string data;
  std::string out = "run";
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(a.common);
  const fs::path data_dir = a.data.empty() ? fs::path(cfg.data.dir) : fs::path(a.data);
  const Dataset data = read_dataset(data_dir);
  check_landmarks(data, cfg.model.landmarks, "train");
  const std::string hash = config_hash(cfg);
  ensure_dir(a.out);

  Model model(cfg.model);
  const TrainConfig tcfg = cfg.resolved_train();
  const int every = std::max(1, tcfg.epochs / 10);
  const auto result = train(model, data, tcfg, [&](int epoch, double loss) {
    if ((epoch + 1) % every == 0 || epoch + 1 == tcfg.epochs)
      out << "epoch " << epoch + 1 << "/" << tcfg.epochs << " loss " << f6(loss) << "\n";
  });

  auto log = open_out(fs::path(a.out) / "loss.tsv");
  log << "# config " << hash << "\n" << "epoch\tloss\n";
  for (size_t e = 0; e < result.epoch_loss.size(); ++e) log << e + 1 << "\t" << g17(result.epoch_loss[e]) << "\n";
  save_checkpoint(fs::path(a.out) / "model.ckpt", model, hash);
  out << "checkpoint " << (fs::path(a.out) / "model.ckpt").string() << "\n";
  return 0;
}

// eval ----------------------------------------------------------------------

struct EvalArgs {
  CommonOptions common;
  std::string checkpoint;
  std::string predictions;
  std::string data;
  std::string out = "eval";
};

void write_eval_report(const fs::path& dir, const LayerwiseEval& ev, const std::string& hash, size_t samples,
                       bool from_files, std::ostream& out) {
  auto label = [&](size_t t) { return from_files ? std::string("file") : "Y" + std::to_string(t); };
  const auto& last = ev.per_layer.back();
  auto report = open_out(dir / "report.tsv");
  report << "metric\tvalue\tconfig_hash\n";
  report << "samples\t" << samples << "\t" << hash << "\n";
  report << "nme\t" << g17(last.mean_nme) << "\t" << hash << "\n";
  for (const auto& [thr, fr] : last.failure_rates) report << "fr@" << thr << "\t" << g17(fr) << "\t" << hash << "\n";
  for (const auto& [cut, a] : last.aucs) report << "auc@" << cut << "\t" << g17(a) << "\t" << hash << "\n";

  auto layers = open_out(dir / "layers.tsv");
  layers << "layer\tnme\tconfig_hash\n";
  for (size_t t = 0; t < ev.per_layer.size(); ++t)
    layers << label(t) << "\t" << g17(ev.per_layer[t].mean_nme) << "\t" << hash << "\n";

  out << "metric      value\n";
  out << "samples     " << samples << "\n";
  out << "NME         " << f6(last.mean_nme) << "\n";
  for (const auto& [thr, fr] : last.failure_rates) {
    char label[32];
    std::snprintf(label, sizeof label, "FR@%g", thr);
    out << label << std::string(std::max<size_t>(1, 12 - std::strlen(label)), ' ') << f6(fr) << "\n";
  }
  for (const auto& [cut, a] : last.aucs) {
    char label[32];
    std::snprintf(label, sizeof label, "AUC@%g", cut);
    out << label << std::string(std::max<size_t>(1, 12 - std::strlen(label)), ' ') << f6(a) << "\n";
  }
  out << "\nlayer  NME\n";
  for (size_t t = 0; t < ev.per_layer.size(); ++t) out << label(t) << std::string(7 - label(t).size(), ' ') << f6(ev.per_layer[t].mean_nme) << "\n";
  out << "config " << hash << "\n";
}

/// Scores landmark files from a second dataset directory (same manifest
/// order) against the ground truth; the layer table then has a single row.
LayerwiseEval eval_predictions(const Dataset& data, const Dataset& preds, const EvalOptions& opts) {
  if (preds.size() != data.size())
    throw ValidationError("eval: " + std::to_string(preds.size()) + " predictions for " + std::to_string(data.size()) +
                          " samples");
  std::vector<double> nmes;
  for (size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data[i];
    if (preds[i].landmarks.size() != s.landmarks.size())
      throw ValidationError("eval: prediction " + std::to_string(i) + " has " +
                            std::to_string(preds[i].landmarks.size()) + " landmarks, ground truth has " +
                            std::to_string(s.landmarks.size()));
    const metrics::SampleMeta meta{&s.landmarks, s.image.width, s.image.height, s.bbox};
    const double d = metrics::resolve_normalizer(opts.normalizer, meta);
    nmes.push_back(metrics::nme(preds[i].landmarks, s.landmarks, d, s.image.width, s.image.height));
  }
  return LayerwiseEval{{metrics::summarize(std::move(nmes), opts.fr_thresholds, opts.auc_cutoffs)}};
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(a.common);
  if (a.checkpoint.empty() == a.predictions.empty())
    throw ValidationError("eval: give exactly one of --checkpoint or --predictions");
  const fs::path data_dir = a.data.empty() ? fs::path(cfg.data.dir) : fs::path(a.data);
  const Dataset data = read_dataset(data_dir);
  EvalOptions opts;
  opts.normalizer = cfg.eval.normalizer;
  opts.fr_thresholds = cfg.eval.fr_thresholds;
  opts.auc_cutoffs = cfg.eval.auc_cutoffs;
  LayerwiseEval ev;
  if (!a.checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(a.checkpoint);
    const Model model(ck.config, std::move(ck.params));
    check_landmarks(data, model.config().landmarks, "eval");
    ev = evaluate(model, data, opts);
  } else {
    ev = eval_predictions(data, read_dataset(a.predictions), opts);
  }
  ensure_dir(a.out);
  write_eval_report(a.out, ev, config_hash(cfg), data.size(), !a.predictions.empty(), out);
  return 0;
}

// predict -------------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint;
  std::string image;
  std::string gt;
  std::string out = "prediction";
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  const std::string hash = ck.config_hash;
  const Model model(ck.config, std::move(ck.params));
  const Image image = read_ppm(a.image);
  if (image.height % 32 != 0 || image.width % 32 != 0)
    throw ValidationError("predict: image sides must be divisible by 32, got " + std::to_string(image.width) + "x" +
                          std::to_string(image.height));
  const LandmarkSet pred = model.forward(image).back();

  Image overlay = quantize8(image);
  const int radius = std::max(1, image.width / 64);
  if (!a.gt.empty()) {
    const LandmarkSet gt = read_landmarks(a.gt, image.width, image.height);
    for (Eigen::Index i = 0; i < gt.size(); ++i)
      draw_marker(overlay, gt.x(i) * image.width, gt.y(i) * image.height, {1.0, 0.0, 0.0}, radius);
  }
  for (Eigen::Index i = 0; i < pred.size(); ++i)
    draw_marker(overlay, pred.x(i) * image.width, pred.y(i) * image.height, {0.0, 1.0, 1.0}, radius);

  const fs::path prefix(a.out);
  if (prefix.has_parent_path()) ensure_dir(prefix.parent_path());
  const fs::path pts = prefix.string() + ".pts";
  const fs::path ppm = prefix.string() + ".overlay.ppm";
  write_landmarks(pts, pred, image.width, image.height, hash);
  write_ppm(ppm, overlay, {"config " + hash, "ground truth red, prediction cyan"});
  out << "wrote " << pts.string() << " and " << ppm.string() << "\n";
  return 0;
}

// gradcheck -----------------------------------------------------------------

struct GradCheckArgs {
  CommonOptions common;
  std::string out = "gradcheck.tsv";
  std::string fault;
};

int cmd_gradcheck(const GradCheckArgs& a, std::ostream& out) {
  RunConfig cfg = resolve_config(a.common);
  GradCheckOptions opts = cfg.gradcheck.options;
  if (!a.fault.empty()) opts.fault_path = a.fault;
  std::vector<DecoderMode> modes;
  if (cfg.gradcheck.mode != "parallel") modes.push_back(DecoderMode::basic);
  if (cfg.gradcheck.mode != "basic") modes.push_back(DecoderMode::parallel);

  const std::string hash = config_hash(cfg);
  auto report = open_out(a.out);
  report << "# config " << hash << "\n";
  report << "mode\tpath\tnumel\tchecked\tmax_rel_error\tworst_index\tanalytic\tnumeric\tstatus\n";
  bool ok = true;
  for (DecoderMode mode : modes) {
    ModelConfig mcfg = cfg.gradcheck.tiny_model ? tiny_config(mode) : cfg.model;
    mcfg.mode = mode;
    mcfg.seed = cfg.model.seed;
    Model model(mcfg);
    Rng rng(opts.seed);
    perturb_params(model.params(), rng, cfg.gradcheck.perturb);
    SyntheticFaceSpec spec = cfg.synth_spec();
    spec.image_size = mcfg.image_size;
    spec.landmarks = mcfg.landmarks;
    const Dataset batch = gen_synthetic(spec, cfg.gradcheck.batch, opts.seed);
    const auto rep = grad_check_model(model, batch, opts);
    for (const auto& e : rep.entries)
      report << to_string(mode) << "\t" << e.path << "\t" << e.numel << "\t" << e.checked << "\t"
             << g17(e.max_rel_error) << "\t" << e.worst_index << "\t" << g17(e.analytic) << "\t" << g17(e.numeric)
             << "\t" << (e.pass ? "pass" : "FAIL") << "\n";
    out << to_string(mode) << ": " << rep.entries.size() << " paths, max rel error " << g17(rep.max_error())
        << (rep.passed() ? " (pass)" : " (FAIL)") << "\n";
    for (const auto& p : rep.failed_paths()) out << "  failed: " << p << "\n";
    ok = ok && rep.passed();
  }
  return ok ? 0 : 2;
}

// params --------------------------------------------------------------------

int cmd_params(const CommonOptions& common, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  ModelParams params = build_params(cfg.model);
  const auto count = count_parameters(params);
  size_t width = 5;
  for (const auto& [path, n] : count.per_path) width = std::max(width, path.size());
  for (const auto& [path, n] : count.per_path)
    out << path << std::string(width - path.size() + 2, ' ') << n << "\n";
  out << "total" << std::string(width - 5 + 2, ' ') << count.total << "\n";
  out << "config " << config_hash(cfg) << "\n";
  return 0;
}

// self-train ----------------------------------------------------------------

struct SelfTrainArgs {
  CommonOptions common;
  std::string checkpoint;
  std::string labeled;
  std::string unlabeled;
  std::string eval;
  int rounds = 3;
  std::string out = "self_train";
};

int cmd_self_train(const SelfTrainArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(a.common);
  Checkpoint ck = load_checkpoint(a.checkpoint);
  Model model(ck.config, std::move(ck.params));
  const Dataset labeled = read_dataset(a.labeled);
  check_landmarks(labeled, model.config().landmarks, "self-train");
  std::vector<Image> pool;
  for (auto& s : read_dataset(a.unlabeled)) pool.push_back(std::move(s.image));
  std::optional<Dataset> eval_set;
  if (!a.eval.empty()) {
    eval_set = read_dataset(a.eval);
    check_landmarks(*eval_set, model.config().landmarks, "self-train eval");
  }
  const std::string hash = config_hash(cfg);
  const auto rounds = self_train(model, labeled, pool, a.rounds, cfg.resolved_train(),
                                 eval_set ? &*eval_set : nullptr, cfg.eval.normalizer);
  ensure_dir(a.out);
  auto report = open_out(fs::path(a.out) / "rounds.tsv");
  report << "round\ttrain_size\tfinal_loss\teval_nme\tconfig_hash\n";
  out << "round  train_size  final_loss  eval_nme\n";
  for (const auto& r : rounds) {
    report << r.round << "\t" << r.train_size << "\t" << g17(r.final_loss) << "\t"
           << (eval_set ? g17(r.eval_nme) : std::string("nan")) << "\t" << hash << "\n";
    out << r.round << "      " << r.train_size << "          " << f6(r.final_loss) << "    "
        << (eval_set ? f6(r.eval_nme) : std::string("-")) << "\n";
  }
  save_checkpoint(fs::path(a.out) / "model.ckpt", model, hash);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cascaded deformable-transformer landmark detector"};
  app.name("dtld");
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Render a synthetic dataset");
  add_common(gen_cmd, gen.common);
  gen_cmd->add_option("-o,--out", gen.out, "Output directory (default: data.dir)");
  gen_cmd->add_option("--count", gen.count, "Number of samples (default: data.count)");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed (default: data.seed)");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint and loss log");
  add_common(train_cmd, tr.common);
  train_cmd->add_option("-d,--data", tr.data, "Dataset directory (default: data.dir)");
  train_cmd->add_option("-o,--out", tr.out, "Output directory")->capture_default_str();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  add_common(eval_cmd, ev.common);
  eval_cmd->add_option("-k,--checkpoint", ev.checkpoint, "Checkpoint file");
  eval_cmd->add_option("-p,--predictions", ev.predictions, "Dataset directory whose labels are scored as predictions");
  eval_cmd->add_option("-d,--data", ev.data, "Dataset directory (default: data.dir)");
  eval_cmd->add_option("-o,--out", ev.out, "Output directory")->capture_default_str();

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Predict landmarks for one image");
  predict_cmd->add_option("-k,--checkpoint", pr.checkpoint, "Checkpoint file")->required();
  predict_cmd->add_option("-i,--image", pr.image, "Input PPM image")->required();
  predict_cmd->add_option("-g,--gt", pr.gt, "Ground-truth landmark file drawn in red");
  predict_cmd->add_option("-o,--out", pr.out, "Output prefix for .pts and .overlay.ppm")->capture_default_str();

  GradCheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  add_common(gc_cmd, gc.common);
  gc_cmd->add_option("-o,--out", gc.out, "Report file")->capture_default_str();
  gc_cmd->add_option("--inject-fault", gc.fault, "Scale this path's analytic gradient by gradcheck.fault_scale");

  CommonOptions pc;
  auto* params_cmd = app.add_subcommand("params", "Print the parameter count per path");
  add_common(params_cmd, pc);

  SelfTrainArgs st;
  auto* st_cmd = app.add_subcommand("self-train", "Pseudo-label an unlabeled pool and retrain for several rounds");
  add_common(st_cmd, st.common);
  st_cmd->add_option("-k,--checkpoint", st.checkpoint, "Teacher checkpoint")->required();
  st_cmd->add_option("--labeled", st.labeled, "Labeled dataset directory")->required();
  st_cmd->add_option("--unlabeled", st.unlabeled, "Unlabeled dataset directory (labels ignored)")->required();
  st_cmd->add_option("--eval", st.eval, "Dataset scored after each round");
  st_cmd->add_option("--rounds", st.rounds, "Number of rounds")->capture_default_str();
  st_cmd->add_option("-o,--out", st.out, "Output directory")->capture_default_str();

  std::vector<const char*> argv{"dtld"};
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, out);
    if (train_cmd->parsed()) return cmd_train(tr, out);
    if (eval_cmd->parsed()) return cmd_eval(ev, out);
    if (predict_cmd->parsed()) return cmd_predict(pr, out);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc, out);
    if (params_cmd->parsed()) return cmd_params(pc, out);
    if (st_cmd->parsed()) return cmd_self_train(st, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace dtld
