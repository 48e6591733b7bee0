// capslab: one entry point for training, evaluating, and dissecting the
// capsule-network laboratory. Every subcommand reads an optional JSON config
// (--config) whose values individual flags override; the effective config is
// echoed into the output directory so a run can be reproduced from it.
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "capslab/complexity.hpp"
#include "capslab/datasets.hpp"
#include "capslab/diagnostics.hpp"
#include "capslab/network.hpp"
#include "capslab/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace caps;

namespace {

// Every tunable of a run. Architecture integers default to -1, meaning
// "inherit the backbone preset"; the echoed config always carries the
// resolved values.
struct RunConfig {
  std::string arch = "affnist";
  int caps = -1, dim = -1, depth = -1, classes = -1, class_dim = -1, routing_iters = -1;
  std::string routing = "rba";

  int epochs = 20, batch_size = 512;
  double lr = 1e-3, lr_decay = 0.97, weight_decay = 1e-6, alpha = 0.392;
  double target_accuracy = 0.0;

  double tau_act = 0.1, tau_dead = 0.05;

  std::uint64_t seed = 1;
  std::string out = "capslab-run";
  long limit = 0;  // cap on samples read from each set; 0 = all

  std::string images, labels, val_images, val_labels, checkpoint;
};

void apply_config_json(RunConfig& c, const json& j) {
  for (const auto& [key, v] : j.items()) {
    if (key == "arch") c.arch = v.get<std::string>();
    else if (key == "caps") c.caps = v.get<int>();
    else if (key == "dim") c.dim = v.get<int>();
    else if (key == "depth") c.depth = v.get<int>();
    else if (key == "classes") c.classes = v.get<int>();
    else if (key == "class-dim") c.class_dim = v.get<int>();
    else if (key == "routing") c.routing = v.get<std::string>();
    else if (key == "routing-iters") c.routing_iters = v.get<int>();
    else if (key == "epochs") c.epochs = v.get<int>();
    else if (key == "batch-size") c.batch_size = v.get<int>();
    else if (key == "lr") c.lr = v.get<double>();
    else if (key == "lr-decay") c.lr_decay = v.get<double>();
    else if (key == "weight-decay") c.weight_decay = v.get<double>();
    else if (key == "alpha") c.alpha = v.get<double>();
    else if (key == "target-accuracy") c.target_accuracy = v.get<double>();
    else if (key == "tau-act") c.tau_act = v.get<double>();
    else if (key == "tau-dead") c.tau_dead = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "out") c.out = v.get<std::string>();
    else if (key == "limit") c.limit = v.get<long>();
    else if (key == "images") c.images = v.get<std::string>();
    else if (key == "labels") c.labels = v.get<std::string>();
    else if (key == "val-images") c.val_images = v.get<std::string>();
    else if (key == "val-labels") c.val_labels = v.get<std::string>();
    else if (key == "checkpoint") c.checkpoint = v.get<std::string>();
    else throw std::runtime_error("config: unknown key '" + key + "'");
  }
}

void load_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  json j;
  in >> j;
  apply_config_json(c, j);
}

json config_to_json(const RunConfig& c) {
  json j;
  j["arch"] = c.arch;
  j["caps"] = c.caps;
  j["dim"] = c.dim;
  j["depth"] = c.depth;
  j["classes"] = c.classes;
  j["class-dim"] = c.class_dim;
  j["routing"] = c.routing;
  j["routing-iters"] = c.routing_iters;
  j["epochs"] = c.epochs;
  j["batch-size"] = c.batch_size;
  j["lr"] = c.lr;
  j["lr-decay"] = c.lr_decay;
  j["weight-decay"] = c.weight_decay;
  j["alpha"] = c.alpha;
  j["target-accuracy"] = c.target_accuracy;
  j["tau-act"] = c.tau_act;
  j["tau-dead"] = c.tau_dead;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["limit"] = c.limit;
  j["images"] = c.images;
  j["labels"] = c.labels;
  j["val-images"] = c.val_images;
  j["val-labels"] = c.val_labels;
  j["checkpoint"] = c.checkpoint;
  return j;
}

// Preset merged with explicit overrides; writes the resolved values back so
// the config echo is self-contained.
ArchitectureSpec resolve_arch(RunConfig& c) {
  ArchitectureSpec s = ArchitectureSpec::preset(backbone_from_name(c.arch));
  if (c.caps >= 0) s.caps = c.caps;
  if (c.dim >= 0) s.dim = c.dim;
  if (c.depth >= 0) s.routing_layers = c.depth;
  if (c.classes >= 0) s.num_classes = c.classes;
  if (c.class_dim >= 0) s.class_dim = c.class_dim;
  if (c.routing_iters >= 0) s.routing_iters = c.routing_iters;
  if (c.routing == "rba") s.routing = RoutingMode::rba;
  else if (c.routing == "uniform") s.routing = RoutingMode::uniform;
  else throw std::runtime_error("config: routing must be rba or uniform");
  s.validate();
  c.caps = s.caps;
  c.dim = s.dim;
  c.depth = s.routing_layers;
  c.classes = s.num_classes;
  c.class_dim = s.class_dim;
  c.routing_iters = s.routing_iters;
  return s;
}

TrainConfig resolve_train(const RunConfig& c) {
  TrainConfig t;
  t.lr = c.lr;
  t.lr_decay = c.lr_decay;
  t.weight_decay = c.weight_decay;
  t.batch_size = c.batch_size;
  t.max_epochs = c.epochs;
  t.target_accuracy = c.target_accuracy;
  t.seed = c.seed;
  t.loss.alpha = c.alpha;
  t.validate();
  return t;
}

fs::path ensure_out(const RunConfig& c) {
  fs::path dir(c.out);
  fs::create_directories(dir);
  return dir;
}

void echo_config(const RunConfig& c, const fs::path& dir) {
  std::ofstream out(dir / "config.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "config.json").string());
  out << config_to_json(c).dump(2) << "\n";
}

ImageSet load_set(const RunConfig& c, const std::string& images, const std::string& labels) {
  if (images.empty() || labels.empty()) {
    throw std::runtime_error("need --images and --labels (IDX files)");
  }
  ImageSet set = load_idx(images, labels);
  if (c.limit > 0 && set.size() > c.limit) {
    set.images.resize((size_t)c.limit);
    set.labels.resize((size_t)c.limit);
  }
  return set;
}

// Images smaller than the network input are placed centered on a zero canvas
// (the training path randomizes the placement instead, as an augmentation).
Tensor fit_centered(const Tensor& img, const ArchitectureSpec& a) {
  if (img.dim(0) != a.in_ch) throw std::runtime_error("image channels do not match the backbone");
  if (img.dim(1) == a.in_h && img.dim(2) == a.in_w) return img;
  return place_on_canvas(img, a.in_h, a.in_w, (a.in_h - img.dim(1)) / 2,
                         (a.in_w - img.dim(2)) / 2);
}

std::vector<Tensor> fit_all(const std::vector<Tensor>& images, const ArchitectureSpec& a) {
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (const Tensor& img : images) out.push_back(fit_centered(img, a));
  return out;
}

ModelParams load_model(const RunConfig& c, const ArchitectureSpec& arch) {
  if (c.checkpoint.empty()) throw std::runtime_error("need --checkpoint (model file)");
  Rng rng(0);
  ModelParams p = init_params(arch, rng);  // shapes only; overwritten below
  load_checkpoint(c.checkpoint, p, nullptr);
  return p;
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_train(RunConfig cfg) {
  ArchitectureSpec arch = resolve_arch(cfg);
  TrainConfig tc = resolve_train(cfg);
  fs::path out = ensure_out(cfg);
  echo_config(cfg, out);

  ImageSet train_raw = load_set(cfg, cfg.images, cfg.labels);
  train_raw.validate(arch.num_classes);

  TrainSet tr, va;
  if (!cfg.val_images.empty()) {
    ImageSet val_raw = load_set(cfg, cfg.val_images, cfg.val_labels);
    val_raw.validate(arch.num_classes);
    tr.images = train_raw.images;
    tr.labels = train_raw.labels;
    va.images = std::move(val_raw.images);
    va.labels = std::move(val_raw.labels);
  } else {
    // deterministic tail split: last tenth (at least one sample) validates
    long n = train_raw.size();
    long n_val = std::max(1L, n / 10);
    if (n_val >= n) throw std::runtime_error("training set too small to split");
    tr.images.assign(train_raw.images.begin(), train_raw.images.end() - n_val);
    tr.labels.assign(train_raw.labels.begin(), train_raw.labels.end() - n_val);
    va.images.assign(train_raw.images.end() - n_val, train_raw.images.end());
    va.labels.assign(train_raw.labels.end() - n_val, train_raw.labels.end());
  }

  TrainOptions opt;
  opt.arch = arch;
  opt.cfg = tc;
  opt.jsonl_path = (out / "train_log.jsonl").string();
  opt.checkpoint_path = (out / "model.caps").string();

  const Tensor& probe = tr.images.front();
  if (probe.dim(1) != arch.in_h || probe.dim(2) != arch.in_w) {
    long h = arch.in_h, w = arch.in_w;
    opt.transform = [h, w](const Tensor& img, Rng& rng) {
      return place_on_canvas_random(img, h, w, rng);
    };
    va.images = fit_all(va.images, arch);
  }

  StarvationTracker tracker(cfg.tau_dead);
  opt.step_hook = [&](long step, const std::vector<Tensor>& max_norms) {
    tracker.observe(step, max_norms);
  };

  TrainResult res = train(tr, va, opt);
  write_starvation_csv(tracker.timeline(), (out / "starvation.csv").string());

  for (const TrainEpochRecord& e : res.log.epochs) {
    std::printf("epoch %ld: val accuracy %.4f\n", e.epoch, e.val_accuracy);
  }
  std::printf("best val accuracy %.4f after %ld epochs\n", res.best_val_accuracy,
              res.epochs_run);
  std::printf("artifacts in %s\n", out.string().c_str());
  return 0;
}

int cmd_eval(RunConfig cfg) {
  ArchitectureSpec arch = resolve_arch(cfg);
  ImageSet set = load_set(cfg, cfg.images, cfg.labels);
  set.validate(arch.num_classes);
  ModelParams params = load_model(cfg, arch);
  double acc = evaluate_accuracy(arch, params, fit_all(set.images, arch), set.labels);
  std::printf("accuracy %.4f over %ld samples\n", acc, set.size());
  return 0;
}

int cmd_diagnose(RunConfig cfg) {
  ArchitectureSpec arch = resolve_arch(cfg);
  fs::path out = ensure_out(cfg);
  echo_config(cfg, out);
  ImageSet set = load_set(cfg, cfg.images, cfg.labels);
  set.validate(arch.num_classes);
  ModelParams params = load_model(cfg, arch);
  std::vector<Tensor> images = fit_all(set.images, arch);

  DatasetTrace trace = collect_trace(arch, params, images);
  std::vector<LayerStats> layers = layer_statistics(trace, cfg.tau_act, cfg.tau_dead);
  std::vector<DynamicsStats> dynamics = routing_dynamics(trace, cfg.tau_dead);
  write_layer_stats_csv(layers, (out / "layer_stats.csv").string());
  write_dynamics_csv(dynamics, (out / "dynamics.csv").string());
  write_parse_stats_json(dataset_parse_stats(trace, cfg.tau_dead),
                         (out / "parse_stats.json").string());

  Tape tape;
  tape.recording = false;
  ForwardTrace first = forward(tape, arch, params, nullptr, images.front(), -1, false);
  write_parse_tree_json(extract_parse_tree(first), (out / "parse_tree.json").string());

  for (const LayerStats& st : layers) {
    std::printf("layer %ld: %ld capsules, mean norm %.4f, active %.2f/%ld, dead %ld (%.2f)\n",
                st.layer, st.n, st.cnm, st.cas, st.n, st.cds, st.cdr);
  }
  for (const DynamicsStats& st : dynamics) {
    std::printf("routing layer %ld: dynamics sum %.4f, ratio %.4f (%ld alive above)\n",
                st.routing_layer, st.dys, st.dyr, st.alive_to_higher);
  }
  std::printf("artifacts in %s\n", out.string().c_str());
  return 0;
}

int cmd_sweep(RunConfig cfg, const std::string& kind_name, std::vector<double> magnitudes,
              const std::string& layer_sel) {
  ArchitectureSpec arch = resolve_arch(cfg);
  fs::path out = ensure_out(cfg);
  echo_config(cfg, out);
  SweepKind kind = sweep_kind_from_name(kind_name);
  if (std::find(magnitudes.begin(), magnitudes.end(), 0.0) == magnitudes.end()) {
    throw std::runtime_error("sweep magnitudes must include 0 (the identity baseline)");
  }
  ImageSet set = load_set(cfg, cfg.images, cfg.labels);
  set.validate(arch.num_classes);
  ModelParams params = load_model(cfg, arch);
  std::vector<Tensor> images = fit_all(set.images, arch);

  bool primecaps_only = layer_sel == "primecaps";
  std::vector<SweepPoint> points =
      viewpoint_sweep(arch, params, images, kind, magnitudes, primecaps_only);
  write_sweep_csv(kind, points, (out / ("sweep_" + std::string(kind_name) + ".csv")).string());

  std::vector<double> mags, means;
  for (const SweepPoint& p : points) {
    std::printf("%s %6.2f: correlation %.4f +- %.4f (%ld samples, %ld undefined)\n",
                sweep_kind_name(kind), p.magnitude, p.mean_correlation, p.std_correlation,
                p.valid, p.undefined);
    if (p.valid > 0) {
      mags.push_back(p.magnitude);
      means.push_back(p.mean_correlation);
    }
  }
  if (mags.size() >= 2) {
    std::printf("trend: spearman %.3f across magnitudes\n", spearman(mags, means));
  }
  std::printf("artifacts in %s\n", out.string().c_str());
  return 0;
}

int cmd_bench(RunConfig cfg, const std::string& op_sel, std::vector<long> ns,
              std::vector<long> ds, long fixed_n, long fixed_d) {
  fs::path out = ensure_out(cfg);
  echo_config(cfg, out);
  int r = cfg.routing_iters >= 0 ? cfg.routing_iters : 3;

  std::vector<BenchOp> ops;
  if (op_sel == "rba" || op_sel == "both") ops.push_back(BenchOp::rba);
  if (op_sel == "mhsa" || op_sel == "both") ops.push_back(BenchOp::mhsa);

  std::vector<ScalingSweep> sweeps;
  for (BenchOp op : ops) {
    sweeps.push_back(benchmark_scaling(op, BenchAxis::n, ns, fixed_d, r));
    sweeps.push_back(benchmark_scaling(op, BenchAxis::d, ds, fixed_n, r));
  }
  write_bench_csv(sweeps, (out / "bench.csv").string());
  std::fputs(render_scaling_summary(sweeps).c_str(), stdout);
  std::printf("artifacts in %s\n", out.string().c_str());
  return 0;
}

int cmd_params(const std::string& dataset, long digitcaps_dim) {
  std::vector<TableRow> rows = canonical_table_rows();
  if (dataset.empty()) {
    std::fputs(render_param_table(rows, canonical_output_dims()).c_str(), stdout);
    return 0;
  }
  std::string want = dataset;
  std::transform(want.begin(), want.end(), want.begin(),
                 [](unsigned char ch) { return (char)std::tolower(ch); });
  for (const TableRow& row : rows) {
    std::string name = row.name;
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char ch) { return (char)std::tolower(ch); });
    if (name == want) {
      std::printf("%.1f\n", table_cell_millions(row, digitcaps_dim));
      return 0;
    }
  }
  throw std::runtime_error("unknown dataset '" + dataset +
                           "' (mnist|affnist|cifar10|tinyimagenet|imagenet)");
}

int cmd_gen_affnist(RunConfig cfg) {
  fs::path out = ensure_out(cfg);
  echo_config(cfg, out);
  ImageSet mnist = load_set(cfg, cfg.images, cfg.labels);
  ImageSet gen = generate_affnist(mnist, cfg.seed);
  save_idx(gen, (out / "affnist-images-idx3-ubyte").string(),
           (out / "affnist-labels-idx1-ubyte").string());
  std::printf("wrote %ld warped 40x40 samples to %s\n", gen.size(), out.string().c_str());
  return 0;
}

int cmd_verify(RunConfig cfg) {
  ArchitectureSpec arch = resolve_arch(cfg);
  Rng root(cfg.seed);
  Rng init_rng = root.fork(0);
  ModelParams params = init_params(arch, init_rng);
  Rng data_rng = root.fork(1);
  std::vector<Tensor> images;
  std::vector<int> targets;
  for (int s = 0; s < 4; ++s) {
    Tensor img({(long)arch.in_ch, (long)arch.in_h, (long)arch.in_w});
    for (long i = 0; i < img.numel(); ++i) img[i] = data_rng.uniform(0.0, 1.0);
    images.push_back(std::move(img));
    targets.push_back((int)data_rng.index((std::uint64_t)arch.num_classes));
  }

  Theorem1Report t1 = verify_theorem1(arch, params, images, targets);
  std::printf("output-capsule gradient vs closed form: max rel err %.3g over %ld capsules "
              "(%ld singular skipped) -- %s\n",
              t1.max_rel_err, t1.checked, t1.skipped_singular, t1.pass ? "PASS" : "FAIL");

  Theorem2Report t2 = verify_theorem2(8, 4, 6, 4, arch.routing_iters, cfg.seed);
  std::printf("vote-gradient chain rule: input identity %.3g, weight identity %.3g, "
              "zero cases %.3g/%.3g, scaling %.3g -- %s\n",
              t2.input_identity_err, t2.weight_identity_err, t2.zero_activation_resid,
              t2.zero_weight_resid, t2.scaling_resid, t2.pass ? "PASS" : "FAIL");
  return (t1.pass && t2.pass) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;
  try {
    for (int i = 1; i + 1 < argc; ++i) {
      if (std::string(argv[i]) == "--config") load_config_file(cfg, argv[i + 1]);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  CLI::App app{"desk-scale capsule-network laboratory"};
  app.require_subcommand(1);
  std::string config_path;  // consumed by the pre-scan above

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file; flags given here win");
    sub->add_option("--seed", cfg.seed, "root RNG seed (default 1)");
    sub->add_option("--out", cfg.out, "output directory (default capslab-run)");
    sub->add_option("--arch", cfg.arch, "backbone: affnist|cifar10|original-mnist|tiny")
        ->check(CLI::IsMember({"affnist", "cifar10", "original-mnist", "tiny"}));
    sub->add_option("--caps", cfg.caps, "capsules per intermediate layer (preset default)");
    sub->add_option("--dim", cfg.dim, "capsule width (preset default)");
    sub->add_option("--depth", cfg.depth, "routing layers (preset default)");
    sub->add_option("--classes", cfg.classes, "output capsules (preset default)");
    sub->add_option("--class-dim", cfg.class_dim, "output capsule width (preset default)");
    sub->add_option("--routing", cfg.routing, "rba|uniform (default rba)")
        ->check(CLI::IsMember({"rba", "uniform"}));
    sub->add_option("--routing-iters", cfg.routing_iters, "agreement iterations (preset default)");
    sub->add_option("--tau-act", cfg.tau_act, "activation threshold (default 0.1)");
    sub->add_option("--tau-dead", cfg.tau_dead, "death threshold (default 0.05)");
    sub->add_option("--limit", cfg.limit, "cap samples per set, 0 = all (default 0)");
  };
  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--images", cfg.images, "IDX image file");
    sub->add_option("--labels", cfg.labels, "IDX label file");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a model and log every step");
  add_common(train_cmd);
  add_data(train_cmd);
  train_cmd->add_option("--val-images", cfg.val_images, "validation IDX image file");
  train_cmd->add_option("--val-labels", cfg.val_labels, "validation IDX label file");
  train_cmd->add_option("--epochs", cfg.epochs, "epoch budget (default 20)");
  train_cmd->add_option("--batch-size", cfg.batch_size, "batch size (default 512)");
  train_cmd->add_option("--lr", cfg.lr, "initial learning rate (default 1e-3)");
  train_cmd->add_option("--lr-decay", cfg.lr_decay, "per-epoch decay factor (default 0.97)");
  train_cmd->add_option("--weight-decay", cfg.weight_decay, "L2 strength (default 1e-6)");
  train_cmd->add_option("--alpha", cfg.alpha, "reconstruction weight (default 0.392)");
  train_cmd->add_option("--target-accuracy", cfg.target_accuracy,
                        "stop once validation reaches this (default off)");

  CLI::App* eval_cmd = app.add_subcommand("eval", "classification accuracy of a checkpoint");
  add_common(eval_cmd);
  add_data(eval_cmd);
  eval_cmd->add_option("--checkpoint", cfg.checkpoint, "model file");

  CLI::App* diag_cmd = app.add_subcommand("diagnose",
                                          "capsule activation, death, and routing statistics");
  add_common(diag_cmd);
  add_data(diag_cmd);
  diag_cmd->add_option("--checkpoint", cfg.checkpoint, "model file");

  std::string sweep_kind = "rotation", sweep_layers = "primecaps";
  std::vector<double> magnitudes{0, 5, 10, 15, 20};
  CLI::App* sweep_cmd = app.add_subcommand(
      "sweep-viewpoint", "activation correlation under growing transformations");
  add_common(sweep_cmd);
  add_data(sweep_cmd);
  sweep_cmd->add_option("--checkpoint", cfg.checkpoint, "model file");
  sweep_cmd->add_option("--kind", sweep_kind,
                        "rotation|shear|scale|translate-x|translate-y (default rotation)");
  sweep_cmd->add_option("--magnitudes", magnitudes, "strengths, must include 0")
      ->delimiter(',');
  sweep_cmd->add_option("--layers", sweep_layers, "primecaps|all (default primecaps)")
      ->check(CLI::IsMember({"primecaps", "all"}));

  std::string bench_op = "both";
  std::vector<long> bench_ns{32, 64, 128, 256}, bench_ds{8, 16, 32, 64};
  long fixed_n = 64, fixed_d = 8;
  CLI::App* bench_cmd = app.add_subcommand("bench", "wall-time scaling of routing vs attention");
  add_common(bench_cmd);
  bench_cmd->add_option("--op", bench_op, "rba|mhsa|both (default both)")
      ->check(CLI::IsMember({"rba", "mhsa", "both"}));
  bench_cmd->add_option("--ns", bench_ns, "capsule/token counts to sweep")->delimiter(',');
  bench_cmd->add_option("--ds", bench_ds, "widths to sweep")->delimiter(',');
  bench_cmd->add_option("--fixed-n", fixed_n, "count held fixed for the width sweep");
  bench_cmd->add_option("--fixed-d", fixed_d, "width held fixed for the count sweep");

  std::string params_dataset;
  long digitcaps_dim = 16;
  CLI::App* params_cmd = app.add_subcommand(
      "params", "routing-layer parameter table for the two-conv backbone");
  params_cmd->add_option("--dataset", params_dataset,
                         "mnist|affnist|cifar10|tinyimagenet|imagenet (omit for full table)");
  params_cmd->add_option("--digitcaps-dim", digitcaps_dim, "output capsule width (default 16)");

  CLI::App* gen_cmd = app.add_subcommand("gen-affnist",
                                         "derive a warped 40x40 set from 28x28 inputs");
  add_common(gen_cmd);
  add_data(gen_cmd);

  CLI::App* verify_cmd = app.add_subcommand("verify-theorems",
                                            "check tape gradients against closed forms");
  add_common(verify_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(cfg);
    if (eval_cmd->parsed()) return cmd_eval(cfg);
    if (diag_cmd->parsed()) return cmd_diagnose(cfg);
    if (sweep_cmd->parsed()) return cmd_sweep(cfg, sweep_kind, magnitudes, sweep_layers);
    if (bench_cmd->parsed()) return cmd_bench(cfg, bench_op, bench_ns, bench_ds, fixed_n, fixed_d);
    if (params_cmd->parsed()) return cmd_params(params_dataset, digitcaps_dim);
    if (gen_cmd->parsed()) return cmd_gen_affnist(cfg);
    if (verify_cmd->parsed()) return cmd_verify(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
