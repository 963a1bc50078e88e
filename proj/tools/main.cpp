#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mseg/annotation.hpp"
#include "mseg/checkpoint.hpp"
#include "mseg/errors.hpp"
#include "mseg/evaluation.hpp"
#include "mseg/manifest.hpp"
#include "mseg/network.hpp"
#include "mseg/synthdata.hpp"
#include "mseg/training.hpp"
#include "mseg/viz.hpp"

namespace {

using namespace mseg;

net::ModelConfig make_config(const std::string& size, const std::string& variant, int T) {
  const net::Variant v = net::variant_from_string(variant);
  if (size == "tiny") return net::ModelConfig::tiny(v, T);
  if (size == "desk") return net::ModelConfig::desk(v, T);
  if (size == "full") return net::ModelConfig::full(v, T);
  throw ArgumentError("unknown model size '" + size + "'; expected tiny, desk, or full");
}

run::RunManifest begin_manifest(const std::string& command, const std::vector<std::string>& argv,
                                std::uint64_t seed, const std::string& config_path) {
  run::RunManifest m;
  m.command = command;
  m.arguments = argv;
  m.seed = seed;
  m.config_path = config_path;
  m.started_at = run::timestamp_utc();
  return m;
}

struct SynthArgs {
  std::string out;
  synth::DatasetSpec spec;
};

struct TrainArgs {
  std::string data, out;
  std::string variant = "MULTI_LSTM";
  std::string size = "desk";
  std::uint64_t model_seed = 77;
  train::TrainConfig cfg;
};

struct EvalArgs {
  std::string data, checkpoint, out;
  bool observed_flow = false;
  bool fps = false;
  int bench_h = 128, bench_w = 256, bench_iters = 20, bench_warmup = 3;
};

struct BenchArgs {
  std::string variant;  // empty: all
  std::string size = "desk";
  int T = 4, h = 128, w = 256, iters = 20, warmup = 3;
  std::uint64_t seed = 1234;
};

struct VizArgs {
  std::string data, checkpoint, out;
  int limit = 8;
};

struct AnnotateArgs {
  std::string scene, out;
};

struct ParamsArgs {
  std::string size = "desk";
  int T = 4;
};

int run_cli(int argc, char** argv) {
  CLI::App app{"Moving-object segmentation toolkit: synthetic data, annotation, "
               "training, evaluation, benchmarking, and visualization"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "Read options from a config file, one [section] per subcommand")
      ->check(CLI::ExistingFile);
  std::uint64_t seed = 1;
  app.add_option("--seed", seed, "Global seed for data generation and training")
      ->envname("MOTIONSEG_SEED");

  SynthArgs sy;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic train/val dataset");
  synth_cmd->fallthrough();
  synth_cmd->add_option("--out", sy.out, "Dataset root to create")->required();
  synth_cmd->add_option("--num-train", sy.spec.num_train, "Training sequences");
  synth_cmd->add_option("--num-val", sy.spec.num_val, "Validation sequences");
  synth_cmd->add_option("--height", sy.spec.h, "Frame height");
  synth_cmd->add_option("--width", sy.spec.w, "Frame width");
  synth_cmd->add_option("--frames", sy.spec.t_total, "Frames per sequence");
  synth_cmd->add_option("--pan-max", sy.spec.pan_max, "Max ego pan in px/frame");
  synth_cmd->add_option("--flow-dropout", sy.spec.flow_dropout,
                        "Per-object chance of zeroed observed flow");
  synth_cmd->add_option("--flow-noise", sy.spec.flow_noise, "Observed flow noise sigma");

  AnnotateArgs an;
  auto* anno_cmd = app.add_subcommand("annotate", "Project scene boxes into motion masks");
  anno_cmd->fallthrough();
  anno_cmd->add_option("--scene", an.scene, "scene.txt path")->required();
  anno_cmd->add_option("--out", an.out, "Output root for <sequence>/mask/")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train one variant on a dataset");
  train_cmd->fallthrough();
  train_cmd->add_option("--data", tr.data, "Dataset root containing train/ and val/")
      ->envname("MOTIONSEG_DATA")
      ->required();
  train_cmd->add_option("--out", tr.out, "Run directory for checkpoints and metrics")
      ->required();
  train_cmd->add_option("--variant", tr.variant, "Network variant name");
  train_cmd->add_option("--size", tr.size, "Model size: tiny, desk, or full");
  train_cmd->add_option("--epochs", tr.cfg.epochs, "Training epochs");
  train_cmd->add_option("--lr", tr.cfg.learning_rate, "Adam learning rate");
  train_cmd->add_option("--weight-decay", tr.cfg.weight_decay, "Decoupled weight decay");
  train_cmd->add_option("--batch", tr.cfg.batch_size, "Windows per optimizer step");
  train_cmd->add_option("--temporal", tr.cfg.T, "Window length T");
  train_cmd->add_option("--checkpoint-every", tr.cfg.checkpoint_every,
                        "Also save every N epochs");
  train_cmd->add_option("--model-seed", tr.model_seed, "Weight initialization seed");
  train_cmd->add_flag("--per-frame", tr.cfg.per_frame_supervision,
                      "Average the loss over every frame of the window");
  train_cmd->add_option("--class-weights", tr.cfg.class_weights,
                        "Explicit per-class loss weights (default: derived)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval_cmd->fallthrough();
  eval_cmd->add_option("--data", ev.data, "Split root (directory of sequences)")
      ->envname("MOTIONSEG_DATA")
      ->required();
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--out", ev.out, "Optional directory for report.csv and manifest");
  eval_cmd->add_flag("--observed-flow", ev.observed_flow,
                     "Warp stability with flow/ even when flow_gt/ exists");
  eval_cmd->add_flag("--fps", ev.fps, "Also time forward passes");
  eval_cmd->add_option("--bench-height", ev.bench_h, "Benchmark input height");
  eval_cmd->add_option("--bench-width", ev.bench_w, "Benchmark input width");
  eval_cmd->add_option("--bench-iters", ev.bench_iters, "Benchmark iterations");

  BenchArgs be;
  auto* bench_cmd = app.add_subcommand("bench", "Time eval-mode forward passes");
  bench_cmd->fallthrough();
  bench_cmd->add_option("--variant", be.variant, "Variant name (default: every variant)");
  bench_cmd->add_option("--size", be.size, "Model size: tiny, desk, or full");
  bench_cmd->add_option("--temporal", be.T, "Window length T");
  bench_cmd->add_option("--height", be.h, "Input height");
  bench_cmd->add_option("--width", be.w, "Input width");
  bench_cmd->add_option("--iters", be.iters, "Timed iterations");
  bench_cmd->add_option("--warmup", be.warmup, "Discarded warmup iterations");

  VizArgs vz;
  auto* viz_cmd = app.add_subcommand("viz", "Write qualitative panels for dataset windows");
  viz_cmd->fallthrough();
  viz_cmd->add_option("--data", vz.data, "Split root (directory of sequences)")
      ->envname("MOTIONSEG_DATA")
      ->required();
  viz_cmd->add_option("--checkpoint", vz.checkpoint, "Checkpoint file")->required();
  viz_cmd->add_option("--out", vz.out, "Directory for panel PNGs")->required();
  viz_cmd->add_option("--limit", vz.limit, "Maximum panels to write");

  ParamsArgs pa;
  auto* params_cmd = app.add_subcommand("params", "Print per-variant parameter counts");
  params_cmd->fallthrough();
  params_cmd->add_option("--size", pa.size, "Model size: tiny, desk, or full");
  params_cmd->add_option("--temporal", pa.T, "Window length T");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  }

  const std::vector<std::string> raw_args(argv + 1, argv + argc);
  const std::string config_path =
      app.get_config_ptr()->count() > 0 ? app.get_config_ptr()->as<std::string>() : "";

  if (synth_cmd->parsed()) {
    sy.spec.seed = seed;
    auto manifest = begin_manifest("synth", raw_args, seed, config_path);
    synth::generate_dataset(sy.out, sy.spec);
    manifest.outputs = {sy.out + "/train", sy.out + "/val"};
    manifest.notes["num_train"] = std::to_string(sy.spec.num_train);
    manifest.notes["num_val"] = std::to_string(sy.spec.num_val);
    manifest.finished_at = run::timestamp_utc();
    run::save_manifest(sy.out + "/manifest.json", manifest);
    std::printf("wrote %d train and %d val sequences under %s\n", sy.spec.num_train,
                sy.spec.num_val, sy.out.c_str());
  } else if (anno_cmd->parsed()) {
    const anno::Scene scene = anno::load_scene(an.scene);
    const int n = anno::generate_masks(scene, an.out);
    std::printf("wrote %d masks under %s/%s/mask\n", n, an.out.c_str(),
                scene.sequence_id.c_str());
  } else if (train_cmd->parsed()) {
    tr.cfg.seed = seed;
    auto manifest = begin_manifest("train", raw_args, seed, config_path);
    net::Model model(make_config(tr.size, tr.variant, tr.cfg.T), tr.model_seed);
    std::printf("training %s (%s, %lld params) on %s\n", tr.variant.c_str(), tr.size.c_str(),
                static_cast<long long>(model.param_count()), tr.data.c_str());
    const auto result =
        train::train(model, tr.data + "/train", tr.data + "/val", tr.cfg, tr.out);
    manifest.outputs = {result.best_checkpoint, result.last_checkpoint, tr.out + "/metrics.csv"};
    manifest.notes["variant"] = tr.variant;
    manifest.notes["best_epoch"] = std::to_string(result.best_epoch);
    manifest.notes["best_miou"] = std::to_string(result.best_miou);
    if (result.diverged) {
      manifest.notes["status"] = "diverged";
      manifest.outputs = {result.diagnostic_checkpoint};
    }
    manifest.finished_at = run::timestamp_utc();
    run::save_manifest(tr.out + "/manifest.json", manifest);
    if (result.diverged) {
      std::fprintf(stderr, "training diverged; diagnostic checkpoint at %s\n",
                   result.diagnostic_checkpoint.c_str());
      return 2;
    }
    std::printf("best epoch %d (val mIoU %.4f), checkpoints under %s\n", result.best_epoch,
                result.best_miou, tr.out.c_str());
  } else if (eval_cmd->parsed()) {
    auto manifest = begin_manifest("eval", raw_args, seed, "");
    net::Model model = ckpt::load(ev.checkpoint);
    eval::EvalOptions opt;
    opt.prefer_exact_flow = !ev.observed_flow;
    eval::EvalReport report = eval::evaluate(model, ev.data, opt);
    if (ev.fps) {
      const auto bench =
          eval::benchmark_fps(model, ev.bench_h, ev.bench_w, ev.bench_warmup, ev.bench_iters);
      report.fps = bench.fps;
    }
    std::printf("%s\n%s\n", eval::report_csv_header().c_str(),
                eval::report_csv_row(report).c_str());
    std::printf("%s", eval::report_table(report).c_str());
    if (!ev.out.empty()) {
      std::ofstream csv(ev.out + "/report.csv");
      // directory may not exist yet; create and retry once
      if (!csv) {
        std::filesystem::create_directories(ev.out);
        csv.open(ev.out + "/report.csv");
      }
      if (!csv) throw IoError("cannot write " + ev.out + "/report.csv");
      csv << eval::report_csv_header() << "\n" << eval::report_csv_row(report) << "\n";
      manifest.outputs = {ev.out + "/report.csv"};
      manifest.notes["checkpoint"] = ev.checkpoint;
      manifest.finished_at = run::timestamp_utc();
      run::save_manifest(ev.out + "/manifest.json", manifest);
    }
  } else if (bench_cmd->parsed()) {
    const auto variants = be.variant.empty()
                              ? net::all_variants()
                              : std::vector<net::Variant>{net::variant_from_string(be.variant)};
    std::printf("%s\n", eval::bench_csv_header().c_str());
    for (net::Variant v : variants) {
      net::Model model(make_config(be.size, net::to_string(v), be.T), 77);
      const auto r = eval::benchmark_fps(model, be.h, be.w, be.warmup, be.iters, be.seed);
      std::printf("%s\n",
                  eval::bench_csv_row(net::to_string(v), be.T, be.h, be.w, r).c_str());
      std::fflush(stdout);
    }
  } else if (viz_cmd->parsed()) {
    auto manifest = begin_manifest("viz", raw_args, seed, "");
    net::Model model = ckpt::load(vz.checkpoint);
    const int n = viz::write_panels(model, vz.data, vz.out, vz.limit);
    manifest.outputs = {vz.out};
    manifest.notes["panels"] = std::to_string(n);
    manifest.finished_at = run::timestamp_utc();
    run::save_manifest(vz.out + "/manifest.json", manifest);
    std::printf("wrote %d panels under %s\n", n, vz.out.c_str());
  } else if (params_cmd->parsed()) {
    std::printf("variant,params\n");
    for (net::Variant v : net::all_variants()) {
      net::Model model(make_config(pa.size, net::to_string(v), pa.T), 77);
      std::printf("%s,%lld\n", net::to_string(v).c_str(),
                  static_cast<long long>(model.param_count()));
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const mseg::ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const mseg::FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const mseg::NotFoundError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const mseg::InsufficientDataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fatal: %s\n", e.what());
    return 2;
  }
}
