#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spotlight/cli.hpp"

using namespace spotlight;
using namespace spotlight::cli;

namespace {

// Config file first, then --set overrides, then the dedicated flags.
struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "key=value config file");
    cmd->add_option("--set", sets, "override one setting, e.g. --set train.base_lr=0.01");
  }

  RunConfig build() const {
    RunConfig cfg = file.empty() ? RunConfig{} : load_config(file);
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + s + "'");
      apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scene text detector with kernel shrink/expand post-processing"};
  app.require_subcommand(1);

  ConfigFlags labelgen_cfg, train_cfg, infer_cfg, bench_cfg;
  std::function<int()> action;

  auto* labelgen = app.add_subcommand("labelgen", "Write kernel masks for annotated images");
  LabelgenOptions lg;
  labelgen_cfg.attach(labelgen);
  labelgen->add_option("--annotations", lg.annotations, "annotation directory")->required();
  labelgen->add_option("--images", lg.images, "image directory (PPM/PGM)")->required();
  labelgen->add_option("--out", lg.out, "output directory")->required();
  labelgen->callback([&] { action = [&] { return cmd_labelgen(labelgen_cfg.build(), lg, std::cout); }; });

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  TrainOptions tr;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  train_cfg.attach(train);
  auto* data_opt = train->add_option("--data", tr.data, "dataset directory");
  train->add_flag("--synthetic", tr.synthetic, "generate the synthetic toy set")->excludes(data_opt);
  train->add_option("--out", tr.out, "checkpoint path")->required();
  train->add_option("--seed", seed, "training seed (shuffling and flips)");
  train->add_option("--epochs", epochs, "number of epochs");
  train->add_option("--loss-curve", tr.loss_curve, "loss curve CSV (default <out>.loss.csv)");
  train->add_option("--dump-data", tr.dump_data, "also write the training set here");
  train->add_option("--log-every", tr.log_every, "print every N steps");
  train->callback([&] {
    action = [&] {
      RunConfig cfg = train_cfg.build();
      if (seed) cfg.train.seed = *seed;
      if (epochs) cfg.train.epochs = *epochs;
      return cmd_train(cfg, tr, std::cout);
    };
  });

  auto* infer = app.add_subcommand("infer", "Detect text in images");
  InferOptions in;
  std::optional<int> short_side;
  infer_cfg.attach(infer);
  infer->add_option("--checkpoint", in.checkpoint, "weights file")->required();
  infer->add_option("--images", in.images, "image file or directory")->required();
  infer->add_option("--out", in.out, "output directory")->required();
  infer->add_flag("--overlay", in.overlay, "also write images with drawn detections");
  infer->add_option("--short-side", short_side, "resize so the shorter side is N pixels");
  infer->callback([&] {
    action = [&] {
      RunConfig cfg = infer_cfg.build();
      if (short_side) cfg.short_side = *short_side;
      return cmd_infer(cfg, in, std::cout);
    };
  });

  auto* eval = app.add_subcommand("eval", "Score detections against ground truth");
  EvalOptions ev;
  eval->add_option("--det", ev.det, "detection directory")->required();
  eval->add_option("--gt", ev.gt, "ground-truth annotation directory")->required();
  eval->add_option("--out", ev.out, "report directory");
  eval->add_option("--iou", ev.iou, "IoU threshold")->capture_default_str();
  eval->callback([&] { action = [&] { return cmd_eval(ev, std::cout); }; });

  auto* bench = app.add_subcommand("bench", "Count MACs and parameters, time inference");
  BenchOptions bo;
  bench_cfg.attach(bench);
  bench->add_option("--checkpoint", bo.checkpoint, "weights file (default: build from config)");
  bench->add_option("--height", bo.height)->capture_default_str();
  bench->add_option("--width", bo.width)->capture_default_str();
  bench->add_option("--warmup", bo.warmup)->capture_default_str();
  bench->add_option("--iters", bo.iters)->capture_default_str();
  bench->callback([&] { action = [&] { return cmd_bench(bench_cfg.build(), bo, std::cout); }; });

  auto* verify = app.add_subcommand("verify", "Run the built-in oracle suite");
  verify->callback([&] { action = [] { return cmd_verify(std::cout); }; });

  auto* config = app.add_subcommand("config", "Print the effective configuration");
  ConfigFlags config_cfg;
  config_cfg.attach(config);
  config->callback([&] {
    action = [&] {
      std::cout << format_config(config_cfg.build());
      return kExitOk;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }
  return run_guarded(action, std::cerr);
}
