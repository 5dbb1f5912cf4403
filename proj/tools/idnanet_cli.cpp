// idnanet: train, evaluate and run the network from the command line.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "idnanet/trainer.hpp"

namespace fs = std::filesystem;
using namespace idna;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* app, Common& c, const std::string& out_help) {
  app->add_option("--config", c.config, "run config file (section.key = value lines)")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "global seed, overrides optim.seed");
  app->add_option("--out", c.out, out_help);
}

RunConfig resolve(const Common& c, const std::optional<RunConfig>& fallback = std::nullopt) {
  RunConfig cfg = !c.config.empty() ? RunConfig::load(c.config) : fallback.value_or(RunConfig{});
  if (c.seed) cfg.optim.seed = *c.seed;
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
  if (!f) throw IoError("cannot write " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IDNANet infrared small-target segmentation"};
  app.require_subcommand(1);

  Common train_opts, eval_opts, predict_opts, synth_opts, roc_opts;
  std::optional<Index> epochs;
  std::string ckpt, image, data_root;
  std::size_t thresholds = 101;

  auto* train = app.add_subcommand("train", "train a model; writes log.csv and checkpoints to --out");
  add_common(train, train_opts, "output directory (default: run)");
  train->add_option("--epochs", epochs, "override optim.epochs");
  train->add_option("--data", data_root, "dataset root with images/ and masks/, overrides data.root");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint; prints the metric report");
  add_common(eval, eval_opts, "directory for report.txt and report.json");
  eval->add_option("--ckpt", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_root, "dataset root, overrides data.root");

  auto* predict = app.add_subcommand("predict", "write the probability map of one image as a PNG");
  add_common(predict, predict_opts, "output PNG file");
  predict->add_option("--ckpt", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  predict->add_option("--image", image, "input 8-bit PNG")->required();

  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset into --out");
  add_common(synth, synth_opts, "dataset directory (default: synth)");

  auto* roc_cmd = app.add_subcommand("roc", "threshold sweep of a checkpoint; CSV threshold,fa,pd");
  add_common(roc_cmd, roc_opts, "directory for roc.csv (default: stdout)");
  roc_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  roc_cmd->add_option("--thresholds", thresholds, "number of thresholds from 1 down to 0")->check(CLI::Range(2, 100000));
  roc_cmd->add_option("--data", data_root, "dataset root, overrides data.root");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) {
      RunConfig cfg = resolve(train_opts);
      if (epochs) cfg.optim.epochs = *epochs;
      if (!data_root.empty()) cfg.data.root = data_root;
      const fs::path out = train_opts.out.empty() ? fs::path("run") : fs::path(train_opts.out);
      Trainer<float> trainer(cfg);
      const auto data = load_run_data<float>(cfg);
      std::cout << log_header() << '\n';
      trainer.train(data, out, [](const EpochLog& l) { std::cout << log_row(l) << std::endl; });
      std::cout << "checkpoint: " << (out / "final.idna").string() << '\n';
    } else if (*eval || *roc_cmd) {
      const Common& opts = *eval ? eval_opts : roc_opts;
      const auto checkpoint = load_checkpoint<float>(ckpt);
      RunConfig cfg = resolve(opts, RunConfig::parse(checkpoint.config_text));
      if (!data_root.empty()) cfg.data.root = data_root;
      const auto model = load_model(cfg, checkpoint);
      const auto data = load_run_data<float>(cfg);
      const ModelPredictor<float> predictor(*model);
      if (*eval) {
        const MetricReport report = evaluate(predictor, data, cfg.eval);
        std::cout << report.to_text();
        if (!opts.out.empty()) {
          ensure_dir(opts.out);
          write_text(fs::path(opts.out) / "report.txt", report.to_text());
          write_text(fs::path(opts.out) / "report.json", report.to_json());
        }
      } else {
        const auto points = roc(predictor, data, cfg.eval, default_thresholds(thresholds));
        if (opts.out.empty()) {
          write_roc_csv(std::cout, points);
        } else {
          ensure_dir(opts.out);
          std::ofstream f(fs::path(opts.out) / "roc.csv");
          write_roc_csv(f, points);
          if (!f) throw IoError("cannot write roc.csv");
        }
      }
    } else if (*predict) {
      if (predict_opts.out.empty()) throw UsageError("predict needs --out <file.png>");
      const auto checkpoint = load_checkpoint<float>(ckpt);
      const RunConfig cfg = resolve(predict_opts, RunConfig::parse(checkpoint.config_text));
      const auto model = load_model(cfg, checkpoint);
      predict_file(*model, image, predict_opts.out, cfg.data.image_size);
    } else if (*synth) {
      const RunConfig cfg = resolve(synth_opts);
      const fs::path out = synth_opts.out.empty() ? fs::path("synth") : fs::path(synth_opts.out);
      std::cout << synth_dataset(cfg.synth_config(), out);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
