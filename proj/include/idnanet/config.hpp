#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "idnanet/data.hpp"
#include "idnanet/loss.hpp"
#include "idnanet/model.hpp"

namespace idna {

struct OptimConfig {
  std::string algorithm = "adagrad";
  double lr = 0.05;
  Index batch = 8;
  Index epochs = 200;
  std::uint64_t seed = 0;  ///< global seed; every other stream derives from it
  double eps = 1e-10;
  double initial_accumulator = 0.0;
  double lambda_lr_scale = 0.1;  ///< step-size multiplier for the branch weights λ
  Index checkpoint_every = 50;  ///< 0 disables periodic checkpoints
};

struct DataConfig {
  std::string root;  ///< empty → generate the synthetic set in memory
  Index image_size = 64;
  SynthConfig synth;
  std::optional<std::uint64_t> synth_seed;  ///< unset → derived from the global seed
};

enum class MiouMode { dataset, per_image };

struct EvalConfig {
  double tau = 0.5;
  double dist_max = 3.0;
  Index roc_points = 101;
  MiouMode miou_mode = MiouMode::dataset;
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  std::optional<std::uint64_t> lambda_seed;  ///< unset → derived from the global seed
  OptimConfig optim;
  DataConfig data;
  EvalConfig eval;

  /// Flat `section.key = value` lines; '#' starts a comment. Unknown keys, malformed
  /// values and duplicate keys are ConfigErrors. Keys not present keep their defaults.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  /// Every key with its current value; parse(to_text()) reproduces the config.
  std::string to_text() const;

  void validate() const;

  std::uint64_t model_seed() const;
  std::uint64_t effective_lambda_seed() const;
  std::uint64_t effective_synth_seed() const;
  /// Synthetic data settings with the effective seed and image size filled in.
  SynthConfig synth_config() const;
};

/// Independent 64-bit seed for a named stream of the global seed.
std::uint64_t derive_seed(std::uint64_t global, std::uint64_t stream);

}  // namespace idna
