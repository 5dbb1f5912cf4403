#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

#include "idnanet/checkpoint.hpp"
#include "idnanet/config.hpp"
#include "idnanet/metrics.hpp"

namespace idna {

/// Adagrad: acc += g²; p −= lr·g/(√acc + eps). One accumulator per parameter, in the
/// order the parameters were handed to the constructor.
template <typename S>
class Adagrad {
 public:
  Adagrad(std::vector<Var<S>> params, double lr, double eps, double initial_accumulator = 0.0);

  void step();
  void zero_grad();

  const std::vector<Var<S>>& parameters() const { return params_; }
  std::vector<ArrayX<S>>& accumulators() { return acc_; }
  const std::vector<ArrayX<S>>& accumulators() const { return acc_; }
  /// Per-parameter multiplier on lr, 1 by default.
  std::vector<S>& lr_scale() { return scale_; }

 private:
  std::vector<Var<S>> params_;
  std::vector<ArrayX<S>> acc_;
  std::vector<S> scale_;
  S lr_, eps_;
};

struct EpochLog {
  Index epoch = 0;
  double l_all = 0;
  std::array<double, 5> branch{};
  std::array<double, 5> lambda{};
  double miou = 0;  ///< training-set mIoU of X_pred^1 at eval.tau, from this epoch's forward passes
};

/// Header and row of the per-epoch CSV log.
std::string log_header();
std::string log_row(const EpochLog& e);

/// Draws λ_i ~ U(0,1) from `seed`.
template <typename S>
Tensor<S> initial_lambda(std::uint64_t seed);

template <typename S>
class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg);
  /// Resumes from a checkpoint; the run config comes from the checkpoint itself.
  explicit Trainer(const Checkpoint<S>& ckpt);

  /// One pass over `data` in a seeded shuffled order, one optimizer step per batch.
  /// NumericError naming the first non-finite branch when a loss is NaN or Inf.
  EpochLog train_epoch(const std::vector<Sample<S>>& data);

  /// Runs the remaining epochs up to cfg.optim.epochs. With `out`, appends to out/log.csv
  /// and writes out/ckpt_<epoch>.idna every checkpoint_every epochs and out/final.idna.
  std::vector<EpochLog> train(const std::vector<Sample<S>>& data, const std::optional<std::filesystem::path>& out = {},
                              const std::function<void(const EpochLog&)>& on_epoch = {});

  /// L_all and branch losses of one sample under the current parameters, without a tape.
  LossResult<S> loss(const Sample<S>& sample) const;

  Checkpoint<S> checkpoint() const;

  const RunConfig& config() const { return cfg_; }
  IdnaNet<S>& model() { return *model_; }
  const IdnaNet<S>& model() const { return *model_; }
  const Var<S>& lambda() const { return lambda_; }
  Index epoch() const { return epoch_; }
  Adagrad<S>& optimizer() { return *optim_; }

 private:
  void build();

  RunConfig cfg_;
  std::unique_ptr<IdnaNet<S>> model_;
  Var<S> lambda_;
  std::unique_ptr<Adagrad<S>> optim_;
  Rng shuffle_rng_;
  Index epoch_ = 0;
};

/// Rebuilds the model described by the checkpoint's run config and loads its parameters.
template <typename S>
std::unique_ptr<IdnaNet<S>> load_model(const Checkpoint<S>& ckpt);

/// Builds the model described by `cfg` and loads the checkpoint's parameters into it.
/// VersionError when the checkpoint does not fit that model.
template <typename S>
std::unique_ptr<IdnaNet<S>> load_model(const RunConfig& cfg, const Checkpoint<S>& ckpt);

/// Per-pixel target probabilities for one sample.
template <typename S>
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual Plane<S> probability(const Sample<S>& sample) const = 0;
};

/// sigmoid(X_pred^1) of a trained network.
template <typename S>
class ModelPredictor final : public Predictor<S> {
 public:
  explicit ModelPredictor(const IdnaNet<S>& model) : model_(model) {}
  Plane<S> probability(const Sample<S>& sample) const override;

 private:
  const IdnaNet<S>& model_;
};

/// Binarizes every probability map at cfg.tau and accumulates. UsageError on an empty set.
template <typename S>
MetricReport evaluate(const Predictor<S>& predictor, const std::vector<Sample<S>>& data, const EvalConfig& cfg);

template <typename S>
std::vector<RocPoint> roc(const Predictor<S>& predictor, const std::vector<Sample<S>>& data, const EvalConfig& cfg,
                          const std::vector<double>& thresholds);

/// Reads an 8-bit PNG, runs the model at `size`×`size`, resizes the probability map back
/// to the input size and writes round(255·p) as a gray PNG.
template <typename S>
void predict_file(const IdnaNet<S>& model, const std::filesystem::path& image, const std::filesystem::path& out,
                  Index size);

/// The dataset named by the config: load + preprocess data.root, or the synthetic set.
template <typename S>
std::vector<Sample<S>> load_run_data(const RunConfig& cfg);

}  // namespace idna
