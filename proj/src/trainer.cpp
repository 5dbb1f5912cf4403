#include "idnanet/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace idna {

namespace fs = std::filesystem;

template <typename S>
Adagrad<S>::Adagrad(std::vector<Var<S>> params, double lr, double eps, double initial_accumulator)
    : params_(std::move(params)), lr_(static_cast<S>(lr)), eps_(static_cast<S>(eps)) {
  acc_.reserve(params_.size());
  for (const auto& p : params_) acc_.push_back(ArrayX<S>::Constant(p.size(), static_cast<S>(initial_accumulator)));
  scale_.assign(params_.size(), S(1));
}

template <typename S>
void Adagrad<S>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var<S>& p = params_[i];
    const ArrayX<S> g = p.grad();
    acc_[i] += g.square();
    p.mutable_value().data -= (lr_ * scale_[i]) * g / (acc_[i].sqrt() + eps_);
  }
}

template <typename S>
void Adagrad<S>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::string log_header() { return "epoch,l_all,l1,l2,l3,l4,l5,lambda1,lambda2,lambda3,lambda4,lambda5,miou"; }

std::string log_row(const EpochLog& e) {
  std::ostringstream os;
  os << std::setprecision(9) << e.epoch << ',' << e.l_all;
  for (double v : e.branch) os << ',' << v;
  for (double v : e.lambda) os << ',' << v;
  os << ',' << e.miou;
  return os.str();
}

template <typename S>
Tensor<S> initial_lambda(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<S> t({5});
  for (Index i = 0; i < 5; ++i) t.data(i) = static_cast<S>(u(rng));
  return t;
}

template <typename S>
Trainer<S>::Trainer(const RunConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  build();
  lambda_.mutable_value() = initial_lambda<S>(cfg_.effective_lambda_seed());
  shuffle_rng_.seed(derive_seed(cfg_.optim.seed, 4));
}

template <typename S>
Trainer<S>::Trainer(const Checkpoint<S>& ckpt) : cfg_(RunConfig::parse(ckpt.config_text)) {
  cfg_.validate();
  build();
  restore(model_->parameters(), ckpt.parameters);
  if (ckpt.lambda.size() != 5) throw VersionError("checkpoint branch weights must hold 5 values");
  lambda_.mutable_value() = ckpt.lambda;
  auto& acc = optim_->accumulators();
  if (ckpt.accumulators.size() != acc.size()) throw VersionError("checkpoint optimizer state does not fit the model");
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (ckpt.accumulators[i].value.size() != acc[i].size()) throw VersionError("checkpoint optimizer state does not fit the model");
    acc[i] = ckpt.accumulators[i].value.data;
  }
  std::istringstream rng_state(ckpt.rng_state);
  rng_state >> shuffle_rng_;
  if (!rng_state) throw FormatError("checkpoint RNG state is unreadable");
  epoch_ = ckpt.epoch;
}

template <typename S>
void Trainer<S>::build() {
  model_ = std::make_unique<IdnaNet<S>>(cfg_.model, cfg_.model_seed());
  lambda_ = Var<S>(Tensor<S>({5}), true);
  std::vector<Var<S>> params;
  for (const auto& e : model_->parameters().entries()) params.push_back(e.var);
  params.push_back(lambda_);
  optim_ = std::make_unique<Adagrad<S>>(std::move(params), cfg_.optim.lr, cfg_.optim.eps, cfg_.optim.initial_accumulator);
  optim_->lr_scale().back() = static_cast<S>(cfg_.optim.lambda_lr_scale);
}

namespace {

template <typename S>
void check_finite(const LossResult<S>& r, const LossConfig& cfg, Index epoch, const std::string& id) {
  for (std::size_t i = 0; i < 5; ++i)
    if (cfg.active[i] && !std::isfinite(static_cast<double>(r.branch[i])))
      throw NumericError("non-finite loss in branch " + std::to_string(i + 1) + " (X_pred^" + std::to_string(i + 1) +
                         ") at epoch " + std::to_string(epoch) + ", sample '" + id + "'");
  if (!std::isfinite(static_cast<double>(r.total.item())))
    throw NumericError("non-finite weighted loss at epoch " + std::to_string(epoch) + ", sample '" + id +
                       "' (branch weights diverged)");
}

template <typename S>
Mask predicted_mask(const Var<S>& logits, double tau) {
  NoGradGuard guard;
  return binarize(to_plane(sigmoid(logits).value()), tau);
}

template <typename S>
Mask target_mask(const Sample<S>& s) {
  return (to_plane(s.mask) > S(0.5)).template cast<std::uint8_t>();
}

}  // namespace

template <typename S>
EpochLog Trainer<S>::train_epoch(const std::vector<Sample<S>>& data) {
  if (data.empty()) throw UsageError("cannot train on an empty dataset");
  ++epoch_;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), shuffle_rng_);

  EpochLog log;
  log.epoch = epoch_;
  MetricAccumulator iou;
  const auto batch = static_cast<std::size_t>(cfg_.optim.batch);
  for (std::size_t start = 0; start < order.size(); start += batch) {
    const std::size_t end = std::min(order.size(), start + batch);
    const S weight = S(1) / static_cast<S>(end - start);
    optim_->zero_grad();
    for (std::size_t k = start; k < end; ++k) {
      const Sample<S>& s = data[order[k]];
      const PredictionSet<S> preds = model_->forward(Var<S>(s.image));
      LossResult<S> r = wd_bce(preds, s.mask, lambda_, cfg_.loss);
      check_finite(r, cfg_.loss, epoch_, s.id);
      log.l_all += static_cast<double>(r.total.item());
      for (std::size_t i = 0; i < 5; ++i) log.branch[i] += static_cast<double>(r.branch[i]);
      accumulate_iou(iou, predicted_mask(preds.inference(), cfg_.eval.tau), target_mask(s));
      backward(r.total, ArrayX<S>::Constant(1, weight).eval());
    }
    optim_->step();
    lambda_.mutable_value().data = lambda_.data().max(S(0));
  }
  const double n = static_cast<double>(data.size());
  log.l_all /= n;
  for (auto& b : log.branch) b /= n;
  for (std::size_t i = 0; i < 5; ++i) log.lambda[i] = static_cast<double>(lambda_.data()(static_cast<Index>(i)));
  log.miou = iou.report().miou.value_or(0.0);
  return log;
}

template <typename S>
std::vector<EpochLog> Trainer<S>::train(const std::vector<Sample<S>>& data, const std::optional<fs::path>& out,
                                        const std::function<void(const EpochLog&)>& on_epoch) {
  std::ofstream csv;
  if (out) {
    std::error_code ec;
    fs::create_directories(*out, ec);
    if (ec) throw IoError("cannot create output directory " + out->string() + ": " + ec.message());
    const fs::path log_path = *out / "log.csv";
    const bool fresh = !fs::exists(log_path) || fs::file_size(log_path) == 0;
    csv.open(log_path, std::ios::app);
    if (!csv) throw IoError("cannot append to " + log_path.string());
    if (fresh) csv << log_header() << '\n';
  }
  std::vector<EpochLog> logs;
  while (epoch_ < cfg_.optim.epochs) {
    logs.push_back(train_epoch(data));
    if (on_epoch) on_epoch(logs.back());
    if (!out) continue;
    csv << log_row(logs.back()) << '\n' << std::flush;
    if (cfg_.optim.checkpoint_every > 0 && epoch_ % cfg_.optim.checkpoint_every == 0) {
      std::ostringstream name;
      name << "ckpt_" << std::setw(5) << std::setfill('0') << epoch_ << ".idna";
      save_checkpoint(*out / name.str(), checkpoint());
    }
  }
  if (out) save_checkpoint(*out / "final.idna", checkpoint());
  return logs;
}

template <typename S>
LossResult<S> Trainer<S>::loss(const Sample<S>& sample) const {
  NoGradGuard guard;
  return wd_bce(model_->forward(Var<S>(sample.image)), sample.mask, lambda_, cfg_.loss);
}

template <typename S>
Checkpoint<S> Trainer<S>::checkpoint() const {
  Checkpoint<S> c;
  c.config_text = cfg_.to_text();
  c.epoch = epoch_;
  std::ostringstream rng_state;
  rng_state << shuffle_rng_;
  c.rng_state = rng_state.str();
  c.parameters = snapshot(model_->parameters());
  c.lambda = lambda_.value();
  const auto& params = optim_->parameters();
  const auto& acc = optim_->accumulators();
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const std::string name = i < c.parameters.size() ? c.parameters[i].name : std::string("loss.lambda");
    c.accumulators.push_back({name, Tensor<S>(params[i].shape(), acc[i])});
  }
  return c;
}

template <typename S>
std::unique_ptr<IdnaNet<S>> load_model(const RunConfig& cfg, const Checkpoint<S>& ckpt) {
  auto model = std::make_unique<IdnaNet<S>>(cfg.model, cfg.model_seed());
  restore(model->parameters(), ckpt.parameters);
  return model;
}

template <typename S>
std::unique_ptr<IdnaNet<S>> load_model(const Checkpoint<S>& ckpt) {
  return load_model(RunConfig::parse(ckpt.config_text), ckpt);
}

template <typename S>
Plane<S> ModelPredictor<S>::probability(const Sample<S>& sample) const {
  NoGradGuard guard;
  return to_plane(sigmoid(model_.forward(Var<S>(sample.image)).inference()).value());
}

template <typename S>
MetricReport evaluate(const Predictor<S>& predictor, const std::vector<Sample<S>>& data, const EvalConfig& cfg) {
  if (data.empty()) throw UsageError("cannot evaluate an empty dataset");
  MetricAccumulator acc;
  for (const auto& s : data) acc.add(binarize(predictor.probability(s), cfg.tau), target_mask(s), cfg.dist_max);
  return acc.report();
}

template <typename S>
std::vector<RocPoint> roc(const Predictor<S>& predictor, const std::vector<Sample<S>>& data, const EvalConfig& cfg,
                          const std::vector<double>& thresholds) {
  if (data.empty()) throw UsageError("cannot sweep an empty dataset");
  std::vector<Plane<S>> probs;
  std::vector<Mask> gts;
  for (const auto& s : data) {
    probs.push_back(predictor.probability(s));
    gts.push_back(target_mask(s));
  }
  return roc_sweep(probs, gts, thresholds, cfg.dist_max);
}

template <typename S>
void predict_file(const IdnaNet<S>& model, const fs::path& image, const fs::path& out, Index size) {
  const Image8 img = read_png(image);
  Sample<S> s;
  s.image = to_tensor<S>(img, 3);
  s.mask = Tensor<S>({1, img.height, img.width});
  s.id = image.stem().string();
  const Sample<S> resized = preprocess(s, size);
  const Plane<S> prob = ModelPredictor<S>(model).probability(resized);
  Tensor<S> back = resize_bilinear(to_tensor(prob), img.height, img.width);
  write_png(out, to_image8(back));
}

template <typename S>
std::vector<Sample<S>> load_run_data(const RunConfig& cfg) {
  std::vector<Sample<S>> out;
  if (!cfg.data.root.empty()) {
    for (const auto& s : load_dataset<S>(cfg.data.root)) out.push_back(preprocess(s, cfg.data.image_size));
  } else {
    for (auto& s : synth_samples<S>(cfg.synth_config())) out.push_back(std::move(s.sample));
  }
  return out;
}

#define IDNA_INSTANTIATE_TRAINER(S)                                                                            \
  template class Adagrad<S>;                                                                                   \
  template class Trainer<S>;                                                                                   \
  template class ModelPredictor<S>;                                                                            \
  template Tensor<S> initial_lambda<S>(std::uint64_t);                                                         \
  template std::unique_ptr<IdnaNet<S>> load_model(const Checkpoint<S>&);                                      \
  template std::unique_ptr<IdnaNet<S>> load_model(const RunConfig&, const Checkpoint<S>&);                    \
  template MetricReport evaluate(const Predictor<S>&, const std::vector<Sample<S>>&, const EvalConfig&);       \
  template std::vector<RocPoint> roc(const Predictor<S>&, const std::vector<Sample<S>>&, const EvalConfig&,    \
                                     const std::vector<double>&);                                              \
  template void predict_file(const IdnaNet<S>&, const fs::path&, const fs::path&, Index);                      \
  template std::vector<Sample<S>> load_run_data(const RunConfig&);

IDNA_INSTANTIATE_TRAINER(float)
IDNA_INSTANTIATE_TRAINER(double)

}  // namespace idna
