#include "idnanet/loss.hpp"

#include <cmath>

namespace idna {

void LossConfig::validate() const {
  if (alpha < 0 || mu < 0) throw ConfigError("loss balance factors must be non-negative");
  if (eps_dice < 0 || eps_log <= 0 || eps_log >= 0.5) throw ConfigError("loss smoothing constants out of range");
  bool any = false;
  for (bool a : active) any = any || a;
  if (!any) throw ConfigError("loss active mask selects no branch; the loss would be identically zero");
}

namespace {

template <typename S>
ArrayX<S> stable_sigmoid(const ArrayX<S>& z) {
  return z.unaryExpr([](S v) {
    if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
    const S e = std::exp(v);
    return e / (S(1) + e);
  });
}

template <typename S>
void check_target(const Tensor<S>& logits, const Tensor<S>& target) {
  if (logits.size() != target.size())
    throw InputShapeError("loss: logits " + to_string(logits.shape) + " vs mask " + to_string(target.shape));
}

// Clamping p to [ε, 1−ε] is clamping the logit to ±log((1−ε)/ε).
template <typename S>
S logit_bound(S eps_log) {
  return std::log((S(1) - eps_log) / eps_log);
}

template <typename S>
S bce_value(const ArrayX<S>& z, const ArrayX<S>& g, S eps_log) {
  const S bound = logit_bound(eps_log);
  ArrayX<S> zc = z.max(-bound).min(bound);
  ArrayX<S> per = zc.max(S(0)) - zc * g + (-zc.abs()).exp().log1p();
  return per.mean();
}

template <typename S>
ArrayX<S> bce_grad(const ArrayX<S>& z, const ArrayX<S>& g, S eps_log) {
  const S bound = logit_bound(eps_log);
  ArrayX<S> zc = z.max(-bound).min(bound);
  ArrayX<S> grad = (stable_sigmoid(zc) - g) / S(z.size());
  return (z.abs() < bound).select(grad, S(0));
}

template <typename S>
S dice_value(const ArrayX<S>& p, const ArrayX<S>& g, S eps) {
  return S(1) - (S(2) * (p * g).sum() + eps) / (p.sum() + g.sum() + eps);
}

template <typename S>
ArrayX<S> dice_grad(const ArrayX<S>& p, const ArrayX<S>& g, S eps) {
  const S num = S(2) * (p * g).sum() + eps;
  const S den = p.sum() + g.sum() + eps;
  ArrayX<S> dp = -(S(2) * g * den - num) / (den * den);
  return dp * p * (S(1) - p);
}

}  // namespace

template <typename S>
S dice_loss(const Tensor<S>& logits, const Tensor<S>& target, S eps_dice) {
  check_target(logits, target);
  return dice_value<S>(stable_sigmoid(logits.data), target.data, eps_dice);
}

template <typename S>
S bce_loss(const Tensor<S>& logits, const Tensor<S>& target, S eps_log) {
  check_target(logits, target);
  return bce_value<S>(logits.data, target.data, eps_log);
}

template <typename S>
S branch_loss(const Tensor<S>& logits, const Tensor<S>& target, const LossConfig& cfg) {
  return S(cfg.alpha) * dice_loss(logits, target, S(cfg.eps_dice)) + S(cfg.mu) * bce_loss(logits, target, S(cfg.eps_log));
}

template <typename S>
LossResult<S> wd_bce(const std::array<Var<S>, 5>& preds, const Tensor<S>& target, const Var<S>& lambda,
                     const LossConfig& cfg) {
  cfg.validate();
  if (lambda.size() != 5) throw InputShapeError("wd_bce: lambda must hold 5 weights");
  LossResult<S> result;
  Tensor<S> total({1});
  for (std::size_t i = 0; i < 5; ++i) {
    check_target(preds[i].value(), target);
    result.branch[i] = branch_loss(preds[i].value(), target, cfg);
    if (cfg.active[i]) total.data(0) += lambda.data()(static_cast<Index>(i)) * result.branch[i];
  }
  std::vector<Var<S>> inputs(preds.begin(), preds.end());
  inputs.push_back(lambda);
  const auto branch = result.branch;
  result.total = make_result(std::move(total), inputs, [preds, target, lambda, cfg, branch](const ArrayX<S>& g) {
    const S upstream = g(0);
    ArrayX<S> glambda = ArrayX<S>::Zero(5);
    for (std::size_t i = 0; i < 5; ++i) {
      if (!cfg.active[i]) continue;
      const auto ii = static_cast<Index>(i);
      glambda(ii) = upstream * branch[i];
      if (!preds[i].requires_grad()) continue;
      const ArrayX<S>& z = preds[i].data();
      ArrayX<S> dz = S(cfg.alpha) * dice_grad<S>(stable_sigmoid(z), target.data, S(cfg.eps_dice)) +
                     S(cfg.mu) * bce_grad<S>(z, target.data, S(cfg.eps_log));
      preds[i].accumulate(upstream * lambda.data()(ii) * dz);
    }
    lambda.accumulate(glambda);
  });
  return result;
}

#define IDNA_INSTANTIATE_LOSS(S)                                                                     \
  template S dice_loss(const Tensor<S>&, const Tensor<S>&, S);                                      \
  template S bce_loss(const Tensor<S>&, const Tensor<S>&, S);                                       \
  template S branch_loss(const Tensor<S>&, const Tensor<S>&, const LossConfig&);                    \
  template LossResult<S> wd_bce(const std::array<Var<S>, 5>&, const Tensor<S>&, const Var<S>&,      \
                                const LossConfig&);

IDNA_INSTANTIATE_LOSS(float)
IDNA_INSTANTIATE_LOSS(double)

}  // namespace idna
