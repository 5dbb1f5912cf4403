#pragma once

#include <array>

#include "idnanet/fusion_head.hpp"

namespace idna {

struct LossConfig {
  double alpha = 1.0;  ///< Dice weight
  double mu = 1.0;     ///< BCE weight
  std::array<bool, 5> active{true, true, true, true, true};
  double eps_dice = 1.0;
  double eps_log = 1e-7;

  /// ConfigError on negative balance factors or an all-inactive mask.
  void validate() const;
};

/// Soft Dice on sigmoid(logits): 1 − (2Σpg + ε)/(Σp + Σg + ε). `target` holds 0/1.
template <typename S>
S dice_loss(const Tensor<S>& logits, const Tensor<S>& target, S eps_dice = S(1));

/// Mean binary cross-entropy with p clamped to [ε, 1−ε], evaluated in logit form.
template <typename S>
S bce_loss(const Tensor<S>& logits, const Tensor<S>& target, S eps_log = S(1e-7));

/// α·Dice + μ·BCE.
template <typename S>
S branch_loss(const Tensor<S>& logits, const Tensor<S>& target, const LossConfig& cfg);

template <typename S>
struct LossResult {
  Var<S> total;              ///< Σ_{i active} λ_i·L_i, shape [1]
  std::array<S, 5> branch{};  ///< L_i for every branch (inactive ones still reported)
};

/// Weighted deep-supervision loss over the five prediction maps. `lambda` is the [5]
/// trainable weight vector; inactive branches contribute nothing and get no gradient.
template <typename S>
LossResult<S> wd_bce(const std::array<Var<S>, 5>& preds, const Tensor<S>& target, const Var<S>& lambda,
                     const LossConfig& cfg);

template <typename S>
LossResult<S> wd_bce(const PredictionSet<S>& preds, const Tensor<S>& target, const Var<S>& lambda,
                     const LossConfig& cfg) {
  return wd_bce(preds.preds, target, lambda, cfg);
}

}  // namespace idna
