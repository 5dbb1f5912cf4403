#include "doctest.h"
#include "idnanet/loss.hpp"
#include "test_support.hpp"

using namespace idna;
using idna::test::random_tensor;
using idna::test::relative_error;

namespace {

Tensor<double> values(Shape shape, std::initializer_list<double> v) {
  Tensor<double> t(std::move(shape));
  Index i = 0;
  for (double x : v) t.data(i++) = x;
  return t;
}

Tensor<double> random_mask(Shape shape, Rng& rng, double p = 0.2) {
  std::bernoulli_distribution on(p);
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.data(i) = on(rng) ? 1.0 : 0.0;
  return t;
}

}  // namespace

TEST_CASE("dice and bce hand values") {
  const auto g4 = values({1, 2, 2}, {1, 0, 0, 0});
  const Tensor<double> zero4({1, 2, 2});
  CHECK(dice_loss(zero4, g4) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(std::abs(dice_loss(zero4, g4) - 0.5) < 1e-6);
  CHECK(std::abs(bce_loss(zero4, g4) - 0.693147) < 1e-6);
  CHECK(std::abs(bce_loss(zero4, Tensor<double>({1, 2, 2})) - std::log(2.0)) < 1e-12);

  const auto quarter = values({1, 1, 1}, {std::log(1.0 / 3.0)});  // sigmoid = 0.25
  CHECK(std::abs(bce_loss(quarter, values({1, 1, 1}, {1})) - 1.386294) < 1e-6);

  LossConfig cfg;
  CHECK(std::abs(branch_loss(zero4, g4, cfg) - 1.193147) < 1e-6);
  cfg.mu = 0;
  CHECK(branch_loss(zero4, g4, cfg) == doctest::Approx(0.5));
  cfg.mu = 1;
  cfg.alpha = 0;
  CHECK(branch_loss(zero4, g4, cfg) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("saturated and empty cases") {
  const auto g = values({1, 2, 2}, {1, 1, 0, 0});
  const auto sat = values({1, 2, 2}, {40, 40, -40, -40});
  CHECK(dice_loss(sat, g) < 1e-12);
  CHECK(bce_loss(sat, g) < 2e-7);
  CHECK(bce_loss(sat, g) > 0);
  const auto empty_pred = values({1, 2, 2}, {-40, -40, -40, -40});
  CHECK(dice_loss(empty_pred, Tensor<double>({1, 2, 2})) < 1e-12);
  CHECK_THROWS_AS(bce_loss(sat, Tensor<double>({1, 3, 3})), InputShapeError);
}

TEST_CASE("loss ranges over random inputs") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto z = random_tensor({1, 6, 6}, rng, -8, 8);
    const auto g = random_mask({1, 6, 6}, rng);
    const double d = dice_loss(z, g), b = bce_loss(z, g);
    CHECK(d >= 0);
    CHECK(d <= 1);
    CHECK(b >= 0);
  }
}

TEST_CASE("bce is monotone in a target pixel's logit") {
  Rng rng(2);
  auto z = random_tensor({1, 4, 4}, rng, -3, 3);
  auto g = random_mask({1, 4, 4}, rng);
  g.data(5) = 1;
  z.data(5) = -20;
  double prev = bce_loss(z, g);
  for (double v = -19.5; v <= 20; v += 0.5) {
    z.data(5) = v;
    const double now = bce_loss(z, g);
    CHECK(now <= prev + 1e-15);
    prev = now;
  }
}

TEST_CASE("weighted deep supervision examples") {
  Rng rng(3);
  const auto g = random_mask({1, 4, 4}, rng);
  const Var<double> p(random_tensor({1, 4, 4}, rng));
  const std::array<Var<double>, 5> same{p, p, p, p, p};
  LossConfig cfg;
  const double l1 = branch_loss(p.value(), g, cfg);

  const Var<double> ones(Tensor<double>::filled({5}, 1.0));
  CHECK(wd_bce(same, g, ones, cfg).total.item() == doctest::Approx(5 * l1));
  CHECK(wd_bce(same, g, Var<double>(Tensor<double>({5})), cfg).total.item() == 0.0);

  std::array<Var<double>, 5> preds;
  for (auto& q : preds) q = Var<double>(random_tensor({1, 4, 4}, rng), true);
  Var<double> lambda(random_tensor({5}, rng, 0, 1), true);
  cfg.active = {false, false, false, false, true};
  const auto last = wd_bce(preds, g, lambda, cfg);
  CHECK(last.total.item() == doctest::Approx(lambda.data()(4) * branch_loss(preds[4].value(), g, cfg)));
  for (std::size_t i = 0; i < 5; ++i) CHECK(last.branch[i] == doctest::Approx(branch_loss(preds[i].value(), g, cfg)));

  backward(last.total);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(preds[i].grad().abs().maxCoeff() == 0.0);
    CHECK(lambda.grad()(static_cast<Index>(i)) == 0.0);
  }
  CHECK(preds[4].grad().abs().maxCoeff() > 0);
  CHECK(lambda.grad()(4) == doctest::Approx(last.branch[4]));

  cfg.active = {false, false, false, false, false};
  CHECK_THROWS_AS(wd_bce(preds, g, lambda, cfg), ConfigError);
  cfg.active = {true, true, true, true, true};
  cfg.alpha = -1;
  CHECK_THROWS_AS(wd_bce(preds, g, lambda, cfg), ConfigError);
}

TEST_CASE("single-precision gradients of the full loss match double-precision differences") {
  Rng rng(4);
  LossConfig cfg;
  double worst = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto g = random_mask({1, 8, 8}, rng, 0.1);
    std::array<Tensor<double>, 5> z;
    for (auto& t : z) t = random_tensor({1, 8, 8}, rng, -4, 4);
    const auto lam = random_tensor({5}, rng, 0, 1);

    std::array<Var<float>, 5> zf;
    for (std::size_t i = 0; i < 5; ++i) zf[i] = Var<float>(z[i].cast<float>(), true);
    Var<float> lf(lam.cast<float>(), true);
    backward(wd_bce(zf, g.cast<float>(), lf, cfg).total);

    const auto loss = [&](const std::array<Tensor<double>, 5>& zz, const Tensor<double>& ll) {
      std::array<Var<double>, 5> v;
      for (std::size_t i = 0; i < 5; ++i) v[i] = Var<double>(zz[i]);
      return wd_bce(v, g, Var<double>(ll), cfg).total.item();
    };
    const double h = 1e-4;
    for (std::size_t b = 0; b < 5; ++b) {
      ArrayX<double> fd(64);
      for (Index k = 0; k < 64; ++k) {
        auto up = z, down = z;
        up[b].data(k) += h;
        down[b].data(k) -= h;
        fd(k) = (loss(up, lam) - loss(down, lam)) / (2 * h);
      }
      worst = std::max(worst, relative_error(zf[b].grad().cast<double>(), fd));
    }
    ArrayX<double> fd(5);
    for (Index k = 0; k < 5; ++k) {
      auto up = lam, down = lam;
      up.data(k) += h;
      down.data(k) -= h;
      fd(k) = (loss(z, up) - loss(z, down)) / (2 * h);
    }
    worst = std::max(worst, relative_error(lf.grad().cast<double>(), fd));
  }
  CHECK(worst < 1e-3);
}
