#include "doctest.h"
#include "idnanet/fusion_head.hpp"
#include "test_support.hpp"

using namespace idna;
using idna::test::random_tensor;

namespace {

FeatureGrid<double> terminal_grid(const std::array<Index, 4>& channels, Index size, Rng& rng, bool constant = false) {
  std::array<Index, 4> sizes{};
  for (std::size_t i = 0; i < 4; ++i) sizes[i] = size >> i;
  FeatureGrid<double> grid(channels, sizes, sizes);
  for (std::size_t i = 0; i < 4; ++i) {
    const Shape shape{channels[i], sizes[i], sizes[i]};
    Tensor<double> t = constant ? Tensor<double>(shape) : random_tensor(shape, rng);
    if (constant)
      for (Index c = 0; c < channels[i]; ++c) t.data.segment(c * sizes[i] * sizes[i], sizes[i] * sizes[i]).setConstant(0.1 * (c + 1));
    grid.set(terminal_nodes()[i], Var<double>(t));
  }
  return grid;
}

}  // namespace

TEST_CASE("head emits five full-resolution logit maps") {
  Rng rng(1);
  ParameterSet<double> params;
  const std::array<Index, 4> ch{4, 8, 16, 32};
  FusionHead<double> head(params, "head", ch, 4, rng);
  const auto preds = head.forward(terminal_grid(ch, 8, rng), 32, 32);
  for (const auto& p : preds.preds) CHECK(p.shape() == Shape{1, 32, 32});
  CHECK(&preds.inference() == &preds[0]);
}

TEST_CASE("fusion conv identities") {
  Rng rng(2);
  ParameterSet<double> params;
  FusionHead<double> head(params, "head", {4, 8, 16, 32}, 4, rng);
  std::array<Var<double>, 4> a, b, ab;
  for (std::size_t i = 0; i < 4; ++i) {
    a[i] = Var<double>(random_tensor({1, 5, 5}, rng));
    b[i] = Var<double>(random_tensor({1, 5, 5}, rng));
    ab[i] = a[i] + b[i];
  }
  // Default fusion averages the branches.
  const ArrayX<double> mean = (a[0].data() + a[1].data() + a[2].data() + a[3].data()) / 4.0;
  CHECK((head.fuse(a).data() - mean).abs().maxCoeff() < 1e-15);

  auto& w = head.fuse_conv.weight.mutable_value().data;
  w = random_tensor({4}, rng).data;
  head.fuse_conv.bias.mutable_value().data << 0.3;
  const ArrayX<double> lhs = head.fuse(ab).data();
  const ArrayX<double> rhs = head.fuse(a).data() + head.fuse(b).data() - 0.3;
  CHECK((lhs - rhs).abs().maxCoeff() < 1e-12);

  w << 0, 0, 1, 0;
  head.fuse_conv.bias.mutable_value().data << 0;
  CHECK((head.fuse(a).data() - a[2].data()).abs().maxCoeff() == 0.0);
}

TEST_CASE("projection") {
  Rng rng(3);
  ParameterSet<double> params;
  FusionHead<double> head(params, "head", {4, 8, 16, 32}, 4, rng);
  const Var<double> u(random_tensor({4, 6, 6}, rng));
  CHECK(head.project_convs[1].bias.item() == doctest::Approx(std::log(0.01 / 0.99)));

  head.project_convs[1].weight.mutable_value().data.setZero();
  head.project_convs[1].bias.mutable_value().data << -1.5;
  CHECK((head.project(u, 1).data() + 1.5).abs().maxCoeff() == 0.0);

  head.project_convs[1].weight.mutable_value().data << 0, 0, 0, 1;
  head.project_convs[1].bias.mutable_value().data << 0;
  CHECK((head.project(u, 1).data() - u.data().tail(36)).abs().maxCoeff() == 0.0);
}

TEST_CASE("constant terminals give constant logits") {
  Rng rng(4);
  ParameterSet<double> params;
  const std::array<Index, 4> ch{4, 8, 16, 32};
  FusionHead<double> head(params, "head", ch, 4, rng);
  const auto preds = head.forward(terminal_grid(ch, 8, rng, true), 16, 16);
  for (const auto& p : preds.preds) CHECK(p.data().maxCoeff() - p.data().minCoeff() < 1e-12);
}

TEST_CASE("missing terminal") {
  Rng rng(5);
  ParameterSet<double> params;
  const std::array<Index, 4> ch{4, 8, 16, 32};
  FusionHead<double> head(params, "head", ch, 4, rng);
  FeatureGrid<double> grid(ch, {8, 4, 2, 1}, {8, 4, 2, 1});
  grid.set({0, 5}, Var<double>(Tensor<double>({4, 8, 8})));
  CHECK_THROWS_AS(head.forward(grid, 32, 32), InvariantError);
}

TEST_CASE("full-scale unify shapes") {
  Rng rng(6);
  ParameterSet<float> params;
  const std::array<Index, 4> ch{96, 192, 384, 768};
  FusionHead<float> head(params, "head", ch, 96, rng);
  NoGradGuard guard;
  for (Index r = 0; r < 4; ++r) {
    const Index s = 64 >> r;
    const Var<float> t(Tensor<float>::filled({ch[static_cast<std::size_t>(r)], s, s}, 0.5f));
    const auto u = head.unify(t, r, 256, 256);
    CHECK(u.shape() == Shape{96, 256, 256});
    CHECK(head.project(u, r).shape() == Shape{1, 256, 256});
  }
}
