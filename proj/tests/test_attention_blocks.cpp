#include "doctest.h"
#include "idnanet/attention_blocks.hpp"
#include "test_support.hpp"

using namespace idna;
using idna::test::gradient_check;
using idna::test::random_param;
using idna::test::random_tensor;

namespace {

template <typename S>
void set_identity_1x1(Conv2d<S>& conv, Index offset = 0) {
  auto& w = conv.weight.mutable_value();
  w.data.setZero();
  const Index out = w.dim(0), in = w.dim(1);
  for (Index c = 0; c < std::min(out, in - offset); ++c) w.data((c * in + c + offset) * w.dim(2) * w.dim(3)) = 1;
  if (conv.bias.defined()) conv.bias.mutable_value().data.setZero();
}

void zero(Var<double> v) { v.mutable_value().data.setZero(); }

}  // namespace

TEST_CASE("residual CBAM") {
  ParameterSet<double> params;
  Rng rng(1);
  ResidualCbam<double> block(params, "rcb", 4, rng);
  const Var<double> x(random_tensor({4, 5, 6}, rng));

  SUBCASE("zero body is the identity") {
    zero(block.body.weight);
    zero(block.body.bias);
    const auto y = block(x);
    CHECK((y.data() - x.data()).abs().maxCoeff() == 0.0);
  }
  SUBCASE("identity conv with neutral gates adds a quarter of relu(x)") {
    auto& w = block.body.weight.mutable_value();
    w.data.setZero();
    for (Index c = 0; c < 4; ++c) w.data(((c * 4 + c) * 3 + 1) * 3 + 1) = 1;
    zero(block.body.bias);
    zero(block.mlp_hidden.weight);
    zero(block.mlp_out.weight);
    zero(block.spatial.weight);
    const auto y = block(x);
    const ArrayX<double> expected = x.data() + 0.25 * x.data().max(0.0);
    CHECK((y.data() - expected).abs().maxCoeff() < 1e-15);
  }
  SUBCASE("shape and gradients") {
    ResidualCbam<double> normed(params, "rcb_gn", 4, rng, 4, 2);
    REQUIRE(normed.body_norm.defined());
    Var<double> in = random_param({4, 4, 4}, rng);
    CHECK(normed(in).shape() == in.shape());
    CHECK(gradient_check([&] { return normed(in); }, {in, normed.body.weight, normed.spatial.weight}) < 1e-5);
  }
}

TEST_CASE("node merge aligns every operand to the node's row") {
  ParameterSet<double> params;
  Rng rng(2);
  NodeMerge<double> merge(params, "merge", 8, 4, 16, AlignmentConfig{}, rng);
  CHECK(merge.operand_count() == 3);
  NodeInputs<double> in;
  in.same_row_prev = Var<double>(random_tensor({8, 4, 4}, rng));
  in.shallower = Var<double>(random_tensor({4, 8, 8}, rng));
  in.deeper = Var<double>(random_tensor({16, 2, 2}, rng));
  CHECK(merge(in).shape() == Shape{8, 4, 4});

  NodeInputs<double> missing = in;
  missing.deeper = Var<double>();
  CHECK_THROWS_AS(merge(missing), UsageError);
  NodeInputs<double> wrong = in;
  wrong.deeper = Var<double>(random_tensor({16, 3, 3}, rng));
  CHECK_THROWS_AS(merge(wrong), InvariantError);

  SUBCASE("single operand through an identity fuse") {
    NodeMerge<double> single(params, "single", 8, 0, 0, AlignmentConfig{}, rng);
    CHECK(single.operand_count() == 1);
    set_identity_1x1(const_cast<Conv2d<double>&>(single.fuse()));
    NodeInputs<double> only;
    only.same_row_prev = in.same_row_prev;
    CHECK((single(only).data() - only.same_row_prev.data()).abs().maxCoeff() == 0.0);
  }
}

TEST_CASE("ACmix convolution path") {
  ParameterSet<double> params;
  Rng rng(3);
  Acmix<double> block(params, "acmix", 4, 2, FuseMode::concat, false, rng);
  const Var<double> f(random_tensor({4, 5, 5}, rng));

  SUBCASE("zero projections give zero output") {
    zero(block.qkv.weight);
    zero(block.qkv.bias);
    CHECK(block.a_c(f).data().abs().maxCoeff() == 0.0);
  }
  SUBCASE("centre shift alone reproduces q") {
    set_identity_1x1(block.qkv);
    zero(block.shift_mix);
    zero(block.shift_kernel);
    block.shift_mix.mutable_value().data(4 * 3 + 0) = 1;
    for (Index c = 0; c < 4; ++c) block.shift_kernel.mutable_value().data(c * 9 + 4) = 1;
    const auto p = block.project(f);
    CHECK((p.q.data() - f.data()).abs().maxCoeff() == 0.0);
    CHECK((block.a_c(f).data() - f.data()).abs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("ACmix attention path") {
  ParameterSet<double> params;
  Rng rng(4);
  Acmix<double> block(params, "acmix", 4, 2, FuseMode::concat, false, rng);

  SUBCASE("a single pixel attends to itself") {
    const Var<double> f(random_tensor({4, 1, 1}, rng));
    CHECK((block.a_t(f).data() - block.project(f).v.data()).abs().maxCoeff() < 1e-15);
  }
  SUBCASE("a constant map gets uniform weights") {
    const Var<double> f(Tensor<double>::filled({4, 3, 3}, 0.7));
    const auto p = block.project(f);
    AttentionOptions<double> opt;
    opt.heads = 2;
    const auto w = attention_weights(transpose(p.q, 4), transpose(p.k, 4), opt);
    CHECK((w.data - 1.0 / 9.0).abs().maxCoeff() < 1e-12);
    CHECK((block.a_t(f).data() - p.v.data()).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("ACmix fusion") {
  ParameterSet<double> params;
  Rng rng(5);
  const Var<double> f(random_tensor({4, 4, 4}, rng));

  SUBCASE("zero paths with zero fusion bias") {
    Acmix<double> block(params, "a", 4, 1, FuseMode::concat, false, rng);
    zero(block.qkv.weight);
    zero(block.qkv.bias);
    zero(block.fusion.bias);
    CHECK(block(f).data().abs().maxCoeff() == 0.0);
  }
  SUBCASE("additive fusion with a silent attention path") {
    Acmix<double> block(params, "b", 4, 1, FuseMode::add, false, rng);
    const auto p = block.project(f);
    const auto ac = block.conv_path(p);
    const Var<double> none(Tensor<double>(ac.shape()));
    CHECK((block.fuse(ac, none).data() - ac.data()).abs().maxCoeff() == 0.0);
    CHECK((block(f).data() - (ac.data() + block.attention_path(p).data())).abs().maxCoeff() < 1e-15);
  }
  SUBCASE("output relu") {
    Acmix<double> block(params, "c", 4, 1, FuseMode::concat, true, rng);
    CHECK(block(f).data().minCoeff() >= 0.0);
  }
  CHECK_THROWS_AS(Acmix<double>(params, "bad", 4, 3, FuseMode::concat, false, rng), ConfigError);
}

TEST_CASE("ACmix gradients flow through the shared projection") {
  ParameterSet<double> params;
  Rng rng(6);
  Acmix<double> block(params, "acmix", 4, 2, FuseMode::concat, false, rng);
  Var<double> f = random_param({4, 3, 3}, rng);
  const double err = gradient_check([&] { return block(f); },
                                    {f, block.qkv.weight, block.qkv.bias, block.shift_mix, block.shift_kernel,
                                     block.fusion.weight});
  CHECK(err < 1e-5);

  // The attention path is global, so one output pixel sees every input pixel.
  f.zero_grad();
  const auto out = block(f);
  ArrayX<double> seed = ArrayX<double>::Zero(out.size());
  seed(4) = 1;  // channel 0, centre pixel
  backward(out, seed);
  const auto g = f.grad();
  for (Index p = 0; p < 9; ++p) {
    double mag = 0;
    for (Index c = 0; c < 4; ++c) mag += std::abs(g(c * 9 + p));
    CHECK(mag > 0);
  }
}
