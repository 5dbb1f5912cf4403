#include <set>

#include "doctest.h"
#include "idnanet/dense_nest.hpp"
#include "test_support.hpp"

using namespace idna;
using idna::test::random_param;
using idna::test::random_tensor;

namespace {

constexpr std::array<bool, 4> kAllOn{true, true, true, true};

std::array<Var<double>, 4> column0(const GridConfig& cfg, Index size, Rng& rng, bool trainable = false) {
  std::array<Var<double>, 4> col;
  for (std::size_t i = 0; i < 4; ++i) {
    const Index s = size >> i;
    col[i] = trainable ? random_param({cfg.channels[i], s, s}, rng) : Var<double>(random_tensor({cfg.channels[i], s, s}, rng));
  }
  return col;
}

GridConfig small_grid() {
  GridConfig cfg;
  cfg.channels = {4, 8, 16, 32};
  cfg.acmix_heads = 2;
  cfg.rcb_reduction = 2;
  return cfg;
}

}  // namespace

TEST_CASE("grid topology") {
  Index count = 0;
  for (Index i = -1; i <= 4; ++i)
    for (Index j = -1; j <= 6; ++j) count += node_exists(i, j);
  CHECK(count == 18);
  CHECK(node_exists(0, 5));
  CHECK_FALSE(node_exists(1, 5));
  CHECK(node_exists(3, 2));
  CHECK_FALSE(node_exists(3, 3));

  const auto wiring = grid_wiring(kAllOn);
  CHECK(wiring.size() == 14);
  std::set<NodeId> done;
  for (Index i = 0; i < 4; ++i) done.insert({i, 0});
  for (const auto& w : wiring) {
    // Every operand is computed before the node that reads it.
    CHECK(done.count(w.same_row_prev));
    if (w.shallower) CHECK(done.count(*w.shallower));
    if (w.deeper) CHECK(done.count(*w.deeper));
    CHECK(w.same_row_prev == NodeId{w.node.row, w.node.col - 1});
    CHECK(w.shallower.has_value() == (w.node.row > 0));
    CHECK(w.deeper.has_value() == node_exists(w.node.row + 1, w.node.col - 1));
    CHECK(w.acmix == (w.node.col == 1));
    done.insert(w.node);
  }
  CHECK(done.size() == 18);
  for (const auto& t : terminal_nodes()) {
    CHECK(node_exists(t.row, t.col));
    CHECK_FALSE(node_exists(t.row, t.col + 1));
  }

  const auto partial = grid_wiring({true, false, true, false});
  Index acmix_nodes = 0;
  for (const auto& w : partial) acmix_nodes += w.acmix;
  CHECK(acmix_nodes == 2);
}

TEST_CASE("forward fills all 18 nodes with row shapes") {
  Rng rng(1);
  const GridConfig cfg = small_grid();
  ParameterSet<double> params;
  DenseNest<double> nest(params, "grid", cfg, rng);
  const auto grid = nest.forward_grid(column0(cfg, 8, rng));
  CHECK(grid.node_count() == 18);
  for (const auto& [id, map] : grid.nodes()) CHECK(map.shape() == grid.row_shape(id.row));
  const auto t = grid.terminals();
  CHECK(t[0].shape() == Shape{4, 8, 8});
  CHECK(t[1].shape() == Shape{8, 4, 4});
  CHECK(t[2].shape() == Shape{16, 2, 2});
  CHECK(t[3].shape() == Shape{32, 1, 1});
}

TEST_CASE("block mask controls ACmix parameters") {
  Rng rng(2);
  GridConfig cfg = small_grid();
  const auto count_acmix = [&](const GridConfig& c) {
    ParameterSet<double> params;
    DenseNest<double> nest(params, "grid", c, rng);
    Index n = 0;
    for (const auto& e : params.entries()) n += e.name.find(".acmix.") != std::string::npos;
    return std::pair{n, params.find("grid.node_0_1.rcb.conv.weight").defined()};
  };
  const auto [on, rcb_on] = count_acmix(cfg);
  CHECK(on > 0);
  CHECK_FALSE(rcb_on);
  cfg.ab_mask = {false, false, false, false};
  const auto [off, rcb_off] = count_acmix(cfg);
  CHECK(off == 0);
  CHECK(rcb_off);
}

TEST_CASE("up and keep") {
  Rng rng(3);
  ParameterSet<double> params;
  const Var<double> f(random_tensor({8, 2, 2}, rng));
  CHECK((keep(f).data() == f.data()).all());
  UpProjection<double> by4(params, "up4", 8, 4, 4, UpsampleMode::bilinear, rng);
  CHECK(up(f, 3, 1, by4).shape() == Shape{4, 8, 8});
  CHECK((up(f, 2, 2, by4).data() == f.data()).all());
  CHECK_THROWS_AS(up(f, 1, 3, by4), UsageError);
  CHECK_THROWS_AS(up(f, 2, 1, by4), UsageError);

  UpProjection<double> nearest(params, "upn", 8, 8, 2, UpsampleMode::nearest, rng);
  CHECK(nearest(f).shape() == Shape{8, 4, 4});
}

TEST_CASE("every encoder level reaches the terminals") {
  Rng rng(4);
  const GridConfig cfg = small_grid();
  ParameterSet<double> params;
  DenseNest<double> nest(params, "grid", cfg, rng);
  auto col = column0(cfg, 8, rng, true);
  const auto grid = nest.forward_grid(col);
  std::vector<Var<double>> terms;
  for (const auto& t : grid.terminals()) terms.push_back(sum(t));
  backward(sum(concat(terms)));
  for (const auto& c : col) CHECK(c.grad().abs().sum() > 0);
  for (const auto& w : nest.wiring()) {
    const std::string node = "grid.node_" + std::to_string(w.node.row) + "_" + std::to_string(w.node.col);
    CHECK(params.find(node + ".merge.fuse.weight").grad().abs().sum() > 0);
    const auto block = params.find(node + (w.acmix ? ".acmix.qkv.weight" : ".rcb.conv.weight"));
    REQUIRE(block.defined());
    CHECK(block.grad().abs().sum() > 0);
  }
}

TEST_CASE("feature grid invariants") {
  FeatureGrid<double> grid({4, 8, 16, 32}, {8, 4, 2, 1}, {8, 4, 2, 1});
  CHECK_THROWS_AS(grid.set({1, 5}, Var<double>(Tensor<double>({8, 4, 4}))), InvariantError);
  CHECK_THROWS_AS(grid.set({0, 1}, Var<double>(Tensor<double>({4, 4, 4}))), InvariantError);
  CHECK_THROWS_AS(grid.at({0, 0}), InvariantError);
  CHECK_THROWS_AS(grid.terminals(), InvariantError);
  grid.set({0, 0}, Var<double>(Tensor<double>({4, 8, 8})));
  CHECK(grid.has({0, 0}));

  Rng rng(5);
  const GridConfig cfg = small_grid();
  ParameterSet<double> params;
  DenseNest<double> nest(params, "grid", cfg, rng);
  auto col = column0(cfg, 8, rng);
  col[2] = Var<double>(random_tensor({16, 3, 3}, rng));
  CHECK_THROWS(nest.forward_grid(col));
}
