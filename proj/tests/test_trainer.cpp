#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "idnanet/trainer.hpp"

using namespace idna;
namespace fs = std::filesystem;

namespace {

const char* kTiny =
    "model.embed_dim = 8\n"
    "model.heads = 1,1,2,2\n"
    "model.patch = 2\n"
    "model.cpb_hidden = 8\n"
    "model.acmix_heads = 2\n"
    "model.rcb_reduction = 2\n"
    "model.norm_groups = 4\n"
    "optim.batch = 2\n"
    "optim.epochs = 2\n"
    "optim.checkpoint_every = 0\n"
    "data.image_size = 32\n"
    "data.synth_count = 2\n";

RunConfig tiny(std::uint64_t seed = 0) {
  RunConfig cfg = RunConfig::parse(kTiny);
  cfg.optim.seed = seed;
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("idnanet_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

template <typename S>
bool same_forward(const IdnaNet<S>& a, const IdnaNet<S>& b, const Tensor<S>& image) {
  NoGradGuard guard;
  const auto pa = a.forward(Var<S>(image)), pb = b.forward(Var<S>(image));
  for (std::size_t i = 0; i < 5; ++i)
    if (!(pa[i].data() == pb[i].data()).all()) return false;
  return true;
}

class OraclePredictor final : public Predictor<float> {
 public:
  Plane<float> probability(const Sample<float>& s) const override { return to_plane(s.mask); }
};

}  // namespace

TEST_CASE("config parsing") {
  const RunConfig cfg = RunConfig::parse("# comment\nmodel.window = 4  # trailing\n\noptim.lr = 0.01\n");
  CHECK(cfg.model.backbone.window == 4);
  CHECK(cfg.optim.lr == 0.01);
  CHECK(cfg.optim.batch == 8);
  CHECK(RunConfig{}.optim.lr == 0.05);

  CHECK_THROWS_AS(RunConfig::parse("model.colour = 3\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("optim.lr = 0.1\noptim.lr = 0.2\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("optim.lr = fast\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("model.norm_groups = 3\n").validate(), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("loss.active_mask = false,false,false,false,false\n").validate(), ConfigError);
  CHECK_NOTHROW(RunConfig{}.validate());

  RunConfig custom = tiny(17);
  custom.loss.active = {false, true, false, true, true};
  custom.eval.miou_mode = MiouMode::per_image;
  custom.lambda_seed = 99;
  const RunConfig back = RunConfig::parse(custom.to_text());
  CHECK(back.to_text() == custom.to_text());
  CHECK(back.effective_lambda_seed() == 99);
  CHECK(back.model_seed() == derive_seed(17, 1));
  CHECK(derive_seed(17, 1) != derive_seed(17, 2));
  CHECK(derive_seed(17, 1) != derive_seed(18, 1));
}

TEST_CASE("adagrad update rule") {
  Var<double> p(Tensor<double>::filled({1}, 1.0), true);
  Adagrad<double> opt({p}, 0.1, 1e-10);
  p.accumulate(ArrayX<double>::Constant(1, 2.0));
  opt.step();
  const double first = 1.0 - 0.1 * 2.0 / (2.0 + 1e-10);
  CHECK(p.item() == doctest::Approx(first).epsilon(1e-14));
  opt.zero_grad();
  p.accumulate(ArrayX<double>::Constant(1, 2.0));
  opt.step();
  CHECK(p.item() == doctest::Approx(first - 0.2 / (std::sqrt(8.0) + 1e-10)).epsilon(1e-14));
  CHECK(opt.accumulators()[0](0) == 8.0);

  opt.lr_scale()[0] = 0.5;
  opt.zero_grad();
  p.accumulate(ArrayX<double>::Constant(1, 1.0));
  const double before = p.item();
  opt.step();
  CHECK(before - p.item() == doctest::Approx(0.05 / 3.0).epsilon(1e-9));
}

TEST_CASE("zero epochs checkpoint the initialization") {
  RunConfig cfg = tiny();
  cfg.optim.epochs = 0;
  Trainer<float> trainer(cfg);
  const auto data = load_run_data<float>(cfg);
  CHECK(trainer.train(data).empty());
  const auto ckpt = trainer.checkpoint();
  CHECK(ckpt.epoch == 0);
  IdnaNet<float> fresh(cfg.model, cfg.model_seed());
  const auto init = snapshot(fresh.parameters());
  REQUIRE(init.size() == ckpt.parameters.size());
  for (std::size_t i = 0; i < init.size(); ++i) {
    CHECK(init[i].name == ckpt.parameters[i].name);
    CHECK((init[i].value.data == ckpt.parameters[i].value.data).all());
  }
  CHECK((ckpt.lambda.data == initial_lambda<float>(cfg.effective_lambda_seed()).data).all());
  CHECK(ckpt.lambda.data.minCoeff() >= 0.0f);
  CHECK(ckpt.lambda.data.maxCoeff() < 1.0f);
}

TEST_CASE("checkpoint round trip is bitwise") {
  TempDir dir("ckpt");
  const RunConfig cfg = tiny();
  Trainer<float> trainer(cfg);
  const auto data = load_run_data<float>(cfg);
  trainer.train_epoch(data);
  save_checkpoint(dir.path / "a.idna", trainer.checkpoint());
  const auto loaded = load_checkpoint<float>(dir.path / "a.idna");
  CHECK(loaded.epoch == 1);
  CHECK(loaded.config_text == cfg.to_text());
  const auto model = load_model(loaded);
  CHECK(same_forward(trainer.model(), *model, data[0].image));

  // Resuming continues exactly where the uninterrupted run goes.
  Trainer<float> resumed(loaded);
  const auto next_a = trainer.train_epoch(data);
  const auto next_b = resumed.train_epoch(data);
  CHECK(next_a.l_all == next_b.l_all);
  CHECK(same_forward(trainer.model(), resumed.model(), data[1].image));

  save_checkpoint(dir.path / "b.idna", loaded);
  CHECK(slurp(dir.path / "a.idna") == slurp(dir.path / "b.idna"));

  std::string bytes = slurp(dir.path / "a.idna");
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::ofstream(dir.path / "magic.idna", std::ios::binary) << bad_magic;
  CHECK_THROWS_AS(load_checkpoint<float>(dir.path / "magic.idna"), FormatError);
  std::string bad_version = bytes;
  bad_version[5] = 7;
  std::ofstream(dir.path / "version.idna", std::ios::binary) << bad_version;
  CHECK_THROWS_AS(load_checkpoint<float>(dir.path / "version.idna"), VersionError);
  CHECK_THROWS_AS(load_checkpoint<double>(dir.path / "a.idna"), VersionError);
  std::ofstream(dir.path / "short.idna", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(load_checkpoint<float>(dir.path / "short.idna"), FormatError);
  CHECK_THROWS_AS(load_checkpoint<float>(dir.path / "missing.idna"), IoError);

  RunConfig other = cfg;
  other.model.backbone.embed_dim = 16;
  other.model.norm_groups = 0;
  CHECK_THROWS_AS(load_model(other, loaded), VersionError);
}

TEST_CASE("identical config and seed reproduce the run") {
  TempDir dir("determinism");
  const RunConfig cfg = tiny(3);
  const auto data = load_run_data<float>(cfg);
  Trainer<float> a(cfg), b(cfg);
  a.train(data, dir.path / "a");
  b.train(data, dir.path / "b");
  CHECK(slurp(dir.path / "a" / "log.csv") == slurp(dir.path / "b" / "log.csv"));
  CHECK(slurp(dir.path / "a" / "final.idna") == slurp(dir.path / "b" / "final.idna"));
  const ModelPredictor<float> pa(a.model()), pb(b.model());
  CHECK(evaluate(pa, data, cfg.eval).to_text() == evaluate(pb, data, cfg.eval).to_text());

  Trainer<float> c(tiny(4));
  c.train(data);
  CHECK_FALSE(same_forward(a.model(), c.model(), data[0].image));
}

TEST_CASE("non-finite loss aborts with the branch named") {
  const RunConfig cfg = tiny();
  Trainer<float> trainer(cfg);
  const auto data = load_run_data<float>(cfg);
  trainer.model().parameters().find("head.branch2.project.bias").mutable_value().data.setConstant(NAN);
  try {
    trainer.train_epoch(data);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("branch 2") != std::string::npos);
  }
  CHECK_THROWS_AS(trainer.train_epoch({}), UsageError);
}

TEST_CASE("evaluation") {
  const RunConfig cfg = tiny();
  const auto data = load_run_data<float>(cfg);
  const OraclePredictor oracle;
  const auto report = evaluate(oracle, data, cfg.eval);
  CHECK(*report.miou == 1.0);
  CHECK(*report.pd == 1.0);
  CHECK(*report.fa == 0.0);
  CHECK_THROWS_AS(evaluate(oracle, std::vector<Sample<float>>{}, cfg.eval), UsageError);

  const auto points = roc(oracle, data, cfg.eval, default_thresholds(11));
  CHECK(points.size() == 11);
  CHECK(points[5].pd == 1.0);
}

TEST_CASE("prediction files") {
  TempDir dir("predict");
  const RunConfig cfg = tiny();
  Trainer<float> trainer(cfg);
  Image8 input{40, 50, 1, std::vector<std::uint8_t>(2000)};
  for (std::size_t i = 0; i < input.pixels.size(); ++i) input.pixels[i] = static_cast<std::uint8_t>(i * 7);
  write_png(dir.path / "in.png", input);

  predict_file(trainer.model(), dir.path / "in.png", dir.path / "a.png", 32);
  predict_file(trainer.model(), dir.path / "in.png", dir.path / "b.png", 32);
  const Image8 a = read_png(dir.path / "a.png");
  CHECK(a.height == 40);
  CHECK(a.width == 50);
  CHECK(a.channels == 1);
  CHECK(slurp(dir.path / "a.png") == slurp(dir.path / "b.png"));

  auto& params = trainer.model().parameters();
  params.find("head.branch1.project.weight").mutable_value().data.setZero();
  params.find("head.branch1.project.bias").mutable_value().data.setZero();
  predict_file(trainer.model(), dir.path / "in.png", dir.path / "half.png", 32);
  const Image8 half = read_png(dir.path / "half.png");
  for (auto v : half.pixels) CHECK(v == 128);
  CHECK_THROWS_AS(predict_file(trainer.model(), dir.path / "none.png", dir.path / "c.png", 32), IoError);
}

TEST_CASE("one desk-scale step lowers the loss on a single sample") {
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RunConfig cfg = RunConfig::load(fs::path(IDNANET_SOURCE_DIR) / "configs" / "desk.cfg");
    cfg.optim.seed = seed;
    cfg.data.synth.count = 1;
    const auto data = load_run_data<float>(cfg);
    REQUIRE(data.size() == 1);
    Trainer<float> trainer(cfg);
    const float before = trainer.loss(data[0]).total.item();
    trainer.train_epoch(data);
    const float after = trainer.loss(data[0]).total.item();
    decreased += after < before;
  }
  CHECK(decreased >= 9);
}
