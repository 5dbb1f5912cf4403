// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Artifacts (training logs, branch-weight trajectories) go to ./acceptance_out.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "idnanet/trainer.hpp"
#include "metric_oracle.hpp"

using namespace idna;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

const fs::path kOut = "acceptance_out";

RunConfig desk_config() { return RunConfig::load(fs::path(IDNANET_SOURCE_DIR) / "configs" / "desk.cfg"); }

void write_log(const fs::path& path, const std::vector<EpochLog>& logs) {
  std::ofstream f(path);
  f << log_header() << '\n';
  for (const auto& l : logs) f << log_row(l) << '\n';
}

// ---- 1 ------------------------------------------------------------------------

Outcome shape_audit() {
  const auto t0 = Clock::now();
  ModelConfig cfg;  // C0 = 16, depths 1,1,1,1
  IdnaNet<float> net(cfg, 0);
  const Var<float> image(Tensor<float>::filled({3, 64, 64}, 0.5f));
  NoGradGuard guard;
  const auto grid = net.features(image);
  bool ok = grid.node_count() == 18;
  for (Index i = 0; i < kGridRows; ++i)
    for (Index j = 0; node_exists(i, j); ++j) {
      const Index c = cfg.backbone.stage_channels(i), s = 64 / cfg.backbone.patch >> i;
      ok = ok && grid.has({i, j}) && grid.at({i, j}).shape() == Shape{c, s, s};
    }
  const auto preds = net.forward(image);
  for (const auto& p : preds.preds) ok = ok && p.shape() == Shape{1, 64, 64};
  const double t = seconds_since(t0);
  std::ostringstream d;
  d << grid.node_count() << " nodes, five 1x64x64 maps, " << std::fixed << std::setprecision(2) << t << " s";
  return {ok && t < 10.0, d.str()};
}

// ---- 2 ------------------------------------------------------------------------

Outcome gradient_check() {
  const auto t0 = Clock::now();
  test::Rng rng(2);
  std::uniform_real_distribution<double> logit(-4, 4), unit(0, 1);
  std::bernoulli_distribution on(0.15);
  LossConfig cfg;  // all five branches, α = μ = 1
  double worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<double> g({1, 8, 8}), lam({5});
    std::array<Tensor<double>, 5> z;
    for (Index i = 0; i < 64; ++i) g.data(i) = on(rng);
    for (auto& t : z) {
      t = Tensor<double>({1, 8, 8});
      for (Index i = 0; i < 64; ++i) t.data(i) = logit(rng);
    }
    for (Index i = 0; i < 5; ++i) lam.data(i) = unit(rng);

    std::array<Var<float>, 5> zf;
    for (std::size_t b = 0; b < 5; ++b) zf[b] = Var<float>(z[b].cast<float>(), true);
    Var<float> lf(lam.cast<float>(), true);
    backward(wd_bce(zf, g.cast<float>(), lf, cfg).total);

    const auto loss = [&](const std::array<Tensor<double>, 5>& zz, const Tensor<double>& ll) {
      std::array<Var<double>, 5> v;
      for (std::size_t b = 0; b < 5; ++b) v[b] = Var<double>(zz[b]);
      return wd_bce(v, g, Var<double>(ll), cfg).total.item();
    };
    const auto rel = [](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3}); };
    const double h = 1e-4;
    for (std::size_t b = 0; b < 5; ++b)
      for (Index k = 0; k < 64; ++k) {
        auto up = z, down = z;
        up[b].data(k) += h;
        down[b].data(k) -= h;
        worst = std::max(worst, rel(zf[b].grad()(k), (loss(up, lam) - loss(down, lam)) / (2 * h)));
      }
    for (Index k = 0; k < 5; ++k) {
      auto up = lam, down = lam;
      up.data(k) += h;
      down.data(k) -= h;
      worst = std::max(worst, rel(lf.grad()(k), (loss(z, up) - loss(z, down)) / (2 * h)));
    }
  }
  const double t = seconds_since(t0);
  std::ostringstream d;
  d << "worst relative error " << std::scientific << std::setprecision(2) << worst << " over 10 draws, " << std::fixed
    << t << " s";
  return {worst < 1e-3 && t < 30.0, d.str()};
}

// ---- 3 ------------------------------------------------------------------------

Outcome loss_oracles() {
  Tensor<double> zero({1, 2, 2}), g({1, 2, 2}), one_px({1, 1, 1}), one_gt = Tensor<double>::filled({1, 1, 1}, 1.0);
  g.data(0) = 1;
  one_px.data(0) = std::log(0.25 / 0.75);
  const double dice = dice_loss(zero, g), bce0 = bce_loss(zero, g), bce1 = bce_loss(one_px, one_gt);
  const bool ok = std::abs(dice - 0.5) < 1e-6 && std::abs(bce0 - 0.693147) < 1e-6 && std::abs(bce1 - 1.386294) < 1e-6;
  std::ostringstream d;
  d << std::setprecision(9) << "dice " << dice << ", bce " << bce0 << ", bce " << bce1;
  return {ok, d.str()};
}

// ---- 4 ------------------------------------------------------------------------

Outcome metric_oracle() {
  test::Rng rng(4);
  int agree = 0;
  MetricAccumulator acc;
  std::uint64_t inter = 0, uni = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Mask gt = test::random_blobs(rng), pred = test::random_blobs(rng);
    agree += match_targets(pred, gt, 3.0) == test::exhaustive_match(pred, gt, 3.0);
    accumulate_iou(acc, pred, gt);
    for (Index y = 0; y < 16; ++y)
      for (Index x = 0; x < 16; ++x) {
        inter += pred(y, x) && gt(y, x);
        uni += pred(y, x) || gt(y, x);
      }
  }
  const bool counts = acc.a_inter == inter && acc.a_union == uni;
  std::ostringstream d;
  d << agree << "/200 assignments agree, pixel counts " << (counts ? "exact" : "differ");
  return {agree == 200 && counts, d.str()};
}

// ---- 5 ------------------------------------------------------------------------

Outcome roc_contract() {
  SynthConfig cfg;
  cfg.count = 16;
  cfg.seed = 5;
  std::vector<Plane<double>> probs;
  std::vector<Mask> gts;
  double max_prob = 0;
  for (const auto& s : synth_samples<double>(cfg)) {
    Tensor<double> intensity({1, s.sample.height(), s.sample.width()});
    intensity.data = 0.95 * s.sample.image.data.head(intensity.size());
    probs.push_back(to_plane(intensity));
    gts.push_back((to_plane(s.sample.mask) > 0.5).cast<std::uint8_t>());
    max_prob = std::max(max_prob, intensity.data.maxCoeff());
  }
  const auto thresholds = default_thresholds(101);
  bool nested = true;
  for (std::size_t k = 0; k + 1 < thresholds.size(); ++k)
    for (const auto& p : probs) {
      const Mask hi = binarize(p, thresholds[k]), lo = binarize(p, thresholds[k + 1]);
      nested = nested && (hi <= lo).all();
    }
  const auto points = roc_sweep(probs, gts, thresholds);
  const RocPoint first = points.front(), last = points.back();
  const bool above = thresholds.front() > max_prob && first.pd == 0.0 && first.fa == 0.0;
  bool fa_max = last.threshold == 0.0;
  for (const auto& p : points) fa_max = fa_max && last.fa >= p.fa;
  std::ostringstream d;
  d << "nesting " << (nested ? "holds" : "violated") << " over 100 pairs; tau " << first.threshold << " (max p "
    << std::setprecision(3) << max_prob << "): Pd " << first.pd << " Fa " << first.fa << "; tau 0: Fa " << last.fa
    << (fa_max ? " (maximal)" : " (not maximal)");
  return {nested && above && fa_max, d.str()};
}

// ---- 6 ------------------------------------------------------------------------

struct GateRun {
  std::vector<EpochLog> logs;
  MetricReport report;
  bool gate = false;
  double seconds = 0;
};

// Trains until the training-set gate (mIoU ≥ 0.70, Pd = 1 at eval.tau) holds at a
// 10-epoch checkpoint, or the configured epoch budget runs out.
GateRun overfit(const RunConfig& cfg, const std::string& tag) {
  const auto t0 = Clock::now();
  const auto data = load_run_data<float>(cfg);
  Trainer<float> trainer(cfg);
  GateRun run;
  while (trainer.epoch() < cfg.optim.epochs) {
    run.logs.push_back(trainer.train_epoch(data));
    if (trainer.epoch() % 10 != 0 && trainer.epoch() != cfg.optim.epochs) continue;
    run.report = evaluate(ModelPredictor<float>(trainer.model()), data, cfg.eval);
    std::cout << "  [" << tag << "] epoch " << trainer.epoch() << ": L_all " << run.logs.back().l_all << ", mIoU "
              << run.report.miou.value_or(0) << ", Pd " << run.report.pd.value_or(0) << std::endl;
    run.gate = run.report.miou.value_or(0) >= 0.70 && run.report.pd.value_or(0) == 1.0;
    if (run.gate) break;
  }
  run.seconds = seconds_since(t0);
  write_log(kOut / ("overfit_" + tag + ".csv"), run.logs);
  return run;
}

Outcome overfit_gate() {
  RunConfig on = desk_config();
  const GateRun a = overfit(on, "ab_on");
  RunConfig off = on;
  off.model.ab_mask = {false, false, false, false};
  const GateRun b = overfit(off, "ab_off");

  const double final_on = a.logs.back().l_all;
  const bool ok = a.gate && a.seconds <= 15 * 60 && std::isfinite(final_on) && !b.logs.empty();
  std::ostringstream d;
  d << std::setprecision(4) << "ab on: " << a.logs.size() << " epochs, mIoU " << a.report.miou.value_or(0) << ", Pd "
    << a.report.pd.value_or(0) << ", final L_all " << final_on << ", " << std::fixed << std::setprecision(0)
    << a.seconds << " s; ab off: " << b.logs.size() << " epochs, mIoU " << std::setprecision(4)
    << b.report.miou.value_or(0) << ", Pd " << b.report.pd.value_or(0) << ", final L_all " << b.logs.back().l_all;
  return {ok, d.str()};
}

// ---- 7 ------------------------------------------------------------------------

Outcome loss_subsets() {
  std::ostringstream d;
  bool ok = true;
  for (const auto& [tag, mask] : {std::pair<std::string, std::array<bool, 5>>{"TTTTT", {true, true, true, true, true}},
                                  {"FFFFT", {false, false, false, false, true}}}) {
    RunConfig cfg = desk_config();
    cfg.loss.active = mask;
    cfg.optim.epochs = 60;
    const auto data = load_run_data<float>(cfg);
    Trainer<float> trainer(cfg);
    const auto logs = trainer.train(data);
    write_log(kOut / ("lambda_" + tag + ".csv"), logs);
    bool finite = true;
    for (const auto& l : logs) finite = finite && std::isfinite(l.l_all);
    const bool lower = logs.back().l_all < logs.front().l_all;
    ok = ok && finite && lower;
    d << tag << ": L_all " << std::setprecision(4) << logs.front().l_all << " -> " << logs.back().l_all << ", lambda5 "
      << logs.front().lambda[4] << " -> " << logs.back().lambda[4] << ", unweighted L5 " << logs.front().branch[4]
      << " -> " << logs.back().branch[4] << "; ";
  }
  d << "trajectories in " << kOut.string();
  return {ok, d.str()};
}

// ---- 8 ------------------------------------------------------------------------

Outcome cosine_invariance() {
  test::Rng rng(8);
  std::uniform_real_distribution<float> u(-1, 1);
  std::uniform_real_distribution<float> amp(0.01f, 100.0f), log_scale(0.0f, std::log(100.0f));
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 2 + trial % 15, heads = 1 + trial % 4, d = 4 + trial % 5;
    AttentionOptions<float> opt;
    opt.heads = heads;
    opt.cosine = true;
    Tensor<float> ls({heads}), q({n, heads * d}), k({n, heads * d});
    for (Index i = 0; i < heads; ++i) ls.data(i) = log_scale(rng);
    for (Index i = 0; i < q.size(); ++i) q.data(i) = u(rng);
    for (Index i = 0; i < k.size(); ++i) k.data(i) = u(rng);
    opt.logit_scale = Var<float>(ls);
    const float a = amp(rng), b = amp(rng);
    const auto w = attention_weights(Var<float>(q), Var<float>(k), opt);
    const auto ws = attention_weights(idna::scale(Var<float>(q), a), idna::scale(Var<float>(k), b), opt);
    worst = std::max(worst, static_cast<double>((w.data - ws.data).abs().maxCoeff()));
  }
  std::ostringstream d;
  d << "max weight change " << std::scientific << std::setprecision(2) << worst << " over 100 inputs";
  return {worst < 1e-5, d.str()};
}

// ---- 9 ------------------------------------------------------------------------

Outcome determinism() {
  RunConfig cfg = desk_config();
  cfg.optim.epochs = 3;
  const auto data = load_run_data<float>(cfg);
  Trainer<float> a(cfg), b(cfg);
  a.train(data);
  b.train(data);
  const auto ra = evaluate(ModelPredictor<float>(a.model()), data, cfg.eval);
  const auto rb = evaluate(ModelPredictor<float>(b.model()), data, cfg.eval);
  const bool reports = ra.to_text() == rb.to_text() && ra.to_json() == rb.to_json();

  const fs::path path = kOut / "roundtrip.idna";
  save_checkpoint(path, a.checkpoint());
  const auto restored = load_model(load_checkpoint<float>(path));
  bool bitwise = true;
  NoGradGuard guard;
  for (const auto& s : data) {
    const auto pa = a.model().forward(Var<float>(s.image)), pr = restored->forward(Var<float>(s.image));
    for (std::size_t i = 0; i < 5; ++i) bitwise = bitwise && (pa[i].data() == pr[i].data()).all();
  }
  std::ostringstream d;
  d << "metric reports " << (reports ? "identical" : "differ") << ", reloaded forward "
    << (bitwise ? "bitwise equal" : "differs") << " on " << data.size() << " images";
  return {reports && bitwise, d.str()};
}

}  // namespace

int main() {
  fs::create_directories(kOut);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"shape audit", shape_audit},
      {"gradient check", gradient_check},
      {"loss oracles", loss_oracles},
      {"metric oracle equivalence", metric_oracle},
      {"ROC contract", roc_contract},
      {"overfit gate", overfit_gate},
      {"loss-subset harness", loss_subsets},
      {"scaled-cosine invariance", cosine_invariance},
      {"determinism and checkpoint round trip", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << i + 1 << " (" << criteria[i].first << "): " << (o.pass ? "PASS" : "FAIL") << ": "
              << o.detail << std::endl;
  }
  return failures ? 1 : 0;
}
