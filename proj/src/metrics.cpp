#include "idnanet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace idna {

template <typename S>
Plane<S> to_plane(const Tensor<S>& t) {
  if (t.rank() == 3 && t.dim(0) == 1) return Eigen::Map<const Plane<S>>(t.data.data(), t.dim(1), t.dim(2));
  if (t.rank() == 2) return Eigen::Map<const Plane<S>>(t.data.data(), t.dim(0), t.dim(1));
  throw InputShapeError("expected a [1,H,W] or [H,W] map, got " + to_string(t.shape));
}

template <typename S>
Tensor<S> to_tensor(const Plane<S>& p) {
  Tensor<S> t({1, p.rows(), p.cols()});
  Eigen::Map<Plane<S>>(t.data.data(), p.rows(), p.cols()) = p;
  return t;
}

template <typename S>
Mask binarize(const Plane<S>& prob, double tau) {
  return (prob.template cast<double>() >= tau).template cast<std::uint8_t>();
}

std::vector<Component> connected_components(const Mask& mask) {
  const Index h = mask.rows(), w = mask.cols();
  std::vector<char> seen(static_cast<std::size_t>(h * w), 0);
  std::vector<Component> out;
  std::vector<Index> stack;
  for (Index start = 0; start < h * w; ++start) {
    if (!mask.data()[start] || seen[static_cast<std::size_t>(start)]) continue;
    Component c;
    seen[static_cast<std::size_t>(start)] = 1;
    stack.assign(1, start);
    while (!stack.empty()) {
      const Index p = stack.back();
      stack.pop_back();
      c.pixels.push_back(p);
      const Index y = p / w, x = p % w;
      for (Index dy = -1; dy <= 1; ++dy)
        for (Index dx = -1; dx <= 1; ++dx) {
          const Index ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
          const Index q = ny * w + nx;
          if (mask.data()[q] && !seen[static_cast<std::size_t>(q)]) {
            seen[static_cast<std::size_t>(q)] = 1;
            stack.push_back(q);
          }
        }
    }
    std::sort(c.pixels.begin(), c.pixels.end());
    for (Index p : c.pixels) {
      c.cy += static_cast<double>(p / w);
      c.cx += static_cast<double>(p % w);
    }
    c.cy /= static_cast<double>(c.area());
    c.cx /= static_cast<double>(c.area());
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

// Minimum-cost assignment of every row to a distinct column (rows ≤ cols).
// Returns the column of each row.
std::vector<Index> hungarian(const std::vector<std::vector<long long>>& cost, Index cols) {
  const Index n = static_cast<Index>(cost.size()), m = cols;
  const long long inf = std::numeric_limits<long long>::max() / 4;
  std::vector<long long> u(static_cast<std::size_t>(n + 1)), v(static_cast<std::size_t>(m + 1));
  std::vector<Index> p(static_cast<std::size_t>(m + 1), 0), way(static_cast<std::size_t>(m + 1), 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<long long> minv(static_cast<std::size_t>(m + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(m + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      long long delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= m; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj]) continue;
        const long long cur = cost[static_cast<std::size_t>(i0 - 1)][sj - 1] - u[static_cast<std::size_t>(i0)] - v[sj];
        if (cur < minv[sj]) {
          minv[sj] = cur;
          way[sj] = j0;
        }
        if (minv[sj] < delta) {
          delta = minv[sj];
          j1 = j;
        }
      }
      for (Index j = 0; j <= m; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj]) {
          u[static_cast<std::size_t>(p[sj])] += delta;
          v[sj] -= delta;
        } else {
          minv[sj] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<Index> row_to_col(static_cast<std::size_t>(n), -1);
  for (Index j = 1; j <= m; ++j)
    if (p[static_cast<std::size_t>(j)] > 0) row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return row_to_col;
}

void check_same_shape(const Mask& a, const Mask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw UsageError("mask shape mismatch: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace

MatchResult match_targets(const Mask& pred, const Mask& gt, double dist_max) {
  check_same_shape(pred, gt);
  const auto pc = connected_components(pred);
  const auto gc = connected_components(gt);
  MatchResult r;
  r.n_all = gc.size();
  long long pred_area = 0;
  for (const auto& c : pc) pred_area += c.area();
  std::vector<char> pred_matched(pc.size(), 0);
  if (!pc.empty() && !gc.empty()) {
    // Weight big + area: any extra match outweighs every possible area difference.
    const long long big = pred_area + 1;
    const bool gt_rows = gc.size() <= pc.size();
    const std::size_t rows = gt_rows ? gc.size() : pc.size(), cols = gt_rows ? pc.size() : gc.size();
    std::vector<std::vector<long long>> cost(rows, std::vector<long long>(cols, 0));
    for (std::size_t g = 0; g < gc.size(); ++g)
      for (std::size_t p = 0; p < pc.size(); ++p) {
        const double d = std::hypot(gc[g].cy - pc[p].cy, gc[g].cx - pc[p].cx);
        if (d > dist_max) continue;
        const long long weight = big + pc[p].area();
        (gt_rows ? cost[g][p] : cost[p][g]) = -weight;
      }
    const auto assign = hungarian(cost, static_cast<Index>(cols));
    for (std::size_t row = 0; row < rows; ++row) {
      const auto col = static_cast<std::size_t>(assign[row]);
      if (cost[row][col] == 0) continue;
      ++r.n_correct;
      pred_matched[gt_rows ? col : row] = 1;
    }
  }
  for (std::size_t p = 0; p < pc.size(); ++p)
    if (!pred_matched[p]) r.p_false += static_cast<std::uint64_t>(pc[p].area());
  return r;
}

void accumulate_iou(MetricAccumulator& acc, const Mask& pred, const Mask& gt) {
  check_same_shape(pred, gt);
  const auto p = pred != 0, g = gt != 0;
  const auto inter = static_cast<std::uint64_t>((p && g).count());
  const auto uni = static_cast<std::uint64_t>((p || g).count());
  acc.a_inter += inter;
  acc.a_union += uni;
  acc.iou_sum += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  ++acc.images;
}

void MetricAccumulator::add(const Mask& pred, const Mask& gt, double dist_max) {
  accumulate_iou(*this, pred, gt);
  const MatchResult m = match_targets(pred, gt, dist_max);
  n_correct += m.n_correct;
  n_all += m.n_all;
  p_false += m.p_false;
  p_all += static_cast<std::uint64_t>(pred.size());
}

void MetricAccumulator::merge(const MetricAccumulator& o) {
  a_inter += o.a_inter;
  a_union += o.a_union;
  n_correct += o.n_correct;
  n_all += o.n_all;
  p_false += o.p_false;
  p_all += o.p_all;
  iou_sum += o.iou_sum;
  images += o.images;
}

MetricReport MetricAccumulator::report() const {
  MetricReport r;
  r.counts = *this;
  if (a_union > 0)
    r.miou = static_cast<double>(a_inter) / static_cast<double>(a_union);
  else if (images > 0)
    r.miou = 1.0;
  if (images > 0) r.miou_per_image = iou_sum / static_cast<double>(images);
  if (n_all > 0) r.pd = static_cast<double>(n_correct) / static_cast<double>(n_all);
  if (p_all > 0) r.fa = static_cast<double>(p_false) / static_cast<double>(p_all);
  return r;
}

std::string MetricReport::to_text() const {
  std::ostringstream os;
  os << std::setprecision(10);
  if (miou) os << "miou=" << *miou << '\n';
  if (miou_per_image) os << "miou_per_image=" << *miou_per_image << '\n';
  if (pd) os << "pd=" << *pd << '\n';
  if (fa) os << "fa=" << *fa << '\n';
  os << "a_inter=" << counts.a_inter << "\na_union=" << counts.a_union << "\nn_correct=" << counts.n_correct
     << "\nn_all=" << counts.n_all << "\np_false=" << counts.p_false << "\np_all=" << counts.p_all
     << "\nimages=" << counts.images << '\n';
  return os.str();
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  const auto put = [&](const char* key, const std::optional<double>& v) { j[key] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr); };
  put("miou", miou);
  put("miou_per_image", miou_per_image);
  put("pd", pd);
  put("fa", fa);
  j["counts"] = {{"a_inter", counts.a_inter}, {"a_union", counts.a_union}, {"n_correct", counts.n_correct},
                 {"n_all", counts.n_all},     {"p_false", counts.p_false}, {"p_all", counts.p_all},
                 {"images", counts.images}};
  return j.dump(2) + "\n";
}

std::vector<double> default_thresholds(std::size_t n) {
  if (n < 2) throw UsageError("a threshold sweep needs at least 2 points");
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = 1.0 - static_cast<double>(i) / static_cast<double>(n - 1);
  t.back() = 0.0;
  return t;
}

void check_thresholds(const std::vector<double>& t) {
  if (t.empty()) throw UsageError("empty threshold list");
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(t[i] >= 0.0 && t[i] <= 1.0)) throw UsageError("threshold outside [0,1]");
    if (i > 0 && !(t[i] < t[i - 1])) throw UsageError("thresholds must be strictly descending");
  }
}

template <typename S>
std::vector<RocPoint> roc_sweep(const std::vector<Plane<S>>& probs, const std::vector<Mask>& gts,
                                const std::vector<double>& thresholds, double dist_max) {
  check_thresholds(thresholds);
  if (probs.size() != gts.size()) throw UsageError("roc_sweep: probability/mask count mismatch");
  std::vector<RocPoint> out;
  out.reserve(thresholds.size());
  for (double tau : thresholds) {
    MetricAccumulator acc;
    for (std::size_t i = 0; i < probs.size(); ++i) acc.add(binarize(probs[i], tau), gts[i], dist_max);
    const auto rep = acc.report();
    out.push_back({tau, rep.fa.value_or(0.0), rep.pd.value_or(0.0)});
  }
  return out;
}

void write_roc_csv(std::ostream& out, const std::vector<RocPoint>& points) {
  out << "threshold,fa,pd\n" << std::setprecision(10);
  for (const auto& p : points) out << p.threshold << ',' << p.fa << ',' << p.pd << '\n';
}

#define IDNA_INSTANTIATE_METRICS(S)                                                                        \
  template Plane<S> to_plane(const Tensor<S>&);                                                           \
  template Tensor<S> to_tensor(const Plane<S>&);                                                          \
  template Mask binarize(const Plane<S>&, double);                                                        \
  template std::vector<RocPoint> roc_sweep(const std::vector<Plane<S>>&, const std::vector<Mask>&,        \
                                           const std::vector<double>&, double);

IDNA_INSTANTIATE_METRICS(float)
IDNA_INSTANTIATE_METRICS(double)

}  // namespace idna
