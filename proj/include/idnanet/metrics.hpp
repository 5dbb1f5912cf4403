#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "idnanet/errors.hpp"
#include "idnanet/tensor.hpp"

namespace idna {

/// H×W image planes, row-major so that linear indices match Tensor storage.
template <typename S>
using Plane = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = Plane<std::uint8_t>;  ///< values in {0,1}

template <typename S>
Plane<S> to_plane(const Tensor<S>& t);  ///< [1,H,W] or [H,W] → plane
template <typename S>
Tensor<S> to_tensor(const Plane<S>& p);  ///< plane → [1,H,W]

/// pixel = 1 iff prob ≥ tau.
template <typename S>
Mask binarize(const Plane<S>& prob, double tau = 0.5);

struct Component {
  std::vector<Index> pixels;  ///< linear indices, raster order
  double cy = 0, cx = 0;      ///< centroid (row, col)
  Index area() const { return static_cast<Index>(pixels.size()); }
};

/// 8-connected components, ordered by their first pixel in raster order.
std::vector<Component> connected_components(const Mask& mask);

struct MatchResult {
  std::uint64_t n_correct = 0;
  std::uint64_t p_false = 0;
  std::uint64_t n_all = 0;
  bool operator==(const MatchResult&) const = default;
};

/// One-to-one assignment of pred to gt components whose centroids lie within dist_max.
/// The assignment maximizes the number of matched targets; among maximum assignments it
/// maximizes the matched pred area, so p_false is minimal.
MatchResult match_targets(const Mask& pred, const Mask& gt, double dist_max = 3.0);

struct MetricReport;

struct MetricAccumulator {
  std::uint64_t a_inter = 0, a_union = 0;
  std::uint64_t n_correct = 0, n_all = 0;
  std::uint64_t p_false = 0, p_all = 0;
  double iou_sum = 0;  ///< per-image IoU sum, for the per-image mean mode
  std::uint64_t images = 0;

  /// Full accumulation of one (pred, gt) pair: IoU counts, target matching, pixel totals.
  void add(const Mask& pred, const Mask& gt, double dist_max = 3.0);
  void merge(const MetricAccumulator& other);
  MetricReport report() const;
  bool operator==(const MetricAccumulator&) const = default;
};

/// IoU counts only. Throws UsageError on shape mismatch.
void accumulate_iou(MetricAccumulator& acc, const Mask& pred, const Mask& gt);

struct MetricReport {
  std::optional<double> miou;  ///< a_inter/a_union (1 when a_union = 0 and images were seen)
  std::optional<double> miou_per_image;
  std::optional<double> pd;
  std::optional<double> fa;
  MetricAccumulator counts;

  std::string to_text() const;  ///< flat key=value lines; undefined rates are omitted
  std::string to_json() const;
  bool operator==(const MetricReport&) const = default;
};

struct RocPoint {
  double threshold = 0, fa = 0, pd = 0;
};

/// n evenly spaced values 1.00 → 0.00.
std::vector<double> default_thresholds(std::size_t n = 101);

/// Throws UsageError unless strictly descending within [0,1] and non-empty.
void check_thresholds(const std::vector<double>& thresholds);

template <typename S>
std::vector<RocPoint> roc_sweep(const std::vector<Plane<S>>& probs, const std::vector<Mask>& gts,
                                const std::vector<double>& thresholds, double dist_max = 3.0);

void write_roc_csv(std::ostream& out, const std::vector<RocPoint>& points);

}  // namespace idna
