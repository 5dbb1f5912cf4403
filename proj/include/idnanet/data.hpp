#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "idnanet/image_io.hpp"
#include "idnanet/layers.hpp"

namespace idna {

/// image:[3,H,W] in [0,1]; mask:[1,H,W] with values in {0,1}.
template <typename S>
struct Sample {
  Tensor<S> image;
  Tensor<S> mask;
  std::string id;

  Index height() const { return image.dim(1); }
  Index width() const { return image.dim(2); }
};

/// Pairs `images/<name>.png` with `masks/<name>.png`, sorted by name. Gray inputs are
/// replicated to 3 channels and masks binarized at 128. LoadError on a missing pair or
/// directory, FormatError on non-8-bit files or size-mismatched pairs.
template <typename S>
std::vector<Sample<S>> load_dataset(const std::filesystem::path& root);

/// Bilinear-resizes the image and nearest-resizes the mask to size×size. ConfigError
/// unless size is a positive multiple of 32.
template <typename S>
Sample<S> preprocess(const Sample<S>& sample, Index size);

/// Nearest-neighbour resize of a [C,H,W] tensor (source pixel floor((d+½)·in/out)).
template <typename S>
Tensor<S> resize_nearest(const Tensor<S>& t, Index out_h, Index out_w);

/// Bilinear resize of a [C,H,W] tensor with half-pixel centres.
template <typename S>
Tensor<S> resize_bilinear(const Tensor<S>& t, Index out_h, Index out_w);

enum class Background { gradient_sky, filtered_noise, mixed };

std::string to_string(Background b);
Background parse_background(const std::string& s);

struct SynthConfig {
  Index count = 8;
  std::uint64_t seed = 0;
  Index image_size = 64;
  Index targets_min = 1, targets_max = 3;
  double sigma_min = 0.7, sigma_max = 2.5;
  double contrast_min = 0.2, contrast_max = 0.8;
  Background background = Background::mixed;

  void validate() const;  ///< ConfigError on empty ranges or count < 1
};

struct SynthTarget {
  double cy = 0, cx = 0;  ///< centre in pixel-index coordinates
  double sigma = 0, contrast = 0;
};

template <typename S>
struct SynthSample {
  Sample<S> sample;
  std::vector<SynthTarget> targets;  ///< placed targets, one mask component each
};

/// Pixels where a target term alone exceeds half its peak: r² < 2σ²·ln 2.
bool in_half_peak(const SynthTarget& t, Index y, Index x);

/// One synthetic image drawn from `rng`. Image values are multiples of 1/255 so PNG
/// storage is exact.
template <typename S>
SynthSample<S> synth_sample(Rng& rng, const SynthConfig& cfg);

/// The first cfg.count samples of the stream seeded by cfg.seed.
template <typename S>
std::vector<SynthSample<S>> synth_samples(const SynthConfig& cfg);

/// `seed=<u64>` followed by one key=value line per field.
std::string synth_manifest(const SynthConfig& cfg);

/// Writes images/, masks/ and manifest under `out`; returns the manifest text.
std::string synth_dataset(const SynthConfig& cfg, const std::filesystem::path& out);

}  // namespace idna
