#include "idnanet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include "idnanet/ops.hpp"

namespace idna {

namespace fs = std::filesystem;

namespace {

std::vector<fs::path> png_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw LoadError("missing directory " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png") out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

template <typename S>
std::vector<Sample<S>> load_dataset(const fs::path& root) {
  const auto images = png_files(root / "images");
  const auto masks = png_files(root / "masks");
  std::map<std::string, fs::path> mask_by_name;
  for (const auto& m : masks) mask_by_name[m.filename().string()] = m;
  std::vector<Sample<S>> out;
  for (const auto& img_path : images) {
    const std::string name = img_path.filename().string();
    const auto it = mask_by_name.find(name);
    if (it == mask_by_name.end()) throw LoadError("no mask for image " + img_path.string());
    const Image8 img = read_png(img_path);
    const fs::path mask_path = it->second;
    mask_by_name.erase(it);
    const Image8 mask = read_png(mask_path);
    if (mask.channels != 1) throw FormatError(mask_path.string() + ": masks must be single-channel");
    if (mask.height != img.height || mask.width != img.width)
      throw FormatError("size mismatch between " + img_path.string() + " and its mask");
    Sample<S> s;
    s.id = img_path.stem().string();
    s.image = to_tensor<S>(img, 3);
    s.mask = Tensor<S>({1, mask.height, mask.width});
    for (std::size_t p = 0; p < mask.pixels.size(); ++p) s.mask.data(static_cast<Index>(p)) = mask.pixels[p] >= 128 ? S(1) : S(0);
    out.push_back(std::move(s));
  }
  if (!mask_by_name.empty()) throw LoadError("no image for mask " + mask_by_name.begin()->second.string());
  return out;
}

template <typename S>
Tensor<S> resize_nearest(const Tensor<S>& t, Index out_h, Index out_w) {
  if (t.rank() != 3) throw InputShapeError("resize_nearest: expected [C,H,W], got " + to_string(t.shape));
  const Index c = t.dim(0), h = t.dim(1), w = t.dim(2);
  const auto src = [](Index d, Index in, Index out) {
    return std::min(in - 1, static_cast<Index>(std::floor((static_cast<double>(d) + 0.5) * static_cast<double>(in) / static_cast<double>(out))));
  };
  Tensor<S> r({c, out_h, out_w});
  for (Index k = 0; k < c; ++k)
    for (Index y = 0; y < out_h; ++y)
      for (Index x = 0; x < out_w; ++x) r.data((k * out_h + y) * out_w + x) = t.data((k * h + src(y, h, out_h)) * w + src(x, w, out_w));
  return r;
}

template <typename S>
Tensor<S> resize_bilinear(const Tensor<S>& t, Index out_h, Index out_w) {
  if (t.rank() != 3) throw InputShapeError("resize_bilinear: expected [C,H,W], got " + to_string(t.shape));
  if (t.dim(1) == out_h && t.dim(2) == out_w) return t;
  NoGradGuard guard;
  return resize_bilinear(Var<S>(t), out_h, out_w).value();
}

template <typename S>
Sample<S> preprocess(const Sample<S>& s, Index size) {
  if (size <= 0 || size % 32 != 0) throw ConfigError("image size must be a positive multiple of 32, got " + std::to_string(size));
  Sample<S> out;
  out.id = s.id;
  out.image = resize_bilinear(s.image, size, size);
  out.image.data = out.image.data.max(S(0)).min(S(1));
  out.mask = resize_nearest(s.mask, size, size);
  return out;
}

std::string to_string(Background b) {
  switch (b) {
    case Background::gradient_sky: return "gradient-sky";
    case Background::filtered_noise: return "filtered-noise";
    case Background::mixed: return "mixed";
  }
  return "mixed";
}

Background parse_background(const std::string& s) {
  if (s == "gradient-sky") return Background::gradient_sky;
  if (s == "filtered-noise") return Background::filtered_noise;
  if (s == "mixed") return Background::mixed;
  throw ConfigError("unknown background '" + s + "' (gradient-sky, filtered-noise, mixed)");
}

void SynthConfig::validate() const {
  if (count < 1) throw ConfigError("synth count must be at least 1");
  if (image_size < 8) throw ConfigError("synth image size too small");
  if (targets_min < 0 || targets_max < targets_min) throw ConfigError("empty targets-per-image range");
  if (!(sigma_min > 0) || sigma_max < sigma_min) throw ConfigError("empty target sigma range");
  if (contrast_min < 0 || contrast_max < contrast_min) throw ConfigError("empty contrast range");
  if (4 * sigma_max >= static_cast<double>(image_size - 1)) throw ConfigError("target sigma too large for the image size");
}

bool in_half_peak(const SynthTarget& t, Index y, Index x) {
  const double dy = static_cast<double>(y) - t.cy, dx = static_cast<double>(x) - t.cx;
  return dy * dy + dx * dx < 2.0 * t.sigma * t.sigma * std::log(2.0);
}

namespace {

double uniform(Rng& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

// Unit-variance white noise blurred by two passes of a separable 5-tap box filter.
Eigen::ArrayXXd smooth_noise(Rng& rng, Index n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::ArrayXXd a(n, n);
  for (Index i = 0; i < a.size(); ++i) a(i) = normal(rng);
  const auto blur_rows = [n](const Eigen::ArrayXXd& in) -> Eigen::ArrayXXd {
    Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(n, n);
    for (Index y = 0; y < n; ++y)
      for (Index k = -2; k <= 2; ++k) out.row(y) += in.row(std::clamp<Index>(y + k, 0, n - 1));
    return out / 5.0;
  };
  for (int pass = 0; pass < 2; ++pass) a = blur_rows(blur_rows(a).transpose().eval()).transpose().eval();
  const double sd = std::sqrt((a - a.mean()).square().mean());
  return (a - a.mean()) / (sd > 0 ? sd : 1.0);
}

std::vector<Index> half_peak_pixels(const SynthTarget& t, Index n) {
  std::vector<Index> out;
  const Index r = static_cast<Index>(std::ceil(2.0 * t.sigma)) + 1;
  const Index y0 = static_cast<Index>(std::floor(t.cy)), x0 = static_cast<Index>(std::floor(t.cx));
  for (Index y = std::max<Index>(0, y0 - r); y <= std::min(n - 1, y0 + r + 1); ++y)
    for (Index x = std::max<Index>(0, x0 - r); x <= std::min(n - 1, x0 + r + 1); ++x)
      if (in_half_peak(t, y, x)) out.push_back(y * n + x);
  return out;
}

}  // namespace

template <typename S>
SynthSample<S> synth_sample(Rng& rng, const SynthConfig& cfg) {
  cfg.validate();
  const Index n = cfg.image_size;
  Background bg = cfg.background;
  if (bg == Background::mixed) bg = uniform(rng, 0.0, 1.0) < 0.5 ? Background::gradient_sky : Background::filtered_noise;

  Eigen::ArrayXXd image(n, n);
  if (bg == Background::gradient_sky) {
    const double top = uniform(rng, 0.05, 0.35), slope = uniform(rng, 0.05, 0.30);
    for (Index y = 0; y < n; ++y) image.row(y).setConstant(top + slope * static_cast<double>(y) / static_cast<double>(n - 1));
    image += 0.02 * smooth_noise(rng, n);
  } else {
    const double level = uniform(rng, 0.10, 0.40);
    const double tilt = uniform(rng, -0.10, 0.10);
    for (Index y = 0; y < n; ++y) image.row(y).setConstant(level + tilt * static_cast<double>(y) / static_cast<double>(n - 1));
    image += 0.06 * smooth_noise(rng, n);
  }

  SynthSample<S> out;
  std::vector<std::uint8_t> occupied(static_cast<std::size_t>(n * n), 0);  // mask pixels dilated by one
  Eigen::ArrayXXd mask = Eigen::ArrayXXd::Zero(n, n);
  const Index want = std::uniform_int_distribution<Index>(cfg.targets_min, cfg.targets_max)(rng);
  for (Index k = 0; k < want; ++k) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      SynthTarget t;
      t.sigma = uniform(rng, cfg.sigma_min, cfg.sigma_max);
      t.contrast = uniform(rng, cfg.contrast_min, cfg.contrast_max);
      const double lo = 2.0 * t.sigma, hi = static_cast<double>(n - 1) - 2.0 * t.sigma;
      t.cy = uniform(rng, lo, hi);
      t.cx = uniform(rng, lo, hi);
      const auto pix = half_peak_pixels(t, n);
      const bool clash = std::any_of(pix.begin(), pix.end(), [&](Index p) { return occupied[static_cast<std::size_t>(p)]; });
      if (clash) continue;
      for (Index p : pix) {
        mask(p / n, p % n) = 1.0;
        for (Index dy = -1; dy <= 1; ++dy)
          for (Index dx = -1; dx <= 1; ++dx) {
            const Index y = p / n + dy, x = p % n + dx;
            if (y >= 0 && x >= 0 && y < n && x < n) occupied[static_cast<std::size_t>(y * n + x)] = 1;
          }
      }
      for (Index y = 0; y < n; ++y)
        for (Index x = 0; x < n; ++x) {
          const double dy = static_cast<double>(y) - t.cy, dx = static_cast<double>(x) - t.cx;
          image(y, x) += t.contrast * std::exp(-(dy * dy + dx * dx) / (2.0 * t.sigma * t.sigma));
        }
      out.targets.push_back(t);
      break;
    }
  }
  image = (image.max(0.0).min(1.0) * 255.0).round() / 255.0;

  Sample<S>& s = out.sample;
  s.image = Tensor<S>({3, n, n});
  s.mask = Tensor<S>({1, n, n});
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) {
      for (Index c = 0; c < 3; ++c) s.image.data((c * n + y) * n + x) = static_cast<S>(image(y, x));
      s.mask.data(y * n + x) = static_cast<S>(mask(y, x));
    }
  return out;
}

template <typename S>
std::vector<SynthSample<S>> synth_samples(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<SynthSample<S>> out;
  for (Index i = 0; i < cfg.count; ++i) {
    out.push_back(synth_sample<S>(rng, cfg));
    std::ostringstream id;
    id << "sample_" << std::setw(4) << std::setfill('0') << i;
    out.back().sample.id = id.str();
  }
  return out;
}

std::string synth_manifest(const SynthConfig& cfg) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "seed=" << cfg.seed << "\ncount=" << cfg.count << "\nimage_size=" << cfg.image_size
     << "\ntargets_per_image=" << cfg.targets_min << ".." << cfg.targets_max << "\ntarget_sigma=" << cfg.sigma_min
     << ".." << cfg.sigma_max << "\ncontrast=" << cfg.contrast_min << ".." << cfg.contrast_max
     << "\nbackground=" << to_string(cfg.background) << '\n';
  return os.str();
}

std::string synth_dataset(const SynthConfig& cfg, const fs::path& out) {
  const auto samples = synth_samples<double>(cfg);
  std::error_code ec;
  fs::create_directories(out / "images", ec);
  if (!ec) fs::create_directories(out / "masks", ec);
  if (ec) throw IoError("cannot create dataset directories under " + out.string() + ": " + ec.message());
  for (const auto& s : samples) {
    const std::string file = s.sample.id + ".png";
    Tensor<double> gray({1, s.sample.height(), s.sample.width()});
    gray.data = s.sample.image.data.head(gray.size());
    write_png(out / "images" / file, to_image8(gray));
    write_png(out / "masks" / file, to_image8(s.sample.mask));
  }
  const std::string manifest = synth_manifest(cfg);
  std::ofstream f(out / "manifest");
  f << manifest;
  if (!f) throw IoError("cannot write " + (out / "manifest").string());
  return manifest;
}

#define IDNA_INSTANTIATE_DATA(S)                                                            \
  template std::vector<Sample<S>> load_dataset(const fs::path&);                           \
  template Sample<S> preprocess(const Sample<S>&, Index);                                  \
  template Tensor<S> resize_nearest(const Tensor<S>&, Index, Index);                       \
  template Tensor<S> resize_bilinear(const Tensor<S>&, Index, Index);                      \
  template SynthSample<S> synth_sample(Rng&, const SynthConfig&);                          \
  template std::vector<SynthSample<S>> synth_samples(const SynthConfig&);

IDNA_INSTANTIATE_DATA(float)
IDNA_INSTANTIATE_DATA(double)

}  // namespace idna
