#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "idnanet/errors.hpp"
#include "idnanet/tensor.hpp"

namespace idna {

/// 8-bit image, interleaved H×W×channels.
struct Image8 {
  Index height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(Index y, Index x, Index c) const { return pixels[static_cast<std::size_t>((y * width + x) * channels + c)]; }
  bool operator==(const Image8&) const = default;
};

/// Reads an 8-bit PNG as gray (1 channel) or RGB (3 channels). Palettes are expanded and
/// alpha is dropped. IoError when unreadable, FormatError when not 8-bit.
Image8 read_png(const std::filesystem::path& path);

/// Writes a gray or RGB 8-bit PNG. IoError when the file cannot be created.
void write_png(const std::filesystem::path& path, const Image8& image);

/// [C,H,W] tensor in [0,1] (C ∈ {1,3}); gray images are replicated when `channels` = 3.
template <typename S>
Tensor<S> to_tensor(const Image8& image, Index channels);

/// [C,H,W] tensor in [0,1] → 8-bit image with round(255·v).
template <typename S>
Image8 to_image8(const Tensor<S>& t);

}  // namespace idna
