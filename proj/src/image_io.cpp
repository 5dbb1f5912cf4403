#include "idnanet/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

namespace idna {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_handler(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = msg;
  png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace

Image8 read_png(const std::filesystem::path& path) {
  File file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw FormatError(path.string() + " is not a PNG file");

  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }
  Image8 img;
  volatile bool bad_depth = false;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) {
    png_set_palette_to_rgb(png);
  } else if (depth != 8) {
    bad_depth = true;
  }
  if (!bad_depth) {
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    img.pixels.resize(static_cast<std::size_t>(img.width * img.height * img.channels));
    rows.resize(static_cast<std::size_t>(img.height));
    for (Index y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = img.pixels.data() + y * img.width * img.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (bad_depth) throw FormatError(path.string() + ": expected 8-bit samples, found " + std::to_string(depth) + "-bit");
  if (img.channels != 1 && img.channels != 3) throw FormatError(path.string() + ": unsupported channel layout");
  return img;
}

void write_png(const std::filesystem::path& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw UsageError("write_png: 1 or 3 channels required");
  if (static_cast<Index>(img.pixels.size()) != img.height * img.width * img.channels)
    throw InvariantError("write_png: pixel buffer does not match the image size");
  File file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot write " + path.string());
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path.string() + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(img.pixels.data() + y * img.width * img.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

template <typename S>
Tensor<S> to_tensor(const Image8& img, Index channels) {
  if (channels != img.channels && !(img.channels == 1 && channels == 3))
    throw FormatError("cannot map a " + std::to_string(img.channels) + "-channel image to " + std::to_string(channels) +
                      " channels");
  Tensor<S> t({channels, img.height, img.width});
  const Index plane = img.height * img.width;
  for (Index c = 0; c < channels; ++c)
    for (Index p = 0; p < plane; ++p)
      t.data(c * plane + p) = S(img.pixels[static_cast<std::size_t>(p * img.channels + (img.channels == 1 ? 0 : c))]) / S(255);
  return t;
}

template <typename S>
Image8 to_image8(const Tensor<S>& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) throw InputShapeError("to_image8: expected [1|3,H,W]");
  Image8 img{t.dim(1), t.dim(2), t.dim(0), {}};
  const Index plane = img.height * img.width;
  img.pixels.resize(static_cast<std::size_t>(plane * img.channels));
  for (Index c = 0; c < img.channels; ++c)
    for (Index p = 0; p < plane; ++p) {
      const double v = std::clamp(static_cast<double>(t.data(c * plane + p)), 0.0, 1.0);
      img.pixels[static_cast<std::size_t>(p * img.channels + c)] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
  return img;
}

template Tensor<float> to_tensor<float>(const Image8&, Index);
template Tensor<double> to_tensor<double>(const Image8&, Index);
template Image8 to_image8(const Tensor<float>&);
template Image8 to_image8(const Tensor<double>&);

}  // namespace idna
