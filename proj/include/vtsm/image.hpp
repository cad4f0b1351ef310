#pragma once

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace vtsm {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major raster.
template <typename T>
struct Image {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Image() = default;
  Image(int r, int c, T fill = T{}) : rows(r), cols(c), data(size_t(r) * size_t(c), fill) {}

  T& operator()(int r, int c) { return data[size_t(r) * size_t(cols) + size_t(c)]; }
  const T& operator()(int r, int c) const { return data[size_t(r) * size_t(cols) + size_t(c)]; }
  T* row(int r) { return data.data() + size_t(r) * size_t(cols); }
  const T* row(int r) const { return data.data() + size_t(r) * size_t(cols); }
  bool empty() const { return data.empty(); }

  /// Copy of the rectangle [r0, r0+h) x [c0, c0+w); must lie inside.
  Image crop(int r0, int c0, int h, int w) const {
    if (r0 < 0 || c0 < 0 || r0 + h > rows || c0 + w > cols) {
      throw std::out_of_range("Image::crop outside bounds");
    }
    Image out(h, w);
    for (int r = 0; r < h; ++r) std::copy_n(row(r0 + r) + c0, w, out.row(r));
    return out;
  }

  bool operator==(const Image&) const = default;
};

using GrayImage = Image<double>;

/// Axis-aligned pixel rectangle: rows [row0, row0 + rows), cols [col0, col0 + cols).
struct PixelRect {
  int row0 = 0;
  int col0 = 0;
  int rows = 0;
  int cols = 0;

  bool contains(int r, int c) const {
    return r >= row0 && c >= col0 && r < row0 + rows && c < col0 + cols;
  }
  bool inside(int image_rows, int image_cols) const {
    return row0 >= 0 && col0 >= 0 && row0 + rows <= image_rows && col0 + cols <= image_cols;
  }
  bool operator==(const PixelRect&) const = default;
};
using DepthImage = Image<double>;

inline constexpr double kNoDepth = std::numeric_limits<double>::infinity();

/// Snap intensities onto the 8-bit grid so in-memory images equal their PNG
/// round trip.
inline double quantize8(double x) {
  const double c = std::clamp(x, 0.0, 1.0);
  return std::nearbyint(c * 255.0) / 255.0;
}

inline GrayImage quantized(GrayImage img) {
  for (auto& x : img.data) x = quantize8(x);
  return img;
}

/// Bilinear sample with clamp-to-edge; (x, y) in pixel-center coordinates.
inline double sample_bilinear(const GrayImage& img, double x, double y) {
  x = std::clamp(x, 0.0, double(img.cols - 1));
  y = std::clamp(y, 0.0, double(img.rows - 1));
  const int x0 = std::min(int(x), img.cols - 1);
  const int y0 = std::min(int(y), img.rows - 1);
  const int x1 = std::min(x0 + 1, img.cols - 1);
  const int y1 = std::min(y0 + 1, img.rows - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = img(y0, x0) * (1.0 - fx) + img(y0, x1) * fx;
  const double bottom = img(y1, x0) * (1.0 - fx) + img(y1, x1) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

// PNG ------------------------------------------------------------------------

namespace detail {

inline void write_png(const std::filesystem::path& path, int rows, int cols,
                      const std::vector<std::uint8_t>& buffer, bool rgb) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(cols);
  image.height = static_cast<png_uint_32>(rows);
  image.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw IoError("write_png: " + path.string() + ": " + image.message);
  }
}

}  // namespace detail

/// 8-bit grayscale PNG.
inline void write_png_gray(const std::filesystem::path& path, const GrayImage& img) {
  std::vector<std::uint8_t> buf(img.data.size());
  for (size_t i = 0; i < buf.size(); ++i) {
    buf[i] = static_cast<std::uint8_t>(std::nearbyint(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
  }
  detail::write_png(path, img.rows, img.cols, buf, false);
}

/// 8-bit RGB PNG with the gray value replicated on all channels.
inline void write_png_rgb(const std::filesystem::path& path, const GrayImage& img) {
  std::vector<std::uint8_t> buf(img.data.size() * 3);
  for (size_t i = 0; i < img.data.size(); ++i) {
    const auto g =
        static_cast<std::uint8_t>(std::nearbyint(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
    buf[3 * i] = buf[3 * i + 1] = buf[3 * i + 2] = g;
  }
  detail::write_png(path, img.rows, img.cols, buf, true);
}

/// Reads any PNG as grayscale in [0, 1]. RGB is reduced with the ITU-R 601
/// luma weights in integer arithmetic, so gray-replicated RGB loads exactly.
inline GrayImage read_png_gray(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw IoError("read_png: " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    throw IoError("read_png: " + path.string() + ": " + image.message);
  }
  GrayImage out(int(image.height), int(image.width));
  for (size_t i = 0; i < out.data.size(); ++i) {
    const int luma1000 = 299 * buf[3 * i] + 587 * buf[3 * i + 1] + 114 * buf[3 * i + 2];
    out.data[i] = std::nearbyint(luma1000 / 1000.0) / 255.0;
  }
  return out;
}

// Raw depth --------------------------------------------------------------------

/// Little-endian float32 raster plus a `<path>.json` header {rows, cols, units}.
inline void write_depth(const std::filesystem::path& path, const DepthImage& depth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_depth: cannot open " + path.string());
  for (double d : depth.data) {
    const float f = static_cast<float>(d);
    std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    out.write(reinterpret_cast<const char*>(&bits), 4);
  }
  std::ofstream header(path.string() + ".json");
  header << nlohmann::json{{"rows", depth.rows}, {"cols", depth.cols}, {"units", "m"}}.dump(2)
         << "\n";
  if (!out || !header) throw IoError("write_depth: write failed for " + path.string());
}

inline DepthImage read_depth(const std::filesystem::path& path) {
  std::ifstream hin(path.string() + ".json");
  if (!hin) throw IoError("read_depth: missing header " + path.string() + ".json");
  const auto header = nlohmann::json::parse(hin);
  DepthImage depth(header.at("rows").get<int>(), header.at("cols").get<int>());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_depth: cannot open " + path.string());
  for (auto& d : depth.data) {
    std::uint32_t bits = 0;
    in.read(reinterpret_cast<char*>(&bits), 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    d = std::bit_cast<float>(bits);
  }
  if (!in) throw IoError("read_depth: truncated " + path.string());
  return depth;
}

}  // namespace vtsm
