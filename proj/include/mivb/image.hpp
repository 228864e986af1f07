#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "mivb/errors.hpp"
#include "mivb/nn/tensor.hpp"

namespace mivb {

inline constexpr float kPixelMin = 0.0f;
inline constexpr float kPixelMax = 255.0f;

// Real-valued array in HWC layout, used for gradients and other unconstrained
// per-pixel quantities.
template <typename T>
struct PixelArray {
  int height = 0, width = 0, channels = 0;
  std::vector<T> values;

  PixelArray() = default;
  PixelArray(int h, int w, int c, T fill = T(0)) : height(h), width(w), channels(c), values(std::size_t(h) * w * c, fill) {}

  std::size_t size() const { return values.size(); }
  std::size_t index(int y, int x, int ch) const { return (std::size_t(y) * width + x) * channels + ch; }
  T& at(int y, int x, int ch) { return values[index(y, x, ch)]; }
  const T& at(int y, int x, int ch) const { return values[index(y, x, ch)]; }
  T& operator[](std::size_t i) { return values[i]; }
  const T& operator[](std::size_t i) const { return values[i]; }
};

// H x W x C image in the pixel domain; every element lies in [0, 255].
class ImageTensor {
 public:
  ImageTensor() = default;

  // Throws std::out_of_range if any element is outside [0, 255] or not finite.
  ImageTensor(int h, int w, int c, std::vector<float> pixels)
      : h_(h), w_(w), c_(c), px_(std::move(pixels)) {
    if (h <= 0 || w <= 0 || c <= 0) throw std::invalid_argument("ImageTensor: non-positive extent");
    if (px_.size() != std::size_t(h) * w * c) throw std::invalid_argument("ImageTensor: pixel count does not match shape");
    for (float v : px_)
      if (!(v >= kPixelMin && v <= kPixelMax)) throw std::out_of_range("ImageTensor: pixel outside [0, 255]");
  }

  static ImageTensor uniform(int h, int w, int c, float value) {
    return ImageTensor(h, w, c, std::vector<float>(std::size_t(h) * w * c, value));
  }

  // Clips into range instead of rejecting. NaN maps to 0.
  template <typename T>
  static ImageTensor clipped(int h, int w, int c, std::span<const T> values) {
    std::vector<float> px(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double v = static_cast<double>(values[i]);
      px[i] = std::isnan(v) ? kPixelMin : static_cast<float>(std::clamp(v, 0.0, 255.0));
    }
    return ImageTensor(h, w, c, std::move(px));
  }

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }
  std::size_t size() const { return px_.size(); }
  bool empty() const { return px_.empty(); }
  bool same_shape(const ImageTensor& o) const { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }

  std::size_t index(int y, int x, int ch) const { return (std::size_t(y) * w_ + x) * c_ + ch; }
  float at(int y, int x, int ch) const { return px_[index(y, x, ch)]; }
  float operator[](std::size_t i) const { return px_[i]; }
  std::span<const float> pixels() const { return px_; }

  bool operator==(const ImageTensor& o) const { return same_shape(o) && px_ == o.px_; }

 private:
  int h_ = 0, w_ = 0, c_ = 0;
  std::vector<float> px_;
};

// Per-channel affine map from pixel units to model inputs: (x - mean) / std.
struct NormalizationSpec {
  std::vector<double> mean{0.0, 0.0, 0.0};
  std::vector<double> stddev{1.0, 1.0, 1.0};

  static NormalizationSpec identity(int channels) {
    return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
  }
  static NormalizationSpec symmetric(int channels) {
    return {std::vector<double>(channels, 127.5), std::vector<double>(channels, 127.5)};
  }
  void validate(int channels) const {
    if (static_cast<int>(mean.size()) != channels || static_cast<int>(stddev.size()) != channels)
      throw ConfigError("NormalizationSpec: channel count mismatch");
    for (double s : stddev)
      if (!(s > 0)) throw ConfigError("NormalizationSpec: stddev must be positive");
  }
};

inline PixelArray<double> to_model_space(const ImageTensor& img, const NormalizationSpec& norm) {
  norm.validate(img.channels());
  PixelArray<double> out(img.height(), img.width(), img.channels());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const int ch = static_cast<int>(i % img.channels());
    out[i] = (img[i] - norm.mean[ch]) / norm.stddev[ch];
  }
  return out;
}

inline ImageTensor from_model_space(const PixelArray<double>& arr, const NormalizationSpec& norm) {
  norm.validate(arr.channels);
  std::vector<double> px(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const int ch = static_cast<int>(i % arr.channels);
    px[i] = arr[i] * norm.stddev[ch] + norm.mean[ch];
  }
  return ImageTensor::clipped<double>(arr.height, arr.width, arr.channels, px);
}

// Batch of images -> normalized NCHW tensor.
template <typename T>
nn::Tensor<T> to_model_batch(std::span<const ImageTensor> images, const NormalizationSpec& norm) {
  if (images.empty()) return {};
  const int h = images[0].height(), w = images[0].width(), c = images[0].channels();
  norm.validate(c);
  nn::Tensor<T> t(static_cast<int>(images.size()), c, h, w);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const auto& img = images[b];
    if (img.height() != h || img.width() != w || img.channels() != c)
      throw std::invalid_argument("to_model_batch: images differ in shape");
    for (int ch = 0; ch < c; ++ch) {
      const T m = static_cast<T>(norm.mean[ch]), inv = static_cast<T>(1.0 / norm.stddev[ch]);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) t.at(static_cast<int>(b), ch, y, x) = (static_cast<T>(img.at(y, x, ch)) - m) * inv;
    }
  }
  return t;
}

// Gradient w.r.t. model inputs of one sample -> gradient in pixel units (chain rule through 1/std).
template <typename T>
PixelArray<T> model_grad_to_pixels(const nn::Tensor<T>& g, int sample, const NormalizationSpec& norm) {
  PixelArray<T> out(g.h(), g.w(), g.c());
  for (int ch = 0; ch < g.c(); ++ch) {
    const T inv = static_cast<T>(1.0 / norm.stddev[ch]);
    for (int y = 0; y < g.h(); ++y)
      for (int x = 0; x < g.w(); ++x) out.at(y, x, ch) = g.at(sample, ch, y, x) * inv;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resampling

namespace detail {

struct LinearTap {
  int lo, hi;
  double t;  // weight of hi
};

// Half-pixel-centred linear interpolation taps for resizing `in` samples to `out`.
inline std::vector<LinearTap> linear_taps(int in, int out) {
  std::vector<LinearTap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - lo};
  }
  return taps;
}

}  // namespace detail

// Bilinear resize of an HWC array. Interpolates as a + t (b - a), so constant
// inputs are reproduced exactly.
template <typename T>
PixelArray<T> resize_bilinear(const PixelArray<T>& src, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize_bilinear: non-positive size");
  const auto ty = detail::linear_taps(src.height, out_h);
  const auto tx = detail::linear_taps(src.width, out_w);
  PixelArray<T> out(out_h, out_w, src.channels);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x)
      for (int c = 0; c < src.channels; ++c) {
        const T a = src.at(ty[y].lo, tx[x].lo, c), b = src.at(ty[y].lo, tx[x].hi, c);
        const T d = src.at(ty[y].hi, tx[x].lo, c), e = src.at(ty[y].hi, tx[x].hi, c);
        const T top = a + static_cast<T>(tx[x].t) * (b - a);
        const T bot = d + static_cast<T>(tx[x].t) * (e - d);
        out.at(y, x, c) = top + static_cast<T>(ty[y].t) * (bot - top);
      }
  return out;
}

// Adjoint of resize_bilinear: maps a gradient on the resized grid back to the source grid.
template <typename T>
PixelArray<T> resize_bilinear_adjoint(const PixelArray<T>& grad_out, int src_h, int src_w) {
  const auto ty = detail::linear_taps(src_h, grad_out.height);
  const auto tx = detail::linear_taps(src_w, grad_out.width);
  PixelArray<T> g(src_h, src_w, grad_out.channels);
  for (int y = 0; y < grad_out.height; ++y)
    for (int x = 0; x < grad_out.width; ++x)
      for (int c = 0; c < grad_out.channels; ++c) {
        const T v = grad_out.at(y, x, c);
        const T wy = static_cast<T>(ty[y].t), wx = static_cast<T>(tx[x].t);
        g.at(ty[y].lo, tx[x].lo, c) += v * (1 - wy) * (1 - wx);
        g.at(ty[y].lo, tx[x].hi, c) += v * (1 - wy) * wx;
        g.at(ty[y].hi, tx[x].lo, c) += v * wy * (1 - wx);
        g.at(ty[y].hi, tx[x].hi, c) += v * wy * wx;
      }
  return g;
}

inline PixelArray<float> as_array(const ImageTensor& img) {
  PixelArray<float> a(img.height(), img.width(), img.channels());
  std::copy(img.pixels().begin(), img.pixels().end(), a.values.begin());
  return a;
}

template <typename T>
ImageTensor to_image(const PixelArray<T>& a) {
  return ImageTensor::clipped<T>(a.height, a.width, a.channels, a.values);
}

inline ImageTensor resize_image(const ImageTensor& img, int out_h, int out_w) {
  if (img.height() == out_h && img.width() == out_w) return img;
  return to_image(resize_bilinear(as_array(img), out_h, out_w));
}

// Integer-factor box downscale (average of factor x factor blocks).
inline ImageTensor downscale_box(const ImageTensor& img, int factor) {
  if (factor <= 1) return img;
  if (img.height() % factor || img.width() % factor)
    throw ConfigError("downscale factor must divide the image size");
  const int h = img.height() / factor, w = img.width() / factor, c = img.channels();
  std::vector<float> px(std::size_t(h) * w * c);
  const double inv = 1.0 / (factor * factor);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double s = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) s += img.at(y * factor + dy, x * factor + dx, ch);
        px[(std::size_t(y) * w + x) * c + ch] = static_cast<float>(s * inv);
      }
  return ImageTensor(h, w, c, std::move(px));
}

// ---------------------------------------------------------------------------
// Smoothness penalty: isotropic total variation with forward differences
// (zero difference past the last row/column), smoothed by `beta`:
//   TV(x) = sum_{y,x,c} sqrt(dy^2 + dx^2 + beta)
// The constant sqrt(beta) per pixel does not affect the gradient.

template <typename T>
double total_variation(const PixelArray<T>& a, double beta = 1e-2) {
  double tv = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x)
      for (int c = 0; c < a.channels; ++c) {
        const double v = a.at(y, x, c);
        const double dy = y + 1 < a.height ? a.at(y + 1, x, c) - v : 0.0;
        const double dx = x + 1 < a.width ? a.at(y, x + 1, c) - v : 0.0;
        tv += std::sqrt(dy * dy + dx * dx + beta);
      }
  return tv;
}

inline double total_variation(const ImageTensor& img, double beta = 1e-2) {
  return total_variation(as_array(img), beta);
}

template <typename T>
PixelArray<double> total_variation_gradient(const PixelArray<T>& a, double beta = 1e-2) {
  PixelArray<double> g(a.height, a.width, a.channels);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x)
      for (int c = 0; c < a.channels; ++c) {
        const double v = a.at(y, x, c);
        const bool has_dy = y + 1 < a.height, has_dx = x + 1 < a.width;
        const double dy = has_dy ? a.at(y + 1, x, c) - v : 0.0;
        const double dx = has_dx ? a.at(y, x + 1, c) - v : 0.0;
        const double r = std::sqrt(dy * dy + dx * dx + beta);
        g.at(y, x, c) -= (dy + dx) / r;
        if (has_dy) g.at(y + 1, x, c) += dy / r;
        if (has_dx) g.at(y, x + 1, c) += dx / r;
      }
  return g;
}

// Raw Euclidean norm of the pixel difference, 0-255 units.
inline double l2_distance(const ImageTensor& a, const ImageTensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("l2_distance: shape mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// PNG persistence (8-bit, gray or RGB). Pixels are rounded to the nearest integer.

inline void save_png(const ImageTensor& img, const std::filesystem::path& path) {
  if (img.empty()) throw std::invalid_argument("save_png: empty image");
  if (img.channels() != 1 && img.channels() != 3) throw std::invalid_argument("save_png: need 1 or 3 channels");
  std::vector<std::uint8_t> buf(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) buf[i] = static_cast<std::uint8_t>(std::lround(img[i]));
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width());
  pi.height = static_cast<png_uint_32>(img.height());
  pi.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  if (!png_image_write_to_file(&pi, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    std::string msg = pi.message;
    png_image_free(&pi);
    throw IoError("save_png: cannot write " + path.string() + ": " + msg);
  }
}

inline ImageTensor load_png(const std::filesystem::path& path) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.string().c_str()))
    throw IoError("load_png: cannot read " + path.string() + ": " + pi.message);
  const bool gray = (pi.format & PNG_FORMAT_FLAG_COLOR) == 0;
  pi.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int c = gray ? 1 : 3;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = pi.message;
    png_image_free(&pi);
    throw IoError("load_png: decode failed for " + path.string() + ": " + msg);
  }
  std::vector<float> px(buf.begin(), buf.end());
  return ImageTensor(static_cast<int>(pi.height), static_cast<int>(pi.width), c, std::move(px));
}

// Tiles equally-sized images into a grid with `cols` columns.
inline ImageTensor tile_images(std::span<const ImageTensor> images, int cols) {
  if (images.empty()) throw std::invalid_argument("tile_images: no images");
  const int h = images[0].height(), w = images[0].width(), c = images[0].channels();
  const int rows = static_cast<int>((images.size() + cols - 1) / cols);
  std::vector<float> px(std::size_t(rows) * h * cols * w * c, 0.0f);
  const int W = cols * w;
  for (std::size_t k = 0; k < images.size(); ++k) {
    const int r = static_cast<int>(k) / cols, q = static_cast<int>(k) % cols;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch)
          px[((std::size_t(r * h + y) * W) + q * w + x) * c + ch] = images[k].at(y, x, ch);
  }
  return ImageTensor(rows * h, W, c, std::move(px));
}

}  // namespace mivb
