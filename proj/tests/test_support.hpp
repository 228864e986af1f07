#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mivb/classifiers.hpp"
#include "mivb/image.hpp"

namespace mivb::fixtures {

// Linear classifier on raw pixels (identity normalization). w[k] holds the
// HWC-ordered weights of logit k.
template <typename T = double>
ClassifierModel<T> linear_model(int side, int channels, const std::vector<std::vector<double>>& w,
                                const std::vector<double>& bias) {
  ArchitectureConfig a;
  a.family = Family::linear;
  a.input_size = side;
  a.channels = channels;
  a.num_classes = static_cast<int>(w.size());
  auto m = build_model<T>(a, 1, NormalizationSpec::identity(channels));
  auto& lin = dynamic_cast<nn::Linear<T>&>(m.head.layer(0));
  for (int k = 0; k < a.num_classes; ++k) {
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        for (int c = 0; c < channels; ++c)
          lin.weight().value.at(k, (c * side + y) * side + x, 0, 0) =
              static_cast<T>(w[k][(static_cast<std::size_t>(y) * side + x) * channels + c]);
    lin.bias().value[k] = static_cast<T>(bias[k]);
  }
  return m;
}

// All logits identically zero.
template <typename T = double>
ClassifierModel<T> constant_model(int side = 8, int channels = 3, int classes = 10) {
  std::vector<std::vector<double>> w(classes, std::vector<double>(std::size_t(side) * side * channels, 0.0));
  return linear_model<T>(side, channels, w, std::vector<double>(classes, 0.0));
}

inline ImageTensor random_image(int h, int w, int c, std::mt19937_64& rng, double lo = 0, double hi = 255) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> px(std::size_t(h) * w * c);
  for (auto& v : px) v = u(rng);
  return ImageTensor::clipped<double>(h, w, c, px);
}

inline ArchitectureConfig small_cnn_config(int side = 8, int channels = 3, int width = 4, int classes = 10) {
  ArchitectureConfig a;
  a.family = Family::small_cnn;
  a.input_size = side;
  a.channels = channels;
  a.width = width;
  a.num_classes = classes;
  return a;
}

struct GradCheck {
  double max_rel_error = 0;
  int coordinates = 0;
};

// Central differences of one logit w.r.t. sampled pixels, compared with the
// analytic input gradient. The relative error uses max(|a|, |fd|) with a
// floor of 1e-6 times the largest analytic gradient entry.
template <typename T>
GradCheck check_input_gradient(ClassifierModel<T>& m, const ImageTensor& img, int cls, int coords, std::uint64_t seed,
                               double h = 1e-3) {
  const auto g = m.input_gradient(img, cls);
  double gmax = 0;
  for (auto v : g.values) gmax = std::max(gmax, std::abs(static_cast<double>(v)));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, img.size() - 1);
  // Finite differences need sub-pixel perturbations, so evaluate on raw tensors.
  auto logit = [&](const std::vector<double>& px) {
    nn::Tensor<T> x(1, img.channels(), img.height(), img.width());
    for (int c = 0; c < img.channels(); ++c)
      for (int y = 0; y < img.height(); ++y)
        for (int xx = 0; xx < img.width(); ++xx)
          x.at(0, c, y, xx) = static_cast<T>((px[(std::size_t(y) * img.width() + xx) * img.channels() + c] - m.norm.mean[c]) /
                                             m.norm.stddev[c]);
    return static_cast<double>(m.forward(x, nn::Mode::eval)[static_cast<std::size_t>(cls)]);
  };
  std::vector<double> base(img.pixels().begin(), img.pixels().end());
  GradCheck r;
  for (int k = 0; k < coords; ++k) {
    const std::size_t i = pick(rng);
    auto p = base, q = base;
    p[i] += h;
    q[i] -= h;
    const double fd = (logit(p) - logit(q)) / (2 * h);
    const double a = g[i];
    const double denom = std::max({std::abs(a), std::abs(fd), 1e-6 * gmax, 1e-300});
    r.max_rel_error = std::max(r.max_rel_error, std::abs(a - fd) / denom);
    ++r.coordinates;
  }
  return r;
}

}  // namespace mivb::fixtures
