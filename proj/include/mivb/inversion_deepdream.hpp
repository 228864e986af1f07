#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "mivb/classifiers.hpp"
#include "mivb/errors.hpp"
#include "mivb/image.hpp"
#include "mivb/inversion_pgd.hpp"

namespace mivb {

struct DreamConfig {
  InitSpec init;
  int octaves = 4;
  double octave_scale = 2.0;
  int steps_per_octave = 10;
  int outer_iterations = 5;
  // Mean absolute step in pixels (the gradient is normalized by its mean magnitude).
  double lr = 2.0;
  // Unset: calibrated at the first step with a nonzero smoothness gradient so
  // that tv_balance * mean|G_act| == lambda * mean|G_tv|, then held fixed.
  std::optional<double> tv_weight;
  double tv_balance = 1.0;
  double tv_beta = 1e-2;
  int target_class = 0;
  std::uint64_t seed = 0;
  bool keep_octave_images = false;
  bool record_trajectory = true;

  void validate(int base_size) const {
    init.validate();
    if (octaves < 1) throw ConfigError("octaves must be >= 1");
    if (!(octave_scale > 1)) throw ConfigError("octave_scale must be > 1");
    if (steps_per_octave < 0 || outer_iterations < 0) throw ConfigError("step counts must be >= 0");
    if (!(lr > 0)) throw ConfigError("lr must be > 0");
    if (tv_weight && *tv_weight < 0) throw ConfigError("tv_weight must be >= 0");
    if (tv_balance < 0 || !(tv_beta > 0)) throw ConfigError("bad smoothness settings");
    (void)octave_sizes(base_size);
  }

  // floor(base / scale^k) for k = octaves-1 .. 0, low to high resolution.
  std::vector<int> octave_sizes(int base_size) const {
    std::vector<int> s(octaves);
    for (int k = 0; k < octaves; ++k) {
      const int v = static_cast<int>(std::floor(base_size / std::pow(octave_scale, octaves - 1 - k) + 1e-9));
      if (v < 4)
        throw ConfigError("octave resolution " + std::to_string(v) + " below the 4 pixel floor (base " +
                          std::to_string(base_size) + ", " + std::to_string(octaves) + " octaves)");
      s[k] = v;
    }
    return s;
  }

  int total_steps() const { return outer_iterations * octaves * steps_per_octave; }
};

inline void to_json(nlohmann::json& j, const DreamConfig& c) {
  j = {{"init", c.init},
       {"octaves", c.octaves},
       {"octave_scale", c.octave_scale},
       {"steps_per_octave", c.steps_per_octave},
       {"outer_iterations", c.outer_iterations},
       {"lr", c.lr},
       {"tv_weight", c.tv_weight ? nlohmann::json(*c.tv_weight) : nlohmann::json()},
       {"tv_balance", c.tv_balance},
       {"tv_beta", c.tv_beta},
       {"keep_octave_images", c.keep_octave_images},
       {"record_trajectory", c.record_trajectory}};
}

inline void from_json(const nlohmann::json& j, DreamConfig& c) {
  DreamConfig d;
  c.init = j.contains("init") ? j["init"].get<InitSpec>() : d.init;
  c.octaves = j.value("octaves", d.octaves);
  c.octave_scale = j.value("octave_scale", d.octave_scale);
  c.steps_per_octave = j.value("steps_per_octave", d.steps_per_octave);
  c.outer_iterations = j.value("outer_iterations", d.outer_iterations);
  c.lr = j.value("lr", d.lr);
  if (j.contains("tv_weight") && !j["tv_weight"].is_null())
    c.tv_weight = j["tv_weight"].get<double>();
  else
    c.tv_weight.reset();
  c.tv_balance = j.value("tv_balance", d.tv_balance);
  c.tv_beta = j.value("tv_beta", d.tv_beta);
  c.keep_octave_images = j.value("keep_octave_images", d.keep_octave_images);
  c.record_trajectory = j.value("record_trajectory", d.record_trajectory);
}

inline std::vector<ImageTensor> build_octave_pyramid(const ImageTensor& img, int octaves, double octave_scale) {
  DreamConfig cfg;
  cfg.octaves = octaves;
  cfg.octave_scale = octave_scale;
  if (octaves < 1) throw ConfigError("octaves must be >= 1");
  if (!(octave_scale > 1)) throw ConfigError("octave_scale must be > 1");
  const auto hs = cfg.octave_sizes(img.height());
  const auto ws = cfg.octave_sizes(img.width());
  std::vector<ImageTensor> out;
  for (int k = 0; k < octaves; ++k) out.push_back(resize_image(img, hs[k], ws[k]));
  return out;
}

struct DreamStepResult {
  ImageTensor image;
  double activation = 0;  // target logit at the input image
  int predicted = -1;
  bool skipped = false;
  double mean_abs_activation_grad = 0;
  double mean_abs_tv_grad = 0;
};

namespace detail {

inline double mean_abs(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += std::abs(x);
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// One normalized ascent step on a image of any resolution. Images smaller
// than the model input are bilinearly upscaled before the forward pass and
// the gradient is pulled back through the resampler's adjoint. When
// tv_weight is empty it is calibrated here (if the TV gradient is nonzero)
// and written back.
template <typename T>
DreamStepResult dream_step_impl(ClassifierModel<T>& model, const ImageTensor& x, int class_id, double lr,
                                std::optional<double>& tv_weight, double tv_balance, double tv_beta) {
  const int s = model.arch.input_size;
  const bool native = x.height() == s && x.width() == s;
  const ImageTensor input = native ? x : resize_image(x, s, s);
  auto ag = model.activation_gradient(input, class_id);
  PixelArray<T> g_act = native ? std::move(ag.gradient) : resize_bilinear_adjoint(ag.gradient, x.height(), x.width());
  const PixelArray<double> g_tv = total_variation_gradient(as_array(x), tv_beta);

  std::vector<double> ga(g_act.values.begin(), g_act.values.end());
  DreamStepResult r;
  r.activation = ag.activation;
  r.predicted = ag.predicted;
  r.mean_abs_activation_grad = mean_abs(ga);
  r.mean_abs_tv_grad = mean_abs(g_tv.values);
  if (!tv_weight && r.mean_abs_tv_grad > 0)
    tv_weight = tv_balance * r.mean_abs_activation_grad / r.mean_abs_tv_grad;
  const double lam = tv_weight.value_or(0.0);

  std::vector<double> g(ga.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = ga[i] - lam * g_tv.values[i];
  const double m = mean_abs(g);
  if (!(m > 0)) {
    r.image = x;
    r.skipped = true;
    return r;
  }
  std::vector<double> px(x.size());
  const double scale = lr / m;
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<double>(x[i]) + scale * g[i];
  r.image = ImageTensor::clipped<double>(x.height(), x.width(), x.channels(), px);
  return r;
}

}  // namespace detail

// X' = clip(X + lr * G / mean|G|), G the gradient of
// activation - tv_weight * TV(X). A zero gradient leaves X unchanged.
template <typename T>
DreamStepResult dream_step(ClassifierModel<T>& model, const ImageTensor& x, int class_id, double lr, double tv_weight,
                           double tv_beta = 1e-2) {
  std::optional<double> w = tv_weight;
  return detail::dream_step_impl(model, x, class_id, lr, w, 0.0, tv_beta);
}

struct MultiscaleResult {
  InversionResult result;
  // Optimized image at the end of each octave of the last outer iteration.
  std::vector<ImageTensor> octave_images;
  int steps_skipped = 0;
};

// For each outer iteration: resample the current image to the coarsest
// octave, run steps_per_octave steps there, upscale to the next octave and
// repeat up to full resolution.
template <typename T>
MultiscaleResult invert_class_multiscale(ClassifierModel<T>& model, const DreamConfig& cfg,
                                         const ImageTensor* seed_image = nullptr) {
  const int base = model.arch.input_size;
  cfg.validate(base);
  const auto sizes = cfg.octave_sizes(base);
  ImageTensor x = make_init_image(cfg.init, base, base, model.arch.channels, cfg.seed, seed_image);

  MultiscaleResult out;
  InversionResult& res = out.result;
  res.attack_id = "deepdream";
  res.target_class = cfg.target_class;
  res.seed = cfg.seed;
  res.lr_used = cfg.lr;
  res.initial_activation = model.class_activation(x, cfg.target_class);
  if (model.predict(x) == cfg.target_class) res.iterations_to_target = 0;

  std::optional<double> tv_weight = cfg.tv_weight;
  int step = 0;
  for (int outer = 0; outer < cfg.outer_iterations; ++outer) {
    ImageTensor level = resize_image(x, sizes[0], sizes[0]);
    for (int k = 0; k < cfg.octaves; ++k) {
      if (k > 0) level = resize_image(level, sizes[k], sizes[k]);
      for (int s = 0; s < cfg.steps_per_octave; ++s) {
        auto r = detail::dream_step_impl(model, level, cfg.target_class, cfg.lr, tv_weight, cfg.tv_balance, cfg.tv_beta);
        // r.activation is measured at the pre-step image, i.e. after `step` steps.
        if (r.predicted == cfg.target_class && !res.iterations_to_target) res.iterations_to_target = step;
        if (step > 0 && cfg.record_trajectory) res.trajectory.push_back({step, r.activation});
        out.steps_skipped += r.skipped;
        level = std::move(r.image);
        ++step;
      }
      if (cfg.keep_octave_images && outer + 1 == cfg.outer_iterations) out.octave_images.push_back(level);
    }
    x = std::move(level);
  }
  auto logits = model.forward_logits(x);
  res.final_activation = logits[static_cast<std::size_t>(cfg.target_class)];
  if (step > 0 && cfg.record_trajectory) res.trajectory.push_back({step, res.final_activation});
  if (nn::argmax_row(logits, 0) == cfg.target_class && !res.iterations_to_target) res.iterations_to_target = step;
  res.iterations_run = step;
  res.tv_weight_used = tv_weight.value_or(0.0);
  res.image = std::move(x);
  return out;
}

}  // namespace mivb
