#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mivb/classifiers.hpp"
#include "mivb/errors.hpp"
#include "mivb/image.hpp"

namespace mivb {

enum class InitMode { gray, random, seed_image };

inline std::string to_string(InitMode m) {
  switch (m) {
    case InitMode::gray: return "gray";
    case InitMode::random: return "random";
    case InitMode::seed_image: return "seed_image";
  }
  return "?";
}

inline InitMode init_mode_from_string(const std::string& s) {
  if (s == "gray") return InitMode::gray;
  if (s == "random") return InitMode::random;
  if (s == "seed_image") return InitMode::seed_image;
  throw ConfigError("unknown init mode: " + s);
}

// Starting image for an inversion. Random init draws each pixel uniformly
// from [mean - amplitude, mean + amplitude] (clipped to the pixel range).
struct InitSpec {
  InitMode mode = InitMode::gray;
  float gray_value = 128.0f;
  double random_mean = 128.0;
  double random_amplitude = 32.0;

  void validate() const {
    if (!(gray_value >= 0 && gray_value <= 255)) throw ConfigError("gray init value must be in [0, 255]");
    if (random_amplitude < 0) throw ConfigError("random init amplitude must be >= 0");
  }
};

inline ImageTensor make_init_image(const InitSpec& init, int h, int w, int c, std::uint64_t seed,
                                   const ImageTensor* seed_image = nullptr) {
  init.validate();
  switch (init.mode) {
    case InitMode::gray: return ImageTensor::uniform(h, w, c, init.gray_value);
    case InitMode::random: {
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> u(init.random_mean - init.random_amplitude,
                                               init.random_mean + init.random_amplitude);
      std::vector<double> px(std::size_t(h) * w * c);
      for (auto& v : px) v = u(rng);
      return ImageTensor::clipped<double>(h, w, c, px);
    }
    case InitMode::seed_image:
      if (!seed_image) throw ConfigError("seed_image init requires a seed image");
      return *seed_image;
  }
  throw ConfigError("bad init mode");
}

struct PgdInversionConfig {
  InitSpec init;
  // Step size in pixels per unit gradient. Unset: calibrated on the first
  // step so the largest per-pixel change equals calibration_step_pixels.
  std::optional<double> lr;
  double calibration_step_pixels = 1.0;
  int max_iterations = 1000;
  int target_class = 0;
  bool record_trajectory = true;
  std::uint64_t seed = 0;

  void validate() const {
    init.validate();
    if (lr && !(*lr > 0)) throw ConfigError("lr must be > 0");
    if (!(calibration_step_pixels > 0)) throw ConfigError("calibration_step_pixels must be > 0");
    if (max_iterations < 0) throw ConfigError("max_iterations must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const InitSpec& i) {
  j = {{"mode", to_string(i.mode)},
       {"gray_value", i.gray_value},
       {"random_mean", i.random_mean},
       {"random_amplitude", i.random_amplitude}};
}

inline void from_json(const nlohmann::json& j, InitSpec& i) {
  InitSpec d;
  i.mode = init_mode_from_string(j.value("mode", to_string(d.mode)));
  i.gray_value = j.value("gray_value", d.gray_value);
  i.random_mean = j.value("random_mean", d.random_mean);
  i.random_amplitude = j.value("random_amplitude", d.random_amplitude);
}

inline void to_json(nlohmann::json& j, const PgdInversionConfig& c) {
  j = {{"init", c.init},
       {"lr", c.lr ? nlohmann::json(*c.lr) : nlohmann::json()},
       {"calibration_step_pixels", c.calibration_step_pixels},
       {"max_iterations", c.max_iterations},
       {"record_trajectory", c.record_trajectory}};
}

// target_class and seed are per-run values and are not part of the config.
inline void from_json(const nlohmann::json& j, PgdInversionConfig& c) {
  PgdInversionConfig d;
  c.init = j.contains("init") ? j["init"].get<InitSpec>() : d.init;
  if (j.contains("lr") && !j["lr"].is_null())
    c.lr = j["lr"].get<double>();
  else
    c.lr.reset();
  c.calibration_step_pixels = j.value("calibration_step_pixels", d.calibration_step_pixels);
  c.max_iterations = j.value("max_iterations", d.max_iterations);
  c.record_trajectory = j.value("record_trajectory", d.record_trajectory);
}

struct TrajectoryPoint {
  int iteration = 0;        // the image after this many steps
  double activation = 0;    // target-class logit
};

struct InversionResult {
  ImageTensor image;
  double initial_activation = 0;
  double final_activation = 0;
  std::vector<TrajectoryPoint> trajectory;  // one entry per step taken
  std::optional<int> iterations_to_target;  // first t with argmax(logits(X_t)) == target
  int iterations_run = 0;
  double lr_used = 0;
  std::optional<double> displacement_l2;    // seeded runs: L2 from the seed image
  std::optional<double> tv_weight_used;     // multi-scale runs
  std::string attack_id;
  std::string model_id;
  int target_class = 0;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const InversionResult& r) {
  nlohmann::json traj = nlohmann::json::array();
  for (const auto& p : r.trajectory) traj.push_back({p.iteration, p.activation});
  j = {{"attack_id", r.attack_id},
       {"model_id", r.model_id},
       {"target_class", r.target_class},
       {"seed", r.seed},
       {"initial_activation", r.initial_activation},
       {"final_activation", r.final_activation},
       {"iterations_run", r.iterations_run},
       {"iterations_to_target", r.iterations_to_target ? nlohmann::json(*r.iterations_to_target) : nlohmann::json()},
       {"lr_used", r.lr_used},
       {"trajectory", traj}};
  if (r.displacement_l2) j["displacement_l2"] = *r.displacement_l2;
  if (r.tv_weight_used) j["tv_weight_used"] = *r.tv_weight_used;
}

inline void from_json(const nlohmann::json& j, InversionResult& r) {
  r.attack_id = j.value("attack_id", std::string());
  r.model_id = j.value("model_id", std::string());
  r.target_class = j.value("target_class", 0);
  r.seed = j.value("seed", std::uint64_t{0});
  r.initial_activation = j.value("initial_activation", 0.0);
  r.final_activation = j.value("final_activation", 0.0);
  r.iterations_run = j.value("iterations_run", 0);
  if (j.contains("iterations_to_target") && !j["iterations_to_target"].is_null())
    r.iterations_to_target = j["iterations_to_target"].get<int>();
  r.lr_used = j.value("lr_used", 0.0);
  r.trajectory.clear();
  if (j.contains("trajectory"))
    for (const auto& p : j["trajectory"]) r.trajectory.push_back({p.at(0).get<int>(), p.at(1).get<double>()});
  if (j.contains("displacement_l2")) r.displacement_l2 = j["displacement_l2"].get<double>();
  if (j.contains("tv_weight_used")) r.tv_weight_used = j["tv_weight_used"].get<double>();
}

// X' = clip(X + lr * G, 0, 255) with G the pixel-domain gradient of the
// target-class logit. No gradient normalization.
template <typename T>
ImageTensor apply_gradient_step(const ImageTensor& x, const PixelArray<T>& g, double lr) {
  std::vector<double> px(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) px[i] = static_cast<double>(x[i]) + lr * static_cast<double>(g[i]);
  return ImageTensor::clipped<double>(x.height(), x.width(), x.channels(), px);
}

template <typename T>
ImageTensor pgd_step(ClassifierModel<T>& model, const ImageTensor& x, int class_id, double lr) {
  return apply_gradient_step(x, model.input_gradient(x, class_id), lr);
}

template <typename T>
double max_abs(const PixelArray<T>& g) {
  double m = 0;
  for (auto v : g.values) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

namespace detail {

template <typename T>
InversionResult run_pgd(ClassifierModel<T>& model, ImageTensor x, const PgdInversionConfig& cfg) {
  cfg.validate();
  InversionResult res;
  res.attack_id = "pgd";
  res.target_class = cfg.target_class;
  res.seed = cfg.seed;
  std::optional<double> lr = cfg.lr;
  for (int t = 0; t <= cfg.max_iterations; ++t) {
    const bool last = t == cfg.max_iterations;
    double act;
    int pred;
    PixelArray<T> grad;
    if (last) {
      auto logits = model.forward_logits(x);
      act = logits[static_cast<std::size_t>(cfg.target_class)];
      pred = nn::argmax_row(logits, 0);
    } else {
      auto ag = model.activation_gradient(x, cfg.target_class);
      act = ag.activation;
      pred = ag.predicted;
      grad = std::move(ag.gradient);
    }
    if (t == 0)
      res.initial_activation = act;
    else if (cfg.record_trajectory)
      res.trajectory.push_back({t, act});
    if (pred == cfg.target_class && !res.iterations_to_target) res.iterations_to_target = t;
    if (last) {
      res.final_activation = act;
      break;
    }
    if (!lr) {
      const double m = max_abs(grad);
      lr = m > 0 ? cfg.calibration_step_pixels / m : 1.0;
    }
    x = apply_gradient_step(x, grad, *lr);
  }
  res.iterations_run = cfg.max_iterations;
  res.lr_used = lr.value_or(0.0);
  res.image = std::move(x);
  return res;
}

}  // namespace detail

// Gradient ascent on one class logit from the configured starting image.
template <typename T>
InversionResult invert_class(ClassifierModel<T>& model, const PgdInversionConfig& cfg,
                             const ImageTensor* seed_image = nullptr) {
  const int s = model.arch.input_size, c = model.arch.channels;
  return detail::run_pgd(model, make_init_image(cfg.init, s, s, c, cfg.seed, seed_image), cfg);
}

// Same loop started from a real image; records the L2 displacement from it.
template <typename T>
InversionResult invert_from_seed_image(ClassifierModel<T>& model, const ImageTensor& seed_img, PgdInversionConfig cfg) {
  cfg.init.mode = InitMode::seed_image;
  auto res = detail::run_pgd(model, seed_img, cfg);
  res.displacement_l2 = l2_distance(res.image, seed_img);
  return res;
}

}  // namespace mivb
