#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mivb/classifiers.hpp"
#include "mivb/dataset.hpp"
#include "mivb/errors.hpp"
#include "mivb/nn/loss.hpp"
#include "mivb/nn/optim.hpp"

namespace mivb {

enum class OptimizerKind { adam, sgd_momentum };

struct LrPhase {
  int epochs = 0;
  double lr = 0;
};

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::sgd_momentum;
  std::vector<LrPhase> schedule{{30, 0.01}};
  double momentum = 0.9;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  int batch_size = 128;
  int epochs = 30;
  std::uint64_t seed = 0;
  bool augment_flip = false;
  // Epoch after which train_adversarial snapshots the model (0 disables).
  int early_checkpoint_epoch = 10;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    int total = 0;
    for (const auto& p : schedule) {
      if (p.epochs < 1 || !(p.lr > 0)) throw ConfigError("schedule phases need epochs >= 1 and lr > 0");
      total += p.epochs;
    }
    if (total != epochs)
      throw ConfigError("schedule covers " + std::to_string(total) + " epochs but epochs = " + std::to_string(epochs));
  }

  // Learning rate for a 1-based epoch.
  double lr_at(int epoch) const {
    int acc = 0;
    for (const auto& p : schedule) {
      acc += p.epochs;
      if (epoch <= acc) return p.lr;
    }
    return schedule.back().lr;
  }
};

// Iterated sign-gradient attack used inside adversarial training. Budgets are
// pixel counts on the 0-255 scale.
struct AdvTrainConfig {
  double epsilon = 10.0;
  double step_size = 2.0;
  int iterations = 10;
  bool random_start = false;

  void validate() const {
    if (epsilon < 0) throw ConfigError("epsilon must be >= 0");
    if (iterations < 1) throw ConfigError("attack iterations must be >= 1");
    if (step_size <= 0 || (epsilon > 0 && step_size > epsilon))
      throw ConfigError("step_size must be in (0, epsilon]");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  nlohmann::json sched = nlohmann::json::array();
  for (const auto& p : c.schedule) sched.push_back({{"epochs", p.epochs}, {"lr", p.lr}});
  j = {{"optimizer", c.optimizer == OptimizerKind::adam ? "adam" : "sgd_momentum"},
       {"schedule", sched},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"adam_betas", {c.adam_beta1, c.adam_beta2}},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"seed", c.seed},
       {"augment_flip", c.augment_flip},
       {"early_checkpoint_epoch", c.early_checkpoint_epoch}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  const std::string opt = j.value("optimizer", std::string("sgd_momentum"));
  if (opt == "adam")
    c.optimizer = OptimizerKind::adam;
  else if (opt == "sgd_momentum")
    c.optimizer = OptimizerKind::sgd_momentum;
  else
    throw ConfigError("unknown optimizer: " + opt);
  if (j.contains("schedule")) {
    c.schedule.clear();
    for (const auto& p : j.at("schedule")) c.schedule.push_back({p.at("epochs").get<int>(), p.at("lr").get<double>()});
  }
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  if (j.contains("adam_betas")) {
    c.adam_beta1 = j.at("adam_betas").at(0).get<double>();
    c.adam_beta2 = j.at("adam_betas").at(1).get<double>();
  }
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.augment_flip = j.value("augment_flip", c.augment_flip);
  c.early_checkpoint_epoch = j.value("early_checkpoint_epoch", c.early_checkpoint_epoch);
}

inline void to_json(nlohmann::json& j, const AdvTrainConfig& c) {
  j = {{"epsilon", c.epsilon}, {"step_size", c.step_size}, {"iterations", c.iterations}, {"random_start", c.random_start}};
}
inline void from_json(const nlohmann::json& j, AdvTrainConfig& c) {
  c.epsilon = j.value("epsilon", c.epsilon);
  c.step_size = j.value("step_size", c.step_size);
  c.iterations = j.value("iterations", c.iterations);
  c.random_start = j.value("random_start", c.random_start);
}

struct EpochMetrics {
  int epoch = 0;
  std::string split;  // "train" (running, over the optimized batches) or "validation"
  double loss = 0;
  double accuracy = 0;
};

inline void append_metrics_jsonl(const std::filesystem::path& path, const std::vector<EpochMetrics>& ms) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write metrics log " + path.string());
  for (const auto& m : ms)
    out << nlohmann::json{{"epoch", m.epoch}, {"split", m.split}, {"loss", m.loss}, {"accuracy", m.accuracy}}.dump()
        << '\n';
}

// ---------------------------------------------------------------------------
// Pixel-domain batches (NCHW, values in [0, 255]).

template <typename T>
nn::Tensor<T> pixel_batch(const LabeledDataset& ds, std::span<const std::size_t> idx, bool flip = false,
                          std::mt19937_64* rng = nullptr) {
  const auto& first = ds.images.at(idx[0]);
  const int h = first.height(), w = first.width(), c = first.channels();
  nn::Tensor<T> t(static_cast<int>(idx.size()), c, h, w);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& img = ds.images[idx[b]];
    const bool mirror = flip && rng && coin(*rng);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) t.at(static_cast<int>(b), ch, y, x) = img.at(y, mirror ? w - 1 - x : x, ch);
  }
  return t;
}

template <typename T>
nn::Tensor<T> pixel_batch(std::span<const ImageTensor> images) {
  nn::Tensor<T> t(static_cast<int>(images.size()), images[0].channels(), images[0].height(), images[0].width());
  for (std::size_t b = 0; b < images.size(); ++b)
    for (int ch = 0; ch < t.c(); ++ch)
      for (int y = 0; y < t.h(); ++y)
        for (int x = 0; x < t.w(); ++x) t.at(static_cast<int>(b), ch, y, x) = images[b].at(y, x, ch);
  return t;
}

template <typename T>
std::vector<ImageTensor> images_from_pixel_batch(const nn::Tensor<T>& t) {
  std::vector<ImageTensor> out;
  for (int b = 0; b < t.n(); ++b) {
    std::vector<T> hwc(t.sample_size());
    for (int ch = 0; ch < t.c(); ++ch)
      for (int y = 0; y < t.h(); ++y)
        for (int x = 0; x < t.w(); ++x) hwc[(std::size_t(y) * t.w() + x) * t.c() + ch] = t.at(b, ch, y, x);
    out.push_back(ImageTensor::clipped<T>(t.h(), t.w(), t.c(), hwc));
  }
  return out;
}

template <typename T>
nn::Tensor<T> normalize_batch(const nn::Tensor<T>& px, const NormalizationSpec& norm) {
  nn::Tensor<T> x = px;
  const std::size_t hw = std::size_t(px.h()) * px.w();
  for (int b = 0; b < px.n(); ++b)
    for (int ch = 0; ch < px.c(); ++ch) {
      const T m = static_cast<T>(norm.mean[ch]), inv = static_cast<T>(1.0 / norm.stddev[ch]);
      T* p = x.data() + x.index(b, ch, 0, 0);
      for (std::size_t i = 0; i < hw; ++i) p[i] = (p[i] - m) * inv;
    }
  return x;
}

template <typename T>
void model_grad_to_pixel_units(nn::Tensor<T>& g, const NormalizationSpec& norm) {
  const std::size_t hw = std::size_t(g.h()) * g.w();
  for (int b = 0; b < g.n(); ++b)
    for (int ch = 0; ch < g.c(); ++ch) {
      const T inv = static_cast<T>(1.0 / norm.stddev[ch]);
      T* p = g.data() + g.index(b, ch, 0, 0);
      for (std::size_t i = 0; i < hw; ++i) p[i] *= inv;
    }
}

// Mean cross-entropy and its gradient w.r.t. pixel inputs, evaluation mode.
template <typename T>
std::pair<double, nn::Tensor<T>> loss_pixel_gradient(ClassifierModel<T>& model, const nn::Tensor<T>& px,
                                                     std::span<const int> labels) {
  nn::Tensor<T> logits = model.forward(normalize_batch(px, model.norm), nn::Mode::eval);
  auto ce = nn::softmax_cross_entropy(logits, labels);
  nn::Tensor<T> g = model.backward(ce.grad, false);
  model_grad_to_pixel_units(g, model.norm);
  return {ce.loss, std::move(g)};
}

template <typename T>
T sign_of(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

// Iterated sign-gradient ascent on the cross-entropy of the true labels, with
// projection to the epsilon max-norm ball around the clean batch and clipping
// to [0, 255] after every step. Operates on a pixel-domain NCHW batch.
template <typename T>
nn::Tensor<T> adversarial_pixel_batch(ClassifierModel<T>& model, const nn::Tensor<T>& clean, std::span<const int> labels,
                                      const AdvTrainConfig& cfg, std::mt19937_64* rng = nullptr) {
  cfg.validate();
  nn::Tensor<T> x = clean;
  const T eps = static_cast<T>(cfg.epsilon), step = static_cast<T>(cfg.step_size);
  auto project = [&](nn::Tensor<T>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const T lo = std::max(T(0), clean[i] - eps), hi = std::min(T(255), clean[i] + eps);
      v[i] = std::clamp(v[i], lo, hi);
    }
  };
  if (cfg.random_start && rng) {
    std::uniform_real_distribution<double> u(-cfg.epsilon, cfg.epsilon);
    for (auto& v : x.storage()) v += static_cast<T>(u(*rng));
    project(x);
  }
  for (int it = 0; it < cfg.iterations; ++it) {
    auto [loss, g] = loss_pixel_gradient(model, x, labels);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += step * sign_of(g[i]);
    project(x);
  }
  return x;
}

template <typename T>
std::vector<ImageTensor> generate_adversarial_batch(ClassifierModel<T>& model, std::span<const ImageTensor> images,
                                                    std::span<const int> labels, const AdvTrainConfig& cfg) {
  if (images.empty()) return {};
  auto adv = adversarial_pixel_batch(model, pixel_batch<T>(images), labels, cfg);
  return images_from_pixel_batch(adv);
}

// ---------------------------------------------------------------------------

template <typename T>
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::vector<nn::Parameter<T>*> params) {
    if (cfg.optimizer == OptimizerKind::adam)
      adam_ = std::make_unique<nn::Adam<T>>(params, cfg.adam_beta1, cfg.adam_beta2, 1e-8, cfg.weight_decay);
    else
      sgd_ = std::make_unique<nn::SgdMomentum<T>>(params, cfg.momentum, cfg.weight_decay);
  }
  void step(double lr) {
    if (adam_)
      adam_->step(lr);
    else
      sgd_->step(lr);
  }

 private:
  std::unique_ptr<nn::Adam<T>> adam_;
  std::unique_ptr<nn::SgdMomentum<T>> sgd_;
};

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
};

template <typename T>
EvalResult evaluate(ClassifierModel<T>& model, const LabeledDataset& ds, int batch = 256) {
  if (ds.empty()) throw std::invalid_argument("evaluate: empty dataset");
  double loss = 0;
  long correct = 0;
  for (std::size_t s = 0; s < ds.size(); s += batch) {
    const std::size_t e = std::min(ds.size(), s + batch);
    std::vector<std::size_t> idx(e - s);
    std::iota(idx.begin(), idx.end(), s);
    auto logits = model.forward(normalize_batch(pixel_batch<T>(ds, idx), model.norm), nn::Mode::eval);
    auto ce = nn::softmax_cross_entropy(logits, std::span<const int>(ds.labels.data() + s, e - s));
    loss += ce.loss * static_cast<double>(e - s);
    correct += ce.correct;
  }
  return {loss / static_cast<double>(ds.size()), static_cast<double>(correct) / static_cast<double>(ds.size())};
}

// Top-1 accuracy in [0, 1]. Throws std::invalid_argument on an empty dataset.
template <typename T>
double evaluate_accuracy(ClassifierModel<T>& model, const LabeledDataset& ds) {
  return evaluate(model, ds).accuracy;
}

template <typename T>
struct TrainResult {
  std::vector<EpochMetrics> metrics;
  // Snapshot after TrainConfig::early_checkpoint_epoch (adversarial training only).
  std::optional<ClassifierModel<T>> early_checkpoint;
};

struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_metrics;
};

namespace detail {

template <typename T>
TrainResult<T> train_loop(ClassifierModel<T>& model, const LabeledDataset& train, const LabeledDataset* validation,
                          const TrainConfig& cfg, const AdvTrainConfig* adv, const TrainHooks& hooks) {
  cfg.validate();
  if (adv) adv->validate();
  if (train.empty()) throw std::invalid_argument("train: empty training set");
  std::mt19937_64 rng(cfg.seed);
  std::mt19937_64 attack_rng(cfg.seed ^ 0xadadadadULL);
  Optimizer<T> opt(cfg, model.parameters());
  auto params = model.parameters();
  TrainResult<T> result;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = cfg.lr_at(epoch);
    double loss_sum = 0;
    long correct = 0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), s + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + s, e - s);
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(train.labels[i]);
      nn::Tensor<T> px = pixel_batch<T>(train, idx, cfg.augment_flip, &rng);
      if (adv) px = adversarial_pixel_batch(model, px, labels, *adv, &attack_rng);
      nn::Tensor<T> logits = model.forward(normalize_batch(px, model.norm), nn::Mode::train);
      auto ce = nn::softmax_cross_entropy(logits, labels);
      if (!std::isfinite(ce.loss))
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " (loss is not finite)");
      nn::zero_grads(params);
      model.backward(ce.grad, true);
      opt.step(lr);
      loss_sum += ce.loss * static_cast<double>(idx.size());
      correct += ce.correct;
    }
    std::vector<EpochMetrics> ms{{epoch, "train", loss_sum / static_cast<double>(train.size()),
                                  static_cast<double>(correct) / static_cast<double>(train.size())}};
    if (validation && !validation->empty()) {
      auto ev = evaluate(model, *validation);
      ms.push_back({epoch, "validation", ev.loss, ev.accuracy});
    }
    for (const auto& m : ms) {
      result.metrics.push_back(m);
      if (hooks.on_metrics) hooks.on_metrics(m);
    }
    model.meta.epochs = epoch;
    if (adv && epoch == cfg.early_checkpoint_epoch && epoch < cfg.epochs) result.early_checkpoint = model.clone();
  }
  return result;
}

}  // namespace detail

// Standard empirical-risk training. Marks the model as TTM.
template <typename T>
TrainResult<T> train_standard(ClassifierModel<T>& model, const LabeledDataset& train, const TrainConfig& cfg,
                              const LabeledDataset* validation = nullptr, const TrainHooks& hooks = {}) {
  model.meta.regime = Regime::ttm;
  model.meta.seed = cfg.seed;
  return detail::train_loop<T>(model, train, validation, cfg, nullptr, hooks);
}

// Min-max training: every optimizer step consumes a batch perturbed against
// the current parameters. Marks the model as ATM.
template <typename T>
TrainResult<T> train_adversarial(ClassifierModel<T>& model, const LabeledDataset& train, const TrainConfig& cfg,
                                 const AdvTrainConfig& adv, const LabeledDataset* validation = nullptr,
                                 const TrainHooks& hooks = {}) {
  model.meta.regime = Regime::atm;
  model.meta.seed = cfg.seed;
  return detail::train_loop<T>(model, train, validation, cfg, &adv, hooks);
}

}  // namespace mivb
