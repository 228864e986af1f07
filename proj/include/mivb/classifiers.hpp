#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mivb/errors.hpp"
#include "mivb/image.hpp"
#include "mivb/nn/layers.hpp"
#include "mivb/nn/loss.hpp"
#include "mivb/nn/serialize.hpp"

namespace mivb {

enum class Family { vgg16_style, wide_resnet, small_cnn, linear };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::vgg16_style: return "vgg16_style";
    case Family::wide_resnet: return "wide_resnet";
    case Family::small_cnn: return "small_cnn";
    case Family::linear: return "linear";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  if (s == "vgg16_style") return Family::vgg16_style;
  if (s == "wide_resnet") return Family::wide_resnet;
  if (s == "small_cnn") return Family::small_cnn;
  if (s == "linear") return Family::linear;
  throw ConfigError("unknown architecture family: " + s);
}

// small_cnn (conv-conv-linear) and linear are compact families used for
// oracle tests; the benchmark models are vgg16_style and wide_resnet.
struct ArchitectureConfig {
  Family family = Family::wide_resnet;
  int depth = 16;  // wide_resnet: 6n + 4
  int width = 2;   // wide_resnet width factor; small_cnn base channels
  int input_size = 32;
  int channels = 3;
  int num_classes = 10;
  double dropout = 0.0;
  int vgg_channel_divisor = 1;  // shrinks every VGG layer for desk runs
  bool vgg_batchnorm = true;

  void validate() const {
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (channels < 1) throw ConfigError("channels must be >= 1");
    if (input_size < (family == Family::linear ? 1 : 4)) throw ConfigError("input size too small for " + to_string(family));
    if (width < 1) throw ConfigError("width must be >= 1");
    if (family == Family::wide_resnet && (depth < 10 || (depth - 4) % 6 != 0))
      throw ConfigError("wide_resnet depth must be 6n+4 with n >= 1, got " + std::to_string(depth));
    if (family == Family::vgg16_style && (vgg_channel_divisor < 1 || 64 % vgg_channel_divisor != 0))
      throw ConfigError("vgg_channel_divisor must divide 64");
    if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must be in [0, 1)");
  }

  // Width of the pooled final-convolution feature vector.
  int feature_dim() const {
    switch (family) {
      case Family::wide_resnet: return 64 * width;
      case Family::vgg16_style: return 512 / vgg_channel_divisor;
      case Family::small_cnn: return 2 * width;
      case Family::linear: return input_size * input_size * channels;
    }
    return 0;
  }
};

inline void to_json(nlohmann::json& j, const ArchitectureConfig& a) {
  j = {{"family", to_string(a.family)}, {"depth", a.depth}, {"width", a.width}, {"input_size", a.input_size},
       {"channels", a.channels}, {"num_classes", a.num_classes}, {"dropout", a.dropout},
       {"vgg_channel_divisor", a.vgg_channel_divisor}, {"vgg_batchnorm", a.vgg_batchnorm}};
}

inline void from_json(const nlohmann::json& j, ArchitectureConfig& a) {
  a = ArchitectureConfig{};
  a.family = family_from_string(j.value("family", std::string("wide_resnet")));
  a.depth = j.value("depth", a.depth);
  a.width = j.value("width", a.width);
  a.input_size = j.value("input_size", a.input_size);
  a.channels = j.value("channels", a.channels);
  a.num_classes = j.value("num_classes", a.num_classes);
  a.dropout = j.value("dropout", a.dropout);
  a.vgg_channel_divisor = j.value("vgg_channel_divisor", a.vgg_channel_divisor);
  a.vgg_batchnorm = j.value("vgg_batchnorm", a.vgg_batchnorm);
}

inline void to_json(nlohmann::json& j, const NormalizationSpec& n) { j = {{"mean", n.mean}, {"std", n.stddev}}; }
inline void from_json(const nlohmann::json& j, NormalizationSpec& n) {
  n.mean = j.at("mean").get<std::vector<double>>();
  n.stddev = j.at("std").get<std::vector<double>>();
}

enum class Regime { ttm, atm };
inline std::string to_string(Regime r) { return r == Regime::ttm ? "TTM" : "ATM"; }
inline Regime regime_from_string(const std::string& s) {
  if (s == "TTM") return Regime::ttm;
  if (s == "ATM") return Regime::atm;
  throw ConfigError("unknown training regime: " + s);
}

struct ModelMetadata {
  Regime regime = Regime::ttm;
  int epochs = 0;
  std::uint64_t seed = 0;
};

// Per-channel CIFAR-10 training statistics in pixel units.
inline NormalizationSpec cifar_normalization() {
  return {{125.3, 123.0, 113.9}, {63.0, 62.1, 66.7}};
}

// A differentiable image classifier split into `features` (ending in the
// global spatial pooling of the last convolution block) and `head` (the
// classifier layers). Layers cache activations between forward and backward,
// so one instance must not be used from two threads at once; use clone() to
// give each worker its own copy.
template <typename T = float>
class ClassifierModel {
 public:
  ArchitectureConfig arch;
  NormalizationSpec norm;
  ModelMetadata meta;
  nn::Sequential<T> features;
  nn::Sequential<T> head;

  ClassifierModel clone() const { return *this; }

  nn::Tensor<T> forward(const nn::Tensor<T>& x, nn::Mode mode) {
    ++queries_;
    return head.forward(features.forward(x, mode), mode);
  }

  // Returns the gradient w.r.t. the normalized input.
  nn::Tensor<T> backward(const nn::Tensor<T>& grad_logits, bool param_grads) {
    return features.backward(head.backward(grad_logits, param_grads), param_grads);
  }

  std::vector<nn::Parameter<T>*> parameters() {
    auto p = features.parameters();
    for (auto* q : head.parameters()) p.push_back(q);
    return p;
  }

  std::vector<nn::Tensor<T>*> buffers() {
    auto b = features.buffers();
    for (auto* q : head.buffers()) b.push_back(q);
    return b;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value.size();
    return n;
  }

  // Pre-softmax logits in evaluation mode, one row per image.
  nn::Tensor<T> forward_logits(std::span<const ImageTensor> images) {
    check_images(images);
    return forward(to_model_batch<T>(images, norm), nn::Mode::eval);
  }
  nn::Tensor<T> forward_logits(const ImageTensor& image) { return forward_logits(std::span<const ImageTensor>(&image, 1)); }

  int predict(const ImageTensor& image) { return nn::argmax_row(forward_logits(image), 0); }

  T class_activation(const ImageTensor& image, int class_id) {
    check_class(class_id);
    return forward_logits(image)[static_cast<std::size_t>(class_id)];
  }

  struct ActivationGradient {
    T activation;
    PixelArray<T> gradient;  // pixel units
    int predicted;
  };

  // d(logit[class_id]) / d(pixels) through the normalization.
  ActivationGradient activation_gradient(const ImageTensor& image, int class_id) {
    check_class(class_id);
    const ImageTensor* one = &image;
    check_images(std::span<const ImageTensor>(one, 1));
    nn::Tensor<T> logits = forward(to_model_batch<T>(std::span<const ImageTensor>(one, 1), norm), nn::Mode::eval);
    nn::Tensor<T> g(1, logits.c(), 1, 1);
    g[static_cast<std::size_t>(class_id)] = T(1);
    nn::Tensor<T> gin = backward(g, false);
    return {logits[static_cast<std::size_t>(class_id)], model_grad_to_pixels(gin, 0, norm), nn::argmax_row(logits, 0)};
  }

  PixelArray<T> input_gradient(const ImageTensor& image, int class_id) {
    return activation_gradient(image, class_id).gradient;
  }

  // Pooled output of the last convolutional block.
  std::vector<T> penultimate_features(const ImageTensor& image) {
    return penultimate_features(std::span<const ImageTensor>(&image, 1)).front();
  }

  std::vector<std::vector<T>> penultimate_features(std::span<const ImageTensor> images) {
    check_images(images);
    ++queries_;
    nn::Tensor<T> f = features.forward(to_model_batch<T>(images, norm), nn::Mode::eval);
    std::vector<std::vector<T>> out(images.size());
    for (int b = 0; b < f.n(); ++b) out[b].assign(f.sample(b), f.sample(b) + f.sample_size());
    return out;
  }

  // Count of forward passes since construction; lets callers prove a model was never queried.
  std::uint64_t query_count() const { return queries_; }

 private:
  void check_class(int c) const {
    if (c < 0 || c >= arch.num_classes)
      throw std::out_of_range("class id " + std::to_string(c) + " outside [0, " + std::to_string(arch.num_classes) + ")");
  }
  void check_images(std::span<const ImageTensor> images) const {
    for (const auto& img : images)
      if (img.channels() != arch.channels) throw std::invalid_argument("image channel count does not match model");
  }

  std::uint64_t queries_ = 0;
};

namespace detail {

template <typename T>
void build_wide_resnet(ClassifierModel<T>& m, std::mt19937_64& rng) {
  const auto& a = m.arch;
  const int n = (a.depth - 4) / 6;
  const int widths[4] = {16, 16 * a.width, 32 * a.width, 64 * a.width};
  m.features.add(std::make_unique<nn::Conv2d<T>>(a.channels, widths[0], 3, 1, 1, false, rng));
  int in = widths[0];
  for (int g = 0; g < 3; ++g)
    for (int b = 0; b < n; ++b) {
      const int stride = (b == 0 && g > 0) ? 2 : 1;
      m.features.add(std::make_unique<nn::WideBasicBlock<T>>(in, widths[g + 1], stride, a.dropout, rng));
      in = widths[g + 1];
    }
  m.features.add(std::make_unique<nn::BatchNorm2d<T>>(in));
  m.features.add(nn::make_relu<T>());
  m.features.add(std::make_unique<nn::GlobalAvgPool<T>>());
  m.head.add(std::make_unique<nn::Linear<T>>(in, a.num_classes, rng));
}

// VGG16 convolution stack; pooling stops once the map is 1x1. Two fully
// connected layers replace the ImageNet head.
template <typename T>
void build_vgg16(ClassifierModel<T>& m, std::mt19937_64& rng) {
  const auto& a = m.arch;
  constexpr int kPool = 0;
  const int plan[] = {64, 64, kPool, 128, 128, kPool, 256, 256, 256, kPool, 512, 512, 512, kPool, 512, 512, 512, kPool};
  int in = a.channels, side = a.input_size;
  for (int v : plan) {
    if (v == kPool) {
      if (side >= 2) {
        m.features.add(std::make_unique<nn::MaxPool2d<T>>());
        side /= 2;
      }
      continue;
    }
    const int out = v / a.vgg_channel_divisor;
    m.features.add(std::make_unique<nn::Conv2d<T>>(in, out, 3, 1, 1, !a.vgg_batchnorm, rng));
    if (a.vgg_batchnorm) m.features.add(std::make_unique<nn::BatchNorm2d<T>>(out));
    m.features.add(nn::make_relu<T>());
    in = out;
  }
  m.features.add(std::make_unique<nn::GlobalAvgPool<T>>());
  m.head.add(std::make_unique<nn::Linear<T>>(in, in, rng, std::sqrt(2.0)));
  m.head.add(nn::make_relu<T>());
  if (a.dropout > 0) m.head.add(std::make_unique<nn::Dropout<T>>(a.dropout, rng()));
  m.head.add(std::make_unique<nn::Linear<T>>(in, a.num_classes, rng));
}

template <typename T>
void build_small_cnn(ClassifierModel<T>& m, std::mt19937_64& rng) {
  const auto& a = m.arch;
  m.features.add(std::make_unique<nn::Conv2d<T>>(a.channels, a.width, 3, 1, 1, true, rng));
  m.features.add(nn::make_relu<T>());
  m.features.add(std::make_unique<nn::Conv2d<T>>(a.width, 2 * a.width, 3, 2, 1, true, rng));
  m.features.add(nn::make_relu<T>());
  m.features.add(std::make_unique<nn::GlobalAvgPool<T>>());
  m.head.add(std::make_unique<nn::Linear<T>>(2 * a.width, a.num_classes, rng));
}

}  // namespace detail

template <typename T = float>
ClassifierModel<T> build_model(const ArchitectureConfig& cfg, std::uint64_t seed,
                               NormalizationSpec norm = cifar_normalization()) {
  cfg.validate();
  if (static_cast<int>(norm.mean.size()) != cfg.channels) norm = NormalizationSpec::symmetric(cfg.channels);
  norm.validate(cfg.channels);
  ClassifierModel<T> m;
  m.arch = cfg;
  m.norm = std::move(norm);
  m.meta.seed = seed;
  std::mt19937_64 rng(seed);
  switch (cfg.family) {
    case Family::wide_resnet: detail::build_wide_resnet(m, rng); break;
    case Family::vgg16_style: detail::build_vgg16(m, rng); break;
    case Family::small_cnn: detail::build_small_cnn(m, rng); break;
    case Family::linear:
      m.head.add(std::make_unique<nn::Linear<T>>(cfg.feature_dim(), cfg.num_classes, rng));
      break;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoints

template <typename T>
nlohmann::json checkpoint_header(ClassifierModel<T>& m) {
  return {{"kind", "classifier"},
          {"architecture", m.arch},
          {"normalization", m.norm},
          {"regime", to_string(m.meta.regime)},
          {"epochs", m.meta.epochs},
          {"seed", m.meta.seed},
          {"parameter_count", m.parameter_count()}};
}

template <typename T>
std::vector<nn::Tensor<T>*> state_tensors(ClassifierModel<T>& m) {
  std::vector<nn::Tensor<T>*> out;
  for (auto* p : m.parameters()) out.push_back(&p->value);
  for (auto* b : m.buffers()) out.push_back(b);
  return out;
}

template <typename T>
void save_checkpoint(ClassifierModel<T>& m, const std::filesystem::path& path) {
  auto ts = state_tensors(m);
  nn::write_checkpoint_file<T>(path, checkpoint_header(m), std::vector<const nn::Tensor<T>*>(ts.begin(), ts.end()));
}

template <typename T = float>
ClassifierModel<T> load_checkpoint(const std::filesystem::path& path) {
  auto r = nn::read_checkpoint_file(path);
  if (r.header.value("kind", std::string()) != "classifier") throw IoError("not a classifier checkpoint: " + path.string());
  auto arch = r.header.at("architecture").get<ArchitectureConfig>();
  auto norm = r.header.at("normalization").get<NormalizationSpec>();
  const auto seed = r.header.at("seed").get<std::uint64_t>();
  ClassifierModel<T> m = build_model<T>(arch, seed, norm);
  m.meta.regime = regime_from_string(r.header.at("regime").get<std::string>());
  m.meta.epochs = r.header.at("epochs").get<int>();
  nn::assign_tensors(r, state_tensors(m), path.string());
  return m;
}

}  // namespace mivb
