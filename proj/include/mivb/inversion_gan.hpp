#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "mivb/classifiers.hpp"
#include "mivb/dataset.hpp"
#include "mivb/errors.hpp"
#include "mivb/image.hpp"
#include "mivb/nn/layers.hpp"
#include "mivb/nn/loss.hpp"
#include "mivb/nn/optim.hpp"
#include "mivb/nn/serialize.hpp"
#include "mivb/training.hpp"

namespace mivb {

// Shapes of the generator and discriminator. Widths follow a ladder: the
// generator starts at gen_width * 2^(upsamplings) channels and halves at each
// upsampling; the discriminator starts at disc_width and doubles at each
// downsampling.
struct GanNetSpec {
  int noise_dim = 100;
  int num_classes = 10;
  int image_size = 32;
  int channels = 3;
  int gen_layers = 7;
  int disc_blocks = 7;
  int gen_width = 32;
  int disc_width = 32;
  bool gen_batchnorm = true;
  double leaky_slope = 0.2;
  double disc_dropout = 0.5;

  int upsamplings() const { return static_cast<int>(std::lround(std::log2(image_size / 4.0))); }
  int downsamplings() const { return upsamplings(); }

  void validate() const {
    if (noise_dim < 0 || num_classes < 1 || channels < 1) throw ConfigError("bad GAN input sizes");
    if (image_size < 4 || (4 << upsamplings()) != image_size)
      throw ConfigError("GAN image size must be 4 * 2^k, got " + std::to_string(image_size));
    if (gen_layers < 1 + upsamplings()) throw ConfigError("too few generator layers for the image size");
    if (disc_blocks < downsamplings()) throw ConfigError("too few discriminator blocks for the image size");
    if (gen_width < 1 || disc_width < 1) throw ConfigError("GAN widths must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const GanNetSpec& s) {
  j = {{"noise_dim", s.noise_dim},     {"num_classes", s.num_classes},   {"image_size", s.image_size},
       {"channels", s.channels},       {"gen_layers", s.gen_layers},     {"disc_blocks", s.disc_blocks},
       {"gen_width", s.gen_width},     {"disc_width", s.disc_width},     {"gen_batchnorm", s.gen_batchnorm},
       {"leaky_slope", s.leaky_slope}, {"disc_dropout", s.disc_dropout}};
}

inline void from_json(const nlohmann::json& j, GanNetSpec& s) {
  GanNetSpec d;
  s.noise_dim = j.value("noise_dim", d.noise_dim);
  s.num_classes = j.value("num_classes", d.num_classes);
  s.image_size = j.value("image_size", d.image_size);
  s.channels = j.value("channels", d.channels);
  s.gen_layers = j.value("gen_layers", d.gen_layers);
  s.disc_blocks = j.value("disc_blocks", d.disc_blocks);
  s.gen_width = j.value("gen_width", d.gen_width);
  s.disc_width = j.value("disc_width", d.disc_width);
  s.gen_batchnorm = j.value("gen_batchnorm", d.gen_batchnorm);
  s.leaky_slope = j.value("leaky_slope", d.leaky_slope);
  s.disc_dropout = j.value("disc_dropout", d.disc_dropout);
}

// Class-conditional generator: [one-hot label, noise] as a 1x1 map, then
// transpose convolutions. The first lifts 1x1 to 4x4, the next ones double
// the resolution, the remainder keep it. Every layer but the last is
// followed by a ReLU; the last is mapped into [0, 255] by 127.5 (tanh + 1).
template <typename T = float>
class Generator {
 public:
  GanNetSpec spec;
  nn::Sequential<T> net;

  Generator() = default;
  Generator(const GanNetSpec& s, std::uint64_t seed) : spec(s) {
    spec.validate();
    std::mt19937_64 rng(seed);
    const int up = spec.upsamplings();
    int ch = spec.gen_width << up;
    int in = spec.num_classes + spec.noise_dim;
    for (int i = 0; i < spec.gen_layers; ++i) {
      const bool last = i + 1 == spec.gen_layers;
      int out;
      if (last)
        out = spec.channels;
      else if (i >= 1 && i <= up)
        out = std::max(spec.gen_width, ch >>= 1);
      else
        out = ch;
      if (i == 0)
        net.add(std::make_unique<nn::ConvTranspose2d<T>>(in, out, 4, 1, 0, !spec.gen_batchnorm || last, rng));
      else if (i <= up)
        net.add(std::make_unique<nn::ConvTranspose2d<T>>(in, out, 4, 2, 1, !spec.gen_batchnorm || last, rng));
      else
        net.add(std::make_unique<nn::ConvTranspose2d<T>>(in, out, 3, 1, 1, !spec.gen_batchnorm || last, rng));
      if (last) {
        net.add(std::make_unique<nn::TanhToPixels<T>>());
      } else {
        if (spec.gen_batchnorm) net.add(std::make_unique<nn::BatchNorm2d<T>>(out));
        net.add(nn::make_relu<T>());
      }
      in = out;
    }
  }

  // (n, classes + noise, 1, 1) -> (n, channels, size, size) pixels.
  nn::Tensor<T> forward(const nn::Tensor<T>& z, nn::Mode mode) { return net.forward(z, mode); }
  nn::Tensor<T> backward(const nn::Tensor<T>& g, bool param_grads) { return net.backward(g, param_grads); }
  std::vector<nn::Parameter<T>*> parameters() { return net.parameters(); }
  std::vector<nn::Tensor<T>*> buffers() { return net.buffers(); }

  nn::Tensor<T> make_input(std::span<const int> labels, std::mt19937_64& rng) const {
    nn::Tensor<T> z(static_cast<int>(labels.size()), spec.num_classes + spec.noise_dim, 1, 1);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (std::size_t b = 0; b < labels.size(); ++b) {
      if (labels[b] < 0 || labels[b] >= spec.num_classes) throw std::out_of_range("generator label out of range");
      T* p = z.sample(static_cast<int>(b));
      p[labels[b]] = T(1);
      for (int k = 0; k < spec.noise_dim; ++k) p[spec.num_classes + k] = static_cast<T>(nd(rng));
    }
    return z;
  }
};

// Blocks of {5x5 conv, batch norm, leaky ReLU, dropout}; strided until the
// map is 4x4. Two linear heads on the flattened trunk output: a real/fake
// score and class logits. Inputs are pixels, rescaled to [-1, 1] internally.
template <typename T = float>
class Discriminator {
 public:
  GanNetSpec spec;
  nn::Sequential<T> trunk;
  nn::Sequential<T> realfake;
  nn::Sequential<T> classes;

  Discriminator() = default;
  Discriminator(const GanNetSpec& s, std::uint64_t seed) : spec(s) {
    spec.validate();
    std::mt19937_64 rng(seed);
    const int down = spec.downsamplings();
    int in = spec.channels, ch = spec.disc_width;
    for (int i = 0; i < spec.disc_blocks; ++i) {
      const bool strided = i < down;
      if (strided && i > 0) ch *= 2;
      trunk.add(std::make_unique<nn::Conv2d<T>>(in, ch, 5, strided ? 2 : 1, 2, false, rng));
      trunk.add(std::make_unique<nn::BatchNorm2d<T>>(ch));
      trunk.add(std::make_unique<nn::LeakyReLU<T>>(spec.leaky_slope));
      trunk.add(std::make_unique<nn::Dropout<T>>(spec.disc_dropout, seed + 1000 + static_cast<std::uint64_t>(i)));
      in = ch;
    }
    const int feat = ch * 16;
    realfake.add(std::make_unique<nn::Linear<T>>(feat, 1, rng));
    classes.add(std::make_unique<nn::Linear<T>>(feat, spec.num_classes, rng));
  }

  struct Output {
    nn::Tensor<T> score;   // (n, 1, 1, 1)
    nn::Tensor<T> logits;  // (n, classes, 1, 1)
  };

  Output forward(const nn::Tensor<T>& pixels, nn::Mode mode) {
    nn::Tensor<T> x = pixels;
    for (auto& v : x.storage()) v = v / T(127.5) - T(1);
    nn::Tensor<T> f = trunk.forward(x, mode);
    return {realfake.forward(f, mode), classes.forward(f, mode)};
  }

  // Gradient w.r.t. the pixel input.
  nn::Tensor<T> backward(const nn::Tensor<T>& g_score, const nn::Tensor<T>& g_logits, bool param_grads) {
    nn::Tensor<T> gf = realfake.backward(g_score, param_grads);
    gf += classes.backward(g_logits, param_grads);
    nn::Tensor<T> gx = trunk.backward(gf, param_grads);
    gx *= T(1.0 / 127.5);
    return gx;
  }

  std::vector<nn::Parameter<T>*> parameters() {
    auto p = trunk.parameters();
    for (auto* q : realfake.parameters()) p.push_back(q);
    for (auto* q : classes.parameters()) p.push_back(q);
    return p;
  }
  std::vector<nn::Tensor<T>*> buffers() { return trunk.buffers(); }
};

struct GanInversionConfig {
  GanNetSpec nets;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 64;
  int epochs = 25;
  double lambda_c = 1.0;
  std::uint64_t seed = 0;
  int sample_every = 1;  // epochs between sample-grid callbacks; 0 disables

  void validate() const {
    nets.validate();
    if (!(lr > 0)) throw ConfigError("GAN lr must be > 0");
    if (batch_size < 1 || epochs < 0) throw ConfigError("bad GAN batch size or epochs");
    if (!(lambda_c >= 0)) throw ConfigError("lambda_c must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const GanInversionConfig& c) {
  j = {{"nets", c.nets},  {"lr", c.lr},         {"beta1", c.beta1},       {"beta2", c.beta2},
       {"batch_size", c.batch_size}, {"epochs", c.epochs}, {"lambda_c", c.lambda_c}, {"seed", c.seed},
       {"sample_every", c.sample_every}};
}

inline void from_json(const nlohmann::json& j, GanInversionConfig& c) {
  GanInversionConfig d;
  if (j.contains("nets")) c.nets = j["nets"].get<GanNetSpec>();
  c.lr = j.value("lr", d.lr);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.lambda_c = j.value("lambda_c", d.lambda_c);
  c.seed = j.value("seed", d.seed);
  c.sample_every = j.value("sample_every", d.sample_every);
}

// Generator, discriminator and their optimizers. The optimizers hold
// pointers into the networks, so the state is pinned in memory.
template <typename T = float>
struct GanState {
  Generator<T> gen;
  Discriminator<T> disc;
  nn::Adam<T> gen_opt;
  nn::Adam<T> disc_opt;
  double lr;

  GanState(const GanInversionConfig& cfg)
      : gen(cfg.nets, cfg.seed * 2 + 1),
        disc(cfg.nets, cfg.seed * 2 + 2),
        gen_opt(gen.parameters(), cfg.beta1, cfg.beta2),
        disc_opt(disc.parameters(), cfg.beta1, cfg.beta2),
        lr(cfg.lr) {}
  GanState(const GanState&) = delete;
  GanState& operator=(const GanState&) = delete;
};

struct DiscriminatorLosses {
  double realfake = 0;
  double classification = 0;  // real images only
  double realfake_accuracy = 0;
};

struct GeneratorLosses {
  double adversarial = 0;              // BCE of D's score against "real"
  double target_class = 0;             // target-model CE against the conditioning labels
  bool target_queried = false;
  double target_confidence = 0;        // mean softmax prob of the conditioning class
};

// Mean softmax probability of each row's label.
template <typename T>
double mean_class_confidence(const nn::Tensor<T>& logits, std::span<const int> labels) {
  double s = 0;
  const int k = logits.c();
  for (int b = 0; b < logits.n(); ++b) {
    const T* p = logits.sample(b);
    const double m = *std::max_element(p, p + k);
    double z = 0;
    for (int i = 0; i < k; ++i) z += std::exp(p[i] - m);
    s += std::exp(p[labels[b]] - m) / z;
  }
  return logits.n() ? s / logits.n() : 0.0;
}

// Discriminator update on a batch of real shadow images and generated images.
// The class loss covers only the real rows, so fake_labels cannot influence
// the update; the parameter is accepted to make that checkable.
template <typename T>
DiscriminatorLosses discriminator_step(GanState<T>& st, const nn::Tensor<T>& real_px, std::span<const int> real_labels,
                                       const nn::Tensor<T>& fake_px, std::span<const int> fake_labels) {
  (void)fake_labels;
  const int nr = real_px.n(), nf = fake_px.n();
  if (nr == 0 || nf == 0) throw std::invalid_argument("discriminator_step: empty batch");
  if (static_cast<int>(real_labels.size()) != nr) throw std::invalid_argument("discriminator_step: label count");
  auto x = nn::concat_batch(real_px, fake_px);
  nn::zero_grads(st.disc.parameters());
  auto out = st.disc.forward(x, nn::Mode::train);

  std::vector<T> targets(static_cast<std::size_t>(nr + nf), T(0));
  std::fill(targets.begin(), targets.begin() + nr, T(1));
  auto rf = nn::bce_with_logits<T>(out.score, targets);

  nn::Tensor<T> real_logits(nr, out.logits.c(), 1, 1);
  std::copy(out.logits.data(), out.logits.data() + real_logits.size(), real_logits.data());
  auto ce = nn::softmax_cross_entropy(real_logits, real_labels);
  nn::Tensor<T> g_logits(nr + nf, out.logits.c(), 1, 1);
  std::copy(ce.grad.data(), ce.grad.data() + ce.grad.size(), g_logits.data());

  st.disc.backward(rf.grad, g_logits, true);
  st.disc_opt.step(st.lr);
  return {rf.loss, ce.loss, static_cast<double>(rf.correct) / (nr + nf)};
}

// Generator update: fool the discriminator plus lambda_c times the frozen
// target model's cross-entropy on the conditioning labels. The target is run
// in evaluation mode without parameter gradients and is not touched at all
// when lambda_c is zero.
template <typename T>
GeneratorLosses generator_step(GanState<T>& st, ClassifierModel<T>& target, const nn::Tensor<T>& z,
                               std::span<const int> labels, double lambda_c) {
  if (z.n() == 0) throw std::invalid_argument("generator_step: empty batch");
  nn::zero_grads(st.gen.parameters());
  nn::Tensor<T> fake = st.gen.forward(z, nn::Mode::train);
  auto out = st.disc.forward(fake, nn::Mode::train);
  std::vector<T> ones(static_cast<std::size_t>(z.n()), T(1));
  auto adv = nn::bce_with_logits<T>(out.score, ones);
  nn::Tensor<T> g_fake = st.disc.backward(adv.grad, nn::Tensor<T>(z.n(), out.logits.c(), 1, 1), false);

  GeneratorLosses r;
  r.adversarial = adv.loss;
  if (lambda_c > 0) {
    nn::Tensor<T> logits = target.forward(normalize_batch(fake, target.norm), nn::Mode::eval);
    auto ce = nn::softmax_cross_entropy(logits, labels);
    ce.grad *= static_cast<T>(lambda_c);
    nn::Tensor<T> g_t = target.backward(ce.grad, false);
    model_grad_to_pixel_units(g_t, target.norm);
    g_fake += g_t;
    r.target_class = ce.loss;
    r.target_queried = true;
    r.target_confidence = mean_class_confidence(logits, labels);
  }
  st.gen.backward(g_fake, true);
  st.gen_opt.step(st.lr);
  return r;
}

struct GanEpochLosses {
  int epoch = 0;
  double d_realfake = 0;
  double d_class = 0;
  double d_accuracy = 0;
  double g_adversarial = 0;
  double g_target_class = 0;
};

inline void to_json(nlohmann::json& j, const GanEpochLosses& e) {
  j = {{"epoch", e.epoch},           {"d_realfake", e.d_realfake},       {"d_class", e.d_class},
       {"d_accuracy", e.d_accuracy}, {"g_adversarial", e.g_adversarial}, {"g_target_class", e.g_target_class}};
}

template <typename T = float>
struct GanTrainResult {
  std::unique_ptr<GanState<T>> state;
  std::vector<GanEpochLosses> curve;
};

template <typename T = float>
struct GanHooks {
  std::function<void(const GanEpochLosses&)> on_epoch;
  std::function<void(int epoch, Generator<T>&)> on_samples;
};

// Alternating discriminator / generator updates over the shadow data.
template <typename T>
GanTrainResult<T> train_inversion_gan(ClassifierModel<T>& target, const ShadowDataset& shadow,
                                      const GanInversionConfig& cfg, const GanHooks<T>& hooks = {}) {
  cfg.validate();
  const auto& ds = shadow.data;
  if (ds.images.empty()) throw std::invalid_argument("train_inversion_gan: empty shadow set");
  if (ds.images[0].height() != cfg.nets.image_size || ds.images[0].channels() != cfg.nets.channels)
    throw ConfigError("shadow images do not match the generator output shape");
  if (cfg.nets.num_classes != target.arch.num_classes) throw ConfigError("GAN and target class counts differ");

  GanTrainResult<T> res;
  res.state = std::make_unique<GanState<T>>(cfg);
  auto& st = *res.state;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> cls(0, cfg.nets.num_classes - 1);
  std::vector<std::size_t> order(ds.images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    GanEpochLosses e;
    e.epoch = epoch;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::span<const std::size_t> idx(order.data() + start, end - start);
      if (idx.size() < 2) continue;  // batch norm needs more than one sample
      nn::Tensor<T> real = pixel_batch<T>(ds, idx);
      std::vector<int> real_labels;
      for (auto i : idx) real_labels.push_back(ds.labels[i]);
      std::vector<int> fake_labels(idx.size());
      for (auto& l : fake_labels) l = cls(rng);
      nn::Tensor<T> z = st.gen.make_input(fake_labels, rng);
      nn::Tensor<T> fake = st.gen.forward(z, nn::Mode::train);

      auto dl = discriminator_step(st, real, real_labels, fake, fake_labels);
      auto gl = generator_step(st, target, z, fake_labels, cfg.lambda_c);
      if (!std::isfinite(dl.realfake) || !std::isfinite(dl.classification) || !std::isfinite(gl.adversarial) ||
          !std::isfinite(gl.target_class))
        throw DivergenceError("GAN training diverged at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batches));
      e.d_realfake += dl.realfake;
      e.d_class += dl.classification;
      e.d_accuracy += dl.realfake_accuracy;
      e.g_adversarial += gl.adversarial;
      e.g_target_class += gl.target_class;
      ++batches;
    }
    if (batches) {
      e.d_realfake /= batches;
      e.d_class /= batches;
      e.d_accuracy /= batches;
      e.g_adversarial /= batches;
      e.g_target_class /= batches;
    }
    res.curve.push_back(e);
    if (hooks.on_epoch) hooks.on_epoch(e);
    if (hooks.on_samples && cfg.sample_every > 0 && (epoch % cfg.sample_every == 0 || epoch == cfg.epochs))
      hooks.on_samples(epoch, st.gen);
  }
  return res;
}

// n images conditioned on class_id, deterministic in seed (evaluation mode).
template <typename T>
std::vector<ImageTensor> generate_samples(Generator<T>& gen, int class_id, int n, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("generate_samples: negative count");
  if (n == 0) return {};
  std::mt19937_64 rng(seed);
  std::vector<int> labels(static_cast<std::size_t>(n), class_id);
  return images_from_pixel_batch(gen.forward(gen.make_input(labels, rng), nn::Mode::eval));
}

template <typename T>
void save_generator(Generator<T>& gen, const std::filesystem::path& path) {
  std::vector<const nn::Tensor<T>*> ts;
  for (auto* p : gen.parameters()) ts.push_back(&p->value);
  for (auto* b : gen.buffers()) ts.push_back(b);
  nn::write_checkpoint_file<T>(path, {{"kind", "generator"}, {"nets", gen.spec}}, ts);
}

template <typename T = float>
Generator<T> load_generator(const std::filesystem::path& path) {
  auto r = nn::read_checkpoint_file(path);
  if (r.header.value("kind", std::string()) != "generator") throw IoError("not a generator checkpoint: " + path.string());
  Generator<T> gen(r.header.at("nets").get<GanNetSpec>(), 0);
  std::vector<nn::Tensor<T>*> ts;
  for (auto* p : gen.parameters()) ts.push_back(&p->value);
  for (auto* b : gen.buffers()) ts.push_back(b);
  nn::assign_tensors(r, ts, path.string());
  return gen;
}

}  // namespace mivb
