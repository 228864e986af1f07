#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mivb/classifiers.hpp"
#include "mivb/dataset.hpp"
#include "mivb/errors.hpp"
#include "mivb/image.hpp"
#include "mivb/training.hpp"

namespace mivb {

// ---------------------------------------------------------------------------
// Nearest training image in feature space

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) return 0.0;
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

// Penultimate features of a reference set, computed once and kept immutable.
struct FeatureCache {
  std::string model_id;
  std::vector<std::vector<double>> features;

  std::size_t size() const { return features.size(); }
};

template <typename T>
std::vector<double> feature_vector(ClassifierModel<T>& model, const ImageTensor& img) {
  auto f = model.penultimate_features(img);
  return {f.begin(), f.end()};
}

template <typename T>
FeatureCache build_feature_cache(ClassifierModel<T>& model, std::span<const ImageTensor> images,
                                 const std::string& model_id = {}, std::size_t batch = 100) {
  FeatureCache c;
  c.model_id = model_id;
  c.features.reserve(images.size());
  for (std::size_t s = 0; s < images.size(); s += batch) {
    const std::size_t n = std::min(batch, images.size() - s);
    for (auto& f : model.penultimate_features(images.subspan(s, n))) c.features.emplace_back(f.begin(), f.end());
  }
  return c;
}

struct NearestNeighbor {
  std::size_t index = 0;
  double similarity = 0;
};

// Highest cosine similarity; the first (lowest) index wins ties.
inline NearestNeighbor nearest_by_cosine(std::span<const double> query, const FeatureCache& cache) {
  if (cache.features.empty()) throw std::invalid_argument("feature_cosine_nn: empty reference set");
  NearestNeighbor best{0, -std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < cache.features.size(); ++i) {
    const double s = cosine_similarity(query, cache.features[i]);
    if (s > best.similarity) best = {i, s};
  }
  return best;
}

template <typename T>
NearestNeighbor feature_cosine_nn(ClassifierModel<T>& model, const ImageTensor& recon, const FeatureCache& cache) {
  if (cache.features.empty()) throw std::invalid_argument("feature_cosine_nn: empty reference set");
  return nearest_by_cosine(feature_vector(model, recon), cache);
}

template <typename T>
NearestNeighbor feature_cosine_nn(ClassifierModel<T>& model, const ImageTensor& recon,
                                  std::span<const ImageTensor> train_set) {
  if (train_set.empty()) throw std::invalid_argument("feature_cosine_nn: empty reference set");
  return feature_cosine_nn(model, recon, build_feature_cache(model, train_set));
}

// Raw Euclidean distance over all pixels, 0-255 units.
inline double privacy_loss_l2(const ImageTensor& recon, const ImageTensor& nearest) {
  return l2_distance(recon, nearest);
}

// ---------------------------------------------------------------------------
// Adversarial radius

// Budget growth and refinement for the minimal-perturbation search. Each
// probe is an iterated sign-gradient attack with max-norm budget eps and
// step step_ratio * eps. It ascends the logit margin rather than the
// cross-entropy, whose gradient underflows to zero on confident inputs.
struct RadiusConfig {
  double initial_epsilon = 0.5;
  double growth = 2.0;
  double max_epsilon = 64.0;
  int bisection_steps = 6;
  int iterations = 10;
  double step_ratio = 0.2;
  std::size_t batch = 100;

  void validate() const {
    if (!(initial_epsilon > 0) || !(growth > 1) || !(max_epsilon >= initial_epsilon))
      throw ConfigError("bad radius budget schedule");
    if (bisection_steps < 0 || iterations < 1 || !(step_ratio > 0)) throw ConfigError("bad radius attack settings");
  }
};

inline void to_json(nlohmann::json& j, const RadiusConfig& c) {
  j = {{"initial_epsilon", c.initial_epsilon}, {"growth", c.growth}, {"max_epsilon", c.max_epsilon},
       {"bisection_steps", c.bisection_steps}, {"iterations", c.iterations}, {"step_ratio", c.step_ratio}};
}

inline void from_json(const nlohmann::json& j, RadiusConfig& c) {
  RadiusConfig d;
  c.initial_epsilon = j.value("initial_epsilon", d.initial_epsilon);
  c.growth = j.value("growth", d.growth);
  c.max_epsilon = j.value("max_epsilon", d.max_epsilon);
  c.bisection_steps = j.value("bisection_steps", d.bisection_steps);
  c.iterations = j.value("iterations", d.iterations);
  c.step_ratio = j.value("step_ratio", d.step_ratio);
}

struct RadiusSample {
  std::size_t index = 0;
  double radius_l2 = 0;
  double epsilon = 0;
  bool censored = false;  // still correctly classified at max_epsilon; radius is the max-budget perturbation
};

struct RadiusResult {
  std::vector<RadiusSample> samples;
  std::size_t skipped_misclassified = 0;
  std::size_t censored = 0;
  double mean_radius = 0;
  double median_radius = 0;
};

inline void to_json(nlohmann::json& j, const RadiusResult& r) {
  j = {{"evaluated", r.samples.size()}, {"skipped_misclassified", r.skipped_misclassified},
       {"censored", r.censored},        {"mean_radius_l2", r.mean_radius},
       {"median_radius_l2", r.median_radius}};
}

// Gradient of the margin max_{k != y} z_k - z_y w.r.t. pixels. Unlike the
// cross-entropy it does not vanish when the softmax saturates.
template <typename T>
nn::Tensor<T> margin_pixel_gradient(ClassifierModel<T>& model, const nn::Tensor<T>& px, std::span<const int> labels) {
  nn::Tensor<T> logits = model.forward(normalize_batch(px, model.norm), nn::Mode::eval);
  nn::Tensor<T> g(logits.n(), logits.c(), 1, 1);
  for (int b = 0; b < logits.n(); ++b) {
    const T* z = logits.sample(b);
    int j = labels[b] == 0 ? 1 : 0;
    for (int k = 0; k < logits.c(); ++k)
      if (k != labels[b] && z[k] > z[j]) j = k;
    g.sample(b)[j] = T(1);
    g.sample(b)[labels[b]] = T(-1);
  }
  nn::Tensor<T> gx = model.backward(g, false);
  model_grad_to_pixel_units(gx, model.norm);
  return gx;
}

// Sign-gradient attack on the logit margin where sample b has its own budget eps[b].
template <typename T>
nn::Tensor<T> sign_attack_per_sample(ClassifierModel<T>& model, const nn::Tensor<T>& clean, std::span<const int> labels,
                                     std::span<const double> eps, int iterations, double step_ratio) {
  nn::Tensor<T> x = clean;
  const std::size_t per = clean.sample_size();
  for (int it = 0; it < iterations; ++it) {
    const nn::Tensor<T> g = margin_pixel_gradient(model, x, labels);
    for (int b = 0; b < x.n(); ++b) {
      const T e = static_cast<T>(eps[b]), step = static_cast<T>(eps[b] * step_ratio);
      for (std::size_t k = b * per; k < (b + 1) * per; ++k) {
        const T lo = std::max(T(0), clean[k] - e), hi = std::min(T(255), clean[k] + e);
        x[k] = std::clamp(x[k] + step * sign_of(g[k]), lo, hi);
      }
    }
  }
  return x;
}

namespace detail {

template <typename T>
std::vector<int> batch_predictions(ClassifierModel<T>& model, const nn::Tensor<T>& px) {
  nn::Tensor<T> logits = model.forward(normalize_batch(px, model.norm), nn::Mode::eval);
  std::vector<int> out(static_cast<std::size_t>(logits.n()));
  for (int b = 0; b < logits.n(); ++b) out[b] = nn::argmax_row(logits, b);
  return out;
}

inline double sample_l2(const auto& a, const auto& b, std::size_t s, std::size_t per) {
  double acc = 0;
  for (std::size_t k = s * per; k < (s + 1) * per; ++k) {
    const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

template <typename T>
void radius_chunk(ClassifierModel<T>& model, const nn::Tensor<T>& clean, std::span<const int> labels,
                  std::span<const std::size_t> ids, const RadiusConfig& cfg, RadiusResult& out) {
  const int n = clean.n();
  const std::size_t per = clean.sample_size();
  std::vector<double> lo(n, 0.0), hi(n, 0.0), eps(n, cfg.initial_epsilon), best_l2(n, 0.0);
  std::vector<char> found(n, 0);

  auto probe = [&](const std::vector<double>& e) {
    auto adv = sign_attack_per_sample(model, clean, labels, e, cfg.iterations, cfg.step_ratio);
    return std::make_pair(adv, batch_predictions(model, adv));
  };

  // Exponential growth until every sample flips or hits the cap.
  for (;;) {
    auto [adv, pred] = probe(eps);
    bool pending = false;
    for (int b = 0; b < n; ++b) {
      if (found[b]) continue;
      if (pred[b] != labels[b]) {
        found[b] = 1;
        hi[b] = eps[b];
        best_l2[b] = sample_l2(adv, clean, b, per);
      } else {
        lo[b] = eps[b];
        best_l2[b] = sample_l2(adv, clean, b, per);
        if (eps[b] < cfg.max_epsilon) {
          eps[b] = std::min(cfg.max_epsilon, eps[b] * cfg.growth);
          pending = true;
        }
      }
    }
    if (!pending) break;
  }
  // Bisection between the last failing and first succeeding budgets.
  for (int s = 0; s < cfg.bisection_steps; ++s) {
    std::vector<double> mid(n);
    for (int b = 0; b < n; ++b) mid[b] = found[b] ? 0.5 * (lo[b] + hi[b]) : eps[b];
    auto [adv, pred] = probe(mid);
    for (int b = 0; b < n; ++b) {
      if (!found[b]) continue;
      if (pred[b] != labels[b]) {
        hi[b] = mid[b];
        best_l2[b] = sample_l2(adv, clean, b, per);
      } else {
        lo[b] = mid[b];
      }
    }
  }
  for (int b = 0; b < n; ++b) {
    RadiusSample r;
    r.index = ids[b];
    r.radius_l2 = best_l2[b];
    r.censored = !found[b];
    r.epsilon = found[b] ? hi[b] : eps[b];
    out.censored += r.censored;
    out.samples.push_back(r);
  }
}

}  // namespace detail

// Smallest L2 perturbation (found by the budget search) that changes the
// prediction, per correctly classified image. Misclassified inputs are
// skipped and counted; images that survive max_epsilon are kept as censored
// at the perturbation they received.
template <typename T>
RadiusResult adversarial_radius(ClassifierModel<T>& model, std::span<const ImageTensor> images,
                                std::span<const int> labels, const RadiusConfig& cfg) {
  cfg.validate();
  if (images.size() != labels.size()) throw std::invalid_argument("adversarial_radius: label count mismatch");
  RadiusResult res;
  std::vector<std::size_t> keep;
  for (std::size_t s = 0; s < images.size(); s += cfg.batch) {
    const std::size_t n = std::min(cfg.batch, images.size() - s);
    auto pred = detail::batch_predictions(model, pixel_batch<T>(images.subspan(s, n)));
    for (std::size_t i = 0; i < n; ++i) {
      if (pred[i] == labels[s + i])
        keep.push_back(s + i);
      else
        ++res.skipped_misclassified;
    }
  }
  for (std::size_t s = 0; s < keep.size(); s += cfg.batch) {
    const std::size_t n = std::min(cfg.batch, keep.size() - s);
    std::vector<ImageTensor> imgs;
    std::vector<int> labs;
    for (std::size_t i = 0; i < n; ++i) {
      imgs.push_back(images[keep[s + i]]);
      labs.push_back(labels[keep[s + i]]);
    }
    detail::radius_chunk(model, pixel_batch<T>(imgs), labs, std::span<const std::size_t>(keep.data() + s, n), cfg, res);
  }
  if (!res.samples.empty()) {
    std::vector<double> r;
    for (const auto& s : res.samples) r.push_back(s.radius_l2);
    double sum = 0;
    for (double v : r) sum += v;
    res.mean_radius = sum / static_cast<double>(r.size());
    std::sort(r.begin(), r.end());
    const std::size_t m = r.size() / 2;
    res.median_radius = r.size() % 2 ? r[m] : 0.5 * (r[m - 1] + r[m]);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Activation statistics

struct ActivationStats {
  double reconstruction = 0;
  double train_mean = 0;
  std::size_t train_count = 0;

  // Reconstruction activation relative to the typical training activation.
  double ratio() const { return train_mean != 0 ? reconstruction / train_mean : std::numeric_limits<double>::quiet_NaN(); }
};

template <typename T>
ActivationStats activation_statistics(ClassifierModel<T>& model, const ImageTensor& recon, const LabeledDataset& train,
                                      int class_id, std::size_t batch = 100) {
  ActivationStats st;
  st.reconstruction = model.class_activation(recon, class_id);
  const auto idx = train.indices_of_class(class_id);
  double sum = 0;
  for (std::size_t s = 0; s < idx.size(); s += batch) {
    const std::size_t n = std::min(batch, idx.size() - s);
    std::vector<ImageTensor> imgs;
    for (std::size_t i = 0; i < n; ++i) imgs.push_back(train.images[idx[s + i]]);
    auto logits = model.forward_logits(imgs);
    for (int b = 0; b < logits.n(); ++b) sum += logits.sample(b)[class_id];
  }
  st.train_count = idx.size();
  st.train_mean = idx.empty() ? 0.0 : sum / static_cast<double>(idx.size());
  return st;
}

// ---------------------------------------------------------------------------
// Reports

struct ReconstructionRecord {
  std::string model_id;
  std::string attack_id;
  std::string feature_model_id;
  int class_id = 0;
  std::uint64_t seed = 0;
  std::size_t nearest_index = 0;
  std::size_t nearest_source_index = 0;
  double similarity = 0;
  double privacy_loss_l2 = 0;
  std::optional<int> iterations_to_target;
  std::optional<double> activation;
  std::optional<double> train_activation_mean;
  std::optional<int> iterations_run;
  std::optional<double> displacement_l2;  // seeded runs
};

inline void to_json(nlohmann::json& j, const ReconstructionRecord& r) {
  j = {{"model_id", r.model_id},
       {"attack_id", r.attack_id},
       {"feature_model_id", r.feature_model_id},
       {"class_id", r.class_id},
       {"seed", r.seed},
       {"nearest_index", r.nearest_index},
       {"nearest_source_index", r.nearest_source_index},
       {"similarity", r.similarity},
       {"privacy_loss_l2", r.privacy_loss_l2},
       {"iterations_to_target", r.iterations_to_target ? nlohmann::json(*r.iterations_to_target) : nlohmann::json()},
       {"activation", r.activation ? nlohmann::json(*r.activation) : nlohmann::json()},
       {"train_activation_mean", r.train_activation_mean ? nlohmann::json(*r.train_activation_mean) : nlohmann::json()},
       {"iterations_run", r.iterations_run ? nlohmann::json(*r.iterations_run) : nlohmann::json()},
       {"displacement_l2", r.displacement_l2 ? nlohmann::json(*r.displacement_l2) : nlohmann::json()}};
}

inline void from_json(const nlohmann::json& j, ReconstructionRecord& r) {
  r.model_id = j.value("model_id", std::string());
  r.attack_id = j.value("attack_id", std::string());
  r.feature_model_id = j.value("feature_model_id", std::string());
  r.class_id = j.value("class_id", 0);
  r.seed = j.value("seed", std::uint64_t{0});
  r.nearest_index = j.value("nearest_index", std::size_t{0});
  r.nearest_source_index = j.value("nearest_source_index", std::size_t{0});
  r.similarity = j.value("similarity", 0.0);
  r.privacy_loss_l2 = j.value("privacy_loss_l2", 0.0);
  auto opt = [&](const char* k) { return j.contains(k) && !j[k].is_null(); };
  if (opt("iterations_to_target")) r.iterations_to_target = j["iterations_to_target"].get<int>();
  if (opt("activation")) r.activation = j["activation"].get<double>();
  if (opt("train_activation_mean")) r.train_activation_mean = j["train_activation_mean"].get<double>();
  if (opt("iterations_run")) r.iterations_run = j["iterations_run"].get<int>();
  if (opt("displacement_l2")) r.displacement_l2 = j["displacement_l2"].get<double>();
}

struct ModelAggregate {
  std::string model_id;
  std::string attack_id;
  std::size_t records = 0;
  double avg_similarity_over_runs = 0;      // mean of every reconstruction's NN similarity
  double avg_max_similarity_over_classes = 0;  // mean over classes of the best run per class
  double avg_privacy_loss_l2 = 0;
};

inline void to_json(nlohmann::json& j, const ModelAggregate& a) {
  j = {{"model_id", a.model_id},
       {"attack_id", a.attack_id},
       {"records", a.records},
       {"avg_similarity_over_runs", a.avg_similarity_over_runs},
       {"avg_max_similarity_over_classes", a.avg_max_similarity_over_classes},
       {"avg_privacy_loss_l2", a.avg_privacy_loss_l2}};
}

// One aggregate per (model, attack) pair, in order of first appearance.
inline std::vector<ModelAggregate> aggregate_records(std::span<const ReconstructionRecord> recs) {
  std::vector<ModelAggregate> out;
  std::vector<std::map<int, double>> best;
  for (const auto& r : recs) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const ModelAggregate& a) { return a.model_id == r.model_id && a.attack_id == r.attack_id; });
    if (it == out.end()) {
      out.push_back({r.model_id, r.attack_id, 0, 0, 0, 0});
      best.emplace_back();
      it = out.end() - 1;
    }
    auto& b = best[static_cast<std::size_t>(it - out.begin())];
    ++it->records;
    it->avg_similarity_over_runs += r.similarity;
    it->avg_privacy_loss_l2 += r.privacy_loss_l2;
    auto [pos, fresh] = b.emplace(r.class_id, r.similarity);
    if (!fresh) pos->second = std::max(pos->second, r.similarity);
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    auto& a = out[k];
    a.avg_similarity_over_runs /= static_cast<double>(a.records);
    a.avg_privacy_loss_l2 /= static_cast<double>(a.records);
    double s = 0;
    for (auto& [c, v] : best[k]) s += v;
    a.avg_max_similarity_over_classes = s / static_cast<double>(best[k].size());
  }
  return out;
}

struct PrivacyReport {
  std::vector<ReconstructionRecord> records;
  std::map<std::string, RadiusResult> radius;  // by model id
  std::map<std::string, std::string> radius_config_hash;

  std::vector<ModelAggregate> aggregates() const { return aggregate_records(records); }
};

inline void to_json(nlohmann::json& j, const PrivacyReport& r) {
  j = nlohmann::json::object();
  j["records"] = r.records;
  j["aggregates"] = r.aggregates();
  nlohmann::json rad = nlohmann::json::object();
  for (const auto& [id, res] : r.radius) {
    rad[id] = res;
    if (auto it = r.radius_config_hash.find(id); it != r.radius_config_hash.end()) rad[id]["attack_config_hash"] = it->second;
  }
  j["adversarial_radius"] = rad;
}

// ---------------------------------------------------------------------------
// Trade-off curve

struct TradeoffPoint {
  std::string model_id;
  double radius = 0;
  double privacy_loss = 0;
  std::string attack_config_hash;
};

inline void to_json(nlohmann::json& j, const TradeoffPoint& p) {
  j = {{"model_id", p.model_id}, {"adversarial_radius", p.radius}, {"avg_privacy_loss_l2", p.privacy_loss},
       {"attack_config_hash", p.attack_config_hash}};
}

// Points sorted by radius. All points must come from the same radius attack
// configuration.
inline std::vector<TradeoffPoint> tradeoff_curve(std::vector<TradeoffPoint> pts) {
  if (pts.size() < 2) throw std::invalid_argument("tradeoff_curve: need at least two models");
  for (const auto& p : pts)
    if (p.attack_config_hash != pts.front().attack_config_hash)
      throw ConfigError("tradeoff_curve: models were evaluated under different attack configs (" + pts.front().model_id +
                        " vs " + p.model_id + ")");
  std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.radius < b.radius; });
  return pts;
}

inline void write_tradeoff_table(std::ostream& os, std::span<const TradeoffPoint> pts) {
  os << "model_id,adversarial_radius_l2,avg_privacy_loss_l2\n";
  for (const auto& p : pts) os << p.model_id << ',' << p.radius << ',' << p.privacy_loss << '\n';
}

}  // namespace mivb
