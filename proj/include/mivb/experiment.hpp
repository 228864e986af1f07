#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mivb/classifiers.hpp"
#include "mivb/dataset.hpp"
#include "mivb/errors.hpp"
#include "mivb/inversion_deepdream.hpp"
#include "mivb/inversion_gan.hpp"
#include "mivb/inversion_pgd.hpp"
#include "mivb/privacy_metrics.hpp"
#include "mivb/training.hpp"

namespace mivb {

inline constexpr int kSpecSchemaVersion = 1;
inline constexpr const char* kDataDirEnv = "MIVB_DATA_DIR";

// ---------------------------------------------------------------------------
// Hashing

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* d = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = d[v & 15];
  return s;
}

// nlohmann objects keep keys sorted, so dump() is canonical.
inline std::string config_hash(const nlohmann::json& j) { return hex64(fnv1a(j.dump())); }

inline std::string file_hash(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h = fnv1a(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
  }
  return hex64(h);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t global, std::uint64_t salt) {
  return splitmix64(global ^ splitmix64(salt)) >> 1;  // below 2^63 for signed JSON readers
}

inline std::uint64_t derive_seed(std::uint64_t global, std::string_view salt, std::uint64_t k = 0) {
  return derive_seed(global, fnv1a(salt) ^ splitmix64(k));
}

// ---------------------------------------------------------------------------
// Dataset

struct DatasetSpec {
  std::string source = "synthetic";  // "synthetic" or "cifar10"
  std::string path;                  // cifar10: binary batch directory; empty = $MIVB_DATA_DIR
  std::size_t train_size = 2000;     // synthetic only
  std::size_t val_size = 1000;       // synthetic only
  std::size_t train_subset = 0;      // cifar10 only; 0 = full split
  std::size_t val_subset = 0;
  std::uint64_t seed = 0;
  int downscale = 1;

  int image_size() const { return kCifarSide / downscale; }

  void validate() const {
    if (source != "synthetic" && source != "cifar10") throw ConfigError("dataset.source must be synthetic or cifar10");
    if (downscale < 1 || kCifarSide % downscale != 0) throw ConfigError("dataset.downscale must divide 32");
    if (source == "synthetic" && (train_size < 1 || val_size < 1)) throw ConfigError("synthetic sizes must be >= 1");
    if (source == "cifar10") (void)resolved_path();
  }

  std::filesystem::path resolved_path() const {
    if (!path.empty()) return path;
    if (const char* env = std::getenv(kDataDirEnv); env && *env) return env;
    throw ConfigError(std::string("dataset.path is empty and ") + kDataDirEnv + " is not set");
  }

  LabeledDataset load(Split split) const {
    if (source == "synthetic") {
      auto ds = make_synthetic(split == Split::train ? train_size : val_size, split, seed);
      if (downscale > 1)
        for (auto& img : ds.images) img = downscale_box(img, downscale);
      return ds;
    }
    LoadOptions opt;
    opt.subset_size = split == Split::train ? train_subset : val_subset;
    opt.seed = seed;
    opt.downscale = downscale;
    return load_dataset(resolved_path(), split, opt);
  }
};

inline void to_json(nlohmann::json& j, const DatasetSpec& d) {
  j = {{"source", d.source},           {"path", d.path},         {"train_size", d.train_size},
       {"val_size", d.val_size},       {"train_subset", d.train_subset}, {"val_subset", d.val_subset},
       {"seed", d.seed},               {"downscale", d.downscale}};
}

inline void from_json(const nlohmann::json& j, DatasetSpec& d) {
  DatasetSpec x;
  d.source = j.value("source", x.source);
  d.path = j.value("path", x.path);
  d.train_size = j.value("train_size", x.train_size);
  d.val_size = j.value("val_size", x.val_size);
  d.train_subset = j.value("train_subset", x.train_subset);
  d.val_subset = j.value("val_subset", x.val_subset);
  d.seed = j.value("seed", x.seed);
  d.downscale = j.value("downscale", x.downscale);
}

// ---------------------------------------------------------------------------
// Model recipes

struct ModelRecipe {
  std::string id;
  std::string preset;
  ArchitectureConfig arch;
  TrainConfig train;
  std::optional<AdvTrainConfig> adv;
  // Non-empty: this model is the early snapshot of another (adversarial)
  // recipe, taken after that recipe's train.early_checkpoint_epoch.
  std::string early_checkpoint_of;

  Regime regime() const { return adv || !early_checkpoint_of.empty() ? Regime::atm : Regime::ttm; }
};

namespace presets {

inline TrainConfig sgd(std::vector<LrPhase> schedule, double wd = 2e-4) {
  TrainConfig t;
  t.optimizer = OptimizerKind::sgd_momentum;
  t.schedule = std::move(schedule);
  t.momentum = 0.9;
  t.weight_decay = wd;
  t.batch_size = 128;
  t.epochs = 0;
  for (const auto& p : t.schedule) t.epochs += p.epochs;
  return t;
}

inline TrainConfig adam(double lr, int epochs) {
  TrainConfig t;
  t.optimizer = OptimizerKind::adam;
  t.schedule = {{epochs, lr}};
  t.epochs = epochs;
  t.batch_size = 128;
  return t;
}

inline ArchitectureConfig wrn(int depth, int width) {
  ArchitectureConfig a;
  a.family = Family::wide_resnet;
  a.depth = depth;
  a.width = width;
  return a;
}

inline ArchitectureConfig vgg(int divisor) {
  ArchitectureConfig a;
  a.family = Family::vgg16_style;
  a.vgg_channel_divisor = divisor;
  return a;
}

}  // namespace presets

inline const std::vector<std::string>& model_preset_names() {
  static const std::vector<std::string> names{"ttm-vgg",      "ttm-res",      "atm-res",      "ttm-vgg-desk",
                                              "ttm-res-desk", "atm-res-desk", "ttm-res-tiny", "atm-res-tiny"};
  return names;
}

// Full-scale recipes follow the published hyperparameters. *-desk recipes
// use wide_resnet 16-2 (VGG at a quarter of the channels) for <= 30 epochs;
// *-tiny are the wide_resnet 10-2 recipes the CPU acceptance run uses.
inline ModelRecipe model_preset(const std::string& name) {
  using namespace presets;
  ModelRecipe r;
  r.preset = name;
  AdvTrainConfig adv;  // 10 pixel counts, step 2, 10 iterations
  if (name == "ttm-vgg") {
    r.arch = vgg(1);
    r.train = adam(1e-3, 100);
  } else if (name == "ttm-res") {
    r.arch = wrn(28, 10);
    r.train = sgd({{100, 0.01}});
  } else if (name == "atm-res") {
    r.arch = wrn(28, 10);
    r.train = sgd({{100, 0.1}, {50, 0.01}, {50, 0.001}});
    r.train.early_checkpoint_epoch = 10;
    r.adv = adv;
  } else if (name == "ttm-vgg-desk") {
    r.arch = vgg(4);
    r.train = adam(1e-3, 30);
  } else if (name == "ttm-res-desk") {
    r.arch = wrn(16, 2);
    r.train = sgd({{15, 0.1}, {8, 0.01}, {7, 0.001}});
  } else if (name == "atm-res-desk") {
    r.arch = wrn(16, 2);
    r.train = sgd({{15, 0.1}, {8, 0.01}, {7, 0.001}});
    r.train.early_checkpoint_epoch = 2;
    r.adv = adv;
  } else if (name == "ttm-res-tiny") {
    r.arch = wrn(10, 2);
    r.train = sgd({{8, 0.05}, {4, 0.005}});
  } else if (name == "atm-res-tiny") {
    r.arch = wrn(10, 2);
    r.train = sgd({{8, 0.05}, {4, 0.005}});
    r.train.early_checkpoint_epoch = 1;
    r.adv = adv;
  } else {
    throw ConfigError("unknown model preset: " + name);
  }
  return r;
}

inline nlohmann::json recipe_body(const ModelRecipe& r) {
  nlohmann::json j = {{"architecture", r.arch}, {"train", r.train}};
  j["adversarial"] = r.adv ? nlohmann::json(*r.adv) : nlohmann::json();
  return j;
}

inline void to_json(nlohmann::json& j, const ModelRecipe& r) {
  if (!r.early_checkpoint_of.empty()) {
    j = {{"id", r.id}, {"early_checkpoint_of", r.early_checkpoint_of}};
    return;
  }
  j = recipe_body(r);
  j["id"] = r.id;
  if (!r.preset.empty()) j["preset"] = r.preset;
}

// A preset supplies defaults; explicit architecture/train/adversarial objects
// are merge-patched over it (adversarial: null removes the inner attack).
inline void from_json(const nlohmann::json& j, ModelRecipe& r) {
  r = ModelRecipe{};
  r.id = j.at("id").get<std::string>();
  r.early_checkpoint_of = j.value("early_checkpoint_of", std::string());
  if (!r.early_checkpoint_of.empty()) return;
  nlohmann::json body = {{"architecture", ArchitectureConfig{}}, {"train", TrainConfig{}}, {"adversarial", nullptr}};
  if (j.contains("preset")) {
    r.preset = j["preset"].get<std::string>();
    body = recipe_body(model_preset(r.preset));
  }
  for (const char* k : {"architecture", "train", "adversarial"}) {
    if (!j.contains(k)) continue;
    if (j[k].is_null() || body[k].is_null())
      body[k] = j[k];
    else
      body[k].merge_patch(j[k]);
  }
  r.arch = body["architecture"].get<ArchitectureConfig>();
  r.train = body["train"].get<TrainConfig>();
  if (!body["adversarial"].is_null()) r.adv = body["adversarial"].get<AdvTrainConfig>();
}

// ---------------------------------------------------------------------------
// Attacks

enum class AttackKind { pgd, deepdream, gan };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::pgd: return "pgd";
    case AttackKind::deepdream: return "deepdream";
    case AttackKind::gan: return "gan";
  }
  return "?";
}

inline AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "pgd") return AttackKind::pgd;
  if (s == "deepdream") return AttackKind::deepdream;
  if (s == "gan") return AttackKind::gan;
  throw ConfigError("unknown attack kind: " + s);
}

struct AttackSpec {
  std::string id;
  AttackKind kind = AttackKind::pgd;
  std::vector<std::string> models;  // empty = every declared model
  std::vector<int> classes{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<std::uint64_t> seeds{0};
  // pgd / deepdream: start from a training image of the target class.
  bool seeded = false;
  PgdInversionConfig pgd;
  DreamConfig dream;
  GanInversionConfig gan;
  int samples_per_class = 4;  // gan: reconstructions drawn per class and seed

  nlohmann::json config_json() const {
    switch (kind) {
      case AttackKind::pgd: return pgd;
      case AttackKind::deepdream: return dream;
      case AttackKind::gan: {
        nlohmann::json j = gan;
        j.erase("seed");
        j["samples_per_class"] = samples_per_class;
        return j;
      }
    }
    return {};
  }
};

inline void to_json(nlohmann::json& j, const AttackSpec& a) {
  j = {{"id", a.id},           {"kind", to_string(a.kind)}, {"models", a.models},
       {"classes", a.classes}, {"seeds", a.seeds},          {"seeded", a.seeded},
       {"config", a.config_json()}};
}

inline void from_json(const nlohmann::json& j, AttackSpec& a) {
  a = AttackSpec{};
  a.id = j.at("id").get<std::string>();
  a.kind = attack_kind_from_string(j.value("kind", a.id));
  if (j.contains("models")) a.models = j["models"].get<std::vector<std::string>>();
  if (j.contains("classes")) a.classes = j["classes"].get<std::vector<int>>();
  if (j.contains("seeds")) a.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  a.seeded = j.value("seeded", false);
  const nlohmann::json cfg = j.value("config", nlohmann::json::object());
  switch (a.kind) {
    case AttackKind::pgd: a.pgd = cfg.get<PgdInversionConfig>(); break;
    case AttackKind::deepdream: a.dream = cfg.get<DreamConfig>(); break;
    case AttackKind::gan:
      a.gan = cfg.get<GanInversionConfig>();
      a.samples_per_class = cfg.value("samples_per_class", a.samples_per_class);
      break;
  }
}

// ---------------------------------------------------------------------------
// Metrics and report

struct MetricsSpec {
  bool enabled = true;
  bool radius = true;
  RadiusConfig radius_config;
  std::size_t radius_images = 200;  // leading validation images
  bool activation_stats = true;
};

inline void to_json(nlohmann::json& j, const MetricsSpec& m) {
  j = {{"enabled", m.enabled},
       {"radius", m.radius},
       {"radius_config", m.radius_config},
       {"radius_images", m.radius_images},
       {"activation_stats", m.activation_stats}};
}

inline void from_json(const nlohmann::json& j, MetricsSpec& m) {
  MetricsSpec d;
  m.enabled = j.value("enabled", d.enabled);
  m.radius = j.value("radius", d.radius);
  m.radius_config = j.contains("radius_config") ? j["radius_config"].get<RadiusConfig>() : d.radius_config;
  m.radius_images = j.value("radius_images", d.radius_images);
  m.activation_stats = j.value("activation_stats", d.activation_stats);
}

struct ReportSpec {
  std::string tradeoff_attack;  // empty: first unseeded pgd attack
};

// ---------------------------------------------------------------------------
// Experiment

struct ExperimentSpec {
  int schema_version = kSpecSchemaVersion;
  std::string preset;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/experiment";
  DatasetSpec dataset;
  std::vector<ModelRecipe> models;
  std::vector<AttackSpec> attacks;
  MetricsSpec metrics;
  ReportSpec report;

  const ModelRecipe& model(const std::string& id) const {
    for (const auto& m : models)
      if (m.id == id) return m;
    throw ConfigError("unknown model id: " + id);
  }

  bool has_model(const std::string& id) const {
    return std::any_of(models.begin(), models.end(), [&](const auto& m) { return m.id == id; });
  }

  std::vector<std::string> attack_models(const AttackSpec& a) const {
    if (!a.models.empty()) return a.models;
    std::vector<std::string> ids;
    for (const auto& m : models) ids.push_back(m.id);
    return ids;
  }

  std::string tradeoff_attack() const {
    if (!report.tradeoff_attack.empty()) return report.tradeoff_attack;
    for (const auto& a : attacks)
      if (a.kind == AttackKind::pgd && !a.seeded) return a.id;
    return attacks.empty() ? std::string() : attacks.front().id;
  }

  // Fills in values that follow from the dataset (input size) and the
  // target model (GAN output shape).
  void resolve() {
    for (auto& m : models) {
      m.arch.input_size = dataset.image_size();
      m.arch.channels = kCifarChannels;
      m.arch.num_classes = kCifarClasses;
    }
    for (auto& a : attacks) {
      a.gan.nets.image_size = dataset.image_size();
      a.gan.nets.channels = kCifarChannels;
      a.gan.nets.num_classes = kCifarClasses;
    }
  }

  void validate() const {
    if (schema_version != kSpecSchemaVersion)
      throw ConfigError("unsupported schema_version " + std::to_string(schema_version) + " (expected " +
                        std::to_string(kSpecSchemaVersion) + ")");
    if (output_dir.empty()) throw ConfigError("output_dir is empty");
    dataset.validate();
    auto check_id = [](const std::string& id, const char* what) {
      if (id.empty()) throw ConfigError(std::string(what) + " id is empty");
      for (char c : id)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.'))
          throw ConfigError(std::string(what) + " id '" + id + "' may only use letters, digits, '-', '_' and '.'");
    };
    std::set<std::string> ids;
    for (const auto& m : models) {
      check_id(m.id, "model");
      if (!ids.insert(m.id).second) throw ConfigError("duplicate model id: " + m.id);
    }
    for (const auto& m : models) {
      if (!m.early_checkpoint_of.empty()) {
        if (!has_model(m.early_checkpoint_of))
          throw ConfigError(m.id + ": early_checkpoint_of references unknown model " + m.early_checkpoint_of);
        const auto& p = model(m.early_checkpoint_of);
        if (!p.early_checkpoint_of.empty() || !p.adv)
          throw ConfigError(m.id + ": early checkpoints are taken from adversarially trained recipes only");
        if (p.train.early_checkpoint_epoch < 1 || p.train.early_checkpoint_epoch >= p.train.epochs)
          throw ConfigError(m.id + ": " + p.id + ".train.early_checkpoint_epoch must lie in [1, epochs)");
        continue;
      }
      try {
        m.arch.validate();
        m.train.validate();
        if (m.adv) m.adv->validate();
      } catch (const ConfigError& e) {
        throw ConfigError("model " + m.id + ": " + e.what());
      }
    }
    std::set<std::string> aids;
    for (const auto& a : attacks) {
      check_id(a.id, "attack");
      if (!aids.insert(a.id).second) throw ConfigError("duplicate attack id: " + a.id);
      for (const auto& mid : attack_models(a))
        if (!has_model(mid)) throw ConfigError("attack " + a.id + " references undeclared model " + mid);
      if (a.classes.empty() || a.seeds.empty()) throw ConfigError("attack " + a.id + " needs classes and seeds");
      for (int c : a.classes)
        if (c < 0 || c >= kCifarClasses) throw ConfigError("attack " + a.id + ": class out of range");
      if (a.seeded && a.kind == AttackKind::gan) throw ConfigError("attack " + a.id + ": gan attacks cannot be seeded");
      try {
        switch (a.kind) {
          case AttackKind::pgd: a.pgd.validate(); break;
          case AttackKind::deepdream: a.dream.validate(dataset.image_size()); break;
          case AttackKind::gan:
            a.gan.validate();
            if (a.samples_per_class < 1) throw ConfigError("samples_per_class must be >= 1");
            break;
        }
      } catch (const ConfigError& e) {
        throw ConfigError("attack " + a.id + ": " + e.what());
      }
    }
    if (metrics.enabled && metrics.radius) metrics.radius_config.validate();
    if (!report.tradeoff_attack.empty() && !aids.count(report.tradeoff_attack))
      throw ConfigError("report.tradeoff_attack references unknown attack " + report.tradeoff_attack);
  }
};

inline void to_json(nlohmann::json& j, const ExperimentSpec& s) {
  j = {{"schema_version", s.schema_version},
       {"seed", s.seed},
       {"output_dir", s.output_dir},
       {"dataset", s.dataset},
       {"models", s.models},
       {"attacks", s.attacks},
       {"metrics", s.metrics},
       {"report", {{"tradeoff_attack", s.report.tradeoff_attack}}}};
  if (!s.preset.empty()) j["preset"] = s.preset;
}

inline nlohmann::json experiment_preset_json(const std::string& name);

inline ExperimentSpec parse_experiment(const nlohmann::json& in) {
  if (!in.is_object()) throw ConfigError("experiment spec must be a JSON object");
  nlohmann::json j = in;
  if (in.contains("preset")) {
    j = experiment_preset_json(in["preset"].get<std::string>());
    j.merge_patch(in);
  }
  ExperimentSpec s;
  try {
    s.schema_version = j.value("schema_version", 0);
    s.preset = j.value("preset", std::string());
    s.seed = j.value("seed", s.seed);
    s.output_dir = j.value("output_dir", s.output_dir);
    if (j.contains("dataset")) s.dataset = j["dataset"].get<DatasetSpec>();
    if (j.contains("models")) s.models = j["models"].get<std::vector<ModelRecipe>>();
    if (j.contains("attacks")) s.attacks = j["attacks"].get<std::vector<AttackSpec>>();
    if (j.contains("metrics")) s.metrics = j["metrics"].get<MetricsSpec>();
    if (j.contains("report")) s.report.tradeoff_attack = j["report"].value("tradeoff_attack", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed experiment spec: ") + e.what());
  }
  s.resolve();
  s.validate();
  return s;
}

inline ExperimentSpec load_experiment(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open config " + p.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse " + p.string() + ": " + e.what());
  }
  return parse_experiment(j);
}

inline const std::vector<std::string>& experiment_preset_names() {
  static const std::vector<std::string> names{"paper-full", "paper-desk", "sandbox"};
  return names;
}

// Whole-pipeline presets. paper-full is the published matrix; paper-desk the
// 10k-image wide_resnet 16-2 matrix; sandbox the synthetic-data matrix that
// fits a single CPU.
inline nlohmann::json experiment_preset_json(const std::string& name) {
  using nlohmann::json;
  // One fixed PGD lr shared by every model, so a model with larger input
  // gradients takes larger pixel steps.
  auto attacks = [](int pgd_iters, int dream_octaves, int dream_outer, int gan_epochs, int gan_width) {
    const double pgd_lr = 200;
    json a = json::array();
    a.push_back({{"id", "pgd"}, {"kind", "pgd"}, {"config", {{"max_iterations", pgd_iters}, {"lr", pgd_lr}}}});
    a.push_back({{"id", "pgd-seeded"},
                 {"kind", "pgd"},
                 {"seeded", true},
                 {"config", {{"max_iterations", pgd_iters}, {"lr", pgd_lr}, {"init", {{"mode", "seed_image"}}}}}});
    a.push_back({{"id", "deepdream"}, {"kind", "deepdream"}, {"config", {{"octaves", dream_octaves}, {"outer_iterations", dream_outer}}}});
    a.push_back({{"id", "gan"},
                 {"kind", "gan"},
                 {"config", {{"epochs", gan_epochs}, {"nets", {{"gen_width", gan_width}, {"disc_width", gan_width}}}}}});
    return a;
  };
  json j = {{"schema_version", kSpecSchemaVersion}, {"seed", 0}};
  if (name == "paper-full") {
    j["output_dir"] = "runs/paper-full";
    j["dataset"] = {{"source", "cifar10"}};
    j["models"] = json::array({{{"id", "ttm-vgg"}, {"preset", "ttm-vgg"}},
                               {{"id", "ttm-res"}, {"preset", "ttm-res"}},
                               {{"id", "atm-res"}, {"preset", "atm-res"}},
                               {{"id", "atm-res10"}, {"early_checkpoint_of", "atm-res"}}});
    j["attacks"] = attacks(2000, 4, 5, 25, 64);
    j["metrics"] = {{"radius_images", 1000}};
  } else if (name == "paper-desk") {
    j["output_dir"] = "runs/paper-desk";
    j["dataset"] = {{"source", "cifar10"}, {"train_subset", 10000}, {"val_subset", 2000}};
    j["models"] = json::array({{{"id", "ttm"}, {"preset", "ttm-res-desk"}},
                               {{"id", "atm"}, {"preset", "atm-res-desk"}},
                               {{"id", "atm-early"}, {"early_checkpoint_of", "atm"}}});
    j["attacks"] = attacks(1000, 4, 2, 10, 32);
    j["metrics"] = {{"radius_images", 200}};
  } else if (name == "sandbox") {
    j["output_dir"] = "runs/sandbox";
    j["dataset"] = {{"source", "synthetic"}, {"train_size", 2000}, {"val_size", 1000}, {"downscale", 2}};
    j["models"] = json::array({{{"id", "ttm"}, {"preset", "ttm-res-tiny"}},
                               {{"id", "atm"}, {"preset", "atm-res-tiny"}},
                               {{"id", "atm-early"}, {"early_checkpoint_of", "atm"}}});
    j["attacks"] = attacks(1000, 3, 2, 5, 16);
    j["metrics"] = {{"radius_images", 100}};
  } else {
    throw ConfigError("unknown experiment preset: " + name);
  }
  return j;
}

}  // namespace mivb
