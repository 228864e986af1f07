#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mivb/experiment.hpp"

namespace mivb {

// ---------------------------------------------------------------------------
// Exact image sets (PNG rounds to 8 bits; metrics need the float pixels)

inline void save_image_set(std::span<const ImageTensor> images, const std::filesystem::path& path) {
  nlohmann::json shapes = nlohmann::json::array();
  std::vector<nn::Tensor<float>> ts;
  for (const auto& img : images) {
    shapes.push_back({img.height(), img.width(), img.channels()});
    nn::Tensor<float> t(1, 1, 1, static_cast<int>(img.size()));
    std::copy(img.pixels().begin(), img.pixels().end(), t.storage().begin());
    ts.push_back(std::move(t));
  }
  std::vector<const nn::Tensor<float>*> ptrs;
  for (const auto& t : ts) ptrs.push_back(&t);
  nn::write_checkpoint_file<float>(path, {{"kind", "images"}, {"shapes", shapes}}, ptrs);
}

inline std::vector<ImageTensor> load_image_set(const std::filesystem::path& path) {
  auto r = nn::read_checkpoint_file(path);
  if (r.header.value("kind", std::string()) != "images") throw IoError("not an image set: " + path.string());
  const auto& shapes = r.header.at("shapes");
  if (shapes.size() != r.tensors.size()) throw IoError("image set header/body mismatch: " + path.string());
  std::vector<ImageTensor> out;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const int h = shapes[i][0], w = shapes[i][1], c = shapes[i][2];
    std::vector<float> px(r.tensors[i].begin(), r.tensors[i].end());
    out.emplace_back(h, w, c, std::move(px));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage graph

enum class StageKind { train, attack, privacy, evaluate, report };

inline std::string to_string(StageKind k) {
  switch (k) {
    case StageKind::train: return "train";
    case StageKind::attack: return "attack";
    case StageKind::privacy: return "privacy";
    case StageKind::evaluate: return "evaluate";
    case StageKind::report: return "report";
  }
  return "?";
}

// privacy and evaluate are both "metrics" stages.
inline int stage_rank(StageKind k) {
  switch (k) {
    case StageKind::train: return 0;
    case StageKind::attack: return 1;
    case StageKind::privacy:
    case StageKind::evaluate: return 2;
    case StageKind::report: return 3;
  }
  return 4;
}

struct StagePlan {
  std::string key;
  StageKind kind = StageKind::train;
  std::string dir;  // output directory relative to the run root
  std::vector<std::string> deps;
  nlohmann::json config;
  std::string hash;
  std::uint64_t seed = 0;
  std::string model_id;
  std::string attack_id;
};

inline std::string model_stage_key(const ExperimentSpec& s, const std::string& id) {
  const auto& m = s.model(id);
  return "train/" + (m.early_checkpoint_of.empty() ? id : m.early_checkpoint_of);
}

inline std::string model_checkpoint(const ExperimentSpec& s, const std::string& id) {
  const auto& m = s.model(id);
  if (!m.early_checkpoint_of.empty()) return "models/" + m.early_checkpoint_of + "/early.ckpt";
  return "models/" + id + "/model.ckpt";
}

inline nlohmann::json dataset_identity(const DatasetSpec& d) {
  nlohmann::json j = d;
  if (d.source == "cifar10") j["path"] = d.resolved_path().string();
  return j;
}

// Stages in dependency order. Each hash covers the stage's full config and
// the hashes of its upstream stages.
inline std::vector<StagePlan> build_plan(const ExperimentSpec& spec) {
  std::vector<StagePlan> plan;
  std::map<std::string, std::string> hashes;
  auto add = [&](StagePlan p) {
    nlohmann::json up = nlohmann::json::object();
    for (const auto& d : p.deps) up[d] = hashes.at(d);
    p.hash = config_hash({{"key", p.key}, {"config", p.config}, {"upstream", up}, {"seed", p.seed}});
    hashes[p.key] = p.hash;
    plan.push_back(std::move(p));
  };
  const nlohmann::json data = dataset_identity(spec.dataset);

  for (const auto& m : spec.models) {
    if (!m.early_checkpoint_of.empty()) continue;
    StagePlan p;
    p.key = "train/" + m.id;
    p.kind = StageKind::train;
    p.dir = "models/" + m.id;
    p.model_id = m.id;
    p.seed = derive_seed(spec.seed, m.train.seed);
    p.config = {{"dataset", data}, {"recipe", recipe_body(m)}};
    add(std::move(p));
  }
  auto model_ref = [&](const std::string& id) {
    return nlohmann::json{{"id", id}, {"checkpoint", model_checkpoint(spec, id)}};
  };
  for (const auto& a : spec.attacks) {
    nlohmann::json aj = a;
    aj.erase("models");
    for (const auto& mid : spec.attack_models(a)) {
      StagePlan p;
      p.key = "attack/" + a.id + "/" + mid;
      p.kind = StageKind::attack;
      p.dir = "attacks/" + a.id + "/" + mid;
      p.model_id = mid;
      p.attack_id = a.id;
      p.deps = {model_stage_key(spec, mid)};
      // Model-independent so every model sees the same starting images.
      p.seed = derive_seed(spec.seed, "attack:" + a.id);
      p.config = {{"attack", aj}, {"model", model_ref(mid)}, {"dataset", data}};
      add(std::move(p));
    }
  }
  std::vector<std::string> metric_keys;
  if (spec.metrics.enabled) {
    for (const auto& a : spec.attacks)
      for (const auto& mid : spec.attack_models(a)) {
        StagePlan p;
        p.key = "privacy/" + a.id + "/" + mid;
        p.kind = StageKind::privacy;
        p.dir = "privacy/" + a.id + "/" + mid;
        p.model_id = mid;
        p.attack_id = a.id;
        p.deps = {model_stage_key(spec, mid), "attack/" + a.id + "/" + mid};
        p.config = {{"model", model_ref(mid)},
                    {"dataset", data},
                    {"activation_stats", spec.metrics.activation_stats},
                    {"attack_kind", to_string(a.kind)}};
        metric_keys.push_back(p.key);
        add(std::move(p));
      }
    for (const auto& m : spec.models) {
      StagePlan p;
      p.key = "evaluate/" + m.id;
      p.kind = StageKind::evaluate;
      p.dir = "evaluate/" + m.id;
      p.model_id = m.id;
      p.deps = {model_stage_key(spec, m.id)};
      p.config = {{"model", model_ref(m.id)}, {"dataset", data}, {"regime", to_string(m.regime())}};
      if (spec.metrics.radius)
        p.config["radius"] = {{"config", spec.metrics.radius_config}, {"images", spec.metrics.radius_images}};
      metric_keys.push_back(p.key);
      add(std::move(p));
    }
  }
  StagePlan r;
  r.key = "report";
  r.kind = StageKind::report;
  r.dir = "report";
  r.deps = metric_keys;
  r.config = {{"tradeoff_attack", spec.tradeoff_attack()}};
  add(std::move(r));
  return plan;
}

// ---------------------------------------------------------------------------
// Artifact writer: every file goes through write-temp-then-rename and is
// recorded for the manifest.

class StageWriter {
 public:
  explicit StageWriter(std::filesystem::path root) : root_(std::move(root)) {}

  std::filesystem::path abs(const std::string& rel) const { return root_ / rel; }

  template <typename F>
  void emit(const std::string& rel, F&& write) {
    const std::filesystem::path target = abs(rel);
    std::filesystem::create_directories(target.parent_path());
    const std::filesystem::path tmp = target.string() + ".part";
    write(tmp);
    std::filesystem::rename(tmp, target);
    if (std::find(files_.begin(), files_.end(), rel) == files_.end()) files_.push_back(rel);
  }

  void text(const std::string& rel, const std::string& s) {
    emit(rel, [&](const std::filesystem::path& p) {
      std::ofstream out(p, std::ios::binary | std::ios::trunc);
      out << s;
      if (!out) throw IoError("cannot write " + p.string());
    });
  }
  void json(const std::string& rel, const nlohmann::json& j) { text(rel, j.dump(2) + "\n"); }
  void png(const std::string& rel, const ImageTensor& img) {
    emit(rel, [&](const std::filesystem::path& p) { save_png(img, p); });
  }
  void images(const std::string& rel, std::span<const ImageTensor> imgs) {
    emit(rel, [&](const std::filesystem::path& p) { save_image_set(imgs, p); });
  }
  template <typename T>
  void checkpoint(const std::string& rel, ClassifierModel<T>& m) {
    emit(rel, [&](const std::filesystem::path& p) { save_checkpoint(m, p); });
  }

  const std::vector<std::string>& files() const { return files_; }

  nlohmann::json artifact_list() const {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& f : files_) a.push_back({{"path", f}, {"hash", file_hash(abs(f))}});
    return a;
  }

 private:
  std::filesystem::path root_;
  std::vector<std::string> files_;
};

// ---------------------------------------------------------------------------
// Run

struct RunOptions {
  StageKind until = StageKind::report;
  // Reuse stages whose manifest entry matches the current config hash and
  // whose artifacts are intact.
  bool resume = false;
  // Execute only the report stage; everything else must already be present.
  bool report_only = false;
  std::ostream* log = &std::cerr;
};

struct RunSummary {
  nlohmann::json manifest;
  std::filesystem::path manifest_path;
  int executed = 0;
  int skipped = 0;
  int failed = 0;
  int blocked = 0;

  bool complete() const { return manifest.value("status", std::string()) == "complete"; }
};

inline nlohmann::json read_manifest(const std::filesystem::path& root) {
  const std::filesystem::path p = root / "manifest.json";
  std::ifstream in(p);
  if (!in) throw IoError("no manifest at " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("corrupt manifest " + p.string() + ": " + e.what());
  }
}

namespace detail {

inline bool artifacts_intact(const std::filesystem::path& root, const nlohmann::json& entry) {
  if (!entry.contains("artifacts")) return false;
  for (const auto& a : entry["artifacts"]) {
    const std::filesystem::path p = root / a.at("path").get<std::string>();
    if (!std::filesystem::exists(p) || file_hash(p) != a.at("hash").get<std::string>()) return false;
  }
  return true;
}

inline void remove_artifacts(const std::filesystem::path& root, const nlohmann::json& entry) {
  if (!entry.contains("artifacts")) return;
  for (const auto& a : entry["artifacts"]) {
    std::error_code ec;
    std::filesystem::remove(root / a.at("path").get<std::string>(), ec);
  }
}

// Deletes now-empty directories below root (deepest first).
inline void prune_empty_dirs(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> dirs;
  for (auto it = std::filesystem::recursive_directory_iterator(root); it != std::filesystem::recursive_directory_iterator(); ++it)
    if (it->is_directory()) dirs.push_back(it->path());
  std::sort(dirs.begin(), dirs.end(), [](const std::filesystem::path& a, const std::filesystem::path& b) { return a.string() > b.string(); });
  for (const auto& d : dirs) {
    std::error_code ec;
    if (std::filesystem::is_empty(d, ec)) std::filesystem::remove(d, ec);
  }
}

inline std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << std::fixed << v;
  return os.str();
}

inline std::string cell(const nlohmann::json& j, int prec = 4) {
  if (j.is_null()) return "NA";
  if (j.is_number_float()) return fmt(j.get<double>(), prec);
  if (j.is_number()) return std::to_string(j.get<long long>());
  if (j.is_string()) return j.get<std::string>();
  return j.dump();
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  return nlohmann::json::parse(in);
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline nlohmann::json num_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

// Aggregate tables from whatever metric artifacts the manifest lists as done.
inline void write_report(const nlohmann::json& manifest, const std::filesystem::path& root, StageWriter& w) {
  const auto& stages = manifest.at("stages");
  const bool any_done = std::any_of(stages.begin(), stages.end(), [](const nlohmann::json& e) {
    return e.value("status", std::string()) == "done" && e.value("kind", std::string()) != "report";
  });
  if (!any_done) throw std::runtime_error("report: the manifest lists no completed stages");
  const auto& spec = manifest.at("spec");
  auto done = [&](const std::string& key) {
    return stages.contains(key) && stages[key].value("status", std::string()) == "done";
  };

  nlohmann::json models = nlohmann::json::object();
  for (const auto& m : spec.at("models")) {
    const std::string id = m.at("id");
    nlohmann::json row = {{"regime", nullptr},         {"early_checkpoint_of", m.value("early_checkpoint_of", "")},
                          {"train_accuracy", nullptr}, {"val_accuracy", nullptr},
                          {"radius_mean", nullptr},    {"radius_median", nullptr},
                          {"radius_censored", nullptr}, {"radius_attack_hash", nullptr}};
    const std::string ek = "evaluate/" + id;
    if (done(ek)) {
      auto ev = read_json(root / (std::string("evaluate/") + id + "/evaluate.json"));
      row["regime"] = ev.at("regime");
      row["train_accuracy"] = ev.at("train_accuracy");
      row["val_accuracy"] = ev.at("val_accuracy");
      if (ev.contains("radius") && !ev["radius"].is_null()) {
        row["radius_mean"] = ev["radius"].at("mean_radius_l2");
        row["radius_median"] = ev["radius"].at("median_radius_l2");
        row["radius_censored"] = ev["radius"].at("censored");
        row["radius_attack_hash"] = ev["radius"].at("attack_config_hash");
      }
    }
    models[id] = row;
  }

  nlohmann::json attacks = nlohmann::json::array();
  for (const auto& a : spec.at("attacks")) {
    std::vector<std::string> mids = a.at("models").get<std::vector<std::string>>();
    if (mids.empty())
      for (const auto& m : spec.at("models")) mids.push_back(m.at("id"));
    for (const auto& mid : mids) {
      const std::string key = "privacy/" + a.at("id").get<std::string>() + "/" + mid;
      nlohmann::json row = {{"attack_id", a.at("id")},        {"kind", a.at("kind")},
                            {"model_id", mid},                {"records", nullptr},
                            {"avg_similarity", nullptr},      {"avg_max_similarity", nullptr},
                            {"avg_privacy_loss_l2", nullptr}, {"median_iterations_to_target", nullptr},
                            {"censored_runs", nullptr},       {"activation_ratio", nullptr},
                            {"mean_displacement_l2", nullptr}};
      if (done(key)) {
        auto pj = read_json(root / (key + "/privacy.json"));
        for (const char* k : {"records", "avg_similarity", "avg_max_similarity", "avg_privacy_loss_l2",
                              "median_iterations_to_target", "censored_runs", "activation_ratio",
                              "mean_displacement_l2"})
          row[k] = pj["summary"][k];
      }
      attacks.push_back(row);
    }
  }

  std::ostringstream csv;
  csv << "model_id,regime,train_accuracy,val_accuracy,adversarial_radius_l2,attack_id,records,avg_similarity,"
         "avg_max_similarity,avg_privacy_loss_l2,median_iterations_to_target,censored_runs,activation_ratio,"
         "mean_displacement_l2\n";
  for (const auto& m : spec.at("models")) {
    const std::string id = m.at("id");
    const auto& mr = models[id];
    const std::string head = id + "," + cell(mr["regime"]) + "," + cell(mr["train_accuracy"]) + "," +
                             cell(mr["val_accuracy"]) + "," + cell(mr["radius_mean"]);
    bool any = false;
    for (const auto& r : attacks) {
      if (r["model_id"] != id) continue;
      any = true;
      csv << head << ',' << cell(r["attack_id"]) << ',' << cell(r["records"]) << ',' << cell(r["avg_similarity"]) << ','
          << cell(r["avg_max_similarity"]) << ',' << cell(r["avg_privacy_loss_l2"]) << ','
          << cell(r["median_iterations_to_target"], 1) << ',' << cell(r["censored_runs"]) << ','
          << cell(r["activation_ratio"]) << ',' << cell(r["mean_displacement_l2"]) << '\n';
    }
    if (!any) csv << head << ",NA,NA,NA,NA,NA,NA,NA,NA,NA\n";
  }
  w.text("report/aggregates.csv", csv.str());

  // Trade-off: every model with both a radius and a privacy loss under the
  // designated attack.
  const std::string tattack = manifest.at("stages").at("report").at("config").value("tradeoff_attack", std::string());
  std::vector<TradeoffPoint> pts;
  for (const auto& r : attacks) {
    if (r["attack_id"] != tattack || r["avg_privacy_loss_l2"].is_null()) continue;
    const auto& mr = models[r["model_id"].get<std::string>()];
    if (mr["radius_mean"].is_null()) continue;
    pts.push_back({r["model_id"], mr["radius_mean"], r["avg_privacy_loss_l2"], mr["radius_attack_hash"]});
  }
  nlohmann::json tradeoff;
  if (pts.size() >= 2) {
    pts = tradeoff_curve(std::move(pts));
    std::ostringstream t;
    write_tradeoff_table(t, pts);
    w.text("report/tradeoff.csv", t.str());
    tradeoff = pts;
  }
  w.json("report/summary.json",
         {{"models", models}, {"attacks", attacks}, {"tradeoff_attack", tattack}, {"tradeoff", tradeoff}});
}

}  // namespace detail

class ExperimentRunner {
 public:
  ExperimentRunner(ExperimentSpec spec, RunOptions opt) : spec_(std::move(spec)), opt_(opt), root_(spec_.output_dir) {}

  RunSummary run() {
    prepare_root();
    const auto plan = build_plan(spec_);
    nlohmann::json old = nlohmann::json::object();
    if (std::filesystem::exists(root_ / "manifest.json")) old = read_manifest(root_).value("stages", nlohmann::json::object());

    manifest_ = {{"schema_version", kSpecSchemaVersion},
                 {"spec", spec_},
                 {"spec_hash", config_hash(nlohmann::json(spec_))},
                 {"seed", spec_.seed},
                 {"scope", to_string(opt_.until)},
                 {"status", "running"},
                 {"stages", nlohmann::json::object()}};
    auto& stages = manifest_["stages"];

    // Drop entries the current spec no longer produces, with their files.
    std::set<std::string> keys;
    for (const auto& p : plan) keys.insert(p.key);
    for (auto it = old.begin(); it != old.end(); ++it)
      if (!keys.count(it.key())) detail::remove_artifacts(root_, it.value());

    RunSummary sum;
    for (const auto& p : plan) {
      const nlohmann::json prev = old.contains(p.key) ? old[p.key] : nlohmann::json();
      std::string hash = p.hash;
      if (p.kind == StageKind::report) {
        // Fold upstream status into the hash so a report over a partial run
        // is not reused once the missing stages exist.
        nlohmann::json st = nlohmann::json::object();
        for (const auto& d : p.deps) st[d] = stages.contains(d) ? stages[d].value("status", "absent") : "absent";
        hash = config_hash({{"base", p.hash}, {"upstream_status", st}});
      }
      const bool reusable = !prev.is_null() && prev.value("status", std::string()) == "done" &&
                            prev.value("config_hash", std::string()) == hash && detail::artifacts_intact(root_, prev);
      const bool in_scope = opt_.report_only ? p.kind == StageKind::report : stage_rank(p.kind) <= stage_rank(opt_.until);
      if (!in_scope) {
        if (reusable)
          stages[p.key] = prev;
        else if (!prev.is_null())
          detail::remove_artifacts(root_, prev);
        continue;
      }
      nlohmann::json entry = {{"kind", to_string(p.kind)}, {"config_hash", hash}, {"seed", p.seed},
                              {"deps", p.deps},            {"config", p.config}};
      if (!p.model_id.empty()) entry["model_id"] = p.model_id;
      if (!p.attack_id.empty()) entry["attack_id"] = p.attack_id;

      // The report summarizes whatever finished; every other stage needs all
      // of its inputs.
      if (p.kind != StageKind::report) {
        std::string missing;
        for (const auto& d : p.deps)
          if (!stages.contains(d) || stages[d].value("status", std::string()) != "done") missing = d;
        if (!missing.empty()) {
          if (!prev.is_null()) detail::remove_artifacts(root_, prev);
          entry["status"] = "blocked";
          entry["error"] = "upstream stage " + missing + " did not complete";
          entry["artifacts"] = nlohmann::json::array();
          stages[p.key] = entry;
          ++sum.blocked;
          log() << "[" << p.key << "] blocked by " << missing << "\n";
          continue;
        }
      }
      if (opt_.resume && reusable) {
        stages[p.key] = prev;
        ++sum.skipped;
        log() << "[" << p.key << "] up to date, skipped\n";
        continue;
      }
      if (!prev.is_null()) detail::remove_artifacts(root_, prev);
      std::error_code ec;
      std::filesystem::remove_all(root_ / p.dir, ec);

      StageWriter w(root_);
      const auto t0 = std::chrono::steady_clock::now();
      try {
        stages[p.key] = entry;  // visible to the report stage while it runs
        execute(p, w);
        entry["status"] = "done";
        entry["artifacts"] = w.artifact_list();
        ++sum.executed;
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log() << "[" << p.key << "] done in " << detail::fmt(secs, 1) << " s\n";
      } catch (const std::exception& e) {
        for (const auto& f : w.files()) std::filesystem::remove(root_ / f, ec);
        std::filesystem::remove_all(root_ / p.dir, ec);
        entry["status"] = "failed";
        entry["error"] = e.what();
        entry["artifacts"] = nlohmann::json::array();
        ++sum.failed;
        log() << "[" << p.key << "] FAILED: " << e.what() << "\n";
      }
      stages[p.key] = entry;
      write_manifest();
    }
    bool all_done = true;
    for (const auto& p : plan) {
      const bool in_scope = opt_.report_only ? true : stage_rank(p.kind) <= stage_rank(opt_.until);
      if (in_scope && (!stages.contains(p.key) || stages[p.key].value("status", std::string()) != "done")) all_done = false;
    }
    manifest_["status"] = all_done ? "complete" : "partial";
    write_manifest();
    detail::prune_empty_dirs(root_);
    sum.manifest = manifest_;
    sum.manifest_path = root_ / "manifest.json";
    return sum;
  }

 private:
  ExperimentSpec spec_;
  RunOptions opt_;
  std::filesystem::path root_;
  nlohmann::json manifest_;
  std::optional<LabeledDataset> train_, val_;
  struct ModelFeatures {
    FeatureCache cache;
    std::vector<double> class_mean_activation;
  };
  std::map<std::string, ModelFeatures> features_;

  std::ostream& log() { return *opt_.log; }

  void prepare_root() {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    const std::filesystem::path probe = root_ / ".write_probe";
    std::ofstream(probe) << "ok";
    if (ec || !std::filesystem::exists(probe)) throw ConfigError("output directory " + root_.string() + " is not writable");
    std::filesystem::remove(probe, ec);
  }

  void write_manifest() {
    StageWriter w(root_);
    w.json("manifest.json", manifest_);
  }

  const LabeledDataset& train_set() {
    if (!train_) train_ = spec_.dataset.load(Split::train);
    return *train_;
  }
  const LabeledDataset& val_set() {
    if (!val_) val_ = spec_.dataset.load(Split::validation);
    return *val_;
  }

  ClassifierModel<float> load_model(const std::string& id) {
    return load_checkpoint<float>(root_ / model_checkpoint(spec_, id));
  }

  ModelFeatures& features(const std::string& id, ClassifierModel<float>& model) {
    const std::string key = model_checkpoint(spec_, id);
    auto it = features_.find(key);
    if (it != features_.end()) return it->second;
    const auto& tr = train_set();
    ModelFeatures f;
    f.cache = build_feature_cache(model, std::span<const ImageTensor>(tr.images), id);
    std::vector<double> sum(kCifarClasses, 0.0);
    std::vector<std::size_t> count(kCifarClasses, 0);
    for (std::size_t s = 0; s < tr.size(); s += 100) {
      const std::size_t n = std::min<std::size_t>(100, tr.size() - s);
      auto logits = model.forward_logits(std::span<const ImageTensor>(tr.images.data() + s, n));
      for (std::size_t b = 0; b < n; ++b) {
        const int y = tr.labels[s + b];
        sum[static_cast<std::size_t>(y)] += logits.sample(static_cast<int>(b))[y];
        ++count[static_cast<std::size_t>(y)];
      }
    }
    f.class_mean_activation.resize(kCifarClasses, 0.0);
    for (int c = 0; c < kCifarClasses; ++c)
      f.class_mean_activation[c] = count[c] ? sum[c] / static_cast<double>(count[c]) : 0.0;
    return features_.emplace(key, std::move(f)).first->second;
  }

  const AttackSpec& attack(const std::string& id) const {
    for (const auto& a : spec_.attacks)
      if (a.id == id) return a;
    throw ConfigError("unknown attack id: " + id);
  }

  void execute(const StagePlan& p, StageWriter& w) {
    switch (p.kind) {
      case StageKind::train: run_train(p, w); break;
      case StageKind::attack: run_attack(p, w); break;
      case StageKind::privacy: run_privacy(p, w); break;
      case StageKind::evaluate: run_evaluate(p, w); break;
      case StageKind::report: detail::write_report(manifest_, root_, w); break;
    }
  }

  void run_train(const StagePlan& p, StageWriter& w) {
    const auto& r = spec_.model(p.model_id);
    auto model = build_model<float>(r.arch, p.seed);
    TrainConfig tc = r.train;
    tc.seed = p.seed;
    std::string lines;
    TrainHooks hooks;
    hooks.on_metrics = [&](const EpochMetrics& m) {
      lines += nlohmann::json{{"epoch", m.epoch}, {"split", m.split}, {"loss", m.loss}, {"accuracy", m.accuracy}}.dump() +
               "\n";
      log() << "[" << p.key << "] epoch " << m.epoch << " " << m.split << " loss " << detail::fmt(m.loss)
            << " acc " << detail::fmt(m.accuracy) << "\n";
    };
    const auto& tr = train_set();
    const auto& va = val_set();
    auto res = r.adv ? train_adversarial(model, tr, tc, *r.adv, &va, hooks) : train_standard(model, tr, tc, &va, hooks);
    w.checkpoint(p.dir + "/model.ckpt", model);
    if (res.early_checkpoint) w.checkpoint(p.dir + "/early.ckpt", *res.early_checkpoint);
    w.text(p.dir + "/metrics.jsonl", lines);
  }

  void run_attack(const StagePlan& p, StageWriter& w) {
    const auto& a = attack(p.attack_id);
    auto model = load_model(p.model_id);
    std::vector<ImageTensor> recon;
    nlohmann::json results = nlohmann::json::array();
    auto record = [&](InversionResult res, int cls, std::uint64_t s, nlohmann::json extra) {
      res.model_id = p.model_id;
      res.attack_id = a.id;
      nlohmann::json j = res;
      j.update(extra);
      const std::string png = p.dir + "/c" + std::to_string(cls) + "_s" + std::to_string(s) +
                              (extra.contains("sample") ? "_" + std::to_string(extra["sample"].get<int>()) : "") + ".png";
      j["image_index"] = recon.size();
      j["png"] = png;
      w.png(png, res.image);
      recon.push_back(std::move(res.image));
      results.push_back(std::move(j));
    };

    if (a.kind == AttackKind::gan) {
      GanInversionConfig cfg = a.gan;
      cfg.seed = p.seed;
      ShadowDataset shadow = make_shadow(val_set());
      if (!disjoint(train_set(), shadow)) throw ConfigError("shadow data overlaps the target training set");
      std::string losses;
      GanHooks<float> hooks;
      hooks.on_epoch = [&](const GanEpochLosses& e) {
        losses += nlohmann::json(e).dump() + "\n";
        log() << "[" << p.key << "] epoch " << e.epoch << " d_realfake " << detail::fmt(e.d_realfake) << " g_target "
              << detail::fmt(e.g_target_class) << "\n";
      };
      hooks.on_samples = [&](int epoch, Generator<float>& gen) {
        std::vector<ImageTensor> grid;
        for (int c = 0; c < kCifarClasses; ++c)
          for (auto& img : generate_samples(gen, c, 8, p.seed ^ 0x5eed)) grid.push_back(std::move(img));
        std::ostringstream name;
        name << p.dir << "/samples/epoch_" << std::setw(3) << std::setfill('0') << epoch << ".png";
        w.png(name.str(), tile_images(grid, 8));
      };
      auto trained = train_inversion_gan(model, shadow, cfg, hooks);
      auto& gen = trained.state->gen;
      w.emit(p.dir + "/generator.ckpt", [&](const std::filesystem::path& f) { save_generator(gen, f); });
      w.text(p.dir + "/losses.jsonl", losses);
      for (int c : a.classes)
        for (std::uint64_t s : a.seeds) {
          auto imgs = generate_samples(gen, c, a.samples_per_class, derive_seed(p.seed, c * 1000003ULL + s));
          for (int k = 0; k < static_cast<int>(imgs.size()); ++k) {
            InversionResult res;
            res.target_class = c;
            res.seed = s;
            res.iterations_run = cfg.epochs;
            res.final_activation = model.class_activation(imgs[k], c);
            res.initial_activation = res.final_activation;
            res.image = std::move(imgs[k]);
            record(std::move(res), c, s, {{"sample", k}});
          }
        }
    } else {
      const auto& tr = train_set();
      for (int c : a.classes)
        for (std::uint64_t s : a.seeds) {
          const std::uint64_t run_seed = derive_seed(p.seed, c * 1000003ULL + s);
          nlohmann::json extra = nlohmann::json::object();
          const ImageTensor* seed_img = nullptr;
          if (a.seeded) {
            const auto idx = tr.indices_of_class(c);
            if (idx.empty()) throw ConfigError("no training image of class " + std::to_string(c) + " to seed from");
            const std::size_t pick = idx[run_seed % idx.size()];
            seed_img = &tr.images[pick];
            extra["seed_train_index"] = pick;
            extra["seed_source_index"] = tr.source_indices[pick];
          }
          InversionResult res;
          if (a.kind == AttackKind::pgd) {
            PgdInversionConfig cfg = a.pgd;
            cfg.target_class = c;
            cfg.seed = run_seed;
            res = seed_img ? invert_from_seed_image(model, *seed_img, cfg) : invert_class(model, cfg);
          } else {
            DreamConfig cfg = a.dream;
            cfg.target_class = c;
            cfg.seed = run_seed;
            if (seed_img) cfg.init.mode = InitMode::seed_image;
            res = invert_class_multiscale(model, cfg, seed_img).result;
            if (seed_img) res.displacement_l2 = l2_distance(res.image, *seed_img);
          }
          res.seed = s;
          log() << "[" << p.key << "] class " << c << " seed " << s << " activation "
                << detail::fmt(res.final_activation, 2) << " hit at "
                << (res.iterations_to_target ? std::to_string(*res.iterations_to_target) : "never") << "\n";
          record(std::move(res), c, s, extra);
        }
    }
    w.images(p.dir + "/reconstructions.bin", recon);
    w.json(p.dir + "/results.json", results);
    const int cols = a.kind == AttackKind::gan ? a.samples_per_class * static_cast<int>(a.seeds.size())
                                               : static_cast<int>(a.seeds.size());
    w.png(p.dir + "/grid.png", tile_images(recon, cols));
  }

  void run_privacy(const StagePlan& p, StageWriter& w) {
    const auto& a = attack(p.attack_id);
    auto model = load_model(p.model_id);
    const auto& tr = train_set();
    auto& feats = features(p.model_id, model);
    const std::string adir = "attacks/" + a.id + "/" + p.model_id;
    const auto results = detail::read_json(root_ / adir / "results.json");
    const auto recon = load_image_set(root_ / adir / "reconstructions.bin");
    if (results.size() != recon.size()) throw IoError(adir + ": results and reconstructions differ in length");

    std::vector<ReconstructionRecord> recs;
    std::vector<ImageTensor> pairs;
    std::vector<double> iters, disp;
    double act_sum = 0, train_act_sum = 0;
    int censored = 0;
    for (std::size_t i = 0; i < recon.size(); ++i) {
      const auto& r = results[i];
      ReconstructionRecord rec;
      rec.model_id = p.model_id;
      rec.attack_id = a.id;
      rec.feature_model_id = p.model_id;
      rec.class_id = r.at("target_class");
      rec.seed = r.at("seed");
      const auto nn_match = nearest_by_cosine(feature_vector(model, recon[i]), feats.cache);
      rec.nearest_index = nn_match.index;
      rec.nearest_source_index = static_cast<std::size_t>(tr.source_indices[nn_match.index]);
      rec.similarity = nn_match.similarity;
      rec.privacy_loss_l2 = privacy_loss_l2(recon[i], tr.images[nn_match.index]);
      rec.iterations_run = r.at("iterations_run").get<int>();
      if (!r["iterations_to_target"].is_null()) rec.iterations_to_target = r["iterations_to_target"].get<int>();
      if (r.contains("displacement_l2")) rec.displacement_l2 = r["displacement_l2"].get<double>();
      if (spec_.metrics.activation_stats) {
        rec.activation = model.class_activation(recon[i], rec.class_id);
        rec.train_activation_mean = feats.class_mean_activation[static_cast<std::size_t>(rec.class_id)];
        act_sum += *rec.activation;
        train_act_sum += *rec.train_activation_mean;
      }
      if (a.kind != AttackKind::gan) {
        // Runs that never reach the target count as budget + 1.
        if (rec.iterations_to_target)
          iters.push_back(*rec.iterations_to_target);
        else {
          iters.push_back(*rec.iterations_run + 1);
          ++censored;
        }
      }
      if (rec.displacement_l2) disp.push_back(*rec.displacement_l2);
      pairs.push_back(recon[i]);
      pairs.push_back(tr.images[nn_match.index]);
      recs.push_back(rec);
    }
    const auto agg = aggregate_records(recs);
    nlohmann::json summary = {{"records", recs.size()}};
    if (!agg.empty()) {
      summary["avg_similarity"] = agg[0].avg_similarity_over_runs;
      summary["avg_max_similarity"] = agg[0].avg_max_similarity_over_classes;
      summary["avg_privacy_loss_l2"] = agg[0].avg_privacy_loss_l2;
    }
    summary["median_iterations_to_target"] = iters.empty() ? nlohmann::json() : nlohmann::json(detail::median(iters));
    summary["censored_runs"] = iters.empty() ? nlohmann::json() : nlohmann::json(censored);
    summary["activation_ratio"] = spec_.metrics.activation_stats && train_act_sum != 0 && !recs.empty()
                                      ? detail::num_or_null(act_sum / train_act_sum)
                                      : nlohmann::json();
    double dsum = 0;
    for (double d : disp) dsum += d;
    summary["mean_displacement_l2"] = disp.empty() ? nlohmann::json() : nlohmann::json(dsum / disp.size());
    w.json(p.dir + "/privacy.json", {{"records", recs}, {"summary", summary}});
    // Each reconstruction next to its nearest training image.
    if (!pairs.empty()) w.png(p.dir + "/nearest.png", tile_images(pairs, 2));
  }

  void run_evaluate(const StagePlan& p, StageWriter& w) {
    auto model = load_model(p.model_id);
    const auto& tr = train_set();
    const auto& va = val_set();
    const auto et = evaluate(model, tr);
    const auto ev = evaluate(model, va);
    nlohmann::json out = {{"model_id", p.model_id},
                          {"regime", to_string(spec_.model(p.model_id).regime())},
                          {"epochs", model.meta.epochs},
                          {"train_accuracy", et.accuracy},
                          {"train_loss", et.loss},
                          {"val_accuracy", ev.accuracy},
                          {"val_loss", ev.loss},
                          {"radius", nullptr}};
    log() << "[" << p.key << "] train acc " << detail::fmt(et.accuracy) << " val acc " << detail::fmt(ev.accuracy)
          << "\n";
    if (spec_.metrics.radius) {
      const std::size_t n = std::min(spec_.metrics.radius_images, va.size());
      std::span<const ImageTensor> imgs(va.images.data(), n);
      std::span<const int> labels(va.labels.data(), n);
      const auto rr = adversarial_radius(model, imgs, labels, spec_.metrics.radius_config);
      nlohmann::json rj = rr;
      if (rr.samples.empty()) rj["mean_radius_l2"] = rj["median_radius_l2"] = nullptr;  // nothing classified correctly
      rj["attack_config_hash"] = config_hash(nlohmann::json(spec_.metrics.radius_config));
      nlohmann::json per = nlohmann::json::array();
      for (const auto& s : rr.samples)
        per.push_back({{"index", s.index}, {"radius_l2", s.radius_l2}, {"epsilon", s.epsilon}, {"censored", s.censored}});
      rj["samples"] = per;
      out["radius"] = rj;
      log() << "[" << p.key << "] mean radius " << detail::fmt(rr.mean_radius) << " (" << rr.censored
            << " censored)\n";
    }
    w.json(p.dir + "/evaluate.json", out);
  }
};

inline RunSummary run_experiment(const ExperimentSpec& spec, const RunOptions& opt = {}) {
  return ExperimentRunner(spec, opt).run();
}

// Rebuilds the report tables of an existing run directory.
inline RunSummary report(const std::filesystem::path& output_dir, std::ostream* log = &std::cerr) {
  const auto m = read_manifest(output_dir);
  if (!m.contains("stages") || m["stages"].empty()) throw std::runtime_error("report: empty manifest");
  ExperimentSpec spec = parse_experiment(m.at("spec"));
  spec.output_dir = output_dir.string();
  RunOptions opt;
  opt.report_only = true;
  opt.log = log;
  return run_experiment(spec, opt);
}

}  // namespace mivb
