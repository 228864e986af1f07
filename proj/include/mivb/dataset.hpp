#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mivb/errors.hpp"
#include "mivb/image.hpp"

namespace mivb {

enum class Split { train, validation };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "validation"; }

inline constexpr int kCifarSide = 32;
inline constexpr int kCifarChannels = 3;
inline constexpr int kCifarClasses = 10;
inline constexpr std::size_t kCifarRecordBytes = 1 + 32 * 32 * 3;

struct LabeledDataset {
  std::vector<ImageTensor> images;
  std::vector<int> labels;
  Split split = Split::train;
  int num_classes = kCifarClasses;
  // Record index within the source split, kept for disjointness bookkeeping.
  std::vector<int> source_indices;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }

  void validate() const {
    if (images.size() != labels.size() || images.size() != source_indices.size())
      throw IngestionError("dataset: images, labels and indices differ in length");
    for (int y : labels)
      if (y < 0 || y >= num_classes) throw IngestionError("dataset: label " + std::to_string(y) + " out of range");
  }

  // Indices of all items with the given label.
  std::vector<std::size_t> indices_of_class(int cls) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) out.push_back(i);
    return out;
  }

  LabeledDataset select(std::span<const std::size_t> idx) const {
    LabeledDataset out;
    out.split = split;
    out.num_classes = num_classes;
    for (std::size_t i : idx) {
      out.images.push_back(images.at(i));
      out.labels.push_back(labels.at(i));
      out.source_indices.push_back(source_indices.at(i));
    }
    return out;
  }
};

// Data from the target distribution but outside the target training split.
struct ShadowDataset {
  LabeledDataset data;
};

// The validation split plays the shadow role. Throws if given training data.
inline ShadowDataset make_shadow(LabeledDataset validation) {
  if (validation.split != Split::validation) throw ConfigError("shadow data must come from the validation split");
  return ShadowDataset{std::move(validation)};
}

// Index bookkeeping only: items are identified by (split, source index).
inline bool disjoint(const LabeledDataset& target_train, const ShadowDataset& shadow) {
  if (target_train.split != shadow.data.split) return true;
  std::set<int> seen(target_train.source_indices.begin(), target_train.source_indices.end());
  return std::none_of(shadow.data.source_indices.begin(), shadow.data.source_indices.end(),
                      [&](int i) { return seen.count(i) > 0; });
}

struct LoadOptions {
  std::size_t subset_size = 0;  // 0 = full split
  std::uint64_t seed = 0;       // subset selection
  int downscale = 1;            // integer box-downscale factor
};

inline std::vector<std::filesystem::path> cifar_files(const std::filesystem::path& dir, Split split) {
  if (split == Split::validation) return {dir / "test_batch.bin"};
  std::vector<std::filesystem::path> files;
  for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  return files;
}

// Reads the CIFAR-10 binary layout: records of 1 label byte followed by
// 1024 R, 1024 G, 1024 B bytes. Any positive multiple of the record size is
// accepted per file so smaller cached datasets use the same reader.
inline LabeledDataset load_dataset(const std::filesystem::path& dir, Split split, const LoadOptions& opt = {}) {
  std::vector<std::uint8_t> raw;
  for (const auto& f : cifar_files(dir, split)) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw IngestionError("missing dataset file: " + f.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0)
      throw IngestionError("corrupt dataset file (size " + std::to_string(bytes.size()) +
                           " is not a multiple of the record size): " + f.string());
    for (std::size_t r = 0; r < bytes.size(); r += kCifarRecordBytes)
      if (bytes[r] >= kCifarClasses) throw IngestionError("corrupt dataset file (bad label): " + f.string());
    raw.insert(raw.end(), bytes.begin(), bytes.end());
  }
  const std::size_t total = raw.size() / kCifarRecordBytes;
  std::vector<std::size_t> pick(total);
  std::iota(pick.begin(), pick.end(), 0);
  if (opt.subset_size > 0 && opt.subset_size < total) {
    std::mt19937_64 rng(opt.seed);
    std::shuffle(pick.begin(), pick.end(), rng);
    pick.resize(opt.subset_size);
    std::sort(pick.begin(), pick.end());
  }
  LabeledDataset ds;
  ds.split = split;
  ds.images.reserve(pick.size());
  constexpr int plane = kCifarSide * kCifarSide;
  for (std::size_t r : pick) {
    const std::uint8_t* rec = raw.data() + r * kCifarRecordBytes;
    std::vector<float> px(plane * kCifarChannels);
    for (int c = 0; c < kCifarChannels; ++c)
      for (int i = 0; i < plane; ++i) px[std::size_t(i) * kCifarChannels + c] = rec[1 + c * plane + i];
    ImageTensor img(kCifarSide, kCifarSide, kCifarChannels, std::move(px));
    ds.images.push_back(opt.downscale > 1 ? downscale_box(img, opt.downscale) : std::move(img));
    ds.labels.push_back(rec[0]);
    ds.source_indices.push_back(static_cast<int>(r));
  }
  ds.validate();
  return ds;
}

// Writes 32x32x3 images in the CIFAR binary layout (training data spread over
// the five batch files).
inline void write_cifar_binary(const std::filesystem::path& dir, Split split, const std::vector<ImageTensor>& images,
                               const std::vector<int>& labels) {
  std::filesystem::create_directories(dir);
  const auto files = cifar_files(dir, split);
  const std::size_t per_file = (images.size() + files.size() - 1) / files.size();
  constexpr int plane = kCifarSide * kCifarSide;
  for (std::size_t f = 0; f < files.size(); ++f) {
    std::ofstream out(files[f], std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + files[f].string());
    for (std::size_t i = f * per_file; i < std::min(images.size(), (f + 1) * per_file); ++i) {
      const auto& img = images[i];
      if (img.height() != kCifarSide || img.width() != kCifarSide || img.channels() != kCifarChannels)
        throw std::invalid_argument("write_cifar_binary: images must be 32x32x3");
      std::vector<char> rec(kCifarRecordBytes);
      rec[0] = static_cast<char>(labels[i]);
      for (int c = 0; c < kCifarChannels; ++c)
        for (int p = 0; p < plane; ++p)
          rec[1 + c * plane + p] = static_cast<char>(std::lround(img[std::size_t(p) * kCifarChannels + c]));
      out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic CIFAR-like data: ten shape classes drawn over noisy gradient
// backgrounds. Each class has a characteristic shape, a preferred object hue
// and a preferred background palette; position, scale, colours and noise vary
// per image so the task is not linearly trivial.

namespace synth {

struct Rgb {
  double r, g, b;
};

inline Rgb hue_to_rgb(double hue, double sat, double val) {
  const double h = std::fmod(hue < 0 ? hue + 1.0 : hue, 1.0) * 6.0;
  const int i = static_cast<int>(h);
  const double f = h - i, p = val * (1 - sat), q = val * (1 - sat * f), t = val * (1 - sat * (1 - f));
  switch (i % 6) {
    case 0: return {val, t, p};
    case 1: return {q, val, p};
    case 2: return {p, val, t};
    case 3: return {p, q, val};
    case 4: return {t, p, val};
    default: return {val, p, q};
  }
}

// Signed "inside" test for the class shape in normalized object coordinates u, v in [-1, 1].
inline bool inside(int cls, double u, double v) {
  const double r = std::sqrt(u * u + v * v);
  switch (cls) {
    case 0: return (std::abs(v) < 0.18 && std::abs(u) < 0.95) || (std::abs(u) < 0.18 && v > -0.2 && v < 0.6);  // plane
    case 1: return (v > -0.1 && v < 0.45 && std::abs(u) < 0.9) || (v > -0.45 && v <= -0.1 && std::abs(u) < 0.45);  // car
    case 2: return r < 0.55;                                                                                    // disk
    case 3: return r < 0.85 && r > 0.5;                                                                         // ring
    case 4: return (std::abs(u) < 0.9 && v > -0.2 && v < 0.1) || (v >= 0.1 && v < 0.8 && std::abs(std::abs(u) - 0.6) < 0.12);  // deer
    case 5: return std::abs(u) < 0.65 && std::abs(v) < 0.65;                                                   // square
    case 6: return v > -0.7 && v < 0.7 && std::abs(u) < (v + 0.7) * 0.65;                                       // triangle
    case 7: return std::abs(u - v) < 0.25 || std::abs(u + v) < 0.25;                                            // X
    case 8: return std::abs(v) < 0.25 && std::abs(u) < 0.95;                                                    // horizontal bar
    default: return std::abs(u) < 0.25 && std::abs(v) < 0.95;                                                   // vertical bar
  }
}

inline ImageTensor draw(int cls, std::mt19937_64& rng, int side = kCifarSide) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  // Background: vertical gradient between two colours, class-tinted with probability 0.7.
  const double bg_hue = U(rng) < 0.7 ? cls / 10.0 + 0.5 + 0.06 * N(rng) : U(rng);
  const Rgb top = hue_to_rgb(bg_hue, 0.25 + 0.3 * U(rng), 0.35 + 0.45 * U(rng));
  const Rgb bot = hue_to_rgb(bg_hue + 0.15 * N(rng), 0.25 + 0.3 * U(rng), 0.25 + 0.45 * U(rng));
  // Object colour: class hue with probability 0.75, random otherwise.
  const double obj_hue = U(rng) < 0.75 ? cls / 10.0 + 0.04 * N(rng) : U(rng);
  const Rgb obj = hue_to_rgb(obj_hue, 0.55 + 0.45 * U(rng), 0.55 + 0.45 * U(rng));
  const double scale = side * (0.28 + 0.14 * U(rng));
  const double cx = side / 2.0 + side * 0.12 * N(rng), cy = side / 2.0 + side * 0.12 * N(rng);
  const double angle = 0.25 * N(rng);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double noise = 10.0 + 14.0 * U(rng);
  std::vector<float> px(std::size_t(side) * side * 3);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double t = static_cast<double>(y) / (side - 1);
      double rgb[3] = {top.r + t * (bot.r - top.r), top.g + t * (bot.g - top.g), top.b + t * (bot.b - top.b)};
      const double dx = (x - cx) / scale, dy = (cy - y) / scale;
      const double u = ca * dx - sa * dy, v = sa * dx + ca * dy;
      if (inside(cls, u, v)) {
        rgb[0] = obj.r;
        rgb[1] = obj.g;
        rgb[2] = obj.b;
      }
      for (int c = 0; c < 3; ++c) {
        const double val = 255.0 * rgb[c] + noise * N(rng);
        px[(std::size_t(y) * side + x) * 3 + c] = static_cast<float>(std::clamp(std::round(val), 0.0, 255.0));
      }
    }
  return ImageTensor(side, side, 3, std::move(px));
}

}  // namespace synth

// Balanced synthetic dataset with labels cycling 0..9 in shuffled order.
inline LabeledDataset make_synthetic(std::size_t count, Split split, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ (split == Split::train ? 0x7472616eULL : 0x76616cULL));
  LabeledDataset ds;
  ds.split = split;
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = static_cast<int>(i % kCifarClasses);
  std::shuffle(labels.begin(), labels.end(), rng);
  for (std::size_t i = 0; i < count; ++i) {
    ds.images.push_back(synth::draw(labels[i], rng));
    ds.labels.push_back(labels[i]);
    ds.source_indices.push_back(static_cast<int>(i));
  }
  return ds;
}

// Writes a synthetic dataset in the CIFAR binary layout under `dir`.
inline void write_synthetic_cifar(const std::filesystem::path& dir, std::size_t n_train, std::size_t n_val,
                                  std::uint64_t seed) {
  const auto tr = make_synthetic(n_train, Split::train, seed);
  const auto va = make_synthetic(n_val, Split::validation, seed);
  write_cifar_binary(dir, Split::train, tr.images, tr.labels);
  write_cifar_binary(dir, Split::validation, va.images, va.labels);
}

}  // namespace mivb
