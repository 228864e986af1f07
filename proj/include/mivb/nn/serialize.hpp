#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mivb/errors.hpp"
#include "mivb/nn/tensor.hpp"

namespace mivb::nn {

// Versioned container: 8-byte magic, u32 format version, u64 header length,
// JSON header, then each tensor as u64 element count + float64 values.
inline constexpr char kCheckpointMagic[8] = {'M', 'I', 'V', 'B', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_checkpoint_file(const std::filesystem::path& path, const nlohmann::json& header,
                           const std::vector<const Tensor<T>*>& tensors) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    const std::string h = header.dump();
    const std::uint64_t hl = h.size();
    out.write(kCheckpointMagic, 8);
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
    out.write(reinterpret_cast<const char*>(&hl), sizeof hl);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto* t : tensors) {
      const std::uint64_t n = t->size();
      out.write(reinterpret_cast<const char*>(&n), sizeof n);
      std::vector<double> buf(t->storage().begin(), t->storage().end());
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(double)));
    }
    if (!out) throw IoError("short write on checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

struct CheckpointReader {
  nlohmann::json header;
  std::vector<std::vector<double>> tensors;
};

inline CheckpointReader read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw IoError("not a checkpoint file: " + path.string());
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("checkpoint " + path.string() + " has format version " + std::to_string(version) +
                                 ", expected " + std::to_string(kCheckpointVersion));
  std::uint64_t hl = 0;
  in.read(reinterpret_cast<char*>(&hl), sizeof hl);
  std::string h(hl, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hl));
  if (!in) throw IoError("truncated checkpoint header: " + path.string());
  CheckpointReader r;
  r.header = nlohmann::json::parse(h);
  while (true) {
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    if (in.eof()) break;
    if (!in) throw IoError("corrupt checkpoint body: " + path.string());
    std::vector<double> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint tensor: " + path.string());
    r.tensors.push_back(std::move(buf));
  }
  return r;
}

template <typename T>
void assign_tensors(const CheckpointReader& r, const std::vector<Tensor<T>*>& dst, const std::string& what) {
  if (r.tensors.size() != dst.size())
    throw IoError(what + ": checkpoint holds " + std::to_string(r.tensors.size()) + " tensors, model expects " +
                  std::to_string(dst.size()));
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (r.tensors[i].size() != dst[i]->size()) throw IoError(what + ": tensor " + std::to_string(i) + " size mismatch");
    for (std::size_t j = 0; j < dst[i]->size(); ++j) (*dst[i])[j] = static_cast<T>(r.tensors[i][j]);
  }
}

}  // namespace mivb::nn
