#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "latentcl/latentmodel/model.hpp"

namespace latentcl::latentmodel {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'L', 'C', 'L', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace io {

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError("checkpoint: truncated file");
  return v;
}

}  // namespace io

/// Binary layout: magic, version, model config, then each named tensor as
/// (name, rank, dims, raw doubles). Values are stored bit-exact.
inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  io::put<std::uint32_t>(os, kCheckpointVersion);
  const auto& c = p.config;
  for (std::uint64_t v : {c.d, c.blocks, c.heads, c.ff_mult, c.max_positions, c.d_enc}) io::put(os, v);
  const auto named = p.named_parameters();
  io::put<std::uint64_t>(os, named.size());
  for (const auto& [name, t] : named) {
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::put<std::uint64_t>(os, t.rank());
    for (auto dim : t.shape()) io::put<std::uint64_t>(os, dim);
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw CheckpointError("checkpoint: write failed for " + path.string());
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError("checkpoint: bad magic in " + path.string());
  }
  const auto version = io::get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  ModelConfig c;
  c.d = io::get<std::uint64_t>(is);
  c.blocks = io::get<std::uint64_t>(is);
  c.heads = io::get<std::uint64_t>(is);
  c.ff_mult = io::get<std::uint64_t>(is);
  c.max_positions = io::get<std::uint64_t>(is);
  c.d_enc = io::get<std::uint64_t>(is);
  if (c.d == 0 || c.heads == 0 || c.d % c.heads != 0 || c.d > 4096 || c.blocks > 64 || c.max_positions > 1 << 16) {
    throw CheckpointError("checkpoint: implausible model config");
  }
  Rng scratch(0);
  ModelParams p = ModelParams::init(c, scratch);
  auto named = p.named_parameters();
  const auto count = io::get<std::uint64_t>(is);
  if (count != named.size()) {
    throw CheckpointError("checkpoint: expected " + std::to_string(named.size()) + " tensors, found " +
                          std::to_string(count));
  }
  for (auto& [name, t] : named) {
    const auto len = io::get<std::uint32_t>(is);
    if (len > 256) throw CheckpointError("checkpoint: corrupt tensor name");
    std::string got(len, '\0');
    if (!is.read(got.data(), len)) throw CheckpointError("checkpoint: truncated file");
    if (got != name) throw CheckpointError("checkpoint: expected tensor " + name + ", found " + got);
    const auto rank = io::get<std::uint64_t>(is);
    Shape shape;
    for (std::uint64_t i = 0; i < rank && i < 8; ++i) shape.push_back(io::get<std::uint64_t>(is));
    if (shape != t.shape()) {
      throw CheckpointError("checkpoint: tensor " + name + " has shape " + shape_str(shape) + ", expected " +
                            shape_str(t.shape()));
    }
    auto data = t.mutable_data();
    if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw CheckpointError("checkpoint: truncated data for " + name);
    }
  }
  return p;
}

}  // namespace latentcl::latentmodel
