#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mrcn/param_store.hpp"
#include "mrcn/raster_io.hpp"

namespace mrcn {

// Tensors whose names start with this prefix carry run metadata (e.g.
// normalization statistics) and are not model parameters.
inline constexpr const char* kMetaPrefix = "meta.";

inline bool is_meta_name(const std::string& name) { return name.rfind(kMetaPrefix, 0) == 0; }

struct Checkpoint {
  std::uint32_t arch_hash = 0;
  std::uint32_t epoch = 0;
  float best_val_oa = 0;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [k, t] : tensors) {
      if (k == name) return &t;
    }
    return nullptr;
  }
  void put(const std::string& name, Tensor<float> t) {
    for (auto& [k, v] : tensors) {
      if (k == name) {
        v = std::move(t);
        return;
      }
    }
    tensors.emplace_back(name, std::move(t));
  }
};

// FNV-1a, 32 bit.
inline std::uint32_t fnv1a32(const std::string& s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

// Every stored tensor of the store (parameters and BN buffers), by name.
template <typename T>
std::vector<std::pair<std::string, Tensor<float>>> snapshot_params(const ParamStore<T>& store) {
  std::vector<std::pair<std::string, Tensor<float>>> out;
  for (const auto& [name, p] : store) out.emplace_back(name, tensor_cast<float>(p.value));
  return out;
}

// MCKP: "MCKP", u8 version, u32 arch hash, u32 count, then per tensor
// u16 name length, name, u8 rank, rank x u32 dims, f32 payload; trailing
// u32 epoch and f32 best validation OA.
inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
  io::ByteWriter w;
  w.bytes("MCKP", 4);
  w.put<std::uint8_t>(1);
  w.put<std::uint32_t>(ck.arch_hash);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    if (name.size() > 0xFFFF) throw FormatError("tensor name too long: " + name.substr(0, 40));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put<std::uint8_t>(4);
    const Dims& d = t.dims();
    for (std::size_t v : {d.n, d.c, d.h, d.w}) w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
    w.bytes(t.data(), t.size() * sizeof(float));
  }
  w.put<std::uint32_t>(ck.epoch);
  w.put<float>(ck.best_val_oa);
  return w.buffer();
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  io::ByteWriter w;
  const auto bytes = encode_checkpoint(ck);
  w.bytes(bytes.data(), bytes.size());
  w.save(path);
}

inline Checkpoint decode_checkpoint(io::ByteReader& r) {
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "MCKP", 4) != 0) throw FormatError("bad magic in " + r.what());
  const auto version = r.get<std::uint8_t>();
  if (version != 1) throw FormatError("unsupported MCKP version " + std::to_string(version));
  Checkpoint ck;
  ck.arch_hash = r.get<std::uint32_t>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    std::string name(len, '\0');
    r.bytes(name.data(), len);
    const auto rank = r.get<std::uint8_t>();
    if (rank < 1 || rank > 4) throw FormatError("tensor '" + name + "' has unsupported rank");
    std::size_t ext[4] = {1, 1, 1, 1};
    for (std::size_t k = 4 - rank; k < 4; ++k) ext[k] = r.get<std::uint32_t>();
    Tensor<float> t(Dims{ext[0], ext[1], ext[2], ext[3]});
    if (r.remaining() < t.size() * sizeof(float)) throw FormatError("truncated payload in " + r.what());
    r.bytes(t.data(), t.size() * sizeof(float));
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  ck.epoch = r.get<std::uint32_t>();
  ck.best_val_oa = r.get<float>();
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto r = io::ByteReader::load(path);
  return decode_checkpoint(r);
}

// Copies checkpoint tensors into the store. The name sets must match
// exactly (meta tensors aside) and so must the dims.
template <typename T>
void apply_checkpoint(ParamStore<T>& store, const Checkpoint& ck, std::uint32_t expected_hash) {
  if (ck.arch_hash != expected_hash) {
    throw ConfigError("architecture hash mismatch: checkpoint " + std::to_string(ck.arch_hash) +
                      ", model " + std::to_string(expected_hash));
  }
  std::set<std::string> seen;
  for (const auto& [name, t] : ck.tensors) {
    if (is_meta_name(name)) continue;
    if (!store.contains(name)) throw ConfigError("checkpoint has unexpected parameter '" + name + "'");
    auto& p = store.at(name);
    if (p.value.dims() != t.dims()) {
      throw ConfigError("checkpoint parameter '" + name + "' has dims " + t.dims().str() + ", model expects " +
                        p.value.dims().str());
    }
    seen.insert(name);
  }
  for (const auto& [name, p] : store) {
    if (!seen.count(name)) throw ConfigError("checkpoint lacks parameter '" + name + "'");
  }
  for (const auto& [name, t] : ck.tensors) {
    if (is_meta_name(name)) continue;
    auto& v = store.at(name).value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(t[i]);
  }
}

}  // namespace mrcn
