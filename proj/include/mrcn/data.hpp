#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mrcn/arch.hpp"
#include "mrcn/raster_io.hpp"
#include "mrcn/rng.hpp"

namespace mrcn {

enum class Role { train, validation, test };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::train: return "train";
    case Role::validation: return "validation";
    default: return "test";
  }
}
inline Role parse_role(const std::string& s) {
  if (s == "train") return Role::train;
  if (s == "validation" || s == "val") return Role::validation;
  if (s == "test") return Role::test;
  throw DataError("unknown tile role '" + s + "'");
}

// One co-registered tile: PAN (1,1,H,W), MS (1,4,H/4,W/4), labels
// (1,1,H,W) with 255 for unlabeled pixels.
struct Scene {
  std::string name;
  Role role = Role::train;
  Tensor<float> pan;
  Tensor<float> ms;
  Tensor<std::uint8_t> labels;

  std::size_t height() const { return pan.dims().h; }
  std::size_t width() const { return pan.dims().w; }

  void validate() const {
    const Dims& p = pan.dims();
    const Dims& m = ms.dims();
    const Dims& l = labels.dims();
    if (p.n != 1 || p.c != 1) throw DataError(name + ": PAN must be a single band, got " + p.str());
    if (m.n != 1 || m.c != kMsBands) throw DataError(name + ": MS must have 4 bands, got " + m.str());
    if (p.h != kPanScale * m.h || p.w != kPanScale * m.w) {
      throw DataError(name + ": PAN " + p.str() + " is not 4x MS " + m.str());
    }
    if (l.n != 1 || l.c != 1 || l.h != p.h || l.w != p.w) {
      throw DataError(name + ": label raster " + l.str() + " does not match PAN " + p.str());
    }
  }

  std::size_t labeled_count() const {
    return static_cast<std::size_t>(
        std::count_if(labels.data(), labels.data() + labels.size(), [](std::uint8_t v) { return v != kUnlabeled; }));
  }
};

// One-hot targets (N,C,H,W) and mask (N,1,H,W) from a label raster
// (N,1,H,W). Unlabeled pixels get an all-zero target and mask 0.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> one_hot_encode(const Tensor<std::uint8_t>& labels, std::size_t num_classes) {
  const Dims& d = labels.dims();
  if (d.c != 1) throw ShapeError("label raster must have one channel");
  Tensor<T> target(Dims{d.n, num_classes, d.h, d.w});
  Tensor<T> mask(d);
  const std::size_t P = d.plane();
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t i = 0; i < P; ++i) {
      const std::uint8_t v = labels[n * P + i];
      if (v == kUnlabeled) continue;
      if (v >= num_classes) {
        throw DataError("label value " + std::to_string(v) + " outside [0," + std::to_string(num_classes) + ")");
      }
      target[(n * num_classes + v) * P + i] = T{1};
      mask[n * P + i] = T{1};
    }
  }
  return {std::move(target), std::move(mask)};
}

// Per-band value range; band 0 is PAN, 1..4 are the MS bands.
struct BandStats {
  std::array<float, 1 + kMsBands> min{};
  std::array<float, 1 + kMsBands> max{};
};

// Range of each band over the training tiles.
inline BandStats band_stats(const std::vector<Scene>& scenes) {
  BandStats s;
  s.min.fill(std::numeric_limits<float>::infinity());
  s.max.fill(-std::numeric_limits<float>::infinity());
  bool any = false;
  for (const auto& sc : scenes) {
    if (sc.role != Role::train) continue;
    any = true;
    for (float v : sc.pan.values()) {
      s.min[0] = std::min(s.min[0], v);
      s.max[0] = std::max(s.max[0], v);
    }
    const std::size_t P = sc.ms.dims().plane();
    for (std::size_t b = 0; b < kMsBands; ++b) {
      for (std::size_t i = 0; i < P; ++i) {
        const float v = sc.ms[b * P + i];
        s.min[b + 1] = std::min(s.min[b + 1], v);
        s.max[b + 1] = std::max(s.max[b + 1], v);
      }
    }
  }
  if (!any) throw DataError("no training tiles to compute normalization statistics from");
  return s;
}

// (v - min) / (max - min), clamped to [0, 1], applied per channel.
inline void normalize_bands(Tensor<float>& t, const float* mins, const float* maxs) {
  const Dims& d = t.dims();
  for (std::size_t c = 0; c < d.c; ++c) {
    if (!(maxs[c] > mins[c])) throw DataError("degenerate band " + std::to_string(c) + ": max <= min");
    const double lo = mins[c];
    const double span = static_cast<double>(maxs[c]) - lo;
    for (std::size_t n = 0; n < d.n; ++n) {
      float* p = t.plane(n, c);
      for (std::size_t i = 0; i < d.plane(); ++i) {
        p[i] = static_cast<float>(std::clamp((static_cast<double>(p[i]) - lo) / span, 0.0, 1.0));
      }
    }
  }
}

inline void normalize_scene(Scene& s, const BandStats& st) {
  normalize_bands(s.pan, st.min.data(), st.max.data());
  normalize_bands(s.ms, st.min.data() + 1, st.max.data() + 1);
}

// Position of a patch: tile index and the PAN pixel at window index (2M, 2M).
struct PatchCenter {
  std::uint32_t tile = 0;
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  friend bool operator==(const PatchCenter&, const PatchCenter&) = default;
};

// Labeled pixels that can be the center (2M, 2M) of a 4M x 4M window lying
// fully inside the tile whose top-left corner falls on an MS pixel
// boundary, so the MS window stays co-registered.
inline std::vector<PatchCenter> eligible_centers(const Scene& s, std::uint32_t tile, std::size_t M) {
  std::vector<PatchCenter> out;
  const std::size_t H = s.height(), W = s.width(), half = 2 * M;
  if (H < 4 * M || W < 4 * M) return out;
  const std::size_t first = half;
  for (std::size_t r = first; r + half <= H; r += kPanScale) {
    for (std::size_t c = first; c + half <= W; c += kPanScale) {
      if (s.labels[r * W + c] != kUnlabeled) {
        out.push_back({tile, static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c)});
      }
    }
  }
  return out;
}

// Draws `count` centers uniformly, with replacement, from the eligible
// centers of the scenes with the given role.
inline std::vector<PatchCenter> sample_centers(const std::vector<Scene>& scenes, Role role, std::size_t M,
                                               std::size_t count, Rng& rng) {
  std::vector<PatchCenter> pool;
  for (std::size_t t = 0; t < scenes.size(); ++t) {
    if (scenes[t].role != role) continue;
    auto e = eligible_centers(scenes[t], static_cast<std::uint32_t>(t), M);
    pool.insert(pool.end(), e.begin(), e.end());
  }
  if (pool.empty()) throw DataError(std::string("no eligible patch centers in ") + to_string(role) + " tiles");
  std::vector<PatchCenter> out(count);
  for (auto& c : out) c = pool[rng.below(pool.size())];
  return out;
}

template <typename T>
struct PatchBatch {
  Tensor<T> pan;     // (N,1,4M,4M)
  Tensor<T> ms;      // (N,4,M,M)
  Tensor<T> target;  // (N,C,4M,4M)
  Tensor<T> mask;    // (N,1,4M,4M)
  Tensor<std::uint8_t> labels;
};

// Cuts the windows around `centers[idx[k]]` into one batch.
template <typename T>
PatchBatch<T> extract_batch(const std::vector<Scene>& scenes, const std::vector<PatchCenter>& centers,
                            const std::vector<std::size_t>& idx, std::size_t M, std::size_t num_classes) {
  const std::size_t N = idx.size(), S = 4 * M;
  PatchBatch<T> b;
  b.pan = Tensor<T>(Dims{N, 1, S, S});
  b.ms = Tensor<T>(Dims{N, kMsBands, M, M});
  b.labels = Tensor<std::uint8_t>(Dims{N, 1, S, S});
  for (std::size_t k = 0; k < N; ++k) {
    const PatchCenter& pc = centers.at(idx[k]);
    const Scene& sc = scenes.at(pc.tile);
    const std::size_t r0 = pc.row - 2 * M, c0 = pc.col - 2 * M, W = sc.width();
    for (std::size_t i = 0; i < S; ++i) {
      for (std::size_t j = 0; j < S; ++j) {
        b.pan[(k * S + i) * S + j] = static_cast<T>(sc.pan[(r0 + i) * W + c0 + j]);
        b.labels[(k * S + i) * S + j] = sc.labels[(r0 + i) * W + c0 + j];
      }
    }
    const std::size_t mr0 = r0 / kPanScale, mc0 = c0 / kPanScale, MW = sc.ms.dims().w, MP = sc.ms.dims().plane();
    for (std::size_t band = 0; band < kMsBands; ++band)
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < M; ++j)
          b.ms[((k * kMsBands + band) * M + i) * M + j] = static_cast<T>(sc.ms[band * MP + (mr0 + i) * MW + mc0 + j]);
  }
  auto [target, mask] = one_hot_encode<T>(b.labels, num_classes);
  b.target = std::move(target);
  b.mask = std::move(mask);
  return b;
}

// ---- synthetic scenes ----

struct SyntheticConfig {
  std::size_t tile_size = 256;  // PAN pixels, square
  std::size_t num_classes = 6;
  double label_fraction = 0.05;
  std::size_t voronoi_sites = 0;  // 0: one per 48x48 PAN pixels
  double ms_noise = 0.03;
  double pan_noise = 0.03;
  double texture_amplitude = 0.12;
  double signature_offset = 0.015;  // spectral separation of the classes within a pair
  double speckle_fraction = 0.0;    // share of pixels covered by appearance-swapped blobs
  std::size_t speckle_size = 6;
  std::size_t train_tiles = 2;
  std::size_t validation_tiles = 1;
  std::size_t test_tiles = 2;

  void validate() const {
    if (tile_size % kPanScale != 0 || tile_size < 32) throw ConfigError("tile_size must be a multiple of 4 and >= 32");
    if (num_classes < 2 || num_classes > 8) throw ConfigError("synthetic num_classes must be in [2, 8]");
    if (!(label_fraction > 0 && label_fraction <= 1)) throw ConfigError("label_fraction must be in (0, 1]");
    if (ms_noise < 0 || pan_noise < 0 || texture_amplitude < 0) throw ConfigError("noise levels must be >= 0");
    if (speckle_fraction < 0 || speckle_fraction >= 1) throw ConfigError("speckle_fraction must be in [0, 1)");
    if (train_tiles + validation_tiles + test_tiles == 0) throw ConfigError("no tiles requested");
  }
};

// Class appearance shared by all tiles of one synthetic dataset. Classes
// come in pairs (2q, 2q+1) with nearly equal spectra; within a pair they are
// told apart by the PAN texture period (coarse vs fine stripes).
struct ClassAppearance {
  std::vector<std::array<double, kMsBands>> signature;
  std::vector<double> period;
  std::vector<double> angle;
};

inline ClassAppearance make_appearance(const SyntheticConfig& cfg, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xC1A55));
  ClassAppearance a;
  const std::size_t pairs = (cfg.num_classes + 1) / 2;
  std::vector<std::array<double, kMsBands>> base(pairs);
  for (auto& b : base)
    for (auto& v : b) v = rng.uniform(0.2, 0.8);
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    auto s = base[c / 2];
    const double sign = c % 2 == 0 ? -1.0 : 1.0;
    for (auto& v : s) v += sign * cfg.signature_offset;
    a.signature.push_back(s);
    a.period.push_back(c % 2 == 0 ? 16.0 : 5.0);
    a.angle.push_back(rng.uniform(0, std::numbers::pi));
  }
  return a;
}

inline Scene synth_scene(const SyntheticConfig& cfg, const ClassAppearance& look, Rng& rng) {
  cfg.validate();
  const std::size_t S = cfg.tile_size, C = cfg.num_classes, P = S * S;
  const std::size_t sites = cfg.voronoi_sites ? cfg.voronoi_sites : std::max<std::size_t>(4, P / (48 * 48));

  // Voronoi partition: nearest site wins, ties to the lower site index.
  std::vector<double> sy(sites), sx(sites);
  std::vector<std::uint8_t> site_class(sites);
  std::vector<double> site_gain(sites);
  for (std::size_t k = 0; k < sites; ++k) {
    sy[k] = rng.uniform(0, static_cast<double>(S));
    sx[k] = rng.uniform(0, static_cast<double>(S));
    site_class[k] = static_cast<std::uint8_t>(rng.below(C));
    site_gain[k] = 1.0 + 0.05 * rng.normal();
  }
  std::vector<std::uint8_t> cls(P);
  std::vector<std::uint32_t> cell(P);
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < S; ++j) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t k = 0; k < sites; ++k) {
        const double dy = static_cast<double>(i) + 0.5 - sy[k], dx = static_cast<double>(j) + 0.5 - sx[k];
        const double d2 = dy * dy + dx * dx;
        if (d2 < best) {
          best = d2;
          arg = k;
        }
      }
      cls[i * S + j] = site_class[arg];
      cell[i * S + j] = static_cast<std::uint32_t>(arg);
    }
  }

  // Appearance class: equals the label except inside speckle blobs.
  std::vector<std::uint8_t> look_cls = cls;
  if (cfg.speckle_fraction > 0) {
    const std::size_t b = cfg.speckle_size;
    const std::size_t blobs = static_cast<std::size_t>(std::llround(cfg.speckle_fraction * P / double(b * b)));
    for (std::size_t k = 0; k < blobs; ++k) {
      const std::size_t r0 = rng.below(S - b + 1), c0 = rng.below(S - b + 1);
      const auto other = static_cast<std::uint8_t>(rng.below(C));
      for (std::size_t i = r0; i < r0 + b; ++i)
        for (std::size_t j = c0; j < c0 + b; ++j) look_cls[i * S + j] = other;
    }
  }

  Scene sc;
  sc.pan = Tensor<float>(Dims{1, 1, S, S});
  sc.ms = Tensor<float>(Dims{1, kMsBands, S / kPanScale, S / kPanScale});
  sc.labels = Tensor<std::uint8_t>(Dims{1, 1, S, S}, kUnlabeled);
  std::vector<double> fine(kMsBands * P);
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < S; ++j) {
      const std::size_t p = i * S + j;
      const std::size_t c = look_cls[p];
      const double g = site_gain[cell[p]];
      double pan = 0;
      for (std::size_t b = 0; b < kMsBands; ++b) {
        const double v = look.signature[c][b] * g;
        fine[b * P + p] = v + cfg.ms_noise * rng.normal();
        pan += 0.25 * v;
      }
      const double u = std::cos(look.angle[c]) * static_cast<double>(j) + std::sin(look.angle[c]) * static_cast<double>(i);
      pan += cfg.texture_amplitude * std::sin(2 * std::numbers::pi * u / look.period[c]);
      sc.pan[p] = static_cast<float>(pan + cfg.pan_noise * rng.normal());
    }
  }
  const std::size_t MS = S / kPanScale;
  for (std::size_t b = 0; b < kMsBands; ++b)
    for (std::size_t i = 0; i < MS; ++i)
      for (std::size_t j = 0; j < MS; ++j) {
        double acc = 0;
        for (std::size_t a = 0; a < kPanScale; ++a)
          for (std::size_t e = 0; e < kPanScale; ++e) acc += fine[b * P + (i * kPanScale + a) * S + j * kPanScale + e];
        sc.ms[(b * MS + i) * MS + j] = static_cast<float>(acc / double(kPanScale * kPanScale));
      }

  // Exactly round(fraction * P) labeled pixels, chosen by a partial shuffle.
  const auto keep = static_cast<std::size_t>(std::llround(cfg.label_fraction * static_cast<double>(P)));
  std::vector<std::uint32_t> order(P);
  for (std::size_t p = 0; p < P; ++p) order[p] = static_cast<std::uint32_t>(p);
  for (std::size_t k = 0; k < keep; ++k) {
    const std::size_t j = k + rng.below(P - k);
    std::swap(order[k], order[j]);
    sc.labels[order[k]] = cls[order[k]];
  }
  return sc;
}

// Tiles of a synthetic dataset in manifest order (train, validation, test).
inline std::vector<Scene> synth_dataset(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const ClassAppearance look = make_appearance(cfg, seed);
  std::vector<Scene> out;
  std::size_t index = 0;
  auto emit = [&](std::size_t n, Role role) {
    for (std::size_t k = 0; k < n; ++k, ++index) {
      Rng rng(mix_seed(seed, index));
      Scene s = synth_scene(cfg, look, rng);
      s.name = "tile" + std::to_string(index + 1);
      s.role = role;
      out.push_back(std::move(s));
    }
  };
  emit(cfg.train_tiles, Role::train);
  emit(cfg.validation_tiles, Role::validation);
  emit(cfg.test_tiles, Role::test);
  return out;
}

// ---- on-disk datasets: <name>_pan.mras, <name>_ms.mras, <name>_lbl.mras
// plus manifest.txt with "<name> <role>" lines ----

inline void write_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes) {
  std::filesystem::create_directories(dir);
  std::ofstream man(dir / "manifest.txt");
  if (!man) throw DataError("cannot write manifest in " + dir.string());
  for (const auto& s : scenes) {
    write_raster(dir / (s.name + "_pan.mras"), s.pan);
    write_raster(dir / (s.name + "_ms.mras"), s.ms);
    write_raster(dir / (s.name + "_lbl.mras"), s.labels);
    man << s.name << " " << to_string(s.role) << "\n";
  }
  if (!man) throw DataError("write failed: " + (dir / "manifest.txt").string());
}

inline Scene read_scene(const std::filesystem::path& dir, const std::string& name, Role role) {
  Scene s;
  s.name = name;
  s.role = role;
  for (const char* suffix : {"_pan.mras", "_ms.mras", "_lbl.mras"}) {
    const auto p = dir / (name + suffix);
    if (!std::filesystem::exists(p)) throw DataError("missing data file: " + p.string());
  }
  s.pan = read_raster_f32(dir / (name + "_pan.mras"));
  s.ms = read_raster_f32(dir / (name + "_ms.mras"));
  s.labels = read_raster_as<std::uint8_t>(dir / (name + "_lbl.mras"));
  s.validate();
  return s;
}

inline std::vector<Scene> read_dataset(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.txt";
  std::ifstream man(path);
  if (!man) throw DataError("missing data file: " + path.string());
  std::vector<Scene> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(man, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string name, role;
    if (!(is >> name >> role)) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected '<name> <role>'");
    out.push_back(read_scene(dir, name, parse_role(role)));
  }
  if (out.empty()) throw DataError("manifest lists no tiles: " + path.string());
  return out;
}

}  // namespace mrcn
