#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <variant>
#include <vector>

#include "mrcn/tensor.hpp"

namespace mrcn {

static_assert(std::endian::native == std::endian::little,
              "MRAS/MCKP readers assume a little-endian host");

namespace io {

// Little-endian byte sink/source helpers shared by the raster and checkpoint formats.
class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename V>
  void put(V v) {
    bytes(&v, sizeof(V));
  }
  const std::vector<unsigned char>& buffer() const { return buf_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!f) throw DataError("write failed: " + path.string());
  }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> buf, std::string what)
      : buf_(std::move(buf)), what_(std::move(what)) {}

  static ByteReader load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open file: " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    return ByteReader(std::move(buf), path.string());
  }

  void bytes(void* p, std::size_t n) {
    if (n > remaining()) throw FormatError("truncated payload in " + what_);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename V>
  V get() {
    V v;
    bytes(&v, sizeof(V));
    return v;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }
  const std::string& what() const { return what_; }

 private:
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
  std::string what_;
};

}  // namespace io

enum class DType : std::uint8_t { u8 = 0, f32 = 1, f64 = 2 };

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, std::uint8_t>) return DType::u8;
  else if constexpr (std::is_same_v<T, float>) return DType::f32;
  else {
    static_assert(std::is_same_v<T, double>, "unsupported raster element type");
    return DType::f64;
  }
}

// A decoded MRAS raster; the tensor always has n == 1.
using Raster = std::variant<Tensor<std::uint8_t>, Tensor<float>, Tensor<double>>;

inline constexpr std::uint8_t kUnlabeled = 255;

// MRAS layout: "MRAS", u8 version(1), u8 dtype, u8 rank(3), u8 reserved(0),
// rank x u32 dims (c, h, w), then the row-major payload.
template <typename T>
std::vector<unsigned char> encode_raster(const Tensor<T>& t) {
  const Dims& d = t.dims();
  if (d.n != 1) throw ShapeError("rasters hold a single sample, got " + d.str());
  io::ByteWriter w;
  w.bytes("MRAS", 4);
  w.put<std::uint8_t>(1);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(dtype_of<T>()));
  w.put<std::uint8_t>(3);
  w.put<std::uint8_t>(0);
  for (std::size_t v : {d.c, d.h, d.w}) {
    if (v > 0xFFFFFFFFu) throw ShapeError("raster dimension exceeds u32");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  }
  w.bytes(t.data(), t.size() * sizeof(T));
  return w.buffer();
}

template <typename T>
void write_raster(const std::filesystem::path& path, const Tensor<T>& t) {
  io::ByteWriter w;
  const auto bytes = encode_raster(t);
  w.bytes(bytes.data(), bytes.size());
  w.save(path);
}

inline Raster decode_raster(io::ByteReader& r) {
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "MRAS", 4) != 0) throw FormatError("bad magic in " + r.what());
  const auto version = r.get<std::uint8_t>();
  if (version != 1) throw FormatError("unsupported MRAS version " + std::to_string(version));
  const auto code = r.get<std::uint8_t>();
  const auto rank = r.get<std::uint8_t>();
  r.get<std::uint8_t>();
  if (code > 2) throw FormatError("unsupported dtype code " + std::to_string(code));
  if (rank != 3) throw FormatError("MRAS rank must be 3, got " + std::to_string(rank));
  std::array<std::uint32_t, 3> ext{};
  for (auto& e : ext) e = r.get<std::uint32_t>();
  const Dims dims{1, ext[0], ext[1], ext[2]};
  auto read_payload = [&]<typename T>(Tensor<T> t) -> Raster {
    if (r.remaining() < t.size() * sizeof(T)) throw FormatError("truncated payload in " + r.what());
    r.bytes(t.data(), t.size() * sizeof(T));
    return t;
  };
  switch (static_cast<DType>(code)) {
    case DType::u8: return read_payload(Tensor<std::uint8_t>(dims));
    case DType::f32: return read_payload(Tensor<float>(dims));
    default: return read_payload(Tensor<double>(dims));
  }
}

inline Raster read_raster(const std::filesystem::path& path) {
  auto r = io::ByteReader::load(path);
  return decode_raster(r);
}

// Reads a raster and requires a specific element type.
template <typename T>
Tensor<T> read_raster_as(const std::filesystem::path& path) {
  Raster r = read_raster(path);
  if (auto* t = std::get_if<Tensor<T>>(&r)) return std::move(*t);
  throw FormatError("unexpected dtype in " + path.string());
}

// Reads any float raster as float32.
inline Tensor<float> read_raster_f32(const std::filesystem::path& path) {
  Raster r = read_raster(path);
  if (auto* t = std::get_if<Tensor<float>>(&r)) return std::move(*t);
  if (auto* t = std::get_if<Tensor<double>>(&r)) return tensor_cast<float>(*t);
  throw FormatError("expected a float raster: " + path.string());
}

}  // namespace mrcn
