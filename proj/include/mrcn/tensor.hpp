#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "mrcn/error.hpp"

namespace mrcn {

// Extents of a rank-4 tensor: batch, channels, rows, columns.
struct Dims {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  friend bool operator==(const Dims&, const Dims&) = default;

  std::size_t plane() const { return h * w; }
  std::size_t sample() const { return c * h * w; }

  // Total element count; throws when the product overflows size_t.
  std::size_t count() const {
    std::size_t total = 1;
    for (std::size_t d : {n, c, h, w}) {
      if (d != 0 && total > std::numeric_limits<std::size_t>::max() / d) {
        throw ShapeError("tensor dimension product overflows addressable size");
      }
      total *= d;
    }
    return total;
  }

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

// Dense rank-4 array stored n-major, then c, then h, then w.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Dims dims, T fill = T{}) : dims_(dims) {
    if (dims.n == 0 || dims.c == 0 || dims.h == 0 || dims.w == 0) {
      throw ShapeError("tensor dimensions must all be >= 1, got " + dims.str());
    }
    data_.assign(dims.count(), fill);
  }

  Tensor(Dims dims, std::vector<T> values) : dims_(dims), data_(std::move(values)) {
    if (dims.n == 0 || dims.c == 0 || dims.h == 0 || dims.w == 0) {
      throw ShapeError("tensor dimensions must all be >= 1, got " + dims.str());
    }
    if (data_.size() != dims.count()) {
      throw ShapeError("data length " + std::to_string(data_.size()) +
                       " does not match dims " + dims.str());
    }
  }

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * dims_.c + c) * dims_.h + h) * dims_.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(n, c, h, w)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }

  // Pointer to the start of channel plane (n, c).
  T* plane(std::size_t n, std::size_t c) { return data_.data() + offset(n, c, 0, 0); }
  const T* plane(std::size_t n, std::size_t c) const {
    return data_.data() + offset(n, c, 0, 0);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  // Reinterprets the extents; element count must be unchanged.
  void reshape(Dims dims) {
    if (dims.count() != data_.size()) {
      throw ShapeError("reshape " + dims_.str() + " -> " + dims.str() + " changes size");
    }
    dims_ = dims;
  }

 private:
  Dims dims_{0, 0, 0, 0};
  std::vector<T> data_;
};

template <typename T>
Tensor<T> zeros(Dims dims) {
  return Tensor<T>(dims, T{0});
}

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
  Tensor<To> out(src.dims());
  std::transform(src.data(), src.data() + src.size(), out.data(),
                 [](From v) { return static_cast<To>(v); });
  return out;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  if constexpr (std::is_floating_point_v<T>) {
    return std::all_of(t.data(), t.data() + t.size(), [](T v) { return std::isfinite(v); });
  } else {
    return true;
  }
}

// Debug-build guard for the no-NaN/Inf invariant of float tensors.
template <typename T>
void debug_check_finite([[maybe_unused]] const Tensor<T>& t,
                        [[maybe_unused]] const char* where) {
#ifndef NDEBUG
  if (!all_finite(t)) throw NumericError(std::string("non-finite value produced by ") + where);
#endif
}

// Stacks b's channels after a's.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Dims& da = a.dims();
  const Dims& db = b.dims();
  if (da.n != db.n || da.h != db.h || da.w != db.w) {
    throw ShapeError("concat_channels: batch/spatial mismatch " + da.str() + " vs " + db.str());
  }
  Tensor<T> out(Dims{da.n, da.c + db.c, da.h, da.w});
  const std::size_t sa = da.sample();
  const std::size_t sb = db.sample();
  for (std::size_t n = 0; n < da.n; ++n) {
    T* dst = out.data() + n * (sa + sb);
    std::copy_n(a.data() + n * sa, sa, dst);
    std::copy_n(b.data() + n * sb, sb, dst + sa);
  }
  return out;
}

// Channels [first, first + count) of every sample.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t first, std::size_t count) {
  const Dims& d = x.dims();
  if (count == 0 || first + count > d.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(first) + "," +
                     std::to_string(first + count) + ") outside " + d.str());
  }
  Tensor<T> out(Dims{d.n, count, d.h, d.w});
  const std::size_t len = count * d.plane();
  for (std::size_t n = 0; n < d.n; ++n) {
    std::copy_n(x.plane(n, first), len, out.plane(n, 0));
  }
  return out;
}

// Sample n of x as a batch of one.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, std::size_t n) {
  const Dims& d = x.dims();
  if (n >= d.n) throw ShapeError("slice_batch: index out of range");
  Tensor<T> out(Dims{1, d.c, d.h, d.w});
  std::copy_n(x.data() + n * d.sample(), d.sample(), out.data());
  return out;
}

template <typename T>
Tensor<T> add_elementwise(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) {
    throw ShapeError("add_elementwise: dims differ " + a.dims().str() + " vs " + b.dims().str());
  }
  Tensor<T> out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.size() != b.size()) throw ShapeError("dot: size mismatch");
  T acc{0};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace mrcn
