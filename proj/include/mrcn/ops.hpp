#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mrcn/graph.hpp"
#include "mrcn/kernels.hpp"
#include "mrcn/parallel.hpp"

namespace mrcn {

// Output rows/cols of a convolution: floor((H - G + 2Z) / S + 1).
struct SpatialDims {
  std::size_t h;
  std::size_t w;
  friend bool operator==(const SpatialDims&, const SpatialDims&) = default;
};

inline SpatialDims conv_out_dims(std::size_t h, std::size_t w, std::size_t kernel, std::size_t pad,
                                 std::size_t stride) {
  if (stride < 1) throw ShapeError("conv stride must be >= 1");
  const auto span_h = static_cast<std::int64_t>(h) - static_cast<std::int64_t>(kernel) +
                      2 * static_cast<std::int64_t>(pad);
  const auto span_w = static_cast<std::int64_t>(w) - static_cast<std::int64_t>(kernel) +
                      2 * static_cast<std::int64_t>(pad);
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("kernel " + std::to_string(kernel) + " exceeds padded extent " +
                     std::to_string(h + 2 * pad) + "x" + std::to_string(w + 2 * pad));
  }
  return {static_cast<std::size_t>(span_h) / stride + 1, static_cast<std::size_t>(span_w) / stride + 1};
}

// Output extent of a transposed convolution: (H - 1) * S - 2Z + G.
inline std::size_t transposed_out_extent(std::size_t in, std::size_t kernel, std::size_t pad,
                                         std::size_t stride) {
  const auto v = (static_cast<std::int64_t>(in) - 1) * static_cast<std::int64_t>(stride) -
                 2 * static_cast<std::int64_t>(pad) + static_cast<std::int64_t>(kernel);
  if (v < 1) throw ShapeError("transposed convolution output would be empty");
  return static_cast<std::size_t>(v);
}

namespace detail {

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return -floor_div(-a, b); }

template <typename T>
void require_same_dims(const std::vector<Dims>& in, const char* what) {
  for (const auto& d : in) {
    if (d != in.front()) {
      throw ShapeError(std::string(what) + ": dims differ " + in.front().str() + " vs " + d.str());
    }
  }
}

inline std::size_t ceil_count(std::size_t n, std::size_t per) { return (n + per - 1) / per; }

// Samples per GEMM so narrow feature maps still give wide matrices.
inline std::size_t chunk_samples(std::size_t n, std::size_t plane) {
  constexpr std::size_t kTargetColumns = 1024;
  return std::clamp<std::size_t>(ceil_count(kTargetColumns, std::max<std::size_t>(plane, 1)), 1, std::max<std::size_t>(n, 1));
}

template <typename T>
void add_into(Tensor<T>& dst, const T* src) {
  T* d = dst.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += src[i];
}

// Per-worker scratch for parameter-gradient partial sums.
template <typename T>
struct GradPartials {
  std::vector<std::vector<T>> weight;
  std::vector<std::vector<T>> bias;

  GradPartials(int workers, std::size_t wsize, std::size_t bsize)
      : weight(static_cast<std::size_t>(workers), std::vector<T>(wsize, T{0})),
        bias(static_cast<std::size_t>(workers), std::vector<T>(bsize, T{0})) {}

  void merge_into(Tensor<T>& wgrad, Tensor<T>& bgrad) const {
    for (const auto& w : weight) add_into(wgrad, w.data());
    for (const auto& b : bias) add_into(bgrad, b.data());
  }
};

}  // namespace detail

template <typename T>
class IdentityOp final : public Op<T> {
 public:
  std::string kind() const override { return "identity"; }
  Dims infer(const std::vector<Dims>& in, const ParamStore<T>&) const override { return in.at(0); }
  void forward(const OpContext<T>& ctx, Tensor<T>& out) override { out = ctx.in(0); }
  void backward(const OpContext<T>&, const Tensor<T>&, const Tensor<T>& g,
                std::vector<Tensor<T>*>& gin) override {
    if (gin[0]) detail::add_into(*gin[0], g.data());
  }
};

// Exposes a stored tensor as a graph value (used by checkers and tests).
template <typename T>
class VariableOp final : public Op<T> {
 public:
  explicit VariableOp(std::string name) : name_(std::move(name)) {}
  std::string kind() const override { return "variable"; }
  std::vector<std::string> param_names() const override { return {name_}; }
  Dims infer(const std::vector<Dims>&, const ParamStore<T>& p) const override {
    return p.at(name_).value.dims();
  }
  void forward(const OpContext<T>& ctx, Tensor<T>& out) override {
    out = ctx.params.at(name_).value;
  }
  void backward(const OpContext<T>& ctx, const Tensor<T>&, const Tensor<T>& g,
                std::vector<Tensor<T>*>&) override {
    auto& p = ctx.params.at(name_);
    if (p.trainable()) detail::add_into(p.grad, g.data());
  }

 private:
  std::string name_;
};

// Cross-correlation with (K_out, K_in, G, G) kernels, stride S, zero padding Z.
template <typename T>
class Conv2dOp final : public Op<T> {
 public:
  Conv2dOp(std::string weight, std::string bias, std::size_t kernel, std::size_t stride,
           std::size_t pad)
      : weight_(std::move(weight)), bias_(std::move(bias)), kernel_(kernel), stride_(stride), pad_(pad) {}

  // Negative control for gradient checking: the input gradient is scattered
  // with stride S+1.
  void corrupt_backward(bool on) { corrupt_ = on; }

  std::string kind() const override { return "conv2d"; }
  std::vector<std::string> param_names() const override { return {weight_, bias_}; }

  Dims infer(const std::vector<Dims>& in, const ParamStore<T>& p) const override {
    const Dims& x = in.at(0);
    const Dims& w = p.at(weight_).value.dims();
    if (w.h != kernel_ || w.w != kernel_) throw ShapeError("conv2d kernel size mismatch");
    if (x.c != w.c) {
      throw ShapeError("conv2d channel mismatch: input " + std::to_string(x.c) + ", kernel expects " +
                       std::to_string(w.c));
    }
    const auto o = conv_out_dims(x.h, x.w, w.h, pad_, stride_);
    return {x.n, w.n, o.h, o.w};
  }

  void forward(const OpContext<T>& ctx, Tensor<T>& out) override {
    const Tensor<T>& x = ctx.in(0);
    const Tensor<T>& w = ctx.params.at(weight_).value;
    const Tensor<T>& b = ctx.params.at(bias_).value;
    const auto g = geometry(x.dims(), out.dims(), w.dims().h);
    const std::size_t K = w.dims().n;
    const std::size_t R = g.col_rows();
    const std::size_t P = g.col_cols();
    const std::size_t N = x.dims().n;
    const std::size_t chunk = detail::chunk_samples(N, P);
    parallel_for(detail::ceil_count(N, chunk), [&](std::size_t begin, std::size_t end, int) {
      std::vector<T> cols(R * chunk * P);
      std::vector<T> y(K * chunk * P);
      for (std::size_t c = begin; c < end; ++c) {
        const std::size_t s0 = c * chunk, ns = std::min(chunk, N - s0), L = ns * P;
        for (std::size_t j = 0; j < ns; ++j) {
          kernels::im2col(x.data() + (s0 + j) * x.dims().sample(), g, cols.data() + j * P, L);
        }
        kernels::gemm(K, L, R, w.data(), R, cols.data(), L, y.data(), L, false);
        for (std::size_t j = 0; j < ns; ++j) {
          T* dst = out.data() + (s0 + j) * out.dims().sample();
          for (std::size_t k = 0; k < K; ++k) {
            const T bk = b[k];
            const T* src = y.data() + k * L + j * P;
            T* row = dst + k * P;
            for (std::size_t i = 0; i < P; ++i) row[i] = src[i] + bk;
          }
        }
      }
    });
  }

  void backward(const OpContext<T>& ctx, const Tensor<T>& out, const Tensor<T>& gout,
                std::vector<Tensor<T>*>& gin) override {
    const Tensor<T>& x = ctx.in(0);
    auto& wp = ctx.params.at(weight_);
    auto& bp = ctx.params.at(bias_);
    const auto g = geometry(x.dims(), out.dims(), wp.value.dims().h);
    const std::size_t K = wp.value.dims().n;
    const std::size_t R = g.col_rows();
    const std::size_t P = g.col_cols();
    const bool want_params = wp.trainable() || bp.trainable();

    std::vector<T> wt(R * K);
    kernels::transpose(K, R, wp.value.data(), wt.data());
    auto data_geom = g;
    if (corrupt_) data_geom.stride += 1;

    const std::size_t N = x.dims().n;
    const std::size_t chunk = detail::chunk_samples(N, P);
    const std::size_t chunks = detail::ceil_count(N, chunk);
    detail::GradPartials<T> partial(workers_for(chunks), want_params ? K * R : 0, want_params ? K : 0);
    parallel_for(chunks, [&](std::size_t begin, std::size_t end, int worker) {
      std::vector<T> gy(K * chunk * P);
      std::vector<T> cols(want_params ? R * chunk * P : 0);
      std::vector<T> cols_t(want_params ? chunk * P * R : 0);
      std::vector<T> dcols(gin[0] ? R * chunk * P : 0);
      std::vector<T> dimg(gin[0] ? g.channels * g.in_h * g.in_w : 0);
      for (std::size_t c = begin; c < end; ++c) {
        const std::size_t s0 = c * chunk, ns = std::min(chunk, N - s0), L = ns * P;
        kernels::gather_columns(gout.data() + s0 * gout.dims().sample(), ns, K, P, gy.data());
        if (want_params) {
          for (std::size_t j = 0; j < ns; ++j) {
            kernels::im2col(x.data() + (s0 + j) * x.dims().sample(), g, cols.data() + j * P, L);
          }
          kernels::transpose(R, L, cols.data(), cols_t.data());
          kernels::gemm(K, R, L, gy.data(), L, cols_t.data(), R, partial.weight[worker].data(), R, true);
          for (std::size_t k = 0; k < K; ++k) {
            T acc{0};
            for (std::size_t i = 0; i < L; ++i) acc += gy[k * L + i];
            partial.bias[worker][k] += acc;
          }
        }
        if (gin[0]) {
          kernels::gemm(R, L, K, wt.data(), K, gy.data(), L, dcols.data(), L, false);
          for (std::size_t j = 0; j < ns; ++j) {
            kernels::col2im(dcols.data() + j * P, data_geom, dimg.data(), L);
            T* dx = gin[0]->data() + (s0 + j) * x.dims().sample();
            for (std::size_t i = 0; i < dimg.size(); ++i) dx[i] += dimg[i];
          }
        }
      }
    });
    if (want_params) partial.merge_into(wp.grad, bp.grad);
    if (!wp.trainable()) wp.grad.fill(T{0});
    if (!bp.trainable()) bp.grad.fill(T{0});
  }

  Extent input_extent(const Extent& o, std::size_t) const override {
    const auto S = static_cast<std::int64_t>(stride_);
    const auto Z = static_cast<std::int64_t>(pad_);
    return {o.lo * S - Z, o.hi * S - Z + static_cast<std::int64_t>(kernel_) - 1};
  }

  std::size_t kernel() const { return kernel_; }
  std::size_t stride() const { return stride_; }
  std::size_t pad() const { return pad_; }

 private:
  kernels::ConvGeometry geometry(const Dims& in, const Dims& out, std::size_t kernel) const {
    return {in.c, in.h, in.w, kernel, stride_, pad_, out.h, out.w};
  }

  std::string weight_, bias_;
  std::size_t kernel_, stride_, pad_;
  bool corrupt_ = false;
};

// Adjoint of a strided convolution. Kernels are stored (K_in, K_out, G, G),
// i.e. as the (out = K_in, in = K_out) kernel of the convolution it transposes.
template <typename T>
class TransposedConvOp final : public Op<T> {
 public:
  TransposedConvOp(std::string weight, std::string bias, std::size_t kernel, std::size_t stride,
                   std::size_t pad)
      : weight_(std::move(weight)), bias_(std::move(bias)), kernel_(kernel), stride_(stride), pad_(pad) {}

  std::string kind() const override { return "transposed_conv"; }
  std::vector<std::string> param_names() const override { return {weight_, bias_}; }

  Dims infer(const std::vector<Dims>& in, const ParamStore<T>& p) const override {
    const Dims& x = in.at(0);
    const Dims& w = p.at(weight_).value.dims();
    if (w.h != kernel_ || w.w != kernel_) throw ShapeError("transposed_conv kernel size mismatch");
    if (x.c != w.n) {
      throw ShapeError("transposed_conv channel mismatch: input " + std::to_string(x.c) +
                       ", kernel expects " + std::to_string(w.n));
    }
    return {x.n, w.c, transposed_out_extent(x.h, kernel_, pad_, stride_),
            transposed_out_extent(x.w, kernel_, pad_, stride_)};
  }

  void forward(const OpContext<T>& ctx, Tensor<T>& out) override {
    const Tensor<T>& x = ctx.in(0);
    const Tensor<T>& w = ctx.params.at(weight_).value;
    const Tensor<T>& b = ctx.params.at(bias_).value;
    const auto g = geometry(x.dims(), out.dims());
    const std::size_t Cin = x.dims().c;
    const std::size_t R = g.col_rows();
    const std::size_t P = g.col_cols();
    const std::size_t N = x.dims().n;
    const std::size_t plane = out.dims().plane();
    std::vector<T> wt(R * Cin);
    kernels::transpose(Cin, R, w.data(), wt.data());
    const std::size_t chunk = detail::chunk_samples(N, P);
    parallel_for(detail::ceil_count(N, chunk), [&](std::size_t begin, std::size_t end, int) {
      std::vector<T> xb(Cin * chunk * P);
      std::vector<T> cols(R * chunk * P);
      for (std::size_t c = begin; c < end; ++c) {
        const std::size_t s0 = c * chunk, ns = std::min(chunk, N - s0), L = ns * P;
        kernels::gather_columns(x.data() + s0 * x.dims().sample(), ns, Cin, P, xb.data());
        kernels::gemm(R, L, Cin, wt.data(), Cin, xb.data(), L, cols.data(), L, false);
        for (std::size_t j = 0; j < ns; ++j) {
          T* dst = out.data() + (s0 + j) * out.dims().sample();
          kernels::col2im(cols.data() + j * P, g, dst, L);
          for (std::size_t ch = 0; ch < out.dims().c; ++ch) {
            const T bc = b[ch];
            T* row = dst + ch * plane;
            for (std::size_t i = 0; i < plane; ++i) row[i] += bc;
          }
        }
      }
    });
  }

  void backward(const OpContext<T>& ctx, const Tensor<T>& out, const Tensor<T>& gout,
                std::vector<Tensor<T>*>& gin) override {
    const Tensor<T>& x = ctx.in(0);
    auto& wp = ctx.params.at(weight_);
    auto& bp = ctx.params.at(bias_);
    const auto g = geometry(x.dims(), out.dims());
    const std::size_t Cin = x.dims().c;
    const std::size_t R = g.col_rows();
    const std::size_t P = g.col_cols();
    const bool want_params = wp.trainable() || bp.trainable();
    const std::size_t N = x.dims().n;
    const std::size_t plane = out.dims().plane();
    const std::size_t chunk = detail::chunk_samples(N, P);
    const std::size_t chunks = detail::ceil_count(N, chunk);
    detail::GradPartials<T> partial(workers_for(chunks), want_params ? Cin * R : 0,
                                    want_params ? out.dims().c : 0);
    parallel_for(chunks, [&](std::size_t begin, std::size_t end, int worker) {
      std::vector<T> cols(R * chunk * P);
      std::vector<T> cols_t(want_params ? chunk * P * R : 0);
      std::vector<T> xb(want_params ? Cin * chunk * P : 0);
      std::vector<T> dx(gin[0] ? Cin * chunk * P : 0);
      for (std::size_t c = begin; c < end; ++c) {
        const std::size_t s0 = c * chunk, ns = std::min(chunk, N - s0), L = ns * P;
        for (std::size_t j = 0; j < ns; ++j) {
          kernels::im2col(gout.data() + (s0 + j) * gout.dims().sample(), g, cols.data() + j * P, L);
        }
        if (gin[0]) {
          kernels::gemm(Cin, L, R, wp.value.data(), R, cols.data(), L, dx.data(), L, false);
          for (std::size_t j = 0; j < ns; ++j) {
            T* dst = gin[0]->data() + (s0 + j) * x.dims().sample();
            for (std::size_t ch = 0; ch < Cin; ++ch) {
              const T* src = dx.data() + ch * L + j * P;
              for (std::size_t i = 0; i < P; ++i) dst[ch * P + i] += src[i];
            }
          }
        }
        if (want_params) {
          kernels::gather_columns(x.data() + s0 * x.dims().sample(), ns, Cin, P, xb.data());
          kernels::transpose(R, L, cols.data(), cols_t.data());
          kernels::gemm(Cin, R, L, xb.data(), L, cols_t.data(), R, partial.weight[worker].data(), R, true);
          for (std::size_t j = 0; j < ns; ++j) {
            const T* gy = gout.data() + (s0 + j) * gout.dims().sample();
            for (std::size_t ch = 0; ch < out.dims().c; ++ch) {
              T acc{0};
              for (std::size_t i = 0; i < plane; ++i) acc += gy[ch * plane + i];
              partial.bias[worker][ch] += acc;
            }
          }
        }
      }
    });
    if (want_params) partial.merge_into(wp.grad, bp.grad);
    if (!wp.trainable()) wp.grad.fill(T{0});
    if (!bp.trainable()) bp.grad.fill(T{0});
  }

  Extent input_extent(const Extent& o, std::size_t) const override {
    const auto S = static_cast<std::int64_t>(stride_);
    const auto Z = static_cast<std::int64_t>(pad_);
    const auto G = static_cast<std::int64_t>(kernel_);
    return {detail::ceil_div(o.lo + Z - G + 1, S), detail::floor_div(o.hi + Z, S)};
  }

 private:
  // Geometry of the convolution this op is the adjoint of: its "image" is
  // our output and its output grid is our input.
  kernels::ConvGeometry geometry(const Dims& in, const Dims& out) const {
    return {out.c, out.h, out.w, kernel_, stride_, pad_, in.h, in.w};
  }

  std::string weight_, bias_;
  std::size_t kernel_, stride_, pad_;
};

// 2x2 max pooling with stride 2. Gradient goes to the first maximum in
// row-major window order.
template <typename T>
class MaxPool2Op final : public Op<T> {
 public:
  std::string kind() const override { return "maxpool2"; }

  Dims infer(const std::vector<Dims>& in, const ParamStore<T>&) const override {
    const Dims& x = in.at(0);
    if (x.h % 2 != 0 || x.w % 2 != 0) {
      throw ShapeError("maxpool2 needs even spatial dims, got " + x.str());
    }
    return {x.n, x.c, x.h / 2, x.w / 2};
  }

  void forward(const OpContext<T>& ctx, Tensor<T>& out) override {
    const Tensor<T>& x = ctx.in(0);
    const std::size_t W = x.dims().w;
    const std::size_t oh = out.dims().h, ow = out.dims().w;
    argmax_.resize(out.size());
    const std::size_t planes = out.dims().n * out.dims().c;
    for (std::size_t p = 0; p < planes; ++p) {
      const T* src = x.data() + p * x.dims().plane();
      T* dst = out.data() + p * out.dims().plane();
      std::uint32_t* arg = argmax_.data() + p * out.dims().plane();
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          const std::size_t base = 2 * i * W + 2 * j;
          const std::size_t cand[4] = {base, base + 1, base + W, base + W + 1};
          std::size_t best = cand[0];
          for (int k = 1; k < 4; ++k) {
            if (src[cand[k]] > src[best]) best = cand[k];
          }
          dst[i * ow + j] = src[best];
          arg[i * ow + j] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }

  void backward(const OpContext<T>& ctx, const Tensor<T>& out, const Tensor<T>& g,
                std::vector<Tensor<T>*>& gin) override {
    if (!gin[0]) return;
    const Tensor<T>& x = ctx.in(0);
    const std::size_t planes = out.dims().n * out.dims().c;
    const std::size_t op = out.dims().plane();
    for (std::size_t p = 0; p < planes; ++p) {
      T* dst = gin[0]->data() + p * x.dims().plane();
      const T* gp = g.data() + p * op;
      const std::uint32_t* arg = argmax_.data() + p * op;
      for (std::size_t i = 0; i < op; ++i) dst[arg[i]] += gp[i];
    }
  }

  Extent input_extent(const Extent& o, std::size_t) const override { return {2 * o.lo, 2 * o.hi + 1}; }

 private:
  std::vector<std::uint32_t> argmax_;
};

enum class UpsampleMode { nearest, bilinear };

// Parameter-free upsampling. Bilinear uses half-pixel centers
// (align_corners = false): src = (dst + 0.5) / f - 0.5, clamped at 0 and
// at the last index.
template <typename T>
class UpsampleOp final : public Op<T> {
 public:
  UpsampleOp(std::size_t factor, UpsampleMode mode) : factor_(factor), mode_(mode) {
    if (factor < 2) throw ConfigError("upsampling factor must be >= 2");
  }

  std::string kind() const override {
    return mode_ == UpsampleMode::nearest ? "upsample_nearest" : "upsample_bilinear";
  }

  Dims infer(const std::vector<Dims>& in, const ParamStore<T>&) const override {
    const Dims& x = in.at(0);
    return {x.n, x.c, x.h * factor_, x.w * factor_};
  }

  void forward(const OpContext<T>& ctx, Tensor<T>& out) override {
    const Tensor<T>& x = ctx.in(0);
    const std::size_t H = x.dims().h, W = x.dims().w;
    const std::size_t OH = out.dims().h, OW = out.dims().w;
    const std::size_t planes = x.dims().n * x.dims().c;
    if (mode_ == UpsampleMode::nearest) {
      for (std::size_t p = 0; p < planes; ++p) {
        const T* src = x.data() + p * H * W;
        T* dst = out.data() + p * OH * OW;
        for (std::size_t i = 0; i < OH; ++i)
          for (std::size_t j = 0; j < OW; ++j) dst[i * OW + j] = src[(i / factor_) * W + j / factor_];
      }
      return;
    }
    const auto rows = taps(H, OH);
    const auto cols = taps(W, OW);
    for (std::size_t p = 0; p < planes; ++p) {
      const T* src = x.data() + p * H * W;
      T* dst = out.data() + p * OH * OW;
      for (std::size_t i = 0; i < OH; ++i) {
        const Tap& r = rows[i];
        for (std::size_t j = 0; j < OW; ++j) {
          const Tap& c = cols[j];
          const T top = (T{1} - c.frac) * src[r.lo * W + c.lo] + c.frac * src[r.lo * W + c.hi];
          const T bot = (T{1} - c.frac) * src[r.hi * W + c.lo] + c.frac * src[r.hi * W + c.hi];
          dst[i * OW + j] = (T{1} - r.frac) * top + r.frac * bot;
        }
      }
    }
  }

  void backward(const OpContext<T>& ctx, const Tensor<T>& out, const Tensor<T>& g,
                std::vector<Tensor<T>*>& gin) override {
    if (!gin[0]) return;
    const Tensor<T>& x = ctx.in(0);
    const std::size_t H = x.dims().h, W = x.dims().w;
    const std::size_t OH = out.dims().h, OW = out.dims().w;
    const std::size_t planes = x.dims().n * x.dims().c;
    if (mode_ == UpsampleMode::nearest) {
      for (std::size_t p = 0; p < planes; ++p) {
        T* dst = gin[0]->data() + p * H * W;
        const T* gp = g.data() + p * OH * OW;
        for (std::size_t i = 0; i < OH; ++i)
          for (std::size_t j = 0; j < OW; ++j) dst[(i / factor_) * W + j / factor_] += gp[i * OW + j];
      }
      return;
    }
    const auto rows = taps(H, OH);
    const auto cols = taps(W, OW);
    for (std::size_t p = 0; p < planes; ++p) {
      T* dst = gin[0]->data() + p * H * W;
      const T* gp = g.data() + p * OH * OW;
      for (std::size_t i = 0; i < OH; ++i) {
        const Tap& r = rows[i];
        for (std::size_t j = 0; j < OW; ++j) {
          const Tap& c = cols[j];
          const T v = gp[i * OW + j];
          const T top = (T{1} - r.frac) * v;
          const T bot = r.frac * v;
          dst[r.lo * W + c.lo] += (T{1} - c.frac) * top;
          dst[r.lo * W + c.hi] += c.frac * top;
          dst[r.hi * W + c.lo] += (T{1} - c.frac) * bot;
          dst[r.hi * W + c.hi] += c.frac * bot;
        }
      }
    }
  }

  Extent input_extent(const Extent& o, std::size_t) const override {
    const auto f = static_cast<std::int64_t>(factor_);
    if (mode_ == UpsampleMode::nearest) return {detail::floor_div(o.lo, f), detail::floor_div(o.hi, f)};
    auto src_floor = [f](std::int64_t d) {
      return static_cast<std::int64_t>(std::floor((static_cast<double>(d) + 0.5) / static_cast<double>(f) - 0.5));
    };
    return {src_floor(o.lo), src_floor(o.hi) + 1};
  }

  std::size_t factor() const { return factor_; }

 private:
  struct Tap {
    std::size_t lo, hi;
    T frac;
  };

  std::vector<Tap> taps(std::size_t in, std::size_t out) const {
    std::vector<Tap> t(out);
    for (std::size_t d = 0; d < out; ++d) {
      double src = (static_cast<double>(d) + 0.5) / static_cast<double>(factor_) - 0.5;
      if (src < 0) src = 0;
      auto lo = static_cast<std::size_t>(std::floor(src));
      if (lo > in - 1) lo = in - 1;
      const std::size_t hi = std::min(lo + 1, in - 1);
      t[d] = {lo, hi, static_cast<T>(src - static_cast<double>(lo))};
      if (lo == hi) t[d].frac = T{0};
    }
    return t;
  }

  std::size_t factor_;
  UpsampleMode mode_;
};

struct BatchNormConfig {
  double epsilon = 1e-5;
  double momentum = 0.1;  // weight of the new batch in the running averages
};

// Per-channel batch normalization followed by the learned affine map.
// Training mode normalizes with batch statistics over (n, h, w) and updates
// the running estimates (variance stored unbiased); inference mode uses the
// running estimates only.
template <typename T>
class BatchNormOp final : public Op<T> {
 public:
  BatchNormOp(std::string gamma, std::string beta, std::string mean, std::string var,
              BatchNormConfig cfg = {})
      : gamma_(std::move(gamma)), beta_(std::move(beta)), mean_(std::move(mean)), var_(std::move(var)),
        cfg_(cfg) {
    if (!(cfg_.epsilon > 0)) throw ConfigError("batch norm epsilon must be > 0");
  }

  std::string kind() const override { return "batch_norm"; }
  std::vector<std::string> param_names() const override { return {gamma_, beta_, mean_, var_}; }

  Dims infer(const std::vector<Dims>& in, const ParamStore<T>& p) const override {
    const Dims& x = in.at(0);
    if (p.at(gamma_).value.size() != x.c) throw ShapeError("batch_norm channel mismatch");
    return x;
  }

  void forward(const OpContext<T>& ctx, Tensor<T>& out) override {
    const Tensor<T>& x = ctx.in(0);
    const Dims& d = x.dims();
    const std::size_t m = d.n * d.plane();
    auto& gamma = ctx.params.at(gamma_).value;
    auto& beta = ctx.params.at(beta_).value;
    auto& rmean = ctx.params.at(mean_).value;
    auto& rvar = ctx.params.at(var_).value;
    inv_std_.assign(d.c, T{0});
    // Frozen statistics (a pretrained sub-network) always run in inference mode.
    batch_mode_ = ctx.training && !ctx.params.at(mean_).frozen;
    if (batch_mode_) {
      if (m < 2) throw ShapeError("batch_norm training needs >= 2 values per channel");
      xhat_ = Tensor<T>(d);
    }
    for (std::size_t c = 0; c < d.c; ++c) {
      double mean, var;
      if (batch_mode_) {
        double s = 0;
        for (std::size_t n = 0; n < d.n; ++n) {
          const T* p = x.plane(n, c);
          for (std::size_t i = 0; i < d.plane(); ++i) s += p[i];
        }
        mean = s / static_cast<double>(m);
        double ss = 0;
        for (std::size_t n = 0; n < d.n; ++n) {
          const T* p = x.plane(n, c);
          for (std::size_t i = 0; i < d.plane(); ++i) {
            const double dv = p[i] - mean;
            ss += dv * dv;
          }
        }
        var = ss / static_cast<double>(m);
        const double mom = cfg_.momentum;
        rmean[c] = static_cast<T>((1 - mom) * rmean[c] + mom * mean);
        rvar[c] = static_cast<T>((1 - mom) * rvar[c] +
                                 mom * var * static_cast<double>(m) / static_cast<double>(m - 1));
      } else {
        mean = rmean[c];
        var = rvar[c];
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(var + cfg_.epsilon));
      const T mu = static_cast<T>(mean);
      inv_std_[c] = inv;
      const T gc = gamma[c], bc = beta[c];
      for (std::size_t n = 0; n < d.n; ++n) {
        const T* p = x.plane(n, c);
        T* o = out.plane(n, c);
        T* xh = batch_mode_ ? xhat_.plane(n, c) : nullptr;
        for (std::size_t i = 0; i < d.plane(); ++i) {
          const T v = (p[i] - mu) * inv;
          if (xh) xh[i] = v;
          o[i] = gc * v + bc;
        }
      }
    }
  }

  void backward(const OpContext<T>& ctx, const Tensor<T>&, const Tensor<T>& g,
                std::vector<Tensor<T>*>& gin) override {
    const Tensor<T>& x = ctx.in(0);
    const Dims& d = x.dims();
    const double m = static_cast<double>(d.n * d.plane());
    auto& gp = ctx.params.at(gamma_);
    auto& bp = ctx.params.at(beta_);
    const auto& rmean = ctx.params.at(mean_).value;
    for (std::size_t c = 0; c < d.c; ++c) {
      double sum_g = 0, sum_gx = 0;
      const T inv = inv_std_[c];
      for (std::size_t n = 0; n < d.n; ++n) {
        const T* gq = g.plane(n, c);
        const T* p = x.plane(n, c);
        const T* xh = batch_mode_ ? xhat_.plane(n, c) : nullptr;
        for (std::size_t i = 0; i < d.plane(); ++i) {
          const double xv = xh ? xh[i] : (p[i] - rmean[c]) * inv;
          sum_g += gq[i];
          sum_gx += gq[i] * xv;
        }
      }
      if (gp.trainable()) gp.grad[c] += static_cast<T>(sum_gx);
      if (bp.trainable()) bp.grad[c] += static_cast<T>(sum_g);
      if (!gin[0]) continue;
      const double gamma = gp.value[c];
      for (std::size_t n = 0; n < d.n; ++n) {
        const T* gq = g.plane(n, c);
        T* dx = gin[0]->plane(n, c);
        if (batch_mode_) {
          const T* xh = xhat_.plane(n, c);
          const double scale = gamma * inv / m;
          for (std::size_t i = 0; i < d.plane(); ++i) {
            dx[i] += static_cast<T>(scale * (m * gq[i] - sum_g - xh[i] * sum_gx));
          }
        } else {
          const T scale = static_cast<T>(gamma) * inv;
          for (std::size_t i = 0; i < d.plane(); ++i) dx[i] += scale * gq[i];
        }
      }
    }
  }

 private:
  std::string gamma_, beta_, mean_, var_;
  BatchNormConfig cfg_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  bool batch_mode_ = false;
};

// x if x > 0, else exp(x) - 1.
template <typename T>
class EluOp final : public Op<T> {
 public:
  std::string kind() const override { return "elu"; }
  Dims infer(const std::vector<Dims>& in, const ParamStore<T>&) const override { return in.at(0); }
  void forward(const OpContext<T>& ctx, Tensor<T>& out) override {
    const T* x = ctx.in(0).data();
    T* y = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) y[i] = x[i] > T{0} ? x[i] : std::expm1(x[i]);
  }
  void backward(const OpContext<T>& ctx, const Tensor<T>& out, const Tensor<T>& g,
                std::vector<Tensor<T>*>& gin) override {
    if (!gin[0]) return;
    const T* x = ctx.in(0).data();
    T* dx = gin[0]->data();
    for (std::size_t i = 0; i < out.size(); ++i) {
      dx[i] += x[i] > T{0} ? g[i] : g[i] * (out[i] + T{1});
    }
  }
  bool spatial() const override { return false; }
};

template <typename T>
class RectifierOp final : public Op<T> {
 public:
  std::string kind() const override { return "rectifier"; }
  Dims infer(const std::vector<Dims>& in, const ParamStore<T>&) const override { return in.at(0); }
  void forward(const OpContext<T>& ctx, Tensor<T>& out) override {
    const T* x = ctx.in(0).data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  }
  void backward(const OpContext<T>& ctx, const Tensor<T>& out, const Tensor<T>& g,
                std::vector<Tensor<T>*>& gin) override {
    if (!gin[0]) return;
    const T* x = ctx.in(0).data();
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (x[i] > T{0}) (*gin[0])[i] += g[i];
    }
  }
  bool spatial() const override { return false; }
};

// Softmax across channels at every pixel, with max subtraction.
template <typename T>
class SoftmaxOp final : public Op<T> {
 public:
  std::string kind() const override { return "softmax"; }
  Dims infer(const std::vector<Dims>& in, const ParamStore<T>&) const override { return in.at(0); }

  void forward(const OpContext<T>& ctx, Tensor<T>& out) override {
    const Tensor<T>& x = ctx.in(0);
    const Dims& d = x.dims();
    const std::size_t P = d.plane();
    std::vector<T> mx(P), sum(P);
    for (std::size_t n = 0; n < d.n; ++n) {
      const T* xs = x.data() + n * d.sample();
      T* ys = out.data() + n * d.sample();
      std::copy_n(xs, P, mx.begin());
      for (std::size_t c = 1; c < d.c; ++c)
        for (std::size_t i = 0; i < P; ++i) mx[i] = std::max(mx[i], xs[c * P + i]);
      std::fill(sum.begin(), sum.end(), T{0});
      for (std::size_t c = 0; c < d.c; ++c)
        for (std::size_t i = 0; i < P; ++i) {
          const T e = std::exp(xs[c * P + i] - mx[i]);
          ys[c * P + i] = e;
          sum[i] += e;
        }
      for (std::size_t c = 0; c < d.c; ++c)
        for (std::size_t i = 0; i < P; ++i) ys[c * P + i] /= sum[i];
    }
  }

  void backward(const OpContext<T>&, const Tensor<T>& y, const Tensor<T>& g,
                std::vector<Tensor<T>*>& gin) override {
    if (!gin[0]) return;
    const Dims& d = y.dims();
    const std::size_t P = d.plane();
    std::vector<T> inner(P);
    for (std::size_t n = 0; n < d.n; ++n) {
      const T* ys = y.data() + n * d.sample();
      const T* gs = g.data() + n * d.sample();
      T* dx = gin[0]->data() + n * d.sample();
      std::fill(inner.begin(), inner.end(), T{0});
      for (std::size_t c = 0; c < d.c; ++c)
        for (std::size_t i = 0; i < P; ++i) inner[i] += ys[c * P + i] * gs[c * P + i];
      for (std::size_t c = 0; c < d.c; ++c)
        for (std::size_t i = 0; i < P; ++i) dx[c * P + i] += ys[c * P + i] * (gs[c * P + i] - inner[i]);
    }
  }
  bool spatial() const override { return false; }
};

inline constexpr double kLogClamp = 1e-12;

// -sum over labeled pixels of t . log(max(y, 1e-12)), divided by the number
// of labeled pixels in the batch. Inputs: scores (N,C,H,W), one-hot targets
// (N,C,H,W), mask (N,1,H,W). A batch without labeled pixels gives loss 0.
template <typename T>
class MaskedCrossEntropyOp final : public Op<T> {
 public:
  std::string kind() const override { return "masked_cross_entropy"; }

  Dims infer(const std::vector<Dims>& in, const ParamStore<T>&) const override {
    const Dims& s = in.at(0);
    const Dims& t = in.at(1);
    const Dims& m = in.at(2);
    if (s != t) throw ShapeError("cross entropy: scores " + s.str() + " vs targets " + t.str());
    if (m.n != s.n || m.c != 1 || m.h != s.h || m.w != s.w) {
      throw ShapeError("cross entropy: mask dims " + m.str() + " do not match " + s.str());
    }
    return {1, 1, 1, 1};
  }

  void forward(const OpContext<T>& ctx, Tensor<T>& out) override {
    const Tensor<T>& y = ctx.in(0);
    const Tensor<T>& t = ctx.in(1);
    const Tensor<T>& mask = ctx.in(2);
    const Dims& d = y.dims();
    const std::size_t P = d.plane();
    labeled_ = 0;
    double loss = 0;
    for (std::size_t n = 0; n < d.n; ++n) {
      const T* mk = mask.data() + n * P;
      for (std::size_t i = 0; i < P; ++i) {
        if (mk[i] == T{0}) continue;
        ++labeled_;
        for (std::size_t c = 0; c < d.c; ++c) {
          const std::size_t k = n * d.sample() + c * P + i;
          if (t[k] != T{0}) {
            loss -= static_cast<double>(t[k]) *
                    std::log(std::max(static_cast<double>(y[k]), kLogClamp));
          }
        }
      }
    }
    out[0] = labeled_ == 0 ? T{0} : static_cast<T>(loss / static_cast<double>(labeled_));
  }

  void backward(const OpContext<T>& ctx, const Tensor<T>&, const Tensor<T>& g,
                std::vector<Tensor<T>*>& gin) override {
    if (!gin[0] || labeled_ == 0) return;
    const Tensor<T>& y = ctx.in(0);
    const Tensor<T>& t = ctx.in(1);
    const Tensor<T>& mask = ctx.in(2);
    const Dims& d = y.dims();
    const std::size_t P = d.plane();
    const T scale = g[0] / static_cast<T>(labeled_);
    for (std::size_t n = 0; n < d.n; ++n) {
      const T* mk = mask.data() + n * P;
      for (std::size_t i = 0; i < P; ++i) {
        if (mk[i] == T{0}) continue;
        for (std::size_t c = 0; c < d.c; ++c) {
          const std::size_t k = n * d.sample() + c * P + i;
          if (t[k] != T{0} && static_cast<double>(y[k]) > kLogClamp) {
            (*gin[0])[k] -= scale * t[k] / y[k];
          }
        }
      }
    }
  }

  std::size_t labeled() const { return labeled_; }
  bool spatial() const override { return false; }

 private:
  std::size_t labeled_ = 0;
};

// Channel-wise concatenation of any number of inputs.
template <typename T>
class ConcatOp final : public Op<T> {
 public:
  std::string kind() const override { return "concat"; }

  Dims infer(const std::vector<Dims>& in, const ParamStore<T>&) const override {
    Dims out = in.at(0);
    for (std::size_t i = 1; i < in.size(); ++i) {
      if (in[i].n != out.n || in[i].h != out.h || in[i].w != out.w) {
        throw ShapeError("concat: batch/spatial mismatch " + out.str() + " vs " + in[i].str());
      }
      out.c += in[i].c;
    }
    return out;
  }

  void forward(const OpContext<T>& ctx, Tensor<T>& out) override {
    const Dims& d = out.dims();
    for (std::size_t n = 0; n < d.n; ++n) {
      T* dst = out.data() + n * d.sample();
      for (const auto* t : ctx.inputs) {
        const std::size_t len = t->dims().sample();
        std::copy_n(t->data() + n * len, len, dst);
        dst += len;
      }
    }
  }

  void backward(const OpContext<T>& ctx, const Tensor<T>& out, const Tensor<T>& g,
                std::vector<Tensor<T>*>& gin) override {
    const Dims& d = out.dims();
    for (std::size_t n = 0; n < d.n; ++n) {
      const T* src = g.data() + n * d.sample();
      for (std::size_t k = 0; k < ctx.inputs.size(); ++k) {
        const std::size_t len = ctx.inputs[k]->dims().sample();
        if (gin[k]) {
          T* dst = gin[k]->data() + n * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
        src += len;
      }
    }
  }
  bool spatial() const override { return false; }
};

// Elementwise sum of inputs with identical dims, accumulated left to right.
template <typename T>
class AddOp final : public Op<T> {
 public:
  std::string kind() const override { return "add"; }
  Dims infer(const std::vector<Dims>& in, const ParamStore<T>&) const override {
    detail::require_same_dims<T>(in, "add");
    return in.at(0);
  }
  void forward(const OpContext<T>& ctx, Tensor<T>& out) override {
    std::copy_n(ctx.in(0).data(), out.size(), out.data());
    for (std::size_t k = 1; k < ctx.inputs.size(); ++k) detail::add_into(out, ctx.in(k).data());
  }
  void backward(const OpContext<T>&, const Tensor<T>&, const Tensor<T>& g,
                std::vector<Tensor<T>*>& gin) override {
    for (auto* t : gin) {
      if (t) detail::add_into(*t, g.data());
    }
  }
  bool spatial() const override { return false; }
};

// Arithmetic mean of same-shaped inputs (used to average per-instance losses).
template <typename T>
class MeanOp final : public Op<T> {
 public:
  std::string kind() const override { return "mean"; }
  Dims infer(const std::vector<Dims>& in, const ParamStore<T>&) const override {
    detail::require_same_dims<T>(in, "mean");
    return in.at(0);
  }
  void forward(const OpContext<T>& ctx, Tensor<T>& out) override {
    std::copy_n(ctx.in(0).data(), out.size(), out.data());
    for (std::size_t k = 1; k < ctx.inputs.size(); ++k) detail::add_into(out, ctx.in(k).data());
    const T inv = T{1} / static_cast<T>(ctx.inputs.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
  }
  void backward(const OpContext<T>& ctx, const Tensor<T>&, const Tensor<T>& g,
                std::vector<Tensor<T>*>& gin) override {
    const T inv = T{1} / static_cast<T>(ctx.inputs.size());
    for (auto* t : gin) {
      if (!t) continue;
      for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] += g[i] * inv;
    }
  }
  bool spatial() const override { return false; }
};

// sum(x * coeff): a linear scalar probe for gradient checks.
template <typename T>
class WeightedSumOp final : public Op<T> {
 public:
  std::string kind() const override { return "weighted_sum"; }
  Dims infer(const std::vector<Dims>& in, const ParamStore<T>&) const override {
    if (in.at(0) != in.at(1)) throw ShapeError("weighted_sum: dims differ");
    return {1, 1, 1, 1};
  }
  void forward(const OpContext<T>& ctx, Tensor<T>& out) override { out[0] = dot(ctx.in(0), ctx.in(1)); }
  void backward(const OpContext<T>& ctx, const Tensor<T>&, const Tensor<T>& g,
                std::vector<Tensor<T>*>& gin) override {
    if (gin[0]) {
      const Tensor<T>& c = ctx.in(1);
      for (std::size_t i = 0; i < c.size(); ++i) (*gin[0])[i] += g[0] * c[i];
    }
    if (gin[1]) {
      const Tensor<T>& x = ctx.in(0);
      for (std::size_t i = 0; i < x.size(); ++i) (*gin[1])[i] += g[0] * x[i];
    }
  }
  bool spatial() const override { return false; }
};

// Per-pixel index of the largest channel; ties go to the lowest index.
template <typename T>
Tensor<std::uint8_t> argmax_map(const Tensor<T>& scores) {
  const Dims& d = scores.dims();
  if (d.c > 255) throw ShapeError("argmax_map supports at most 255 classes");
  Tensor<std::uint8_t> out(Dims{d.n, 1, d.h, d.w});
  const std::size_t P = d.plane();
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* s = scores.data() + n * d.sample();
    for (std::size_t i = 0; i < P; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < d.c; ++c) {
        if (s[c * P + i] > s[best * P + i]) best = c;
      }
      out[n * P + i] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

}  // namespace mrcn
