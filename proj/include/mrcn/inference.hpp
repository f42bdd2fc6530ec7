#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

#include "mrcn/arch.hpp"
#include "mrcn/data.hpp"

namespace mrcn {

struct TileOptions {
  std::size_t window = 0;                // PAN pixels; 0 picks max(256, smallest valid)
  std::optional<std::size_t> overlap;    // default: receptive-field radius
  std::size_t batch = 4;                 // windows per forward pass
  bool per_instance = false;
};

struct TilePrediction {
  Tensor<float> scores;                     // (1,C,H,W), last instance
  Tensor<std::uint8_t> labels;              // (1,1,H,W)
  std::vector<Tensor<float>> instances;     // per instance when requested
  std::size_t window = 0;
  std::size_t overlap = 0;
  std::size_t windows = 0;
};

namespace detail {

inline std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

// Window starts along one axis and the first index each window owns.
struct AxisPlan {
  std::vector<std::size_t> start;
  std::vector<std::size_t> own_begin;
  std::vector<std::size_t> own_end;
};

inline AxisPlan plan_axis(std::size_t extent, std::size_t window, std::size_t overlap) {
  AxisPlan p;
  if (extent <= window) {
    p.start = {0};
    p.own_begin = {0};
    p.own_end = {extent};
    return p;
  }
  const std::size_t step = window - 2 * overlap;
  for (std::size_t s = 0;; s += step) {
    const std::size_t st = std::min(s, extent - window);
    p.start.push_back(st);
    if (st + window >= extent) break;
  }
  for (std::size_t i = 0; i < p.start.size(); ++i) {
    p.own_begin.push_back(i == 0 ? 0 : p.start[i] + overlap);
  }
  for (std::size_t i = 0; i < p.start.size(); ++i) {
    p.own_end.push_back(i + 1 < p.start.size() ? p.own_begin[i + 1] : extent);
  }
  return p;
}

template <typename T>
Tensor<T> pad_to(const Tensor<T>& x, std::size_t h, std::size_t w) {
  const Dims& d = x.dims();
  if (d.h == h && d.w == w) return x;
  Tensor<T> out(Dims{d.n, d.c, h, w});
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t i = 0; i < d.h; ++i) std::copy_n(x.plane(n, c) + i * d.w, d.w, out.plane(n, c) + i * w);
  return out;
}

}  // namespace detail

// Applies the network to a whole tile through overlapping windows. Window
// origins sit on multiples of the architecture divisor and every output
// pixel comes from a window in which it is at least `overlap` pixels from
// any window edge not on the tile border, so with overlap >= receptive
// radius the result equals a single pass over the (padded) tile.
// The tile is zero-padded at the bottom/right to a multiple of the divisor.
inline TilePrediction predict_tile(Network<float>& net, const Tensor<float>& pan, const Tensor<float>& ms,
                                   const TileOptions& opt = {}) {
  const Dims& pd = pan.dims();
  const Dims& md = ms.dims();
  if (pd.n != 1 || pd.c != 1 || md.n != 1 || md.c != kMsBands || pd.h != kPanScale * md.h || pd.w != kPanScale * md.w) {
    throw ShapeError("predict_tile needs PAN (1,1,4h,4w) and MS (1,4,h,w), got " + pd.str() + " and " + md.str());
  }
  const std::size_t D = net.spec().divisor();
  const std::size_t C = net.spec().num_classes;
  const auto radius = static_cast<std::size_t>(receptive_field(net.spec(), net.reuse()));
  const std::size_t overlap = detail::round_up(opt.overlap.value_or(radius), D);
  if (overlap < radius) {
    throw ConfigError("overlap " + std::to_string(overlap) + " is below the receptive-field radius " + std::to_string(radius));
  }
  const std::size_t min_window = 2 * overlap + D;
  std::size_t window = opt.window ? opt.window : std::max<std::size_t>(256, detail::round_up(min_window, D));
  if (window % D != 0) throw ConfigError("window " + std::to_string(window) + " must be a multiple of " + std::to_string(D));
  if (window < min_window) {
    throw ConfigError("window " + std::to_string(window) + " smaller than the receptive field needs (>= " +
                      std::to_string(min_window) + ")");
  }

  const std::size_t H = detail::round_up(pd.h, D), W = detail::round_up(pd.w, D);
  const Tensor<float> pan_p = detail::pad_to(pan, H, W);
  const Tensor<float> ms_p = detail::pad_to(ms, H / kPanScale, W / kPanScale);
  const auto rows = detail::plan_axis(H, window, overlap);
  const auto cols = detail::plan_axis(W, window, overlap);
  const std::size_t wh = std::min(window, H), ww = std::min(window, W);

  const std::size_t R = opt.per_instance ? net.instances() : 1;
  std::vector<Tensor<float>> full(R, Tensor<float>(Dims{1, C, H, W}));

  struct Job {
    std::size_t r, c;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < rows.start.size(); ++i)
    for (std::size_t j = 0; j < cols.start.size(); ++j) jobs.push_back({i, j});

  const std::size_t B = std::max<std::size_t>(1, opt.batch);
  for (std::size_t j0 = 0; j0 < jobs.size(); j0 += B) {
    const std::size_t nb = std::min(B, jobs.size() - j0);
    Tensor<float> bp(Dims{nb, 1, wh, ww});
    Tensor<float> bm(Dims{nb, kMsBands, wh / kPanScale, ww / kPanScale});
    for (std::size_t k = 0; k < nb; ++k) {
      const std::size_t r0 = rows.start[jobs[j0 + k].r], c0 = cols.start[jobs[j0 + k].c];
      for (std::size_t i = 0; i < wh; ++i) std::copy_n(pan_p.data() + (r0 + i) * W + c0, ww, bp.plane(k, 0) + i * ww);
      const std::size_t mw = W / kPanScale, mh = H / kPanScale;
      for (std::size_t b = 0; b < kMsBands; ++b)
        for (std::size_t i = 0; i < wh / kPanScale; ++i)
          std::copy_n(ms_p.data() + (b * mh + r0 / kPanScale + i) * mw + c0 / kPanScale, ww / kPanScale,
                      bm.plane(k, b) + i * (ww / kPanScale));
    }
    std::vector<Tensor<float>> out;
    if (opt.per_instance) {
      out = net.instance_scores(bp, bm);
    } else {
      out.push_back(net.scores(bp, bm));
    }
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t k = 0; k < nb; ++k) {
        const Job& jb = jobs[j0 + k];
        const std::size_t r0 = rows.start[jb.r], c0 = cols.start[jb.c];
        for (std::size_t ch = 0; ch < C; ++ch) {
          for (std::size_t i = rows.own_begin[jb.r]; i < rows.own_end[jb.r]; ++i) {
            const float* src = out[r].plane(k, ch) + (i - r0) * ww + (cols.own_begin[jb.c] - c0);
            std::copy_n(src, cols.own_end[jb.c] - cols.own_begin[jb.c], full[r].plane(0, ch) + i * W + cols.own_begin[jb.c]);
          }
        }
      }
    }
  }

  TilePrediction res;
  res.window = window;
  res.overlap = overlap;
  res.windows = jobs.size();
  for (auto& t : full) {
    Tensor<float> crop(Dims{1, C, pd.h, pd.w});
    for (std::size_t ch = 0; ch < C; ++ch)
      for (std::size_t i = 0; i < pd.h; ++i) std::copy_n(t.plane(0, ch) + i * W, pd.w, crop.plane(0, ch) + i * pd.w);
    t = std::move(crop);
  }
  res.scores = full.back();
  res.labels = argmax_map(res.scores);
  if (opt.per_instance) res.instances = std::move(full);
  return res;
}

// Score map of every unrolled instance for one input batch.
inline std::vector<Tensor<float>> per_instance_scores(Network<float>& net, const Tensor<float>& pan,
                                                      const Tensor<float>& ms) {
  if (!net.reuse().recurrent()) throw ConfigError("per-instance scores need a ReuseNet");
  return net.instance_scores(pan, ms);
}

// Whole-tile single forward pass on the zero-padded tile (reference for
// the tiled path).
inline Tensor<float> predict_single_pass(Network<float>& net, const Tensor<float>& pan, const Tensor<float>& ms) {
  const std::size_t D = net.spec().divisor();
  const Dims& pd = pan.dims();
  const std::size_t H = detail::round_up(pd.h, D), W = detail::round_up(pd.w, D);
  const auto y = net.scores(detail::pad_to(pan, H, W), detail::pad_to(ms, H / kPanScale, W / kPanScale));
  Tensor<float> crop(Dims{1, y.dims().c, pd.h, pd.w});
  for (std::size_t ch = 0; ch < y.dims().c; ++ch)
    for (std::size_t i = 0; i < pd.h; ++i) std::copy_n(y.plane(0, ch) + i * W, pd.w, crop.plane(0, ch) + i * pd.w);
  return crop;
}

}  // namespace mrcn
