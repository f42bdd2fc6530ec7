#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace mrcn::kernels {

// Row-major C[m x n] = (accumulate ? C : 0) + A[m x k] * B[k x n].
//
// Every C element is reduced over k strictly in index order, one multiply
// and one add per term, whatever m and n are. Results for a given output
// element therefore do not depend on the matrix width, which the tiled
// inference relies on for bit-identical interiors. Build with
// -ffp-contract=off so the vector and scalar paths round identically.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  constexpr std::size_t MR = 4;
  constexpr std::size_t NR = 128 / sizeof(T);
  constexpr std::size_t KC = 256;
  constexpr std::size_t NC = 1024;

  if (!accumulate) {
    for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, T{0});
  }
  if (k == 0) return;

  for (std::size_t jc = 0; jc < n; jc += NC) {
    const std::size_t nc = std::min(NC, n - jc);
    for (std::size_t pc = 0; pc < k; pc += KC) {
      const std::size_t kc = std::min(KC, k - pc);
      const T* bp = b + pc * ldb + jc;
      std::size_t i0 = 0;
      for (; i0 + MR <= m; i0 += MR) {
        const T* ap = a + i0 * lda + pc;
        std::size_t j0 = 0;
        for (; j0 + NR <= nc; j0 += NR) {
          T acc[MR][NR];
          T* cp = c + i0 * ldc + jc + j0;
          for (std::size_t r = 0; r < MR; ++r)
            for (std::size_t q = 0; q < NR; ++q) acc[r][q] = cp[r * ldc + q];
          for (std::size_t p = 0; p < kc; ++p) {
            const T* brow = bp + p * ldb + j0;
            for (std::size_t r = 0; r < MR; ++r) {
              const T av = ap[r * lda + p];
              for (std::size_t q = 0; q < NR; ++q) acc[r][q] += av * brow[q];
            }
          }
          for (std::size_t r = 0; r < MR; ++r)
            for (std::size_t q = 0; q < NR; ++q) cp[r * ldc + q] = acc[r][q];
        }
        if (j0 < nc) {
          const std::size_t nr = nc - j0;
          for (std::size_t r = 0; r < MR; ++r) {
            T* cp = c + (i0 + r) * ldc + jc + j0;
            const T* arow = ap + r * lda;
            for (std::size_t p = 0; p < kc; ++p) {
              const T av = arow[p];
              const T* brow = bp + p * ldb + j0;
              for (std::size_t q = 0; q < nr; ++q) cp[q] += av * brow[q];
            }
          }
        }
      }
      for (; i0 < m; ++i0) {
        T* cp = c + i0 * ldc + jc;
        const T* arow = a + i0 * lda + pc;
        for (std::size_t p = 0; p < kc; ++p) {
          const T av = arow[p];
          const T* brow = bp + p * ldb;
          for (std::size_t q = 0; q < nc; ++q) cp[q] += av * brow[q];
        }
      }
    }
  }
}

// dst[cols x rows] = src[rows x cols]^T
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t B = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += B) {
    for (std::size_t j0 = 0; j0 < cols; j0 += B) {
      const std::size_t i1 = std::min(rows, i0 + B);
      const std::size_t j1 = std::min(cols, j0 + B);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
    }
  }
}

// Geometry of one strided, zero-padded square-kernel convolution.
struct ConvGeometry {
  std::size_t channels;  // input channels of the convolution
  std::size_t in_h, in_w;
  std::size_t kernel, stride, pad;
  std::size_t out_h, out_w;

  std::size_t col_rows() const { return channels * kernel * kernel; }
  std::size_t col_cols() const { return out_h * out_w; }
};

// Unfolds a (channels x in_h x in_w) image into a
// (channels*G*G) x (out_h*out_w) matrix whose rows are `ld` apart (default
// out_h*out_w); padded taps read as zero.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* cols, std::size_t ld = 0) {
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(g.in_h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(g.in_w);
  const std::ptrdiff_t S = static_cast<std::ptrdiff_t>(g.stride);
  const std::ptrdiff_t Z = static_cast<std::ptrdiff_t>(g.pad);
  if (ld == 0) ld = g.col_cols();
  T* row_start = cols;
  for (std::size_t ch = 0; ch < g.channels; ++ch) {
    const T* src = image + ch * g.in_h * g.in_w;
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj, row_start += ld) {
        cols = row_start;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * S - Z + static_cast<std::ptrdiff_t>(ki);
          if (ih < 0 || ih >= H) {
            std::fill_n(cols, g.out_w, T{0});
            cols += g.out_w;
            continue;
          }
          const T* row = src + ih * W;
          std::ptrdiff_t iw = -Z + static_cast<std::ptrdiff_t>(kj);
          if (S == 1 && iw >= 0 && iw + static_cast<std::ptrdiff_t>(g.out_w) <= W) {
            std::copy_n(row + iw, g.out_w, cols);
            cols += g.out_w;
            continue;
          }
          for (std::size_t ow = 0; ow < g.out_w; ++ow, iw += S) {
            *cols++ = (iw >= 0 && iw < W) ? row[iw] : T{0};
          }
        }
      }
    }
  }
}

// Adjoint of im2col: zeroes the image, then scatter-adds the column matrix.
// Contributions to one pixel arrive in (channel, ki, kj) order.
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* image, std::size_t ld = 0) {
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(g.in_h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(g.in_w);
  const std::ptrdiff_t S = static_cast<std::ptrdiff_t>(g.stride);
  const std::ptrdiff_t Z = static_cast<std::ptrdiff_t>(g.pad);
  if (ld == 0) ld = g.col_cols();
  std::fill_n(image, g.channels * g.in_h * g.in_w, T{0});
  const T* row_start = cols;
  for (std::size_t ch = 0; ch < g.channels; ++ch) {
    T* dst = image + ch * g.in_h * g.in_w;
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj, row_start += ld) {
        cols = row_start;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * S - Z + static_cast<std::ptrdiff_t>(ki);
          if (ih < 0 || ih >= H) {
            cols += g.out_w;
            continue;
          }
          T* row = dst + ih * W;
          std::ptrdiff_t iw = -Z + static_cast<std::ptrdiff_t>(kj);
          for (std::size_t ow = 0; ow < g.out_w; ++ow, iw += S, ++cols) {
            if (iw >= 0 && iw < W) row[iw] += *cols;
          }
        }
      }
    }
  }
}

// Copies `count` samples of a (.., rows, cols_per_sample) tensor into a
// rows x (count*cols_per_sample) matrix, sample j in column block j.
template <typename T>
void gather_columns(const T* src, std::size_t count, std::size_t rows, std::size_t per, T* dst) {
  const std::size_t ld = count * per;
  for (std::size_t j = 0; j < count; ++j)
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(src + (j * rows + r) * per, per, dst + r * ld + j * per);
}

}  // namespace mrcn::kernels
