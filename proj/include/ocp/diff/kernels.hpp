#pragma once

// Raw numeric kernels shared by the graph ops and the direct (non-graph)
// perception API. All buffers are row-major.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace ocp::diff::kernels {

namespace detail {

// C[rows x cols] += A * B over k, where A(r, p) = a[r * a_row + p * a_col]
// and B(p, j) = b[p * ldb + j]. Each C element accumulates in p order, so
// the blocked path and the edge path round identically.
using v4d = double __attribute__((vector_size(32)));

template <std::size_t MR, std::size_t NR>
inline void gemm_tile(std::size_t k, const double* a, std::size_t a_row, std::size_t a_col, const double* b,
                      std::size_t ldb, double* c, std::size_t ldc) {
  static_assert(NR % 4 == 0);
  constexpr std::size_t NV = NR / 4;
  v4d acc[MR][NV];
  for (std::size_t r = 0; r < MR; ++r) {
    for (std::size_t v = 0; v < NV; ++v) __builtin_memcpy(&acc[r][v], c + r * ldc + 4 * v, sizeof(v4d));
  }
  for (std::size_t p = 0; p < k; ++p) {
    const double* bp = b + p * ldb;
    v4d bv[NV];
    for (std::size_t v = 0; v < NV; ++v) __builtin_memcpy(&bv[v], bp + 4 * v, sizeof(v4d));
    for (std::size_t r = 0; r < MR; ++r) {
      const double av = a[r * a_row + p * a_col];
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] += av * bv[v];
    }
  }
  for (std::size_t r = 0; r < MR; ++r) {
    for (std::size_t v = 0; v < NV; ++v) __builtin_memcpy(c + r * ldc + 4 * v, &acc[r][v], sizeof(v4d));
  }
}

inline void gemm_edge(std::size_t rows, std::size_t cols, std::size_t k, const double* a, std::size_t a_row,
                      std::size_t a_col, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = c[r * ldc + j];
      for (std::size_t p = 0; p < k; ++p) acc += a[r * a_row + p * a_col] * b[p * ldb + j];
      c[r * ldc + j] = acc;
    }
  }
}

inline void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t a_row,
                         std::size_t a_col, const double* b, double* c) {
  constexpr std::size_t MR = 4, NR = 8;
  std::size_t i = 0;
  for (; i + MR <= m; i += MR) {
    std::size_t j = 0;
    for (; j + NR <= n; j += NR) gemm_tile<MR, NR>(k, a + i * a_row, a_row, a_col, b + j, n, c + i * n + j, n);
    gemm_edge(MR, n - j, k, a + i * a_row, a_row, a_col, b + j, n, c + i * n + j, n);
  }
  for (; i < m; ++i) {
    std::size_t j = 0;
    for (; j + NR <= n; j += NR) gemm_tile<1, NR>(k, a + i * a_row, a_row, a_col, b + j, n, c + i * n + j, n);
    gemm_edge(1, n - j, k, a + i * a_row, a_row, a_col, b + j, n, c + i * n + j, n);
  }
}

}  // namespace detail

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                    double* c) {
  detail::gemm_strided(m, n, k, a, k, 1, b, c);
}

// C[m x n] += A^T * B, A stored [k x m], B stored [k x n]
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                    double* c) {
  detail::gemm_strided(m, n, k, a, 1, m, b, c);
}

inline double dot(const double* x, const double* y, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += x[i] * y[i];
    s1 += x[i + 1] * y[i + 1];
    s2 += x[i + 2] * y[i + 2];
    s3 += x[i + 3] * y[i + 3];
  }
  for (; i < n; ++i) s0 += x[i] * y[i];
  return (s0 + s1) + (s2 + s3);
}

// C[m x n] += A[m x k] * B^T, B stored [n x k]
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                    double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += dot(ai, b + j * k, k);
  }
}

struct ConvGeometry {
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t kernel = 0, stride = 1, pad = 0;

  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t patch() const { return channels * kernel * kernel; }
  std::size_t cells() const { return out_height() * out_width(); }
  bool valid() const {
    return channels > 0 && kernel > 0 && stride > 0 && height + 2 * pad >= kernel &&
           width + 2 * pad >= kernel;
  }
};

// cols[(c*K + ky)*K + kx][oy*Wo + ox]
inline void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const long h = static_cast<long>(g.height), w = static_cast<long>(g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          double* out = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + wo, 0.0);
            continue;
          }
          const double* src = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            out[ox] = (ix < 0 || ix >= w) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

inline void col2im_add(const ConvGeometry& g, const double* cols, double* dx) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const long h = static_cast<long>(g.height), w = static_cast<long>(g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= h) continue;
          double* dst = dx + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          const double* in = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < w) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

// y[O x cells] = W[O x patch] * cols + b
inline void conv_forward(const ConvGeometry& g, std::size_t out_channels, const double* weight,
                         const double* bias, const double* cols, double* y) {
  const std::size_t cells = g.cells();
  for (std::size_t o = 0; o < out_channels; ++o) std::fill(y + o * cells, y + (o + 1) * cells, bias[o]);
  gemm_nn(out_channels, cells, g.patch(), weight, cols, y);
}

inline void softmax_row(const double* z, double* out, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, z[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(z[i] - m);
    s += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= s;
}

inline double log_sum_exp(const double* z, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, z[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(z[i] - m);
  return m + std::log(s);
}

/// Integer window on a feature map, half-open in both axes.
struct RoiWindow {
  std::size_t y0 = 0, y1 = 1, x0 = 0, x1 = 1;
  bool degenerate = false;
};

// Bin b of `bins` over [start, end): [start + floor(b*len/bins), start + ceil((b+1)*len/bins))
inline std::pair<std::size_t, std::size_t> roi_bin(std::size_t start, std::size_t end, std::size_t b,
                                                   std::size_t bins) {
  const std::size_t len = end - start;
  const std::size_t lo = start + (b * len) / bins;
  std::size_t hi = start + ((b + 1) * len + bins - 1) / bins;
  if (hi <= lo) hi = lo + 1;
  return {lo, std::min(hi, end)};
}

// Max over each bin of each channel. out[c*bins*bins + by*bins + bx]; argmax holds
// the flat map index of the winner (lowest flat index on ties).
inline void roi_max_pool(const double* map, std::size_t channels, std::size_t height,
                         std::size_t width, const RoiWindow& win, std::size_t bins, double* out,
                         std::size_t* argmax) {
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = map + c * height * width;
    for (std::size_t by = 0; by < bins; ++by) {
      const auto [ylo, yhi] = roi_bin(win.y0, win.y1, by, bins);
      for (std::size_t bx = 0; bx < bins; ++bx) {
        const auto [xlo, xhi] = roi_bin(win.x0, win.x1, bx, bins);
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t y = ylo; y < yhi; ++y) {
          for (std::size_t x = xlo; x < xhi; ++x) {
            const double v = plane[y * width + x];
            if (v > best) {
              best = v;
              best_idx = c * height * width + y * width + x;
            }
          }
        }
        const std::size_t slot = c * bins * bins + by * bins + bx;
        out[slot] = best;
        if (argmax) argmax[slot] = best_idx;
      }
    }
  }
}

}  // namespace ocp::diff::kernels
