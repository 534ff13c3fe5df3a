#include "rapa/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rapa::kernels {

namespace {

int g_workers = 0;

// Work (multiply-adds) below which a kernel stays on the calling thread.
constexpr std::size_t kParallelThreshold = std::size_t{1} << 16;

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 16;

// Register-blocked C[rows, j0:j0+W] over a group of R rows sharing B.
template <typename T, std::size_t R, std::size_t W>
inline void rows_block(const T* const* a_rows, const T* b, std::size_t k, std::size_t n,
                       std::size_t j0, T* const* c_rows, bool accumulate) {
  T acc[R][W];
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < W; ++j) acc[r][j] = accumulate ? c_rows[r][j0 + j] : T{};
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n + j0;
    for (std::size_t r = 0; r < R; ++r) {
      const T av = a_rows[r][p];
      for (std::size_t j = 0; j < W; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < W; ++j) c_rows[r][j0 + j] = acc[r][j];
  }
}

template <typename T, std::size_t R>
inline void rows_tail(const T* const* a_rows, const T* b, std::size_t k, std::size_t n,
                      std::size_t j0, T* const* c_rows, bool accumulate) {
  const std::size_t width = n - j0;
  T acc[R][kColBlock];
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < width; ++j) acc[r][j] = accumulate ? c_rows[r][j0 + j] : T{};
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n + j0;
    for (std::size_t r = 0; r < R; ++r) {
      const T av = a_rows[r][p];
      for (std::size_t j = 0; j < width; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < width; ++j) c_rows[r][j0 + j] = acc[r][j];
  }
}

template <typename T, std::size_t R>
inline void rows_group(const T* const* a_rows, const T* b, std::size_t k, std::size_t n,
                       T* const* c_rows, bool accumulate) {
  std::size_t j0 = 0;
  for (; j0 + kColBlock <= n; j0 += kColBlock) {
    rows_block<T, R, kColBlock>(a_rows, b, k, n, j0, c_rows, accumulate);
  }
  if (j0 < n) rows_tail<T, R>(a_rows, b, k, n, j0, c_rows, accumulate);
}

template <typename T>
inline void im2col_row(const T* input, const ConvGeometry& g, std::size_t oy, T* patches) {
  const std::size_t ow = g.out_w();
  const std::size_t k = g.patch_size();
  const std::size_t c = g.c_in;
  for (std::size_t ox = 0; ox < ow; ++ox) {
    T* row = patches + (oy * ow + ox) * k;
    for (std::size_t ky = 0; ky < g.k_h; ++ky) {
      const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                      static_cast<std::ptrdiff_t>(g.pad);
      for (std::size_t kx = 0; kx < g.k_w; ++kx) {
        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                        static_cast<std::ptrdiff_t>(g.pad);
        T* dst = row + (ky * g.k_w + kx) * c;
        if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) ||
            ix >= static_cast<std::ptrdiff_t>(g.w)) {
          std::fill(dst, dst + c, T{});
        } else {
          std::memcpy(dst, input + (static_cast<std::size_t>(iy) * g.w + ix) * c, c * sizeof(T));
        }
      }
    }
  }
}

template <typename T>
inline void col2im_row(const T* patches, const ConvGeometry& g, std::size_t iy, T* input) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t k = g.patch_size();
  const std::size_t c = g.c_in;
  for (std::size_t ix = 0; ix < g.w; ++ix) {
    T* dst = input + (iy * g.w + ix) * c;
    std::fill(dst, dst + c, T{});
    for (std::size_t ky = 0; ky < g.k_h; ++ky) {
      const std::size_t ny = iy + g.pad;
      if (ny < ky || (ny - ky) % g.stride != 0) continue;
      const std::size_t oy = (ny - ky) / g.stride;
      if (oy >= oh) continue;
      for (std::size_t kx = 0; kx < g.k_w; ++kx) {
        const std::size_t nx = ix + g.pad;
        if (nx < kx || (nx - kx) % g.stride != 0) continue;
        const std::size_t ox = (nx - kx) / g.stride;
        if (ox >= ow) continue;
        const T* src = patches + (oy * ow + ox) * k + (ky * g.k_w + kx) * c;
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
      }
    }
  }
}

}  // namespace

void set_workers(int workers) {
  g_workers = workers;
#ifdef _OPENMP
  omp_set_num_threads(workers > 0 ? workers : omp_get_num_procs());
#endif
}

int workers() {
#ifdef _OPENMP
  return g_workers > 0 ? g_workers : omp_get_max_threads();
#else
  return 1;
#endif
}

template <typename T>
void gemm_rows(const T* a, std::size_t lda, const T* b, std::size_t k, std::size_t n, T* c,
               std::size_t ldc, std::span<const std::uint32_t> rows, bool accumulate) {
  const std::size_t n_rows = rows.size();
  const std::size_t blocks = (n_rows + kRowBlock - 1) / kRowBlock;
  [[maybe_unused]] const bool parallel = n_rows * k * n >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const std::size_t first = blk * kRowBlock;
    const std::size_t count = std::min(kRowBlock, n_rows - first);
    const T* a_rows[kRowBlock];
    T* c_rows[kRowBlock];
    for (std::size_t r = 0; r < count; ++r) {
      a_rows[r] = a + rows[first + r] * lda;
      c_rows[r] = c + rows[first + r] * ldc;
    }
    switch (count) {
      case 4: rows_group<T, 4>(a_rows, b, k, n, c_rows, accumulate); break;
      case 3: rows_group<T, 3>(a_rows, b, k, n, c_rows, accumulate); break;
      case 2: rows_group<T, 2>(a_rows, b, k, n, c_rows, accumulate); break;
      default: rows_group<T, 1>(a_rows, b, k, n, c_rows, accumulate); break;
    }
  }
}

template <typename T>
void gemm_tn_rows(const T* a, std::size_t lda, const T* b, std::size_t ldb, std::size_t k,
                  std::size_t n, std::span<const std::uint32_t> rows, T* c) {
  if (rows.empty()) return;
  // Gather A[rows]^T (k x m) and B[rows] (m x n) so the contraction runs
  // through the row kernel with unit-stride operands.
  const std::size_t m = rows.size();
  std::vector<T> at(k * m);
  std::vector<T> bg(m * n);
  constexpr std::size_t kStrip = 16;
  for (std::size_t i0 = 0; i0 < m; i0 += kStrip) {
    const std::size_t i1 = std::min(m, i0 + kStrip);
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t i = i0; i < i1; ++i) at[p * m + i] = a[rows[i] * lda + p];
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(b + rows[i] * ldb, b + rows[i] * ldb + n, bg.data() + i * n);
  }
  std::vector<std::uint32_t> out_rows(k);
  for (std::size_t p = 0; p < k; ++p) out_rows[p] = static_cast<std::uint32_t>(p);
  gemm_rows(at.data(), m, bg.data(), m, n, c, n, out_rows, true);
}

template <typename T>
void im2col(const T* input, const ConvGeometry& geom, T* patches) {
  const std::size_t oh = geom.out_h();
  [[maybe_unused]] const bool parallel = geom.patches() * geom.patch_size() >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t oy = 0; oy < oh; ++oy) im2col_row(input, geom, oy, patches);
}

template <typename T>
void col2im(const T* patches, const ConvGeometry& geom, T* input) {
  [[maybe_unused]] const bool parallel = geom.patches() * geom.patch_size() >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t iy = 0; iy < geom.h; ++iy) col2im_row(patches, geom, iy, input);
}

namespace serial {

template <typename T>
void gemm_rows(const T* a, std::size_t lda, const T* b, std::size_t k, std::size_t n, T* c,
               std::size_t ldc, std::span<const std::uint32_t> rows, bool accumulate) {
  for (std::uint32_t r : rows) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = accumulate ? c[r * ldc + j] : T{};
      for (std::size_t p = 0; p < k; ++p) sum += a[r * lda + p] * b[p * n + j];
      c[r * ldc + j] = sum;
    }
  }
}

template <typename T>
void gemm_tn_rows(const T* a, std::size_t lda, const T* b, std::size_t ldb, std::size_t k,
                  std::size_t n, std::span<const std::uint32_t> rows, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = c[p * n + j];
      for (std::uint32_t l : rows) sum += a[l * lda + p] * b[l * ldb + j];
      c[p * n + j] = sum;
    }
  }
}

template <typename T>
void im2col(const T* input, const ConvGeometry& g, T* patches) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.patch_size();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      std::size_t col = 0;
      for (std::size_t ky = 0; ky < g.k_h; ++ky) {
        for (std::size_t kx = 0; kx < g.k_w; ++kx) {
          for (std::size_t ch = 0; ch < g.c_in; ++ch, ++col) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) &&
                                ix < static_cast<long>(g.w);
            patches[(oy * ow + ox) * k + col] =
                inside ? input[(static_cast<std::size_t>(iy) * g.w + ix) * g.c_in + ch] : T{};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* patches, const ConvGeometry& g, T* input) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.patch_size();
  std::fill(input, input + g.input_size(), T{});
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      std::size_t col = 0;
      for (std::size_t ky = 0; ky < g.k_h; ++ky) {
        for (std::size_t kx = 0; kx < g.k_w; ++kx) {
          for (std::size_t ch = 0; ch < g.c_in; ++ch, ++col) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.h) || ix >= static_cast<long>(g.w)) {
              continue;
            }
            input[(static_cast<std::size_t>(iy) * g.w + ix) * g.c_in + ch] +=
                patches[(oy * ow + ox) * k + col];
          }
        }
      }
    }
  }
}

}  // namespace serial

#define RAPA_INSTANTIATE_KERNELS(NS, T)                                                        \
  template void NS::gemm_rows<T>(const T*, std::size_t, const T*, std::size_t, std::size_t,    \
                                 T*, std::size_t, std::span<const std::uint32_t>, bool);       \
  template void NS::gemm_tn_rows<T>(const T*, std::size_t, const T*, std::size_t, std::size_t, \
                                    std::size_t, std::span<const std::uint32_t>, T*);          \
  template void NS::im2col<T>(const T*, const ConvGeometry&, T*);                              \
  template void NS::col2im<T>(const T*, const ConvGeometry&, T*);

RAPA_INSTANTIATE_KERNELS(kernels, float)
RAPA_INSTANTIATE_KERNELS(kernels, double)
RAPA_INSTANTIATE_KERNELS(kernels::serial, float)
RAPA_INSTANTIATE_KERNELS(kernels::serial, double)

#undef RAPA_INSTANTIATE_KERNELS

}  // namespace rapa::kernels
