#pragma once

// Dense compute kernels behind the convolution and tiling modules.
//
// Each kernel has an OpenMP implementation (namespace kernels) and a plain
// serial reference (namespace kernels::serial) with the same signature. The
// parallel versions split work over disjoint output blocks only, so every
// output element is accumulated in the same order whatever the worker count.

#include <cstddef>
#include <cstdint>
#include <span>

#include "rapa/geometry.hpp"

namespace rapa::kernels {

/// Caps OpenMP worker count; 0 restores the runtime default.
void set_workers(int workers);
int workers();

/// For each r in `rows`: C[r, :] = A[r, :] * B (or += when `accumulate`).
/// A rows have stride lda and length k; B is k x n row-major; C has stride ldc.
template <typename T>
void gemm_rows(const T* a, std::size_t lda, const T* b, std::size_t k, std::size_t n, T* c,
               std::size_t ldc, std::span<const std::uint32_t> rows, bool accumulate);

/// C (k x n, row-major) += sum over r in `rows` of A[r, :]^T * B[r, :].
template <typename T>
void gemm_tn_rows(const T* a, std::size_t lda, const T* b, std::size_t ldb, std::size_t k,
                  std::size_t n, std::span<const std::uint32_t> rows, T* c);

/// Patch extraction: writes geom.patches() x geom.patch_size() values.
template <typename T>
void im2col(const T* input, const ConvGeometry& geom, T* patches);

/// Adjoint of im2col: each input element receives the sum of the patch
/// entries copied from it; padded entries are dropped. Overwrites `input`.
template <typename T>
void col2im(const T* patches, const ConvGeometry& geom, T* input);

namespace serial {

template <typename T>
void gemm_rows(const T* a, std::size_t lda, const T* b, std::size_t k, std::size_t n, T* c,
               std::size_t ldc, std::span<const std::uint32_t> rows, bool accumulate);
template <typename T>
void gemm_tn_rows(const T* a, std::size_t lda, const T* b, std::size_t ldb, std::size_t k,
                  std::size_t n, std::span<const std::uint32_t> rows, T* c);
template <typename T>
void im2col(const T* input, const ConvGeometry& geom, T* patches);
template <typename T>
void col2im(const T* patches, const ConvGeometry& geom, T* input);

}  // namespace serial

}  // namespace rapa::kernels
