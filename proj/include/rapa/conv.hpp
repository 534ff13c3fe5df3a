#pragma once

#include <cstdint>

#include "rapa/geometry.hpp"
#include "rapa/tensor.hpp"

namespace rapa {

/// The im2col matrix: row i is patch i (raster order of output pixels),
/// flattened (filter row, filter column, channel) with channel fastest.
template <typename T>
struct PatchMatrix {
  ConvGeometry geom;
  BasicTensor<T> rows;  // patches x patch_size
};

/// Flattened filters stacked as columns (patch_size x c_out) plus one bias
/// per output channel.
template <typename T>
struct KernelMatrix {
  BasicTensor<T> weights;
  BasicTensor<T> bias;

  static KernelMatrix zeros(const ConvGeometry& geom);
  void check(const ConvGeometry& geom, const char* what) const;
};

template <typename T>
struct KernelGradient {
  BasicTensor<T> weights;
  BasicTensor<T> bias;
};

template <typename T>
PatchMatrix<T> im2col(const BasicTensor<T>& input, const ConvGeometry& geom);

/// M = I K + bias, returned as out_h x out_w x c_out.
template <typename T>
BasicTensor<T> conv_forward(const PatchMatrix<T>& patches, const KernelMatrix<T>& kernel);

/// dK = I^T dM and dbias = column sums of dM. grad_out is patches x c_out
/// (any shape of that volume is accepted).
template <typename T>
KernelGradient<T> conv_backward_kernel(const PatchMatrix<T>& patches,
                                       const BasicTensor<T>& grad_out);

/// Scatter-add of dM K^T back onto the h x w x c_in input.
template <typename T>
BasicTensor<T> conv_backward_input(const BasicTensor<T>& grad_out, const KernelMatrix<T>& kernel,
                                   const ConvGeometry& geom);

/// Multiply-accumulate count n_p * k * c_out.
std::uint64_t mac_count(const ConvGeometry& geom);

}  // namespace rapa
