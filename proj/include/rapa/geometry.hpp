#pragma once

#include <cstddef>
#include <string>

namespace rapa {

/// Shape bookkeeping for one convolution layer in the im2col formulation.
///
/// Input images are h x w x c_in (HWC, row-major). The patch matrix has one
/// row per output pixel in raster order (y-major) and k = k_h * k_w * c_in
/// columns ordered (filter row, filter column, channel), channel fastest.
struct ConvGeometry {
  std::size_t h = 0, w = 0, c_in = 0;
  std::size_t k_h = 0, k_w = 0;
  std::size_t pad = 0, stride = 1;
  std::size_t c_out = 0;

  std::size_t out_h() const noexcept { return (h + 2 * pad - k_h) / stride + 1; }
  std::size_t out_w() const noexcept { return (w + 2 * pad - k_w) / stride + 1; }
  std::size_t patches() const noexcept { return out_h() * out_w(); }
  std::size_t patch_size() const noexcept { return k_h * k_w * c_in; }
  std::size_t input_size() const noexcept { return h * w * c_in; }

  /// Throws Error unless all extents are positive and the output extents are
  /// integral (no implicit floor).
  void validate() const;
  std::string describe() const;

  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

/// 5x5, pad 2, stride 1: the "same" convolution used by the reference net.
ConvGeometry same_conv(std::size_t side, std::size_t c_in, std::size_t c_out,
                       std::size_t kernel = 5);

}  // namespace rapa
