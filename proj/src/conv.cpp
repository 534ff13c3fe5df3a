#include "rapa/conv.hpp"

#include <numeric>
#include <sstream>
#include <vector>

#include "rapa/kernels.hpp"

namespace rapa {

void ConvGeometry::validate() const {
  if (h == 0 || w == 0 || c_in == 0 || k_h == 0 || k_w == 0 || stride == 0 || c_out == 0) {
    throw Error("conv geometry has a zero extent: " + describe());
  }
  if (h + 2 * pad < k_h || w + 2 * pad < k_w) {
    throw Error("conv filter larger than padded input: " + describe());
  }
  if ((h + 2 * pad - k_h) % stride != 0 || (w + 2 * pad - k_w) % stride != 0) {
    throw Error("conv output extent is not integral: " + describe());
  }
}

std::string ConvGeometry::describe() const {
  std::ostringstream out;
  out << h << 'x' << w << 'x' << c_in << " * " << k_h << 'x' << k_w << " pad " << pad
      << " stride " << stride << " -> " << c_out;
  return out.str();
}

ConvGeometry same_conv(std::size_t side, std::size_t c_in, std::size_t c_out,
                       std::size_t kernel) {
  ConvGeometry g;
  g.h = g.w = side;
  g.c_in = c_in;
  g.k_h = g.k_w = kernel;
  g.pad = kernel / 2;
  g.stride = 1;
  g.c_out = c_out;
  return g;
}

namespace {

std::vector<std::uint32_t> all_rows(std::size_t n) {
  std::vector<std::uint32_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0u);
  return rows;
}

}  // namespace

template <typename T>
KernelMatrix<T> KernelMatrix<T>::zeros(const ConvGeometry& geom) {
  return {BasicTensor<T>({geom.patch_size(), geom.c_out}), BasicTensor<T>({geom.c_out})};
}

template <typename T>
void KernelMatrix<T>::check(const ConvGeometry& geom, const char* what) const {
  require_shape(weights.shape(), {geom.patch_size(), geom.c_out}, std::string(what) + " weights");
  require_shape(bias.shape(), {geom.c_out}, std::string(what) + " bias");
}

template <typename T>
PatchMatrix<T> im2col(const BasicTensor<T>& input, const ConvGeometry& geom) {
  geom.validate();
  if (input.size() != geom.input_size()) {
    throw Error("im2col: input " + shape_string(input.shape()) + " does not match geometry " +
                geom.describe());
  }
  PatchMatrix<T> out{geom, BasicTensor<T>({geom.patches(), geom.patch_size()})};
  kernels::im2col(input.data(), geom, out.rows.data());
  return out;
}

template <typename T>
BasicTensor<T> conv_forward(const PatchMatrix<T>& patches, const KernelMatrix<T>& kernel) {
  const ConvGeometry& g = patches.geom;
  require_shape(patches.rows.shape(), {g.patches(), g.patch_size()}, "conv_forward patches");
  kernel.check(g, "conv_forward kernel");
  BasicTensor<T> out({g.out_h(), g.out_w(), g.c_out});
  for (std::size_t r = 0; r < g.patches(); ++r) {
    std::copy(kernel.bias.data(), kernel.bias.data() + g.c_out, out.data() + r * g.c_out);
  }
  const auto rows = all_rows(g.patches());
  kernels::gemm_rows(patches.rows.data(), g.patch_size(), kernel.weights.data(), g.patch_size(),
                     g.c_out, out.data(), g.c_out, rows, true);
  return out;
}

template <typename T>
KernelGradient<T> conv_backward_kernel(const PatchMatrix<T>& patches,
                                       const BasicTensor<T>& grad_out) {
  const ConvGeometry& g = patches.geom;
  require_shape(patches.rows.shape(), {g.patches(), g.patch_size()}, "conv_backward patches");
  if (grad_out.size() != g.patches() * g.c_out) {
    throw Error("conv_backward_kernel: grad_out " + shape_string(grad_out.shape()) +
                " does not hold " + std::to_string(g.patches()) + "x" +
                std::to_string(g.c_out) + " values");
  }
  KernelGradient<T> grad{BasicTensor<T>({g.patch_size(), g.c_out}), BasicTensor<T>({g.c_out})};
  const auto rows = all_rows(g.patches());
  kernels::gemm_tn_rows(patches.rows.data(), g.patch_size(), grad_out.data(), g.c_out,
                        g.patch_size(), g.c_out, rows, grad.weights.data());
  for (std::size_t r = 0; r < g.patches(); ++r) {
    for (std::size_t j = 0; j < g.c_out; ++j) grad.bias[j] += grad_out[r * g.c_out + j];
  }
  return grad;
}

template <typename T>
BasicTensor<T> conv_backward_input(const BasicTensor<T>& grad_out, const KernelMatrix<T>& kernel,
                                   const ConvGeometry& geom) {
  geom.validate();
  kernel.check(geom, "conv_backward_input kernel");
  if (grad_out.size() != geom.patches() * geom.c_out) {
    throw Error("conv_backward_input: grad_out " + shape_string(grad_out.shape()) +
                " does not match geometry " + geom.describe());
  }
  const std::size_t k = geom.patch_size(), n = geom.c_out;
  BasicTensor<T> kt({n, k});
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) kt[j * k + p] = kernel.weights[p * n + j];
  }
  BasicTensor<T> patch_grad({geom.patches(), k});
  const auto rows = all_rows(geom.patches());
  kernels::gemm_rows(grad_out.data(), n, kt.data(), n, k, patch_grad.data(), k, rows, false);
  BasicTensor<T> input_grad({geom.h, geom.w, geom.c_in});
  kernels::col2im(patch_grad.data(), geom, input_grad.data());
  return input_grad;
}

std::uint64_t mac_count(const ConvGeometry& geom) {
  return static_cast<std::uint64_t>(geom.patches()) * geom.patch_size() * geom.c_out;
}

#define RAPA_INSTANTIATE_CONV(T)                                                              \
  template struct KernelMatrix<T>;                                                            \
  template PatchMatrix<T> im2col(const BasicTensor<T>&, const ConvGeometry&);                 \
  template BasicTensor<T> conv_forward(const PatchMatrix<T>&, const KernelMatrix<T>&);        \
  template KernelGradient<T> conv_backward_kernel(const PatchMatrix<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> conv_backward_input(const BasicTensor<T>&, const KernelMatrix<T>&,  \
                                              const ConvGeometry&);

RAPA_INSTANTIATE_CONV(float)
RAPA_INSTANTIATE_CONV(double)

#undef RAPA_INSTANTIATE_CONV

}  // namespace rapa
