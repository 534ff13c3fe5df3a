#pragma once

// Straightforward reference computations the library results are checked
// against. Nothing here calls into the code under test except for types.

#include <cmath>
#include <functional>
#include <vector>

#include "rapa/geometry.hpp"
#include "rapa/rng.hpp"
#include "rapa/tensor.hpp"

namespace oracle {

using rapa::Tensor;

// Sliding-window convolution over an h x w x c_in image with a kernel in
// (ky, kx, c_in) x c_out layout.
inline Tensor direct_conv(const Tensor& x, const rapa::ConvGeometry& g, const Tensor& weights,
                          const Tensor& bias) {
  const std::size_t oh = (g.h + 2 * g.pad - g.k_h) / g.stride + 1;
  const std::size_t ow = (g.w + 2 * g.pad - g.k_w) / g.stride + 1;
  Tensor out({oh, ow, g.c_out});
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t co = 0; co < g.c_out; ++co) {
        double acc = bias[co];
        for (std::size_t ky = 0; ky < g.k_h; ++ky) {
          for (std::size_t kx = 0; kx < g.k_w; ++kx) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.h) || ix >= static_cast<long>(g.w)) continue;
            for (std::size_t ci = 0; ci < g.c_in; ++ci) {
              const std::size_t p = (ky * g.k_w + kx) * g.c_in + ci;
              acc += x[(iy * g.w + ix) * g.c_in + ci] * weights[p * g.c_out + co];
            }
          }
        }
        out[(oy * ow + ox) * g.c_out + co] = acc;
      }
    }
  }
  return out;
}

inline Tensor random_tensor(rapa::Shape shape, rapa::SeededRng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

// Central difference of f with respect to every entry of `param`.
inline std::vector<double> numeric_gradient(Tensor& param, const std::function<double()>& f,
                                            double step = 1e-5) {
  std::vector<double> g(param.size());
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double keep = param[i];
    param[i] = keep + step;
    const double up = f();
    param[i] = keep - step;
    const double down = f();
    param[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor).
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

// Scalar loss sum_i w_i y_i with fixed random weights, used to project
// tensor-valued outputs for gradient checks.
inline double weighted_sum(const Tensor& y, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

}  // namespace oracle
