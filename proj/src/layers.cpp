#include "rapa/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rapa {

PoolKind parse_pool_kind(std::string_view name) {
  if (name == "max") return PoolKind::max;
  if (name == "average" || name == "avg") return PoolKind::average;
  if (name == "stochastic") return PoolKind::stochastic;
  if (name == "mixed") return PoolKind::mixed;
  throw Error("unknown pooling kind '" + std::string(name) +
              "' (expected max, average, stochastic or mixed)");
}

std::string_view pool_kind_name(PoolKind kind) {
  switch (kind) {
    case PoolKind::max: return "max";
    case PoolKind::average: return "average";
    case PoolKind::stochastic: return "stochastic";
    case PoolKind::mixed: return "mixed";
  }
  return "?";
}

double mixing_weight(double beta, double mu) { return 1.0 / (1.0 + std::exp(mu * beta)); }

template <typename T>
BasicTensor<T> pool_forward(const BasicTensor<T>& x, const PoolSpec& spec,
                            const BasicTensor<T>* beta, double mu, Mode mode, SeededRng* rng,
                            PoolState<T>& state) {
  if (spec.window == 0 || spec.stride == 0) throw Error("pooling window and stride must be positive");
  if (x.rank() != 3) throw Error("pooling expects h x w x c input, got " + shape_string(x.shape()));
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h < spec.window || w < spec.window || (h - spec.window) % spec.stride != 0 ||
      (w - spec.window) % spec.stride != 0) {
    throw Error("pooling window " + std::to_string(spec.window) + "/" +
                std::to_string(spec.stride) + " does not tile input " + shape_string(x.shape()));
  }
  if (spec.kind == PoolKind::mixed) {
    if (beta == nullptr) throw Error("mixed pooling needs per-channel beta");
    require_shape(beta->shape(), {c}, "mixed pooling beta");
  }
  if (spec.kind == PoolKind::stochastic && mode == Mode::train && rng == nullptr) {
    throw Error("stochastic pooling in training mode needs a random stream");
  }
  const std::size_t oh = (h - spec.window) / spec.stride + 1;
  const std::size_t ow = (w - spec.window) / spec.stride + 1;
  const double inv_area = 1.0 / static_cast<double>(spec.window * spec.window);

  state = PoolState<T>{};
  state.kind = spec.kind;
  state.mode = mode;
  state.window = spec.window;
  state.stride = spec.stride;
  state.input_shape = x.shape();
  state.output_shape = {oh, ow, c};
  state.route.assign(oh * ow * c, 0);
  if (spec.kind == PoolKind::mixed) {
    state.max_out = BasicTensor<T>({oh, ow, c});
    state.avg_out = BasicTensor<T>({oh, ow, c});
  }
  if (spec.kind == PoolKind::stochastic && mode == Mode::test) state.input = x;

  BasicTensor<T> out({oh, ow, c});
  std::vector<std::uint32_t> idx(spec.window * spec.window);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t m = 0;
        for (std::size_t dy = 0; dy < spec.window; ++dy) {
          for (std::size_t dx = 0; dx < spec.window; ++dx) {
            idx[m++] = static_cast<std::uint32_t>(
                ((oy * spec.stride + dy) * w + ox * spec.stride + dx) * c + ch);
          }
        }
        std::uint32_t arg = idx[0];
        double sum = 0.0;
        for (auto i : idx) {
          if (x[i] > x[arg]) arg = i;
          sum += x[i];
        }
        const std::size_t o = (oy * ow + ox) * c + ch;
        const double avg = sum * inv_area;
        switch (spec.kind) {
          case PoolKind::max:
            out[o] = x[arg];
            state.route[o] = arg;
            break;
          case PoolKind::average:
            out[o] = static_cast<T>(avg);
            break;
          case PoolKind::mixed: {
            const double alpha = mixing_weight((*beta)[ch], mu);
            state.route[o] = arg;
            state.max_out[o] = x[arg];
            state.avg_out[o] = static_cast<T>(avg);
            out[o] = static_cast<T>((1.0 - alpha) * x[arg] + alpha * avg);
            break;
          }
          case PoolKind::stochastic: {
            double total = 0.0, squares = 0.0;
            for (auto i : idx) {
              const double v = std::max<double>(x[i], 0.0);
              total += v;
              squares += v * v;
            }
            if (total <= 0.0) {
              out[o] = T{};
              state.route[o] = idx[0];
            } else if (mode == Mode::test) {
              out[o] = static_cast<T>(squares / total);
            } else {
              const double u = rng->uniform() * total;
              double cumulative = 0.0;
              std::uint32_t pick = idx[0];
              for (auto i : idx) {
                const double v = std::max<double>(x[i], 0.0);
                if (v <= 0.0) continue;
                pick = i;
                cumulative += v;
                if (cumulative > u) break;
              }
              state.route[o] = pick;
              out[o] = x[pick];
            }
            break;
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
PoolGradient<T> pool_backward(const BasicTensor<T>& grad, const PoolState<T>& state,
                              const BasicTensor<T>* beta, double mu) {
  if (state.input_shape.empty()) throw Error("pool_backward called without a forward state");
  require_shape(grad.shape(), state.output_shape, "pool_backward gradient");
  const std::size_t w = state.input_shape[1], c = state.input_shape[2];
  const std::size_t oh = state.output_shape[0], ow = state.output_shape[1];
  const double inv_area = 1.0 / static_cast<double>(state.window * state.window);

  PoolGradient<T> out;
  out.input = BasicTensor<T>(state.input_shape);
  if (state.kind == PoolKind::mixed) {
    if (beta == nullptr) throw Error("mixed pooling backward needs beta");
    out.beta = BasicTensor<T>({c});
  }
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t o = (oy * ow + ox) * c + ch;
        const double g = grad[o];
        auto for_window = [&](auto&& f) {
          for (std::size_t dy = 0; dy < state.window; ++dy) {
            for (std::size_t dx = 0; dx < state.window; ++dx) {
              f(((oy * state.stride + dy) * w + ox * state.stride + dx) * c + ch);
            }
          }
        };
        switch (state.kind) {
          case PoolKind::max:
            out.input[state.route[o]] += static_cast<T>(g);
            break;
          case PoolKind::average:
            for_window([&](std::size_t i) { out.input[i] += static_cast<T>(g * inv_area); });
            break;
          case PoolKind::mixed: {
            const double alpha = mixing_weight((*beta)[ch], mu);
            out.input[state.route[o]] += static_cast<T>(g * (1.0 - alpha));
            for_window([&](std::size_t i) { out.input[i] += static_cast<T>(g * alpha * inv_area); });
            const double dalpha_dbeta = -mu * alpha * (1.0 - alpha);
            out.beta[ch] += static_cast<T>(
                g * (static_cast<double>(state.avg_out[o]) - state.max_out[o]) * dalpha_dbeta);
            break;
          }
          case PoolKind::stochastic: {
            if (state.mode == Mode::train) {
              out.input[state.route[o]] += static_cast<T>(g);
              break;
            }
            double total = 0.0, squares = 0.0;
            for_window([&](std::size_t i) {
              const double v = std::max<double>(state.input[i], 0.0);
              total += v;
              squares += v * v;
            });
            if (total <= 0.0) {
              out.input[state.route[o]] += static_cast<T>(g);
              break;
            }
            for_window([&](std::size_t i) {
              const double v = state.input[i];
              if (v > 0.0) {
                out.input[i] += static_cast<T>(g * (2.0 * v * total - squares) / (total * total));
              }
            });
            break;
          }
        }
      }
    }
  }
  return out;
}

namespace {

template <typename T, typename F>
void for_neighbours(std::size_t h, std::size_t w, std::size_t y, std::size_t x, std::size_t half,
                    F&& f) {
  const std::size_t y0 = y >= half ? y - half : 0, y1 = std::min(h - 1, y + half);
  const std::size_t x0 = x >= half ? x - half : 0, x1 = std::min(w - 1, x + half);
  for (std::size_t yy = y0; yy <= y1; ++yy) {
    for (std::size_t xx = x0; xx <= x1; ++xx) f(yy, xx);
  }
}

}  // namespace

template <typename T>
BasicTensor<T> lrn_forward(const BasicTensor<T>& x, const LrnParams& params, LrnState<T>* state) {
  if (x.rank() != 3) throw Error("lrn expects h x w x c input, got " + shape_string(x.shape()));
  if (params.local_size == 0 || params.local_size % 2 == 0) {
    throw Error("lrn local_size must be odd and positive");
  }
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t half = params.local_size / 2;
  const double coeff = params.alpha / static_cast<double>(params.local_size * params.local_size);
  BasicTensor<T> scale(x.shape());
  BasicTensor<T> factor(x.shape());
  BasicTensor<T> y(x.shape());
  std::vector<double> acc(c);
  const bool three_quarters = params.beta == 0.75;
  for (std::size_t py = 0; py < h; ++py) {
    for (std::size_t px = 0; px < w; ++px) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for_neighbours<T>(h, w, py, px, half, [&](std::size_t yy, std::size_t xx) {
        const T* v = x.data() + (yy * w + xx) * c;
        for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += static_cast<double>(v[ch]) * v[ch];
      });
      const std::size_t base = (py * w + px) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double s = 1.0 + coeff * acc[ch];
        const double root = std::sqrt(s);
        const double f = three_quarters ? 1.0 / (root * std::sqrt(root)) : std::pow(s, -params.beta);
        scale[base + ch] = static_cast<T>(s);
        factor[base + ch] = static_cast<T>(f);
        y[base + ch] = static_cast<T>(x[base + ch] * f);
      }
    }
  }
  if (state) {
    state->input = x;
    state->scale = std::move(scale);
    state->factor = std::move(factor);
  }
  return y;
}

template <typename T>
BasicTensor<T> lrn_backward(const BasicTensor<T>& grad, const LrnState<T>& state,
                            const LrnParams& params) {
  const BasicTensor<T>& x = state.input;
  require_shape(grad.shape(), x.shape(), "lrn_backward gradient");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t half = params.local_size / 2;
  const double coeff = params.alpha / static_cast<double>(params.local_size * params.local_size);
  // t_i = g_i x_i s_i^(-beta-1), gathered over each element's neighbourhood.
  std::vector<double> t(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    t[i] = static_cast<double>(grad[i]) * x[i] * state.factor[i] / state.scale[i];
  }
  BasicTensor<T> dx(x.shape());
  std::vector<double> acc(c);
  for (std::size_t py = 0; py < h; ++py) {
    for (std::size_t px = 0; px < w; ++px) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for_neighbours<T>(h, w, py, px, half, [&](std::size_t yy, std::size_t xx) {
        const std::size_t b = (yy * w + xx) * c;
        for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += t[b + ch];
      });
      const std::size_t base = (py * w + px) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t i = base + ch;
        dx[i] = static_cast<T>(static_cast<double>(grad[i]) * state.factor[i] -
                               2.0 * coeff * params.beta * x[i] * acc[ch]);
      }
    }
  }
  return dx;
}

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& x) {
  BasicTensor<T> y = x;
  for (auto& v : y.values()) v = v > T{} ? v : T{};
  return y;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad, const BasicTensor<T>& output) {
  require_shape(grad.shape(), output.shape(), "relu_backward gradient");
  BasicTensor<T> dx = grad;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(output[i] > T{})) dx[i] = T{};
  }
  return dx;
}

template <typename T>
BasicTensor<T> fc_forward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                          const BasicTensor<T>& bias) {
  if (weights.rank() != 2 || weights.dim(0) != x.size()) {
    throw Error("fc: weights " + shape_string(weights.shape()) + " do not accept " +
                std::to_string(x.size()) + " inputs");
  }
  const std::size_t n_in = weights.dim(0), n_out = weights.dim(1);
  require_shape(bias.shape(), {n_out}, "fc bias");
  std::vector<double> acc(bias.values().begin(), bias.values().end());
  for (std::size_t p = 0; p < n_in; ++p) {
    const double xp = x[p];
    const T* wrow = weights.data() + p * n_out;
    for (std::size_t j = 0; j < n_out; ++j) acc[j] += xp * wrow[j];
  }
  BasicTensor<T> out({n_out});
  for (std::size_t j = 0; j < n_out; ++j) out[j] = static_cast<T>(acc[j]);
  return out;
}

template <typename T>
FcGradient<T> fc_backward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                          const BasicTensor<T>& grad_out) {
  const std::size_t n_in = weights.dim(0), n_out = weights.dim(1);
  require_shape(grad_out.shape(), {n_out}, "fc_backward gradient");
  FcGradient<T> g{BasicTensor<T>(x.shape()), BasicTensor<T>({n_in, n_out}), grad_out};
  for (std::size_t p = 0; p < n_in; ++p) {
    const T* wrow = weights.data() + p * n_out;
    T* grow = g.weights.data() + p * n_out;
    double dx = 0.0;
    for (std::size_t j = 0; j < n_out; ++j) {
      grow[j] = x[p] * grad_out[j];
      dx += static_cast<double>(wrow[j]) * grad_out[j];
    }
    g.input[p] = static_cast<T>(dx);
  }
  return g;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double top = *std::max_element(p.begin(), p.end());
  double total = 0.0;
  for (auto& v : p) {
    v = std::exp(v - top);
    total += v;
  }
  for (auto& v : p) v /= total;
  return p;
}

LossAndGradient softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw Error("label " + std::to_string(label) + " out of range for " +
                std::to_string(logits.size()) + " classes");
  }
  LossAndGradient out;
  out.grad = softmax(logits);
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - top);
  out.loss = std::log(total) + top - logits[label];
  out.grad[label] -= 1.0;
  return out;
}

#define RAPA_INSTANTIATE_LAYERS(T)                                                             \
  template BasicTensor<T> pool_forward(const BasicTensor<T>&, const PoolSpec&,                 \
                                       const BasicTensor<T>*, double, Mode, SeededRng*,        \
                                       PoolState<T>&);                                         \
  template PoolGradient<T> pool_backward(const BasicTensor<T>&, const PoolState<T>&,           \
                                         const BasicTensor<T>*, double);                       \
  template BasicTensor<T> lrn_forward(const BasicTensor<T>&, const LrnParams&, LrnState<T>*); \
  template BasicTensor<T> lrn_backward(const BasicTensor<T>&, const LrnState<T>&,              \
                                       const LrnParams&);                                      \
  template BasicTensor<T> relu_forward(const BasicTensor<T>&);                                 \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> fc_forward(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                     const BasicTensor<T>&);                                   \
  template FcGradient<T> fc_backward(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                     const BasicTensor<T>&);

RAPA_INSTANTIATE_LAYERS(float)
RAPA_INSTANTIATE_LAYERS(double)

#undef RAPA_INSTANTIATE_LAYERS

}  // namespace rapa
