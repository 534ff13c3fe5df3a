#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "rapa/rng.hpp"
#include "rapa/tensor.hpp"

namespace rapa {

enum class Mode { train, test };

enum class PoolKind { max, average, stochastic, mixed };

PoolKind parse_pool_kind(std::string_view name);
std::string_view pool_kind_name(PoolKind kind);

struct PoolSpec {
  PoolKind kind = PoolKind::max;
  std::size_t window = 2;
  std::size_t stride = 2;
};

/// Default sharpness of the mixed-pooling sigmoid.
inline constexpr double kMixedPoolMu = 10.0;

/// alpha = 1 / (1 + exp(mu * beta)): weight of the average branch.
double mixing_weight(double beta, double mu);

/// Everything pool_backward needs from the matching forward call.
template <typename T>
struct PoolState {
  PoolKind kind = PoolKind::max;
  Mode mode = Mode::train;
  std::size_t window = 0, stride = 0;
  Shape input_shape;
  Shape output_shape;
  // Flat input index routed to by each output (max: argmax, first index on
  // ties; stochastic train: sampled index).
  std::vector<std::uint32_t> route;
  BasicTensor<T> max_out;      // mixed
  BasicTensor<T> avg_out;      // mixed
  BasicTensor<T> input;        // stochastic, test mode
};

template <typename T>
struct PoolGradient {
  BasicTensor<T> input;
  BasicTensor<T> beta;  // mixed only
};

/// Pools an h x w x c tensor. `beta` (length c) is required for mixed
/// pooling; `rng` is required for stochastic pooling in training mode.
template <typename T>
BasicTensor<T> pool_forward(const BasicTensor<T>& x, const PoolSpec& spec,
                            const BasicTensor<T>* beta, double mu, Mode mode, SeededRng* rng,
                            PoolState<T>& state);

template <typename T>
PoolGradient<T> pool_backward(const BasicTensor<T>& grad, const PoolState<T>& state,
                              const BasicTensor<T>* beta, double mu);

/// Within-channel response normalization over a local_size x local_size
/// neighbourhood: y = x / (1 + alpha / local_size^2 * sum x^2)^beta.
struct LrnParams {
  std::size_t local_size = 3;
  double alpha = 5e-5;
  double beta = 0.75;
};

template <typename T>
struct LrnState {
  BasicTensor<T> input;
  BasicTensor<T> scale;   // 1 + alpha / n^2 * sum x^2, per element
  BasicTensor<T> factor;  // scale^(-beta)
};

template <typename T>
BasicTensor<T> lrn_forward(const BasicTensor<T>& x, const LrnParams& params, LrnState<T>* state);

template <typename T>
BasicTensor<T> lrn_backward(const BasicTensor<T>& grad, const LrnState<T>& state,
                            const LrnParams& params);

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& x);

/// Gradient through ReLU given its output (zero where output <= 0).
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad, const BasicTensor<T>& output);

/// logits = x W + b for flattened x; W is in x out.
template <typename T>
BasicTensor<T> fc_forward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                          const BasicTensor<T>& bias);

template <typename T>
struct FcGradient {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  BasicTensor<T> bias;
};

template <typename T>
FcGradient<T> fc_backward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                          const BasicTensor<T>& grad_out);

/// Numerically stable softmax, accumulated in double.
std::vector<double> softmax(std::span<const double> logits);

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logits
};

/// Cross-entropy of softmax(logits) against `label`.
LossAndGradient softmax_cross_entropy(std::span<const double> logits, std::size_t label);

}  // namespace rapa
