#pragma once

#include <cstdint>

#include "rapa/cifar.hpp"
#include "rapa/network.hpp"

namespace rapa {

struct TrainConfig {
  double lr = 0.005;
  double lr_gamma = 0.5;
  std::size_t anneal_period = 25;
  std::size_t warmup = 1;
  double warmup_divisor = 50.0;
  double decay = 1e-4;  // multiplied by the current learning rate
  std::size_t batch = 10;
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  bool augment = true;

  /// lr 0.005 / gamma 0.5 / warm-up 1 untiled; 0.05 / 0.75 / 5 tiled.
  static TrainConfig defaults(bool tiled);
  void validate() const;
};

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

/// w <- w - lr * (g + decay * lr * w); tensors visited with decays=false
/// (biases, mixing betas) skip the decay term.
template <typename T>
void sgd_step(NetParams<T>& params, const NetParams<T>& grads, double lr, double decay);

/// Mirror with probability 1/2, then a uniform brightness shift in
/// [-0.1, 0.1], clamped so the unnormalised pixel stays in [0, 1].
/// `image` is HWC and mean-subtracted; `mean` is the matching mean image.
TensorF augment(const TensorF& image, const TensorF& mean, SeededRng& rng);

struct EpochMetrics {
  double train_error_pct = 0.0;
  double mean_loss = 0.0;
  std::size_t images = 0;
};

/// One pass over `data` in a seeded shuffled order, updating after every
/// mini-batch with the mean gradient. Each image uses its own derived rng
/// stream, so results do not depend on the worker count.
template <typename T>
EpochMetrics train_epoch(Network<T>& net, const DatasetSplit& data, const TrainConfig& cfg,
                         std::size_t epoch);

/// Percentage of images whose (majority over `votes`) label is wrong.
template <typename T>
double evaluate(const Network<T>& net, const DatasetSplit& data, std::size_t votes,
                std::uint64_t seed);

}  // namespace rapa
