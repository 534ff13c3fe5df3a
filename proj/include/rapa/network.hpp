#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rapa/conv.hpp"
#include "rapa/layers.hpp"
#include "rapa/tiling.hpp"

namespace rapa {

/// Architecture of the reference ConvNet:
///   [conv(5x5, pad 2) -> ReLU -> LRN -> pool(2/2)] per layer, the last pool
///   fixed to average, then one fully connected layer to the class logits.
/// Each conv layer holds `tiles[i]` replicated kernel matrices.
struct NetworkConfig {
  std::vector<std::size_t> channels{32, 32, 64};
  std::vector<std::size_t> tiles{1, 1, 1};
  SchemeKind scheme = SchemeKind::none;
  /// Pooling after every conv layer except the last (always average).
  PoolKind pooling = PoolKind::max;
  std::size_t input_side = 32;
  std::size_t input_channels = 3;
  std::size_t kernel = 5;
  std::size_t classes = 10;
  LrnParams lrn;
  double mix_mu = kMixedPoolMu;
  /// Weight std; 0 selects sqrt(2 / fan_in) per layer.
  double init_std = 0.0;

  static NetworkConfig reference();
  /// Channels (54, 64, 64) with roughly the tiled parameter budget.
  static NetworkConfig enlarged();

  std::size_t layers() const noexcept { return channels.size(); }
  void validate() const;
  ConvGeometry conv_geometry(std::size_t layer) const;
  PoolSpec pool_spec(std::size_t layer) const;
  /// Replicated kernel matrices held by a layer (1 under perforation).
  std::size_t kernels_in_layer(std::size_t layer) const;
  std::size_t feature_size() const;
  double weight_std(std::size_t fan_in) const;
  bool tiled() const;
  std::string summary() const;
};

/// Conv-layer weights including biases: sum_l kernels_l * (k_l c_out_l + c_out_l).
std::uint64_t count_parameters(const NetworkConfig& cfg);

template <typename T>
struct ConvLayerParams {
  TiledKernelBank<T> bank;
  BasicTensor<T> mix_beta;  // per-channel beta; empty unless mixed pooling follows
};

/// All trainable tensors. Gradients use the same type and layout.
template <typename T>
struct NetParams {
  std::vector<ConvLayerParams<T>> conv;
  BasicTensor<T> fc_weights;  // feature_size x classes
  BasicTensor<T> fc_bias;

  /// f(name, tensor, decays) for every tensor in a fixed order; biases and
  /// mixing betas do not take weight decay.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  NetParams zeros_like() const;
  void set_zero();
  /// this += scale * other (same layout required).
  void add_scaled(const NetParams& other, T scale);

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    for (std::size_t l = 0; l < self.conv.size(); ++l) {
      auto& layer = self.conv[l];
      const std::string prefix = "conv" + std::to_string(l + 1);
      for (std::size_t t = 0; t < layer.bank.kernels.size(); ++t) {
        const std::string tile = prefix + ".tile" + std::to_string(t + 1);
        f(tile + ".weight", layer.bank.kernels[t].weights, true);
        f(tile + ".bias", layer.bank.kernels[t].bias, false);
      }
      if (!layer.mix_beta.empty()) f(prefix + ".mix_beta", layer.mix_beta, false);
    }
    f(std::string("fc.weight"), self.fc_weights, true);
    f(std::string("fc.bias"), self.fc_bias, false);
  }
};

struct Prediction {
  std::vector<double> logits;
  std::vector<double> probabilities;
  std::size_t label = 0;

  static Prediction from_logits(std::vector<double> logits);
};

/// Cached intermediate values of one forward pass, needed for backward.
template <typename T>
struct ForwardPass {
  struct Layer {
    PatchMatrix<T> patches;
    TilePartition partition;
    BasicTensor<T> activation;  // ReLU output, h x w x c_out
    LrnState<T> lrn;
    PoolState<T> pool;
  };
  Mode mode = Mode::test;
  std::vector<Layer> layers;
  BasicTensor<T> features;  // flattened input of the FC layer
  Prediction prediction;
};

template <typename T>
struct BackwardResult {
  NetParams<T> grads;
  BasicTensor<T> input;  // d loss / d image; empty unless requested
};

template <typename T>
class Network {
 public:
  /// Gaussian-initialised weights (see NetworkConfig::init_std), zero biases, mixing
  /// betas at 2 / mu; every tile drawn independently. random-fixed layers
  /// sample their partition here.
  Network(NetworkConfig cfg, std::uint64_t seed);
  /// Restores a network from explicit parameters (checkpoint load).
  Network(NetworkConfig cfg, NetParams<T> params,
          std::vector<std::optional<TilePartition>> fixed_partitions);

  const NetworkConfig& config() const noexcept { return cfg_; }
  const NetParams<T>& params() const noexcept { return params_; }
  NetParams<T>& params() noexcept { return params_; }
  const std::vector<PartitionBuilder>& partitions() const noexcept { return builders_; }

  /// Draws per-layer partitions (and stochastic pooling samples) from `rng`.
  ForwardPass<T> forward(const BasicTensor<T>& image, Mode mode, SeededRng& rng) const;
  Prediction predict(const BasicTensor<T>& image, Mode mode, SeededRng& rng) const;

  /// Back-propagates d loss / d logits through a cached pass.
  BackwardResult<T> backward(const ForwardPass<T>& pass, std::span<const double> dlogits,
                             bool input_gradient = false) const;

  /// Same network with a different parameter precision.
  template <typename U>
  Network<U> cast() const;

 private:
  void build_partitions(SeededRng& init);
  void check_params() const;

  NetworkConfig cfg_;
  NetParams<T> params_;
  std::vector<PartitionBuilder> builders_;
};

/// Plurality over `votes` test-mode predictions, each drawing fresh
/// partitions from `rng`. Ties go to the label with the larger summed
/// probability, then the lower label.
template <typename T>
Prediction predict_majority(const Network<T>& net, const BasicTensor<T>& image,
                            std::size_t votes, SeededRng& rng);

/// Tally used by predict_majority; `votes` must be non-empty.
std::size_t majority_label(std::span<const Prediction> votes);

/// Per output channel, copies the filter column and bias of the tile whose
/// column has the largest L2 norm (lowest tile index on ties).
template <typename T>
KernelMatrix<T> reduce_to_single(const TiledKernelBank<T>& bank);

/// Network with every conv layer reduced to one kernel matrix, scheme none.
template <typename T>
Network<T> reduce_network(const Network<T>& net);

}  // namespace rapa
