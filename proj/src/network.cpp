#include "rapa/network.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace rapa {

NetworkConfig NetworkConfig::reference() { return NetworkConfig{}; }

NetworkConfig NetworkConfig::enlarged() {
  NetworkConfig cfg;
  cfg.channels = {54, 64, 64};
  return cfg;
}

void NetworkConfig::validate() const {
  if (channels.empty()) throw Error("network needs at least one conv layer");
  if (tiles.size() != channels.size()) {
    throw Error("tiles lists " + std::to_string(tiles.size()) + " layers but channels lists " +
                std::to_string(channels.size()));
  }
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] == 0) throw Error("conv" + std::to_string(i + 1) + " has zero channels");
    if (tiles[i] == 0) throw Error("conv" + std::to_string(i + 1) + " has zero tiles");
  }
  if (classes < 2) throw Error("need at least 2 classes");
  if (!(init_std >= 0.0)) throw Error("init_std must be non-negative");
  if (input_channels == 0 || kernel == 0 || kernel % 2 == 0) {
    throw Error("kernel size must be odd and input channels positive");
  }
  if (input_side == 0 || input_side % (std::size_t{1} << layers()) != 0) {
    throw Error("input side " + std::to_string(input_side) + " cannot be halved " +
                std::to_string(layers()) + " times");
  }
  for (std::size_t i = 0; i < layers(); ++i) {
    const ConvGeometry g = conv_geometry(i);
    g.validate();
    try {
      TilingScheme{scheme, tiles[i]}.validate(g);
    } catch (const Error& e) {
      throw Error("conv" + std::to_string(i + 1) + ": " + e.what());
    }
  }
}

ConvGeometry NetworkConfig::conv_geometry(std::size_t layer) const {
  const std::size_t side = input_side >> layer;
  const std::size_t c_in = layer == 0 ? input_channels : channels[layer - 1];
  return same_conv(side, c_in, channels[layer], kernel);
}

PoolSpec NetworkConfig::pool_spec(std::size_t layer) const {
  return {layer + 1 == layers() ? PoolKind::average : pooling, 2, 2};
}

std::size_t NetworkConfig::kernels_in_layer(std::size_t layer) const {
  return scheme == SchemeKind::perforated ? 1 : tiles[layer];
}

double NetworkConfig::weight_std(std::size_t fan_in) const {
  return init_std > 0.0 ? init_std : std::sqrt(2.0 / static_cast<double>(fan_in));
}

std::size_t NetworkConfig::feature_size() const {
  const std::size_t side = input_side >> layers();
  return side * side * channels.back();
}

bool NetworkConfig::tiled() const {
  return std::any_of(tiles.begin(), tiles.end(), [](std::size_t t) { return t > 1; });
}

std::string NetworkConfig::summary() const {
  std::ostringstream out;
  out << "channels=";
  for (std::size_t i = 0; i < channels.size(); ++i) out << (i ? "," : "") << channels[i];
  out << " tiles=";
  for (std::size_t i = 0; i < tiles.size(); ++i) out << (i ? "," : "") << tiles[i];
  out << " scheme=" << scheme_name(scheme) << " pooling=" << pool_kind_name(pooling)
      << " classes=" << classes;
  return out.str();
}

std::uint64_t count_parameters(const NetworkConfig& cfg) {
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < cfg.layers(); ++i) {
    const ConvGeometry g = cfg.conv_geometry(i);
    total += static_cast<std::uint64_t>(cfg.kernels_in_layer(i)) *
             (g.patch_size() * g.c_out + g.c_out);
  }
  return total;
}

template <typename T>
NetParams<T> NetParams<T>::zeros_like() const {
  NetParams<T> out = *this;
  out.set_zero();
  return out;
}

template <typename T>
void NetParams<T>::set_zero() {
  visit([](const std::string&, BasicTensor<T>& t, bool) { t.fill(T{}); });
}

template <typename T>
void NetParams<T>::add_scaled(const NetParams& other, T scale) {
  std::vector<const BasicTensor<T>*> src;
  other.visit([&](const std::string&, const BasicTensor<T>& t, bool) { src.push_back(&t); });
  std::size_t i = 0;
  visit([&](const std::string& name, BasicTensor<T>& t, bool) {
    if (i >= src.size() || src[i]->shape() != t.shape()) {
      throw Error("parameter layout mismatch at " + name);
    }
    const BasicTensor<T>& o = *src[i++];
    for (std::size_t e = 0; e < t.size(); ++e) t[e] += scale * o[e];
  });
}

Prediction Prediction::from_logits(std::vector<double> logits) {
  Prediction p;
  p.probabilities = softmax(logits);
  p.logits = std::move(logits);
  p.label = static_cast<std::size_t>(
      std::max_element(p.logits.begin(), p.logits.end()) - p.logits.begin());
  return p;
}

template <typename T>
Network<T>::Network(NetworkConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  params_.conv.resize(cfg_.layers());
  for (std::size_t l = 0; l < cfg_.layers(); ++l) {
    const ConvGeometry g = cfg_.conv_geometry(l);
    auto& layer = params_.conv[l];
    layer.bank.geom = g;
    const double std = cfg_.weight_std(g.patch_size());
    for (std::size_t t = 0; t < cfg_.kernels_in_layer(l); ++t) {
      SeededRng rng = SeededRng::derive(seed, {1, l, t});
      auto km = KernelMatrix<T>::zeros(g);
      for (auto& v : km.weights.values()) v = static_cast<T>(std * rng.normal());
      layer.bank.kernels.push_back(std::move(km));
    }
    if (cfg_.pool_spec(l).kind == PoolKind::mixed) {
      layer.mix_beta = BasicTensor<T>({g.c_out}, static_cast<T>(2.0 / cfg_.mix_mu));
    }
  }
  SeededRng fc_rng = SeededRng::derive(seed, {2});
  params_.fc_weights = BasicTensor<T>({cfg_.feature_size(), cfg_.classes});
  const double fc_std = cfg_.weight_std(cfg_.feature_size());
  for (auto& v : params_.fc_weights.values()) v = static_cast<T>(fc_std * fc_rng.normal());
  params_.fc_bias = BasicTensor<T>({cfg_.classes});
  SeededRng part_rng = SeededRng::derive(seed, {3});
  build_partitions(part_rng);
}

template <typename T>
Network<T>::Network(NetworkConfig cfg, NetParams<T> params,
                    std::vector<std::optional<TilePartition>> fixed_partitions)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  check_params();
  SeededRng unused(0);
  build_partitions(unused);
  for (std::size_t l = 0; l < fixed_partitions.size() && l < builders_.size(); ++l) {
    if (fixed_partitions[l]) builders_[l].set_fixed_partition(*fixed_partitions[l]);
  }
}

template <typename T>
void Network<T>::build_partitions(SeededRng& init) {
  builders_.clear();
  for (std::size_t l = 0; l < cfg_.layers(); ++l) {
    builders_.emplace_back(TilingScheme{cfg_.scheme, cfg_.tiles[l]}, cfg_.conv_geometry(l), init);
  }
}

template <typename T>
void Network<T>::check_params() const {
  if (params_.conv.size() != cfg_.layers()) {
    throw Error("parameters hold " + std::to_string(params_.conv.size()) +
                " conv layers, config has " + std::to_string(cfg_.layers()));
  }
  for (std::size_t l = 0; l < cfg_.layers(); ++l) {
    const auto& layer = params_.conv[l];
    const std::string name = "conv" + std::to_string(l + 1);
    if (layer.bank.geom != cfg_.conv_geometry(l)) throw Error(name + " geometry mismatch");
    if (layer.bank.tiles() != cfg_.kernels_in_layer(l)) {
      throw Error(name + " holds " + std::to_string(layer.bank.tiles()) + " tiles, config wants " +
                  std::to_string(cfg_.kernels_in_layer(l)));
    }
    layer.bank.check();
    if (cfg_.pool_spec(l).kind == PoolKind::mixed) {
      require_shape(layer.mix_beta.shape(), {cfg_.channels[l]}, name + " mix_beta");
    }
  }
  require_shape(params_.fc_weights.shape(), {cfg_.feature_size(), cfg_.classes}, "fc.weight");
  require_shape(params_.fc_bias.shape(), {cfg_.classes}, "fc.bias");
}

template <typename T>
ForwardPass<T> Network<T>::forward(const BasicTensor<T>& image, Mode mode, SeededRng& rng) const {
  const std::size_t side = cfg_.input_side;
  if (image.size() != side * side * cfg_.input_channels) {
    throw Error("image " + shape_string(image.shape()) + " does not match network input " +
                std::to_string(side) + "x" + std::to_string(side) + "x" +
                std::to_string(cfg_.input_channels));
  }
  ForwardPass<T> pass;
  pass.mode = mode;
  pass.layers.resize(cfg_.layers());
  BasicTensor<T> x = image.reshaped({side, side, cfg_.input_channels});
  for (std::size_t l = 0; l < cfg_.layers(); ++l) {
    auto& cache = pass.layers[l];
    const auto& builder = builders_[l];
    const ConvGeometry& g = builder.geometry();
    cache.patches = im2col(x, g);
    cache.partition = mode == Mode::train ? builder.build(rng) : builder.build_for_test(rng);
    if (cfg_.scheme == SchemeKind::image_pad && builder.grid() > 1) {
      apply_region_padding(cache.patches.rows, g, cache.partition, builder.grid());
    }
    BasicTensor<T> pre = tiled_conv_forward(cache.patches, params_.conv[l].bank, cache.partition);
    cache.activation = relu_forward(pre).reshaped({g.out_h(), g.out_w(), g.c_out});
    BasicTensor<T> normed = lrn_forward(cache.activation, cfg_.lrn, &cache.lrn);
    const auto* beta = params_.conv[l].mix_beta.empty() ? nullptr : &params_.conv[l].mix_beta;
    x = pool_forward(normed, cfg_.pool_spec(l), beta, cfg_.mix_mu, mode, &rng, cache.pool);
  }
  pass.features = std::move(x).reshaped({cfg_.feature_size()});
  const BasicTensor<T> logits = fc_forward(pass.features, params_.fc_weights, params_.fc_bias);
  pass.prediction = Prediction::from_logits({logits.values().begin(), logits.values().end()});
  return pass;
}

template <typename T>
Prediction Network<T>::predict(const BasicTensor<T>& image, Mode mode, SeededRng& rng) const {
  return forward(image, mode, rng).prediction;
}

template <typename T>
BackwardResult<T> Network<T>::backward(const ForwardPass<T>& pass,
                                       std::span<const double> dlogits,
                                       bool input_gradient) const {
  if (dlogits.size() != cfg_.classes) throw Error("backward: logit gradient has wrong length");
  if (pass.layers.size() != cfg_.layers()) throw Error("backward: forward pass is incomplete");
  BackwardResult<T> out;
  out.grads = params_.zeros_like();

  BasicTensor<T> g({cfg_.classes});
  for (std::size_t j = 0; j < cfg_.classes; ++j) g[j] = static_cast<T>(dlogits[j]);
  FcGradient<T> fc = fc_backward(pass.features, params_.fc_weights, g);
  out.grads.fc_weights = std::move(fc.weights);
  out.grads.fc_bias = std::move(fc.bias);
  g = std::move(fc.input);

  for (std::size_t l = cfg_.layers(); l-- > 0;) {
    const auto& cache = pass.layers[l];
    const auto& builder = builders_[l];
    const auto* beta = params_.conv[l].mix_beta.empty() ? nullptr : &params_.conv[l].mix_beta;
    g = std::move(g).reshaped(cache.pool.output_shape);
    PoolGradient<T> pg = pool_backward(g, cache.pool, beta, cfg_.mix_mu);
    if (beta) out.grads.conv[l].mix_beta = std::move(pg.beta);
    BasicTensor<T> d_act = lrn_backward(pg.input, cache.lrn, cfg_.lrn);
    BasicTensor<T> d_pre = relu_backward(d_act, cache.activation);

    TiledBackwardOptions opts;
    opts.input_gradient = l > 0 || input_gradient;
    if (cfg_.scheme == SchemeKind::image_pad && builder.grid() > 1) {
      opts.region_padding_grid = builder.grid();
    }
    TiledGradient<T> tg =
        tiled_conv_backward(cache.patches, params_.conv[l].bank, cache.partition, d_pre, opts);
    auto& bank_grad = out.grads.conv[l].bank;
    for (std::size_t t = 0; t < tg.kernels.size(); ++t) {
      bank_grad.kernels[t].weights = std::move(tg.kernels[t].weights);
      bank_grad.kernels[t].bias = std::move(tg.kernels[t].bias);
    }
    g = std::move(tg.input);
  }
  if (input_gradient) out.input = std::move(g);
  return out;
}

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
  NetParams<U> p;
  p.conv.resize(params_.conv.size());
  for (std::size_t l = 0; l < params_.conv.size(); ++l) {
    p.conv[l].bank.geom = params_.conv[l].bank.geom;
    for (const auto& k : params_.conv[l].bank.kernels) {
      p.conv[l].bank.kernels.push_back({k.weights.template cast<U>(), k.bias.template cast<U>()});
    }
    p.conv[l].mix_beta = params_.conv[l].mix_beta.template cast<U>();
  }
  p.fc_weights = params_.fc_weights.template cast<U>();
  p.fc_bias = params_.fc_bias.template cast<U>();
  std::vector<std::optional<TilePartition>> fixed;
  for (const auto& b : builders_) fixed.push_back(b.fixed_partition());
  return Network<U>(cfg_, std::move(p), std::move(fixed));
}

std::size_t majority_label(std::span<const Prediction> votes) {
  if (votes.empty()) throw Error("majority vote needs at least one prediction");
  std::map<std::size_t, std::pair<std::size_t, double>> tally;
  for (const auto& v : votes) {
    auto& entry = tally[v.label];
    entry.first += 1;
    entry.second += v.probabilities.at(v.label);
  }
  std::size_t best = tally.begin()->first;
  auto best_score = tally.begin()->second;
  for (const auto& [label, score] : tally) {
    if (score.first > best_score.first ||
        (score.first == best_score.first && score.second > best_score.second)) {
      best = label;
      best_score = score;
    }
  }
  return best;
}

template <typename T>
Prediction predict_majority(const Network<T>& net, const BasicTensor<T>& image,
                            std::size_t votes, SeededRng& rng) {
  if (votes == 0) throw Error("majority vote needs at least one vote");
  std::vector<Prediction> preds;
  preds.reserve(votes);
  for (std::size_t v = 0; v < votes; ++v) preds.push_back(net.predict(image, Mode::test, rng));
  if (votes == 1) return preds.front();
  const std::size_t label = majority_label(preds);
  Prediction out;
  const std::size_t classes = preds.front().logits.size();
  out.logits.assign(classes, 0.0);
  out.probabilities.assign(classes, 0.0);
  for (const auto& p : preds) {
    for (std::size_t j = 0; j < classes; ++j) {
      out.logits[j] += p.logits[j] / static_cast<double>(votes);
      out.probabilities[j] += p.probabilities[j] / static_cast<double>(votes);
    }
  }
  out.label = label;
  return out;
}

template <typename T>
KernelMatrix<T> reduce_to_single(const TiledKernelBank<T>& bank) {
  bank.check();
  const std::size_t k = bank.geom.patch_size(), n = bank.geom.c_out;
  KernelMatrix<T> out = KernelMatrix<T>::zeros(bank.geom);
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t best = 0;
    double best_norm = -1.0;
    for (std::size_t t = 0; t < bank.tiles(); ++t) {
      double sq = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double v = bank.kernels[t].weights[p * n + j];
        sq += v * v;
      }
      if (sq > best_norm) {
        best_norm = sq;
        best = t;
      }
    }
    for (std::size_t p = 0; p < k; ++p) out.weights[p * n + j] = bank.kernels[best].weights[p * n + j];
    out.bias[j] = bank.kernels[best].bias[j];
  }
  return out;
}

template <typename T>
Network<T> reduce_network(const Network<T>& net) {
  NetworkConfig cfg = net.config();
  cfg.scheme = SchemeKind::none;
  std::fill(cfg.tiles.begin(), cfg.tiles.end(), 1);
  NetParams<T> p = net.params();
  for (auto& layer : p.conv) {
    KernelMatrix<T> single = reduce_to_single(layer.bank);
    layer.bank.kernels.assign(1, std::move(single));
  }
  return Network<T>(std::move(cfg), std::move(p), {});
}

template struct NetParams<float>;
template struct NetParams<double>;
template class Network<float>;
template class Network<double>;
template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;
template Network<float> Network<float>::cast<float>() const;
template Network<double> Network<double>::cast<double>() const;
template Prediction predict_majority(const Network<float>&, const BasicTensor<float>&, std::size_t,
                                     SeededRng&);
template Prediction predict_majority(const Network<double>&, const BasicTensor<double>&,
                                     std::size_t, SeededRng&);
template KernelMatrix<float> reduce_to_single(const TiledKernelBank<float>&);
template KernelMatrix<double> reduce_to_single(const TiledKernelBank<double>&);
template Network<float> reduce_network(const Network<float>&);
template Network<double> reduce_network(const Network<double>&);

}  // namespace rapa
