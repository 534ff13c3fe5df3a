#include "rapa/training.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace rapa {

namespace {

// Stream ids for SeededRng::derive.
constexpr std::uint64_t kOrderStream = 10;
constexpr std::uint64_t kItemStream = 11;
constexpr std::uint64_t kEvalStream = 20;

}  // namespace

TrainConfig TrainConfig::defaults(bool tiled) {
  TrainConfig cfg;
  if (tiled) {
    cfg.lr = 0.05;
    cfg.lr_gamma = 0.75;
    cfg.warmup = 5;
  }
  return cfg;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw Error("learning rate must be positive, got " + std::to_string(lr));
  if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) {
    throw Error("anneal factor must lie in (0, 1], got " + std::to_string(lr_gamma));
  }
  if (anneal_period == 0) throw Error("anneal period must be positive");
  if (!(warmup_divisor > 0.0)) throw Error("warm-up divisor must be positive");
  if (decay < 0.0) throw Error("weight decay must be non-negative");
  if (batch == 0) throw Error("batch size must be positive");
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  if (epoch < cfg.warmup) return cfg.lr / cfg.warmup_divisor;
  const auto steps = static_cast<double>((epoch - cfg.warmup) / cfg.anneal_period);
  return cfg.lr * std::pow(cfg.lr_gamma, steps);
}

template <typename T>
void sgd_step(NetParams<T>& params, const NetParams<T>& grads, double lr, double decay) {
  std::vector<const BasicTensor<T>*> g;
  grads.visit([&](const std::string&, const BasicTensor<T>& t, bool) { g.push_back(&t); });
  std::size_t i = 0;
  params.visit([&](const std::string& name, BasicTensor<T>& w, bool decays) {
    if (i >= g.size() || g[i]->shape() != w.shape()) {
      throw Error("sgd_step: gradient layout does not match parameter " + name);
    }
    const BasicTensor<T>& gt = *g[i++];
    const double wd = decays ? decay * lr : 0.0;
    for (std::size_t e = 0; e < w.size(); ++e) {
      const double wv = w[e];
      w[e] = static_cast<T>(wv - lr * (static_cast<double>(gt[e]) + wd * wv));
    }
  });
  if (i != g.size()) throw Error("sgd_step: gradient has more tensors than parameters");
}

TensorF augment(const TensorF& image, const TensorF& mean, SeededRng& rng) {
  require_shape(image.shape(), {kCifarSide, kCifarSide, kCifarChannels}, "augment image");
  require_shape(mean.shape(), image.shape(), "augment mean");
  const bool mirror = rng.coin();
  const auto delta = static_cast<float>(rng.uniform(-0.1, 0.1));
  TensorF out(image.shape());
  for (std::size_t y = 0; y < kCifarSide; ++y) {
    for (std::size_t x = 0; x < kCifarSide; ++x) {
      const std::size_t sx = mirror ? kCifarSide - 1 - x : x;
      for (std::size_t c = 0; c < kCifarChannels; ++c) {
        const std::size_t dst = (y * kCifarSide + x) * kCifarChannels + c;
        const std::size_t src = (y * kCifarSide + sx) * kCifarChannels + c;
        const float raw = std::clamp(image[src] + mean[src] + delta, 0.0f, 1.0f);
        out[dst] = raw - mean[dst];
      }
    }
  }
  return out;
}

template <typename T>
EpochMetrics train_epoch(Network<T>& net, const DatasetSplit& data, const TrainConfig& cfg,
                         std::size_t epoch) {
  cfg.validate();
  if (data.size() == 0) throw Error("train_epoch: empty dataset");
  const double lr = lr_at_epoch(cfg, epoch);
  SeededRng order_rng = SeededRng::derive(cfg.seed, {kOrderStream, epoch});
  const auto order = shuffle(data.size(), order_rng);

  EpochMetrics metrics;
  double loss_sum = 0.0;
  std::size_t wrong = 0;
  NetParams<T> total = net.params().zeros_like();

  for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
    const std::size_t count = std::min(cfg.batch, order.size() - start);
    std::vector<NetParams<T>> item_grads(count);
    std::vector<double> item_loss(count);
    std::vector<char> item_wrong(count);
    const Network<T>& cnet = net;

#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t b = 0; b < count; ++b) {
      const std::size_t pos = start + b;
      const std::size_t idx = order[pos];
      SeededRng rng = SeededRng::derive(cfg.seed, {kItemStream, epoch, pos});
      TensorF img = data.image(idx);
      if (cfg.augment) img = augment(img, data.mean, rng);
      const auto pass = cnet.forward(img.template cast<T>(), Mode::train, rng);
      const auto lg = softmax_cross_entropy(pass.prediction.logits, data.labels[idx]);
      item_loss[b] = lg.loss;
      item_wrong[b] = pass.prediction.label != data.labels[idx];
      item_grads[b] = cnet.backward(pass, lg.grad).grads;
    }

    total.set_zero();
    for (std::size_t b = 0; b < count; ++b) {
      total.add_scaled(item_grads[b], T{1});
      loss_sum += item_loss[b];
      wrong += item_wrong[b] ? 1 : 0;
    }
    total.visit([&](const std::string&, BasicTensor<T>& t, bool) {
      const T inv = T{1} / static_cast<T>(count);
      for (auto& v : t.values()) v *= inv;
    });
    sgd_step(net.params(), total, lr, cfg.decay);
  }
  metrics.images = data.size();
  metrics.mean_loss = loss_sum / static_cast<double>(data.size());
  metrics.train_error_pct = 100.0 * static_cast<double>(wrong) / static_cast<double>(data.size());
  return metrics;
}

template <typename T>
double evaluate(const Network<T>& net, const DatasetSplit& data, std::size_t votes,
                std::uint64_t seed) {
  if (data.size() == 0) throw Error("evaluate: empty dataset");
  if (votes == 0) throw Error("evaluate: votes must be at least 1");
  std::vector<char> wrong(data.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::size_t i = 0; i < data.size(); ++i) {
    SeededRng rng = SeededRng::derive(seed, {kEvalStream, i});
    const auto img = data.image(i).template cast<T>();
    const Prediction p = predict_majority(net, img, votes, rng);
    wrong[i] = p.label != data.labels[i];
  }
  const auto n_wrong = static_cast<double>(std::count(wrong.begin(), wrong.end(), 1));
  return 100.0 * n_wrong / static_cast<double>(data.size());
}

template void sgd_step(NetParams<float>&, const NetParams<float>&, double, double);
template void sgd_step(NetParams<double>&, const NetParams<double>&, double, double);
template EpochMetrics train_epoch(Network<float>&, const DatasetSplit&, const TrainConfig&,
                                  std::size_t);
template EpochMetrics train_epoch(Network<double>&, const DatasetSplit&, const TrainConfig&,
                                  std::size_t);
template double evaluate(const Network<float>&, const DatasetSplit&, std::size_t, std::uint64_t);
template double evaluate(const Network<double>&, const DatasetSplit&, std::size_t, std::uint64_t);

}  // namespace rapa
