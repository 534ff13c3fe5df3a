#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "rapa/layers.hpp"

using namespace rapa;

namespace {

const Tensor kWindow({2, 2, 1}, std::vector<double>{1, 2, 3, 4});
const Tensor* const kNoBeta = nullptr;

Tensor pool(const Tensor& x, PoolKind kind, const Tensor* beta = nullptr, Mode mode = Mode::test,
            SeededRng* rng = nullptr) {
  PoolState<double> state;
  return pool_forward(x, PoolSpec{kind}, beta, kMixedPoolMu, mode, rng, state);
}

// Random input whose 2x2 windows have well-separated entries, so max and
// ReLU decisions do not flip under a finite-difference step.
Tensor jittered(Shape shape, SeededRng& rng, bool positive = false) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double base = 0.1 * static_cast<double>(rng.below(1000)) / 10.0;
    t[i] = (positive ? 0.5 : -5.0) + base + 1e-3 * rng.uniform();
  }
  return t;
}

}  // namespace

TEST(Pooling, WindowExamples) {
  EXPECT_EQ(pool(kWindow, PoolKind::max)[0], 4.0);
  EXPECT_EQ(pool(kWindow, PoolKind::average)[0], 2.5);
  const Tensor beta({1}, 2.0 / kMixedPoolMu);
  EXPECT_NEAR(mixing_weight(beta[0], kMixedPoolMu), 0.11920292202211755, 1e-15);
  EXPECT_NEAR(pool(kWindow, PoolKind::mixed, &beta)[0], 3.8212, 5e-5);
}

TEST(Pooling, StochasticEqualWindow) {
  const Tensor flat({2, 2, 1}, 3.0);
  EXPECT_EQ(pool(flat, PoolKind::stochastic)[0], 3.0);
  std::array<int, 4> counts{};
  SeededRng rng(1);
  for (int i = 0; i < 40000; ++i) {
    PoolState<double> state;
    pool_forward(flat, PoolSpec{PoolKind::stochastic}, kNoBeta, kMixedPoolMu, Mode::train, &rng, state);
    ++counts[state.route[0]];
  }
  for (int c : counts) EXPECT_NEAR(c / 40000.0, 0.25, 0.01);
}

TEST(Pooling, StochasticSamplesProportionally) {
  SeededRng rng(2);
  std::array<int, 4> counts{};
  for (int i = 0; i < 100000; ++i) {
    PoolState<double> state;
    pool_forward(kWindow, PoolSpec{PoolKind::stochastic}, kNoBeta, kMixedPoolMu, Mode::train, &rng,
                 state);
    ++counts[state.route[0]];
  }
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(counts[i] / 100000.0, (i + 1) / 10.0, 0.005);
  // Test mode: probability-weighted mean (1 + 4 + 9 + 16) / 10.
  EXPECT_DOUBLE_EQ(pool(kWindow, PoolKind::stochastic)[0], 3.0);
}

TEST(Pooling, StochasticZeroWindow) {
  const Tensor neg({2, 2, 1}, std::vector<double>{-1, 0, -2, 0});
  PoolState<double> state;
  SeededRng rng(3);
  const Tensor out =
      pool_forward(neg, PoolSpec{PoolKind::stochastic}, kNoBeta, kMixedPoolMu, Mode::train, &rng, state);
  EXPECT_EQ(out[0], 0.0);
  const auto g = pool_backward(Tensor({1, 1, 1}, 1.0), state, kNoBeta, kMixedPoolMu);
  EXPECT_EQ(g.input[0], 1.0);
}

TEST(Pooling, AverageSpreadsGradient) {
  PoolState<double> state;
  pool_forward(kWindow, PoolSpec{PoolKind::average}, kNoBeta, kMixedPoolMu, Mode::test, nullptr, state);
  const auto g = pool_backward(Tensor({1, 1, 1}, 2.0), state, kNoBeta, kMixedPoolMu);
  for (double v : g.input.values()) EXPECT_EQ(v, 0.5);
}

TEST(Pooling, RejectsBadInputs) {
  PoolState<double> state;
  EXPECT_THROW(pool_forward(kWindow, PoolSpec{PoolKind::max, 0, 2}, kNoBeta, 10.0, Mode::test, nullptr, state),
               Error);
  EXPECT_THROW(pool_forward(kWindow, PoolSpec{PoolKind::mixed}, kNoBeta, 10.0, Mode::test, nullptr, state),
               Error);
  EXPECT_THROW(pool_backward(Tensor({1, 1, 1}), PoolState<double>{}, kNoBeta, 10.0), Error);
  EXPECT_THROW(parse_pool_kind("median"), Error);
}

TEST(PoolingGradient, MatchesFiniteDifferencesForEveryKind) {
  SeededRng rng(5);
  for (PoolKind kind : {PoolKind::max, PoolKind::average, PoolKind::stochastic, PoolKind::mixed}) {
    for (Mode mode : {Mode::train, Mode::test}) {
      Tensor x = jittered({6, 6, 3}, rng, kind == PoolKind::stochastic);
      Tensor beta = oracle::random_tensor({3}, rng, 0.3);
      const Tensor proj = oracle::random_tensor({3, 3, 3}, rng);
      const Tensor* b = kind == PoolKind::mixed ? &beta : nullptr;
      auto loss = [&] {
        SeededRng draw(77);
        PoolState<double> s;
        return oracle::weighted_sum(pool_forward(x, PoolSpec{kind}, b, kMixedPoolMu, mode, &draw, s), proj);
      };
      SeededRng draw(77);
      PoolState<double> state;
      pool_forward(x, PoolSpec{kind}, b, kMixedPoolMu, mode, &draw, state);
      const auto g = pool_backward(proj, state, b, kMixedPoolMu);
      EXPECT_LT(oracle::max_relative_error(g.input.values(), oracle::numeric_gradient(x, loss)), 1e-5)
          << pool_kind_name(kind);
      if (kind == PoolKind::mixed) {
        EXPECT_LT(oracle::max_relative_error(g.beta.values(), oracle::numeric_gradient(beta, loss)), 1e-5);
      }
    }
  }
}

TEST(Lrn, IdentityCasesAndFormula) {
  SeededRng rng(6);
  const Tensor x = oracle::random_tensor({5, 5, 2}, rng);
  EXPECT_EQ(lrn_forward(x, LrnParams{3, 0.0, 0.75}, static_cast<LrnState<double>*>(nullptr)), x);
  const Tensor zero({5, 5, 2});
  EXPECT_EQ(lrn_forward(zero, LrnParams{}, static_cast<LrnState<double>*>(nullptr)), zero);

  // Direct evaluation at an interior and a corner element.
  const LrnParams p{3, 0.5, 0.75};
  const Tensor y = lrn_forward(x, p, static_cast<LrnState<double>*>(nullptr));
  auto at = [&](long yy, long xx, std::size_t c) { return x[(yy * 5 + xx) * 2 + c]; };
  for (auto [cy, cx] : {std::pair{2L, 2L}, std::pair{0L, 0L}}) {
    double s = 0.0;
    for (long dy = -1; dy <= 1; ++dy)
      for (long dx = -1; dx <= 1; ++dx) {
        const long yy = cy + dy, xx = cx + dx;
        if (yy >= 0 && xx >= 0 && yy < 5 && xx < 5) s += at(yy, xx, 1) * at(yy, xx, 1);
      }
    const double want = at(cy, cx, 1) / std::pow(1.0 + 0.5 / 9.0 * s, 0.75);
    EXPECT_NEAR(y[(cy * 5 + cx) * 2 + 1], want, 1e-14);
  }
}

TEST(Lrn, MatchesFiniteDifferences) {
  SeededRng rng(7);
  for (const LrnParams& p : {LrnParams{3, 0.5, 0.75}, LrnParams{5, 1.0, 0.6}, LrnParams{}}) {
    Tensor x = oracle::random_tensor({6, 5, 3}, rng);
    const Tensor proj = oracle::random_tensor({6, 5, 3}, rng);
    auto loss = [&] {
      return oracle::weighted_sum(lrn_forward(x, p, static_cast<LrnState<double>*>(nullptr)), proj);
    };
    LrnState<double> state;
    lrn_forward(x, p, &state);
    const Tensor g = lrn_backward(proj, state, p);
    EXPECT_LT(oracle::max_relative_error(g.values(), oracle::numeric_gradient(x, loss)), 1e-5);
  }
}

TEST(Relu, ForwardAndBackward) {
  const Tensor x = Tensor::vector({-1, 0, 2});
  const Tensor y = relu_forward(x);
  EXPECT_EQ(y, Tensor::vector({0, 0, 2}));
  EXPECT_EQ(relu_backward(Tensor::vector({5, 5, 5}), y), Tensor::vector({0, 0, 5}));
}

TEST(FullyConnected, MatchesFiniteDifferences) {
  SeededRng rng(8);
  Tensor x = oracle::random_tensor({12}, rng);
  Tensor w = oracle::random_tensor({12, 4}, rng);
  Tensor b = oracle::random_tensor({4}, rng);
  const Tensor proj = oracle::random_tensor({4}, rng);
  auto loss = [&] { return oracle::weighted_sum(fc_forward(x, w, b), proj); };
  const auto g = fc_backward(x, w, proj);
  EXPECT_LT(oracle::max_relative_error(g.input.values(), oracle::numeric_gradient(x, loss)), 1e-6);
  EXPECT_LT(oracle::max_relative_error(g.weights.values(), oracle::numeric_gradient(w, loss)), 1e-6);
  EXPECT_LT(oracle::max_relative_error(g.bias.values(), oracle::numeric_gradient(b, loss)), 1e-6);
  EXPECT_THROW(fc_forward(Tensor({5}), w, b), Error);
}

TEST(Softmax, StableAndNormalized) {
  const auto p = softmax(std::vector<double>{1000, 1000, 1000, 1000});
  for (double v : p) EXPECT_DOUBLE_EQ(v, 0.25);
  const auto q = softmax(std::vector<double>{1, 2, 3});
  EXPECT_NEAR(std::accumulate(q.begin(), q.end(), 0.0), 1.0, 1e-12);
  const auto lg = softmax_cross_entropy(std::vector<double>{0, 0}, 1);
  EXPECT_NEAR(lg.loss, std::log(2.0), 1e-15);
  EXPECT_NEAR(lg.grad[0], 0.5, 1e-15);
  EXPECT_NEAR(lg.grad[1], -0.5, 1e-15);
  EXPECT_THROW(softmax_cross_entropy(std::vector<double>{0, 0}, 2), Error);
}

TEST(Softmax, CrossEntropyGradientMatchesFiniteDifferences) {
  SeededRng rng(9);
  Tensor logits = oracle::random_tensor({10}, rng, 3.0);
  auto loss = [&] {
    return softmax_cross_entropy(std::vector<double>(logits.values().begin(), logits.values().end()), 3)
        .loss;
  };
  const auto lg = softmax_cross_entropy(std::vector<double>(logits.values().begin(), logits.values().end()), 3);
  // Gradient entries near 1e-6 drown in the rounding of a loss of order 1, hence the floor.
  EXPECT_LT(oracle::max_relative_error(lg.grad, oracle::numeric_gradient(logits, loss), 1e-4), 1e-5);

  double z = 0.0;
  for (double v : logits.values()) z += std::exp(v);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_NEAR(lg.grad[i], std::exp(logits[i]) / z - (i == 3 ? 1.0 : 0.0), 1e-12) << i;
  }
}
