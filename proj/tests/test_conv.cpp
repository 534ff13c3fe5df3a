#include <gtest/gtest.h>

#include <numeric>

#include "oracles.hpp"
#include "rapa/conv.hpp"
#include "rapa/kernels.hpp"

using namespace rapa;

namespace {

ConvGeometry geometry(std::size_t h, std::size_t w, std::size_t c_in, std::size_t k,
                      std::size_t pad, std::size_t stride, std::size_t c_out) {
  ConvGeometry g;
  g.h = h;
  g.w = w;
  g.c_in = c_in;
  g.k_h = g.k_w = k;
  g.pad = pad;
  g.stride = stride;
  g.c_out = c_out;
  return g;
}

// Random valid geometry with pad in {0, 2} and stride in {1, 2}.
ConvGeometry random_geometry(SeededRng& rng) {
  const std::size_t k = 1 + 2 * rng.below(3);
  const std::size_t pad = 2 * rng.below(2);
  const std::size_t stride = 1 + rng.below(2);
  std::size_t h = k + rng.below(6), w = k + rng.below(6);
  while ((h + 2 * pad - k) % stride) ++h;
  while ((w + 2 * pad - k) % stride) ++w;
  return geometry(h, w, 1 + rng.below(3), k, pad, stride, 1 + rng.below(4));
}

KernelMatrix<double> random_kernel(const ConvGeometry& g, SeededRng& rng) {
  return {oracle::random_tensor({g.patch_size(), g.c_out}, rng),
          oracle::random_tensor({g.c_out}, rng)};
}

}  // namespace

TEST(Im2col, HandExample) {
  const Tensor x({3, 3, 1}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto p = im2col(x, geometry(3, 3, 1, 2, 0, 1, 1));
  EXPECT_EQ(p.rows, Tensor::matrix({{1, 2, 4, 5}, {2, 3, 5, 6}, {4, 5, 7, 8}, {5, 6, 8, 9}}));
}

TEST(Im2col, OneByOneKernelGivesPixels) {
  SeededRng rng(2);
  const Tensor x = oracle::random_tensor({4, 5, 3}, rng);
  const auto p = im2col(x, geometry(4, 5, 3, 1, 0, 1, 2));
  EXPECT_EQ(p.rows.shape(), (Shape{20, 3}));
  EXPECT_TRUE(std::equal(x.values().begin(), x.values().end(), p.rows.values().begin()));
}

TEST(Im2col, ZeroInputAndPaddedEntries) {
  const auto g = geometry(4, 4, 2, 5, 2, 1, 1);
  const auto z = im2col(Tensor({4, 4, 2}), g);
  EXPECT_EQ(z.rows.shape(), (Shape{16, 50}));
  for (double v : z.rows.values()) EXPECT_EQ(v, 0.0);
  // The top-left patch reaches two rows and two columns into the padding.
  const auto ones = im2col(Tensor({4, 4, 2}, 1.0), g);
  const double s = std::accumulate(ones.rows.row(0).begin(), ones.rows.row(0).end(), 0.0);
  EXPECT_EQ(s, 3 * 3 * 2);
}

TEST(Im2col, RejectsMismatchAndNonIntegralGeometry) {
  EXPECT_THROW(im2col(Tensor({3, 3, 2}), geometry(3, 3, 1, 2, 0, 1, 1)), Error);
  EXPECT_THROW(geometry(4, 4, 1, 3, 0, 2, 1).validate(), Error);
  EXPECT_NO_THROW(geometry(5, 5, 1, 3, 0, 2, 1).validate());
}

TEST(ConvForward, HandExampleAndZeroKernel) {
  const Tensor x({3, 3, 1}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto g = geometry(3, 3, 1, 2, 0, 1, 1);
  const auto p = im2col(x, g);
  KernelMatrix<double> k{Tensor({4, 1}, 1.0), Tensor({1}, 0.0)};
  EXPECT_EQ(conv_forward(p, k), Tensor({2, 2, 1}, std::vector<double>{12, 16, 24, 28}));
  KernelMatrix<double> zero{Tensor({4, 1}, 0.0), Tensor({1}, 2.5)};
  EXPECT_EQ(conv_forward(p, zero), Tensor({2, 2, 1}, 2.5));
}

TEST(ConvForward, MatchesSlidingWindowOnRandomInputs) {
  SeededRng rng(8);
  const auto g = geometry(8, 8, 3, 3, 1, 1, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = oracle::random_tensor({8, 8, 3}, rng);
    const auto k = random_kernel(g, rng);
    const Tensor got = conv_forward(im2col(x, g), k);
    const Tensor want = oracle::direct_conv(x, g, k.weights, k.bias);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_NEAR(got[i], want[i], 1e-12 * std::max(1.0, std::abs(want[i])));
    }
  }
}

TEST(ConvForward, MatchesSlidingWindowOnRandomGeometries) {
  SeededRng rng(9);
  for (int trial = 0; trial < 40; ++trial) {
    const auto g = random_geometry(rng);
    const Tensor x = oracle::random_tensor({g.h, g.w, g.c_in}, rng);
    const auto k = random_kernel(g, rng);
    const Tensor got = conv_forward(im2col(x, g), k);
    const Tensor want = oracle::direct_conv(x, g, k.weights, k.bias);
    for (std::size_t i = 0; i < got.size(); ++i) {
      ASSERT_NEAR(got[i], want[i], 1e-12 * std::max(1.0, std::abs(want[i]))) << g.describe();
    }
  }
}

TEST(ConvBackward, ZeroAndRankOneCases) {
  SeededRng rng(4);
  const auto g = geometry(3, 3, 1, 2, 0, 1, 2);
  const auto p = im2col(oracle::random_tensor({3, 3, 1}, rng), g);
  const auto k = random_kernel(g, rng);
  const auto zk = conv_backward_kernel(p, Tensor({4, 2}));
  for (double v : zk.weights.values()) EXPECT_EQ(v, 0.0);
  for (double v : zk.bias.values()) EXPECT_EQ(v, 0.0);
  const Tensor zx = conv_backward_input(Tensor({4, 2}), k, g);
  for (double v : zx.values()) EXPECT_EQ(v, 0.0);

  // 2x2 input with a 2x2 kernel: one patch, so dK is the outer product.
  const auto g1 = geometry(2, 2, 1, 2, 0, 1, 2);
  const Tensor x = Tensor({2, 2, 1}, std::vector<double>{1, 2, 3, 4});
  const Tensor dm = Tensor({1, 2}, std::vector<double>{0.5, -2});
  const auto grad = conv_backward_kernel(im2col(x, g1), dm);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(grad.weights.at(r, 0), x[r] * 0.5);
    EXPECT_EQ(grad.weights.at(r, 1), x[r] * -2.0);
  }
  EXPECT_EQ(grad.bias, Tensor::vector({0.5, -2}));
}

TEST(ConvBackward, OneByOneInputGradientIsGradTimesKernelTransposed) {
  SeededRng rng(12);
  const auto g = geometry(3, 4, 3, 1, 0, 1, 2);
  const auto k = random_kernel(g, rng);
  const Tensor dm = oracle::random_tensor({12, 2}, rng);
  const Tensor want = matmul(dm, [&] {
    Tensor kt({2, 3});
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) kt.at(j, i) = k.weights.at(i, j);
    return kt;
  }());
  const Tensor got = conv_backward_input(dm, k, g);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-14);
}

TEST(ConvBackward, AllOnesGradientCountsPatchMembership) {
  const auto g = geometry(5, 5, 1, 3, 0, 1, 1);
  const Tensor counts =
      conv_backward_input(Tensor({9, 1}, 1.0), KernelMatrix<double>{Tensor({9, 1}, 1.0), Tensor({1})}, g);
  // Corner pixel belongs to one patch, centre pixel to nine.
  EXPECT_EQ(counts[0], 1.0);
  EXPECT_EQ(counts[12], 9.0);
  EXPECT_EQ(counts[2], 3.0);
}

TEST(ConvBackward, MatchesFiniteDifferences) {
  SeededRng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = trial < 5 ? geometry(8, 8, 3, 3, 1, 1, 2) : random_geometry(rng);
    Tensor x = oracle::random_tensor({g.h, g.w, g.c_in}, rng);
    auto k = random_kernel(g, rng);
    const Tensor proj = oracle::random_tensor({g.patches(), g.c_out}, rng);
    auto loss = [&] { return oracle::weighted_sum(conv_forward(im2col(x, g), k), proj); };

    const auto grad = conv_backward_kernel(im2col(x, g), proj);
    const Tensor dx = conv_backward_input(proj, k, g);
    EXPECT_LT(oracle::max_relative_error(grad.weights.values(), oracle::numeric_gradient(k.weights, loss)),
              1e-6);
    EXPECT_LT(oracle::max_relative_error(grad.bias.values(), oracle::numeric_gradient(k.bias, loss)), 1e-6);
    EXPECT_LT(oracle::max_relative_error(dx.values(), oracle::numeric_gradient(x, loss)), 1e-6)
        << g.describe();
  }
}

TEST(MacCount, ReferenceLayers) {
  EXPECT_EQ(mac_count(same_conv(32, 3, 32)), 2'457'600u);
  EXPECT_EQ(mac_count(same_conv(16, 32, 32)), 6'553'600u);
  EXPECT_EQ(mac_count(geometry(1, 1, 1, 1, 0, 1, 1)), 1u);
}

// The OpenMP kernels must agree bit for bit with the serial reference.
TEST(Kernels, ParallelMatchesSerial) {
  SeededRng rng(31);
  const auto g = same_conv(16, 8, 12);
  std::vector<float> img(g.input_size());
  for (auto& v : img) v = static_cast<float>(rng.normal());
  std::vector<float> p_par(g.patches() * g.patch_size()), p_ser(p_par.size());
  kernels::im2col(img.data(), g, p_par.data());
  kernels::serial::im2col(img.data(), g, p_ser.data());
  EXPECT_EQ(p_par, p_ser);

  std::vector<float> b(g.patch_size() * g.c_out);
  for (auto& v : b) v = static_cast<float>(rng.normal());
  std::vector<std::uint32_t> rows;
  for (std::uint32_t r = 0; r < g.patches(); r += 3) rows.push_back(r);
  std::vector<float> c_par(g.patches() * g.c_out, 1.0f), c_ser = c_par;
  kernels::gemm_rows(p_par.data(), g.patch_size(), b.data(), g.patch_size(), g.c_out, c_par.data(),
                     g.c_out, rows, true);
  kernels::serial::gemm_rows(p_ser.data(), g.patch_size(), b.data(), g.patch_size(), g.c_out,
                             c_ser.data(), g.c_out, rows, true);
  EXPECT_EQ(c_par, c_ser);

  std::vector<float> dm(g.patches() * g.c_out);
  for (auto& v : dm) v = static_cast<float>(rng.normal());
  std::vector<float> k_par(g.patch_size() * g.c_out), k_ser(k_par.size());
  kernels::gemm_tn_rows(p_par.data(), g.patch_size(), dm.data(), g.c_out, g.patch_size(), g.c_out,
                        rows, k_par.data());
  kernels::serial::gemm_tn_rows(p_ser.data(), g.patch_size(), dm.data(), g.c_out, g.patch_size(),
                                g.c_out, rows, k_ser.data());
  EXPECT_EQ(k_par, k_ser);

  std::vector<float> x_par(g.input_size()), x_ser(g.input_size());
  kernels::col2im(p_par.data(), g, x_par.data());
  kernels::serial::col2im(p_ser.data(), g, x_ser.data());
  EXPECT_EQ(x_par, x_ser);
}

TEST(Kernels, ResultIndependentOfWorkerCount) {
  SeededRng rng(32);
  const auto g = same_conv(16, 4, 8);
  const Tensor x = oracle::random_tensor({16, 16, 4}, rng);
  const auto k = random_kernel(g, rng);
  kernels::set_workers(1);
  const Tensor one = conv_forward(im2col(x, g), k);
  kernels::set_workers(4);
  const Tensor four = conv_forward(im2col(x, g), k);
  kernels::set_workers(0);
  EXPECT_EQ(one, four);
}
