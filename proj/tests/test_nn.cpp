// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "mcf/errors.hpp"
#include "mcf/nn.hpp"
#include "support/oracles.hpp"

using namespace mcf;

namespace {

std::vector<double> values(const TensorD& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(LayerNorm, ConstantRowCollapsesToBeta) {
  auto p = LayerNormParams<double>::create(4);
  auto y = layer_norm(TensorD::from({1, 4}, {1, 1, 1, 1}), p);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNorm, UnitVarianceRowIsUnchanged) {
  auto p = LayerNormParams<double>::create(2);
  auto y = layer_norm(TensorD::from({1, 2}, {1, -1}), p);
  EXPECT_NEAR(y.at(0), 1.0, 1e-9);
  EXPECT_NEAR(y.at(1), -1.0, 1e-9);
  EXPECT_THROW(layer_norm(TensorD::zeros({1, 3}), p), DimensionError);
}

TEST(Softmax, ExamplesAndStability) {
  const auto flat = softmax(TensorD::zeros({1, 4}));
  for (double v : flat.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  auto big = softmax(TensorD::from({1, 2}, {1000, 0}));
  EXPECT_NEAR(big.at(0), 1.0, 1e-12);
  EXPECT_NEAR(big.at(1), 0.0, 1e-12);
  auto thirds = softmax(TensorD::from({1, 3}, {std::log(1.0), std::log(2.0), std::log(3.0)}));
  EXPECT_NEAR(thirds.at(0), 1.0 / 6, 1e-15);
  EXPECT_NEAR(thirds.at(1), 2.0 / 6, 1e-15);
  EXPECT_NEAR(thirds.at(2), 3.0 / 6, 1e-15);
  auto ls = log_softmax(TensorD::from({1, 2}, {1000, 0}));
  EXPECT_TRUE(std::isfinite(ls.at(1)));
  EXPECT_NEAR(ls.at(1), -1000.0, 1e-9);
}

TEST(Activations, KnownValues) {
  auto x = TensorD::from({1, 3}, {-1, 0, 2});
  auto g = gelu(x);
  EXPECT_NEAR(g.at(0), -0.15865525393145707, 1e-12);
  EXPECT_DOUBLE_EQ(g.at(1), 0.0);
  EXPECT_NEAR(g.at(2), 1.9544997361036416, 1e-12);
  auto s = swish(x);
  EXPECT_NEAR(s.at(2), 2.0 / (1.0 + std::exp(-2.0)), 1e-15);
  auto r = relu(x);
  EXPECT_EQ(values(r), (std::vector<double>{0, 0, 2}));
}

TEST(Dropout, IdentityCasesAndValidation) {
  Rng rng(1);
  auto x = uniform_tensor<double>({4, 5}, 1.0, rng, false);
  EXPECT_EQ(values(dropout(x, 0.0, true, rng)), values(x));
  EXPECT_EQ(values(dropout(x, 0.7, false, rng)), values(x));
  EXPECT_THROW(dropout(x, 1.0, true, rng), ConfigError);
  EXPECT_THROW(dropout(x, -0.1, true, rng), ConfigError);
  // Kept entries are rescaled by 1 / (1 - rate).
  auto y = dropout(x, 0.5, true, rng);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (y.at(i) != 0.0) {
      EXPECT_DOUBLE_EQ(y.at(i), 2.0 * x.at(i));
    }
  }
}

TEST(DepthwiseConv, DeltaKernelIsIdentity) {
  Rng rng(2);
  auto p = DepthwiseConvParams<double>::create(3, 5, rng);
  for (auto& w : p.weight.data()) w = 0;
  for (auto& b : p.bias.data()) b = 0;
  for (std::size_t c = 0; c < 3; ++c) p.weight.at(c, 2) = 1.0;
  auto x = uniform_tensor<double>({6, 3}, 1.0, rng, false);
  EXPECT_EQ(values(depthwise_conv1d(x, p)), values(x));
}

TEST(DepthwiseConv, HandConvolutionWithZeroPadding) {
  Rng rng(3);
  auto p = DepthwiseConvParams<double>::create(1, 3, rng);
  for (auto& w : p.weight.data()) w = 1;
  p.bias.at(0) = 0;
  auto y = depthwise_conv1d(TensorD::from({3, 1}, {0, 1, 0}), p);
  EXPECT_EQ(values(y), (std::vector<double>{1, 1, 1}));
}

TEST(DepthwiseConv, EvenKernelRejected) {
  Rng rng(4);
  EXPECT_THROW(DepthwiseConvParams<double>::create(3, 4, rng), ConfigError);
}

TEST(DepthwiseConv, MatchesDirectLoops) {
  Rng rng(5);
  std::mt19937_64 orng(5);
  for (std::size_t k : {1u, 3u, 7u, 15u}) {
    for (std::size_t frames : {1u, 4u, 9u}) {
      auto p = DepthwiseConvParams<double>::create(4, k, rng);
      const auto xv = oracle::random_vector(frames * 4, orng);
      auto y = depthwise_conv1d(TensorD::from({frames, 4}, xv), p);
      const auto ref = oracle::depthwise_conv(xv, frames, 4, values(p.weight), values(p.bias), k);
      for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.at(i), ref[i], 1e-14);
    }
  }
}

TEST(GroupedConv, PointwiseSum) {
  Rng rng(6);
  auto p = GroupedConvParams<double>::create(2, 1, 1, rng);
  p.weight.at(0) = 1;
  p.weight.at(1) = 1;
  p.bias.at(0) = 0;
  auto y = grouped_conv1d(TensorD::from({1, 2}, {3, 4}), p);
  EXPECT_EQ(values(y), (std::vector<double>{7}));
}

TEST(GroupedConv, MatchesDirectLoopsAndValidates) {
  Rng rng(7);
  std::mt19937_64 orng(7);
  auto p = GroupedConvParams<double>::create(6, 3, 5, rng);
  const auto xv = oracle::random_vector(8 * 6, orng);
  auto y = grouped_conv1d(TensorD::from({8, 6}, xv), p);
  const auto ref = oracle::grouped_conv(xv, 8, 3, 2, values(p.weight), values(p.bias), 5);
  ASSERT_EQ(y.shape(), (Shape{8, 3}));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.at(i), ref[i], 1e-14);
  EXPECT_THROW(GroupedConvParams<double>::create(5, 2, 3, rng), ConfigError);
}

TEST(Subsample, OutputLengths) {
  EXPECT_EQ(subsampled_length(16), 3u);
  EXPECT_EQ(subsampled_length(100), 24u);
  EXPECT_EQ(subsampled_length(80), 19u);
  Rng rng(8);
  auto p = SubsamplerParams<double>::create(80, 8, rng);
  auto y = subsample(uniform_tensor<double>({16, 80}, 1.0, rng, false), p);
  EXPECT_EQ(y.shape(), (Shape{3, 8}));
  EXPECT_THROW(subsample(uniform_tensor<double>({6, 80}, 1.0, rng, false), p), InputError);
  EXPECT_NO_THROW(subsample(uniform_tensor<double>({min_subsample_input, 80}, 1.0, rng, false), p));
}

TEST(Positions, SinusoidalValues) {
  auto pe = sinusoidal_positions<double>(3, 4);
  EXPECT_DOUBLE_EQ(pe.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(pe.at(0, 1), 1.0);
  EXPECT_NEAR(pe.at(2, 0), std::sin(2.0), 1e-15);
  EXPECT_NEAR(pe.at(2, 3), std::cos(2.0 / 100.0), 1e-15);
}

TEST(Linear, ParameterCountAndShape) {
  Rng rng(9);
  auto p = LinearParams<double>::create(4, 3, rng);
  std::size_t n = 0;
  p.visit("", [&](const std::string&, const auto& t) { n += t.numel(); });
  EXPECT_EQ(n, 15u);
  auto dw = DepthwiseConvParams<double>::create(6, 3, rng);
  n = 0;
  dw.visit("", [&](const std::string&, const auto& t) { n += t.numel(); });
  EXPECT_EQ(n, 24u);
  EXPECT_EQ(linear(TensorD::zeros({2, 4}), p).shape(), (Shape{2, 3}));
}
