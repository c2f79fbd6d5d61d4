// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mcf/ctc.hpp"
#include "mcf/errors.hpp"
#include "support/oracles.hpp"

using namespace mcf;

namespace {

LogProbLattice lattice_from_probs(std::size_t frames, std::size_t symbols, const std::vector<double>& probs) {
  LogProbLattice lat{frames, symbols, {}};
  for (double p : probs) lat.log_probs.push_back(std::log(p));
  return lat;
}

// Logits whose per-frame argmax follows `path`.
LogProbLattice lattice_for_path(const std::vector<int>& path, std::size_t symbols) {
  std::vector<double> logits(path.size() * symbols, 0.0);
  for (std::size_t t = 0; t < path.size(); ++t) logits[t * symbols + static_cast<std::size_t>(path[t])] = 5.0;
  return LogProbLattice::from_logits(logits, path.size(), symbols);
}

}  // namespace

TEST(CtcLoss, SinglePath) {
  auto lat = lattice_from_probs(1, 2, {0.4, 0.6});
  EXPECT_NEAR(ctc_neg_log_likelihood(lat, std::vector<int>{1}), -std::log(0.6), 1e-15);
}

TEST(CtcLoss, ThreeAlignmentsUnderUniformFrames) {
  auto lat = lattice_from_probs(2, 3, std::vector<double>(6, 1.0 / 3.0));
  EXPECT_NEAR(ctc_neg_log_likelihood(lat, std::vector<int>{1}), std::log(3.0), 1e-14);
}

TEST(CtcLoss, InfeasibleTargetIsInfinityAndFlagged) {
  auto logits = TensorD::zeros({2, 3});
  const std::vector<int> repeated{1, 1};  // needs a blank between: 3 frames
  EXPECT_EQ(ctc_min_frames(repeated), 3u);
  auto res = ctc_loss(logits, repeated);
  EXPECT_FALSE(res.feasible);
  EXPECT_TRUE(std::isinf(res.loss.item()));
  auto lat = LogProbLattice::from_logits(logits);
  EXPECT_TRUE(std::isinf(ctc_neg_log_likelihood(lat, repeated)));
}

TEST(CtcLoss, TargetValidation) {
  auto logits = TensorD::zeros({4, 3});
  EXPECT_THROW(ctc_loss(logits, std::vector<int>{}), ContractError);
  EXPECT_THROW(ctc_loss(logits, std::vector<int>{0}), ContractError);
  EXPECT_THROW(ctc_loss(logits, std::vector<int>{3}), ContractError);
}

TEST(CtcLoss, MatchesPathEnumeration) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t frames = 1 + rng() % 5, vocab = 1 + rng() % 3, symbols = vocab + 1;
    const std::size_t m = 1 + rng() % 3;
    std::vector<int> target;
    for (std::size_t i = 0; i < m; ++i) target.push_back(1 + static_cast<int>(rng() % vocab));
    const auto logits = oracle::random_vector(frames * symbols, rng, 2.0);
    const double dp = ctc_neg_log_likelihood(LogProbLattice::from_logits(logits, frames, symbols), target);
    const double brute = oracle::brute_force_ctc_nll(logits, frames, symbols, target);
    if (std::isinf(brute)) {
      EXPECT_TRUE(std::isinf(dp));
    } else {
      EXPECT_NEAR(dp, brute, 1e-10);
    }
  }
}

TEST(CtcLoss, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(12);
  const std::size_t frames = 5, symbols = 4;
  const std::vector<int> target{2, 2, 1};
  const auto lv = oracle::random_vector(frames * symbols, rng, 2.0);
  auto logits = TensorD::from({frames, symbols}, lv, true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    tape.backward(ctc_loss(logits, target).loss);
  }
  const auto numeric = oracle::numeric_gradient(
      [&](const std::vector<double>& x) { return oracle::brute_force_ctc_nll(x, frames, symbols, target); }, lv);
  for (std::size_t i = 0; i < numeric.size(); ++i) EXPECT_NEAR(logits.grad()[i], numeric[i], 1e-7);
}

TEST(GreedyDecode, CollapseRules) {
  EXPECT_EQ(ctc_greedy_decode(lattice_for_path({1, 1, 0, 2}, 3)), (std::vector<int>{1, 2}));
  EXPECT_TRUE(ctc_greedy_decode(lattice_for_path({0, 0, 0}, 3)).empty());
  EXPECT_EQ(ctc_greedy_decode(lattice_for_path({1, 0, 1}, 3)), (std::vector<int>{1, 1}));
}

TEST(EditDistance, Examples) {
  const std::vector<int> abc{1, 2, 3}, axc{1, 9, 3}, ab{1, 2}, ba{2, 1}, empty{};
  EXPECT_EQ(edit_distance(abc, abc).distance, 0u);
  const auto sub = edit_distance(axc, abc);
  EXPECT_EQ(sub.distance, 1u);
  EXPECT_EQ(sub.substitutions, 1u);
  EXPECT_EQ(edit_distance(ab, ba).distance, 2u);
  const auto ins = edit_distance(abc, empty);
  EXPECT_EQ(ins.distance, 3u);
  EXPECT_EQ(ins.insertions, 3u);
  EXPECT_TRUE(std::isinf(token_error_rate(ins, 0)));
  const auto del = edit_distance(empty, abc);
  EXPECT_EQ(del.deletions, 3u);
  EXPECT_DOUBLE_EQ(token_error_rate(del, 3), 1.0);
  EXPECT_EQ(token_error_rate(edit_distance(empty, empty), 0), 0.0);
}
