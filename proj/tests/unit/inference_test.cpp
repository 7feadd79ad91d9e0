// Copyright 2026 The dppsel Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <map>
#include <numeric>

#include "dppsel/inference.hpp"
#include "test_util.hpp"

namespace dppsel {
namespace {

ConditionalKernel identity_kernel(const Eigen::VectorXd& r, double lambda) {
  return condition_kernel(Eigen::MatrixXd::Identity(r.size(), r.size()), r, lambda);
}

ConditionalKernel random_kernel(Eigen::Index n, Eigen::Index dim, double lambda, Rng& rng) {
  return condition_kernel(testing::random_unit_gram(n, dim, rng),
                          testing::random_relevance(n, rng), lambda);
}

TEST(GreedyFast, IdentityKernelPicksByRelevance) {
  auto k = identity_kernel(Eigen::Vector3d(0.3, 0.9, 0.5), 1.0);
  auto res = greedy_map_fast(k, 2);
  EXPECT_EQ(res.positions, (std::vector<std::size_t>{1, 2}));
  EXPECT_FALSE(res.early_stopped);
  // Jitter shifts each gain by log(1 + 1e-8).
  EXPECT_NEAR(res.gains[0], 0.9, 1e-7);
  EXPECT_NEAR(res.gains[1], 0.5, 1e-7);
}

TEST(GreedyFast, SinglePickIsArgmaxRelevance) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto k = random_kernel(20, 6, 0.1, rng);
    Eigen::Index best = 0;
    k.relevance.maxCoeff(&best);
    EXPECT_EQ(greedy_map_fast(k, 1).positions,
              std::vector<std::size_t>{static_cast<std::size_t>(best)});
  }
}

TEST(GreedyFast, TiesGoToLowestPosition) {
  auto k = identity_kernel(Eigen::Vector4d(0.5, 0.7, 0.7, 0.7), 1.0);
  EXPECT_EQ(greedy_map_fast(k, 2).positions, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(greedy_map_naive(k, 2).positions, (std::vector<std::size_t>{1, 2}));
}

TEST(GreedyFast, DuplicateRowsStopEarly) {
  Eigen::MatrixXd rows(2, 2);
  rows << 0.6, 0.8, 0.6, 0.8;
  auto k = pool_kernel(rows, Eigen::Vector2d(1, 0), 0.5);
  for (auto* fn : {&greedy_map_fast, &greedy_map_naive}) {
    auto res = fn(k, 2);
    EXPECT_EQ(res.positions, std::vector<std::size_t>{0});
    EXPECT_TRUE(res.early_stopped);
  }
}

TEST(GreedyFast, SingularKernelStopsAtRank) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index rank = 2 + static_cast<Eigen::Index>(uniform_index(rng, 5));
    auto k = random_kernel(12, rank, 0.2, rng);
    for (auto* fn : {&greedy_map_fast, &greedy_map_naive}) {
      auto res = fn(k, 12);
      EXPECT_TRUE(res.early_stopped);
      EXPECT_EQ(res.positions.size(), static_cast<std::size_t>(rank));
    }
  }
}

TEST(GreedyFast, ArgumentErrors) {
  auto k = identity_kernel(Eigen::Vector3d(0.1, 0.2, 0.3), 1.0);
  EXPECT_THROW(greedy_map_fast(k, 0), Error);
  EXPECT_THROW(greedy_map_fast(k, 4), Error);
  EXPECT_THROW(greedy_map_naive(k, 4), Error);
  EXPECT_THROW(brute_force_map(k, 4), Error);
}

TEST(GreedyFast, NonPsdKernelRaises) {
  Eigen::MatrixXd l(3, 3);
  l << 1, 0.9, 0.9, 0.9, 1, -0.9, 0.9, -0.9, 1;
  auto k = condition_kernel(l, Eigen::Vector3d(0.1, 0.2, 0.3), 1.0);
  try {
    greedy_map_fast(k, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
}

TEST(GreedyNaive, MatchesFastOnExamples) {
  auto k = identity_kernel(Eigen::Vector3d(0.3, 0.9, 0.5), 1.0);
  EXPECT_EQ(greedy_map_naive(k, 2).positions, greedy_map_fast(k, 2).positions);
  EXPECT_EQ(greedy_map_naive(k, 1).positions, greedy_map_fast(k, 1).positions);
}

TEST(Properties, FastNaiveEquivalence) {
  Rng rng(19);
  const double lambdas[] = {0.01, 0.05, 0.1};
  for (int trial = 0; trial < 30; ++trial) {
    const double lambda = lambdas[trial % 3];
    auto k = random_kernel(40, 24, lambda, rng);
    auto fast = greedy_map_fast(k, 10);
    auto naive = greedy_map_naive(k, 10);
    ASSERT_EQ(fast.positions, naive.positions);
    for (std::size_t t = 0; t < fast.gains.size(); ++t)
      EXPECT_NEAR(fast.gains[t], naive.gains[t], 1e-6);
  }
}

// After t picks, the fast gain of the next pick equals the log-det increment.
TEST(Properties, GainsAreLogdetIncrements) {
  Rng rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    auto k = random_kernel(30, 20, 0.1, rng);
    auto res = greedy_map_fast(k, 8);
    double prev = 0.0;
    std::vector<std::size_t> prefix;
    for (std::size_t t = 0; t < res.positions.size(); ++t) {
      prefix.push_back(res.positions[t]);
      const double cur = set_score(k, SubsetIndex(prefix));
      EXPECT_NEAR(cur - prev, res.gains[t], 1e-6);
      prev = cur;
    }
  }
}

TEST(Properties, NoBitwiseDuplicatesSelected) {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    Eigen::MatrixXd rows = normalize_rows(testing::gaussian_matrix(15, 6, rng));
    rows.row(7) = rows.row(2);
    rows.row(11) = rows.row(2);
    Eigen::VectorXd q = normalize_vector(testing::gaussian_matrix(6, 1, rng));
    auto k = pool_kernel(rows, q, 0.05);
    auto res = greedy_map_fast(k, 10);
    const auto c = std::count_if(res.positions.begin(), res.positions.end(),
                                 [](std::size_t p) { return p == 2 || p == 7 || p == 11; });
    EXPECT_LE(c, 1);
  }
}

TEST(BruteForce, Examples) {
  auto k2 = identity_kernel(Eigen::Vector2d(0.1, -0.3), 0.5);
  EXPECT_EQ(brute_force_map(k2, 2), (SubsetIndex{0, 1}));
  auto k = identity_kernel((Eigen::VectorXd(5) << 0.1, 0.8, -0.2, 0.6, 0.3).finished(), 0.4);
  EXPECT_EQ(brute_force_map(k, 2), (SubsetIndex{1, 3}));
}

TEST(BruteForce, MatchesEnumerationAtFour) {
  Rng rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    auto k = random_kernel(4, 3, 0.3, rng);
    double best = kNegInf;
    SubsetIndex arg;
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = a + 1; b < 4; ++b) {
        const double det = testing::masked_det(k.conditioned, (1u << a) | (1u << b));
        if (std::log(det) > best) {
          best = std::log(det);
          arg = SubsetIndex{a, b};
        }
      }
    EXPECT_EQ(brute_force_map(k, 2), arg);
  }
}

TEST(BruteForce, BudgetEnforced) {
  Eigen::VectorXd r = Eigen::VectorXd::Zero(40);
  auto k = identity_kernel(r, 1.0);
  try {
    brute_force_map(k, 20);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCapability);
  }
}

TEST(BruteForce, GreedyNeverBeatsOptimum) {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    auto k = random_kernel(10, 8, 0.1, rng);
    auto greedy = greedy_map_fast(k, 3);
    const double g = set_score(k, SubsetIndex(greedy.positions));
    const double opt = set_score(k, brute_force_map(k, 3));
    EXPECT_LE(g, opt + 1e-9);
  }
}

TEST(Binomial, Values) {
  EXPECT_EQ(binomial(6, 2), 15.0);
  EXPECT_NEAR(binomial(100, 16) / 1.3458606290468147e+18, 1.0, 1e-12);
  EXPECT_EQ(binomial(3, 4), 0.0);
  EXPECT_EQ(binomial(7, 0), 1.0);
}

TEST(Kdpp, FullSizeIsDeterministic) {
  Rng rng(4);
  Eigen::MatrixXd l = testing::random_psd(2, 5, rng);
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    EXPECT_EQ(kdpp_sample(l, 2, seed), (SubsetIndex{0, 1}));
}

TEST(Kdpp, DiagonalKernelFrequencies) {
  Eigen::MatrixXd l = Eigen::Vector2d(1, 3).asDiagonal();
  KdppSampler sampler(l, 1);
  Rng rng(5);
  int ones = 0;
  const int draws = 40000;
  for (int i = 0; i < draws; ++i) ones += sampler.sample(rng)[0] == 1 ? 1 : 0;
  // sd of the estimate is about 0.0022.
  EXPECT_NEAR(static_cast<double>(ones) / draws, 0.75, 0.01);
}

TEST(Kdpp, SameSeedSameDraw) {
  Rng rng(6);
  Eigen::MatrixXd l = testing::random_psd(8, 8, rng);
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    EXPECT_EQ(kdpp_sample(l, 3, seed), kdpp_sample(l, 3, seed));
}

TEST(Kdpp, RankErrors) {
  Rng rng(7);
  Eigen::MatrixXd l = testing::random_psd(6, 2, rng);
  EXPECT_EQ(KdppSampler(l, 2).rank(), 2u);
  EXPECT_THROW(KdppSampler(l, 3), Error);
  EXPECT_THROW(KdppSampler(l, 0), Error);
}

TEST(Kdpp, EspRecurrence) {
  Rng rng(9);
  Eigen::MatrixXd l = testing::random_psd(7, 9, rng);
  KdppSampler s(l, 4);
  const auto& e = s.esp();
  const auto& lam = s.eigenvalues();
  for (Eigen::Index m = 0; m <= 7; ++m) EXPECT_EQ(e(0, m), 1.0);
  for (Eigen::Index j = 1; j <= 4; ++j)
    for (Eigen::Index m = 1; m <= 7; ++m)
      EXPECT_NEAR(e(j, m), e(j, m - 1) + lam(m - 1) * e(j - 1, m - 1), 1e-12);
  // e_1 over all eigenvalues is their sum.
  EXPECT_NEAR(e(1, 7), lam.sum(), 1e-12);
}

TEST(Kdpp, SizesAlwaysK) {
  Rng rng(10);
  auto k = random_kernel(20, 10, 0.1, rng);
  KdppSampler s(k.conditioned, 5);
  for (int i = 0; i < 200; ++i) EXPECT_EQ(s.sample(rng).size(), 5u);
}

// Identity kernel: all 15 pairs are equiprobable. Chi-square with 14 degrees
// of freedom; the 0.001 critical value is 36.123.
TEST(Kdpp, IdentityKernelUniformChiSquare) {
  KdppSampler s(Eigen::MatrixXd::Identity(6, 6), 2);
  Rng rng(11);
  std::map<SubsetIndex, int> counts;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++counts[s.sample(rng)];
  ASSERT_EQ(counts.size(), 15u);
  const double expected = draws / 15.0;
  double chi2 = 0.0;
  for (const auto& [subset, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 36.123);
}

TEST(OrderExemplars, Examples) {
  Eigen::Vector3d r(0.9, 0.1, 0.5);
  EXPECT_EQ(order_exemplars({0, 1, 2}, r), (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_EQ(order_exemplars({2, 0, 1}, Eigen::Vector3d::Constant(0.4)),
            (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(order_exemplars({2}, r), std::vector<std::size_t>{2});
  EXPECT_THROW(order_exemplars({3}, r), Error);
}

}  // namespace
}  // namespace dppsel
