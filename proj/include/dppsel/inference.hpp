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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "dppsel/dpp_kernel.hpp"
#include "dppsel/error.hpp"
#include "dppsel/random.hpp"

namespace dppsel {

/// Output of the greedy MAP routines. `gains[t]` is the log-det increment of
/// the t-th pick under L'.
struct GreedyResult {
  std::vector<std::size_t> positions;
  std::vector<double> gains;
  bool early_stopped = false;
};

namespace detail {

inline void check_greedy_args(const ConditionalKernel& kernel, std::size_t k) {
  const auto n = kernel.size();
  if (kernel.base.rows() != kernel.base.cols() ||
      kernel.conditioned.rows() != kernel.base.rows() ||
      static_cast<std::size_t>(kernel.relevance.size()) != n) {
    throw invalid_argument("conditional kernel has inconsistent shapes");
  }
  if (k == 0 || k > n) {
    throw invalid_argument("subset size K = " + std::to_string(k) +
                           " must be in [1, " + std::to_string(n) + "]");
  }
}

}  // namespace detail

/// Greedy MAP with incrementally updated Cholesky rows, O(nK) per pick.
///
/// The recurrence runs on the base kernel L: for a candidate i, the residual
/// pivot under L' is exp(r_i / lambda) times its residual under L, so the gain
/// is r_i / lambda + log d2_i. After picking j, every live candidate i gets
///
///   e_i = (L_ji - <c_j, c_i>) / d_j,   c_i <- [c_i, e_i],   d2_i -= e_i^2.
///
/// Picks the lowest position on ties; stops early once every remaining
/// residual (relative to its diagonal) is <= 1e-12.
inline GreedyResult greedy_map_fast(const ConditionalKernel& kernel,
                                    std::size_t k) {
  detail::check_greedy_args(kernel, k);
  const auto n = static_cast<Eigen::Index>(kernel.size());
  const auto& base = kernel.base;

  Eigen::MatrixXd cis = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), n);
  Eigen::VectorXd d2(n);
  Eigen::VectorXd scale(n);
  std::vector<char> live(static_cast<std::size_t>(n), 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    d2(i) = base(i, i);
    scale(i) = base(i, i) > 0.0 ? base(i, i) : 1.0;
  }

  GreedyResult out;
  out.positions.reserve(k);
  out.gains.reserve(k);
  for (std::size_t t = 0; t < k; ++t) {
    Eigen::Index best = -1;
    double best_gain = kNegInf;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!live[static_cast<std::size_t>(i)]) continue;
      const double rel = d2(i) / scale(i);
      if (rel < kNegativePivot) {
        throw numeric_error("kernel is not PSD: residual " + std::to_string(rel) +
                            " at position " + std::to_string(i));
      }
      if (rel <= kSingularPivot) continue;
      const double gain =
          kernel.relevance_weight(static_cast<std::size_t>(i)) + std::log(d2(i));
      if (gain > best_gain) {
        best_gain = gain;
        best = i;
      }
    }
    if (best < 0) {
      out.early_stopped = true;
      break;
    }
    out.positions.push_back(static_cast<std::size_t>(best));
    out.gains.push_back(best_gain);
    live[static_cast<std::size_t>(best)] = 0;

    const auto ti = static_cast<Eigen::Index>(t);
    const double dj = std::sqrt(d2(best));
    const auto cj = cis.col(best).head(ti);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!live[static_cast<std::size_t>(i)]) continue;
      const double e = (base(best, i) - cj.dot(cis.col(i).head(ti))) / dj;
      cis(ti, i) = e;
      d2(i) -= e * e;
    }
  }
  return out;
}

/// Reference greedy: every candidate gain is recomputed from a fresh
/// factorization of L'_{S + i}. Same contract as greedy_map_fast.
inline GreedyResult greedy_map_naive(const ConditionalKernel& kernel,
                                     std::size_t k) {
  detail::check_greedy_args(kernel, k);
  const auto n = kernel.size();
  GreedyResult out;
  std::vector<char> chosen(n, 0);
  std::vector<std::size_t> order;
  double current = 0.0;
  for (std::size_t t = 0; t < k; ++t) {
    std::size_t best = n;
    double best_gain = kNegInf;
    double best_logdet = 0.0;
    order.push_back(0);
    for (std::size_t i = 0; i < n; ++i) {
      if (chosen[i]) continue;
      order.back() = i;
      const double ld = detail::logdet_ordered(kernel.conditioned, order);
      if (ld == kNegInf) continue;
      const double gain = ld - current;
      if (gain > best_gain) {
        best_gain = gain;
        best = i;
        best_logdet = ld;
      }
    }
    order.pop_back();
    if (best == n) {
      out.early_stopped = true;
      break;
    }
    chosen[best] = 1;
    order.push_back(best);
    out.positions.push_back(best);
    out.gains.push_back(best_gain);
    current = best_logdet;
  }
  return out;
}

inline double binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double c = 1.0;
  for (std::size_t i = 1; i <= k; ++i) {
    c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
  }
  return std::round(c);
}

inline constexpr double kBruteForceBudget = 1e6;

/// Exhaustive MAP over all size-K subsets. Ties keep the lexicographically
/// smallest member list.
inline SubsetIndex brute_force_map(const ConditionalKernel& kernel,
                                   std::size_t k) {
  detail::check_greedy_args(kernel, k);
  const auto n = kernel.size();
  if (binomial(n, k) > kBruteForceBudget) {
    throw capability_error("C(" + std::to_string(n) + ", " + std::to_string(k) +
                           ") subsets exceeds the exhaustive budget of 1e6");
  }
  std::vector<std::size_t> combo(k);
  std::iota(combo.begin(), combo.end(), std::size_t{0});
  std::vector<std::size_t> best = combo;
  double best_score = kNegInf;
  bool first = true;
  for (;;) {
    const double s = detail::logdet_ordered(kernel.conditioned, combo);
    if (first || s > best_score) {
      best_score = s;
      best = combo;
      first = false;
    }
    // Next combination in lexicographic order.
    std::size_t i = k;
    while (i > 0 && combo[i - 1] == n - k + i - 1) --i;
    if (i == 0) break;
    ++combo[i - 1];
    for (std::size_t j = i; j < k; ++j) combo[j] = combo[j - 1] + 1;
  }
  return SubsetIndex(std::move(best));
}

/// Exact sampler for the k-DPP defined by a PSD kernel.
///
/// Eigenvalues are rescaled by the largest one before building the
/// elementary symmetric polynomial table; the selection ratios are invariant
/// to that scale and the table no longer overflows on strongly conditioned
/// kernels. Eigenvalues below 1e-8 of the largest count as zero.
class KdppSampler {
 public:
  static constexpr double kRankTolerance = 1e-8;

  KdppSampler(const Eigen::MatrixXd& kernel, std::size_t k) : k_(k) {
    if (kernel.rows() != kernel.cols()) {
      throw invalid_argument("k-DPP kernel must be square");
    }
    if (k == 0) throw invalid_argument("k-DPP size must be positive");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(kernel);
    if (solver.info() != Eigen::Success) {
      throw numeric_error("eigendecomposition failed");
    }
    eigenvectors_ = solver.eigenvectors();
    eigenvalues_ = solver.eigenvalues();
    const double top = eigenvalues_.size() > 0 ? eigenvalues_.maxCoeff() : 0.0;
    rank_ = 0;
    for (Eigen::Index i = 0; i < eigenvalues_.size(); ++i) {
      if (top > 0.0 && eigenvalues_(i) > kRankTolerance * top) {
        eigenvalues_(i) /= top;
        ++rank_;
      } else {
        eigenvalues_(i) = 0.0;
      }
    }
    if (k > rank_) {
      throw invalid_argument("k = " + std::to_string(k) +
                             " exceeds the kernel's numeric rank " +
                             std::to_string(rank_));
    }
    const auto n = static_cast<std::size_t>(eigenvalues_.size());
    esp_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k + 1),
                                 static_cast<Eigen::Index>(n + 1));
    esp_.row(0).setOnes();
    for (Eigen::Index j = 1; j <= static_cast<Eigen::Index>(k); ++j) {
      for (Eigen::Index m = 1; m <= static_cast<Eigen::Index>(n); ++m) {
        esp_(j, m) = esp_(j, m - 1) + eigenvalues_(m - 1) * esp_(j - 1, m - 1);
      }
    }
  }

  std::size_t k() const noexcept { return k_; }
  std::size_t rank() const noexcept { return rank_; }
  /// Eigenvalues divided by the largest, thresholded.
  const Eigen::VectorXd& eigenvalues() const noexcept { return eigenvalues_; }
  const Eigen::MatrixXd& eigenvectors() const noexcept { return eigenvectors_; }
  /// esp(j, m) = e_j(lambda_1 .. lambda_m).
  const Eigen::MatrixXd& esp() const noexcept { return esp_; }

  SubsetIndex sample(Rng& rng) const {
    const auto n = eigenvalues_.size();
    // Pick k eigenvectors.
    std::vector<Eigen::Index> picked;
    std::size_t remaining = k_;
    for (Eigen::Index m = n; m >= 1 && remaining > 0; --m) {
      const auto l = static_cast<Eigen::Index>(remaining);
      const double p =
          eigenvalues_(m - 1) * esp_(l - 1, m - 1) / esp_(l, m);
      if (uniform01(rng) < p) {
        picked.push_back(m - 1);
        --remaining;
      }
    }
    // Sample items from the elementary DPP spanned by the picked vectors.
    Eigen::MatrixXd basis(n, static_cast<Eigen::Index>(picked.size()));
    for (std::size_t c = 0; c < picked.size(); ++c) {
      basis.col(static_cast<Eigen::Index>(c)) = eigenvectors_.col(picked[c]);
    }
    std::vector<std::size_t> items;
    while (basis.cols() > 0) {
      Eigen::VectorXd weight = basis.rowwise().squaredNorm();
      const double total = weight.sum();
      double u = uniform01(rng) * total;
      Eigen::Index item = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (weight(i) <= 0.0) continue;
        if (u < weight(i)) {
          item = i;
          break;
        }
        u -= weight(i);
        item = i;
      }
      items.push_back(static_cast<std::size_t>(item));

      // Project the basis onto the subspace orthogonal to e_item.
      Eigen::Index pivot_col = 0;
      basis.row(item).cwiseAbs().maxCoeff(&pivot_col);
      const Eigen::VectorXd pivot = basis.col(pivot_col);
      const double pivot_value = pivot(item);
      Eigen::MatrixXd next(n, basis.cols() - 1);
      for (Eigen::Index c = 0, out_c = 0; c < basis.cols(); ++c) {
        if (c == pivot_col) continue;
        next.col(out_c++) =
            basis.col(c) - pivot * (basis(item, c) / pivot_value);
      }
      // Modified Gram-Schmidt.
      for (Eigen::Index c = 0; c < next.cols(); ++c) {
        for (Eigen::Index p = 0; p < c; ++p) {
          next.col(c) -= next.col(p).dot(next.col(c)) * next.col(p);
        }
        const double norm = next.col(c).norm();
        if (norm > 0.0) next.col(c) /= norm;
      }
      basis = std::move(next);
    }
    return SubsetIndex(std::move(items));
  }

  SubsetIndex sample(std::uint64_t seed) const {
    Rng rng(seed);
    return sample(rng);
  }

 private:
  std::size_t k_;
  std::size_t rank_ = 0;
  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXd eigenvectors_;
  Eigen::MatrixXd esp_;
};

inline SubsetIndex kdpp_sample(const Eigen::MatrixXd& kernel, std::size_t k,
                               std::uint64_t seed) {
  return KdppSampler(kernel, k).sample(seed);
}

/// Orders exemplars by ascending relevance (ties by position), so the most
/// similar exemplar sits last, next to the query.
inline std::vector<std::size_t> order_exemplars(
    std::vector<std::size_t> selected, const Eigen::VectorXd& relevance) {
  for (auto p : selected) {
    if (p >= static_cast<std::size_t>(relevance.size())) {
      throw invalid_argument("selected position out of range");
    }
  }
  std::sort(selected.begin(), selected.end(),
            [&](std::size_t a, std::size_t b) {
              const double ra = relevance(static_cast<Eigen::Index>(a));
              const double rb = relevance(static_cast<Eigen::Index>(b));
              if (ra != rb) return ra < rb;
              return a < b;
            });
  return selected;
}

}  // namespace dppsel
