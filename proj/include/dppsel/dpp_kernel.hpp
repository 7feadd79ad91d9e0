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

// Kernels for a relevance-conditioned DPP.
//
// The base kernel L is the Gram matrix of L2-normalized item embeddings, so
// L_ii = 1. Given relevance r and trade-off lambda the conditioned kernel is
//
//   L'_ij = exp(r_i / 2 lambda) * L_ij * exp(r_j / 2 lambda),
//
// hence log det(L'_S) = (1/lambda) sum_{i in S} r_i + log det(L_S).
//
// Factorizations judge each pivot relative to its diagonal entry, so a
// restriction of L' is singular exactly when the matching restriction of L is.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "dppsel/error.hpp"

namespace dppsel {

// Cholesky pivots are judged relative to the item's diagonal. Residuals in
// [kNegativePivot, kSingularPivot] are rounding noise around zero and mark the
// restriction singular; anything below is a genuinely indefinite kernel.
inline constexpr double kSingularPivot = 1e-12;
inline constexpr double kNegativePivot = -1e-8;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr std::size_t kMaxExactNormalization = 20;

/// Pool positions of a subset, strictly increasing.
class SubsetIndex {
 public:
  SubsetIndex() = default;

  /// Sorts `members`; throws on repeats.
  explicit SubsetIndex(std::vector<std::size_t> members)
      : members_(std::move(members)) {
    std::sort(members_.begin(), members_.end());
    if (std::adjacent_find(members_.begin(), members_.end()) != members_.end()) {
      throw invalid_argument("subset has repeated members");
    }
  }

  SubsetIndex(std::initializer_list<std::size_t> members)
      : SubsetIndex(std::vector<std::size_t>(members)) {}

  const std::vector<std::size_t>& members() const noexcept { return members_; }
  std::size_t size() const noexcept { return members_.size(); }
  bool empty() const noexcept { return members_.empty(); }
  std::size_t operator[](std::size_t i) const { return members_[i]; }
  auto begin() const { return members_.begin(); }
  auto end() const { return members_.end(); }

  friend bool operator==(const SubsetIndex&, const SubsetIndex&) = default;
  friend auto operator<=>(const SubsetIndex&, const SubsetIndex&) = default;

 private:
  std::vector<std::size_t> members_;
};

inline Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& matrix) {
  Eigen::MatrixXd out = matrix;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw invalid_argument("row " + std::to_string(i) +
                             " has zero or non-finite norm");
    }
    out.row(i) /= norm;
  }
  return out;
}

inline Eigen::VectorXd normalize_vector(const Eigen::VectorXd& v) {
  const double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw invalid_argument("vector has zero or non-finite norm");
  }
  return v / norm;
}

/// Gram matrix of the (unit-norm) rows, symmetrized exactly. The diagonal is
/// pinned to 1 so that rounding in the row norms cannot decide greedy ties.
inline Eigen::MatrixXd build_base_kernel(const Eigen::MatrixXd& pool_embeddings) {
  Eigen::MatrixXd gram = pool_embeddings * pool_embeddings.transpose();
  Eigen::MatrixXd out = 0.5 * (gram + gram.transpose());
  out.diagonal().setOnes();
  return out;
}

/// r_i = <query, row_i>, clamped to [-1, 1] against rounding.
inline Eigen::VectorXd relevance_scores(const Eigen::VectorXd& query_vec,
                                        const Eigen::MatrixXd& pool_embeddings) {
  if (query_vec.size() != pool_embeddings.cols()) {
    throw invalid_argument("query dim " + std::to_string(query_vec.size()) +
                           " != pool dim " +
                           std::to_string(pool_embeddings.cols()));
  }
  Eigen::VectorXd r = pool_embeddings * query_vec;
  return r.cwiseMax(-1.0).cwiseMin(1.0);
}

struct ConditionalKernel {
  Eigen::MatrixXd base;         // L
  Eigen::VectorXd relevance;    // r
  double lambda = 1.0;
  Eigen::MatrixXd conditioned;  // L'

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(base.rows());
  }

  /// r_i / lambda, the per-item log-weight added by conditioning.
  double relevance_weight(std::size_t i) const {
    return std::isinf(lambda) ? 0.0
                              : relevance(static_cast<Eigen::Index>(i)) / lambda;
  }
};

/// lambda may be +infinity, which leaves L unchanged.
inline ConditionalKernel condition_kernel(Eigen::MatrixXd base,
                                          Eigen::VectorXd relevance,
                                          double lambda) {
  if (!(lambda > 0.0)) {
    throw invalid_argument("lambda must be positive, got " +
                           std::to_string(lambda));
  }
  if (base.rows() != base.cols() || base.rows() != relevance.size()) {
    throw invalid_argument("kernel is " + std::to_string(base.rows()) + "x" +
                           std::to_string(base.cols()) +
                           " but relevance has length " +
                           std::to_string(relevance.size()));
  }
  if (base.size() > 0 && (base - base.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
    throw invalid_argument("base kernel is not symmetric");
  }
  if (relevance.size() > 0 && relevance.cwiseAbs().maxCoeff() > 1.0 + 1e-12) {
    throw invalid_argument("relevance scores must lie in [-1, 1]");
  }
  ConditionalKernel k;
  k.lambda = lambda;
  Eigen::VectorXd scale = std::isinf(lambda)
                              ? Eigen::VectorXd::Ones(relevance.size())
                              : Eigen::VectorXd((relevance / (2.0 * lambda))
                                                    .array()
                                                    .exp());
  k.conditioned = scale.asDiagonal() * base * scale.asDiagonal();
  k.base = std::move(base);
  k.relevance = std::move(relevance);
  return k;
}

namespace detail {

/// log det of kernel restricted to `order` (factored in that order). Returns kNegInf when a pivot is numerically zero.
inline double logdet_ordered(const Eigen::MatrixXd& kernel,
                             std::span<const std::size_t> order) {
  const auto k = static_cast<Eigen::Index>(order.size());
  const auto n = static_cast<std::size_t>(kernel.rows());
  Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(k, k);
  double logdet = 0.0;
  bool singular = false;
  for (Eigen::Index i = 0; i < k; ++i) {
    const std::size_t pi = order[static_cast<std::size_t>(i)];
    if (pi >= n) throw invalid_argument("subset member out of range");
    const auto ii = static_cast<Eigen::Index>(pi);
    for (Eigen::Index j = 0; j < i; ++j) {
      const auto jj = static_cast<Eigen::Index>(order[static_cast<std::size_t>(j)]);
      double s = kernel(ii, jj);
      for (Eigen::Index t = 0; t < j; ++t) s -= chol(i, t) * chol(j, t);
      chol(i, j) = s / chol(j, j);
    }
    const double diag = kernel(ii, ii);
    const double scale = diag > 0.0 ? diag : 1.0;
    double pivot = diag;
    for (Eigen::Index t = 0; t < i; ++t) pivot -= chol(i, t) * chol(i, t);
    const double rel = pivot / scale;
    if (rel < kNegativePivot) {
      throw numeric_error("indefinite restriction: pivot " +
                          std::to_string(rel) + " at member " +
                          std::to_string(pi));
    }
    if (rel <= kSingularPivot) {
      // Keep scanning so a later indefinite pivot still raises.
      singular = true;
      chol(i, i) = std::sqrt(std::max(pivot, scale * kSingularPivot));
      continue;
    }
    chol(i, i) = std::sqrt(pivot);
    logdet += std::log(pivot);
  }
  return singular ? kNegInf : logdet;
}

}  // namespace detail

/// log det(kernel_S) through Cholesky; kNegInf if the restriction is singular.
inline double logdet_subset(const Eigen::MatrixXd& kernel,
                            const SubsetIndex& subset) {
  if (subset.empty()) throw invalid_argument("logdet of an empty subset");
  return detail::logdet_ordered(kernel, subset.members());
}

/// Unnormalized log-probability of S under the conditioned kernel.
inline double set_score(const ConditionalKernel& kernel,
                        const SubsetIndex& subset) {
  return logdet_subset(kernel.conditioned, subset);
}

/// det(kernel_S) / det(kernel + I) by direct determinants. Exact
/// normalization is only offered for n <= 20.
inline double dpp_prob_normalized(const Eigen::MatrixXd& kernel,
                                  const SubsetIndex& subset) {
  const auto n = static_cast<std::size_t>(kernel.rows());
  if (n > kMaxExactNormalization) {
    throw capability_error(
        "exact DPP normalization is limited to n <= 20 (got n = " +
        std::to_string(n) + "); compare unnormalized set scores instead");
  }
  double numer = 1.0;
  if (!subset.empty()) {
    const auto k = static_cast<Eigen::Index>(subset.size());
    Eigen::MatrixXd restricted(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index b = 0; b < k; ++b) {
        const auto ia = subset[static_cast<std::size_t>(a)];
        const auto ib = subset[static_cast<std::size_t>(b)];
        if (ia >= n || ib >= n) throw invalid_argument("subset member out of range");
        restricted(a, b) = kernel(static_cast<Eigen::Index>(ia),
                                  static_cast<Eigen::Index>(ib));
      }
    }
    numer = restricted.determinant();
  }
  const Eigen::MatrixXd shifted =
      kernel + Eigen::MatrixXd::Identity(kernel.rows(), kernel.cols());
  return numer / shifted.determinant();
}

/// Rows of `matrix` picked by `positions`, in order.
inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& matrix,
                                   std::span<const std::size_t> positions) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(positions.size()), matrix.cols());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        matrix.row(static_cast<Eigen::Index>(positions[i]));
  }
  return out;
}

/// Builds the conditioned kernel for a pool from unit-norm features.
inline ConditionalKernel pool_kernel(const Eigen::MatrixXd& pool_features,
                                     const Eigen::VectorXd& query_feature,
                                     double lambda) {
  return condition_kernel(build_base_kernel(pool_features),
                          relevance_scores(query_feature, pool_features),
                          lambda);
}

}  // namespace dppsel
