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

// Latency comparison of plain top-K retrieval against pool retrieval plus
// greedy DPP MAP.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dppsel/corpus.hpp"
#include "dppsel/dpp_kernel.hpp"
#include "dppsel/inference.hpp"
#include "dppsel/pipeline.hpp"
#include "dppsel/retrieval.hpp"

namespace dppsel {

namespace detail {

inline double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace detail

struct BenchRow {
  std::size_t n = 0;
  std::size_t k = 0;
  double topk_ms = 0.0;
  double dpp_ms = 0.0;   // pool retrieval plus MAP
  double map_ms = 0.0;   // kernel construction and greedy MAP alone
  std::vector<std::size_t> rank_buckets;  // picks per bucket of kBenchBuckets
};

inline constexpr std::size_t kBenchBuckets[] = {50, 100, 200, 400, 800};

/// Mean per-query wall time of plain top-K and of pool retrieval plus DPP MAP
/// for each pool size, over the query set (corpus rows when no queries).
inline std::vector<BenchRow> run_bench(const Corpus& corpus, const Eigen::MatrixXd& features,
                                       const Eigen::MatrixXd& query_features,
                                       const std::vector<std::optional<std::size_t>>& exclude,
                                       std::span<const std::size_t> n_grid, std::size_t k,
                                       double lambda, int repeats = 1) {
  EmbeddingSpace space(ProjectionModel::identity(features.cols(), features.cols()), features);
  std::vector<BenchRow> rows;
  const auto nq = static_cast<std::size_t>(query_features.rows());
  if (nq == 0) throw invalid_argument("bench needs at least one query");
  for (std::size_t n : n_grid) {
    if (n == 0 || n >= corpus.size()) {
      throw invalid_argument("bench pool size " + std::to_string(n) +
                             " must be in [1, corpus size)");
    }
    BenchRow row;
    row.n = n;
    row.k = std::min(k, n);
    row.rank_buckets.assign(std::size(kBenchBuckets) + 1, 0);
    for (int rep = 0; rep < repeats; ++rep) {
      for (std::size_t qi = 0; qi < nq; ++qi) {
        const Eigen::VectorXd qv =
            space.query(query_features.row(static_cast<Eigen::Index>(qi)));
        auto t0 = std::chrono::steady_clock::now();
        [[maybe_unused]] const auto top = dense_topk(space.examples(), qv, row.k, exclude[qi]);
        row.topk_ms += detail::ms_since(t0);

        t0 = std::chrono::steady_clock::now();
        auto pool = dense_topk(space.examples(), qv, n, exclude[qi]);
        const auto t1 = std::chrono::steady_clock::now();
        auto kernel = pool_kernel(gather_rows(space.examples(), pool.positions), qv, lambda);
        auto greedy = greedy_map_fast(kernel, row.k);
        row.map_ms += detail::ms_since(t1);
        row.dpp_ms += detail::ms_since(t0);
        if (rep == 0) {
          for (auto p : greedy.positions) {
            std::size_t b = 0;
            while (b < std::size(kBenchBuckets) && p >= kBenchBuckets[b]) ++b;
            ++row.rank_buckets[b];
          }
        }
      }
    }
    const double denom = static_cast<double>(nq) * repeats;
    row.topk_ms /= denom;
    row.dpp_ms /= denom;
    row.map_ms /= denom;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "n,k,topk_ms_per_query,dpp_ms_per_query,map_ms_per_query,ratio";
  std::size_t lo = 0;
  for (auto hi : kBenchBuckets) {
    out << ",picks_rank_" << lo << "_" << hi - 1;
    lo = hi;
  }
  out << ",picks_rank_" << lo << "_up\n";
  out << std::setprecision(6);
  for (const auto& r : rows) {
    out << r.n << ',' << r.k << ',' << r.topk_ms << ',' << r.dpp_ms << ',' << r.map_ms << ','
        << (r.topk_ms > 0 ? r.dpp_ms / r.topk_ms : 0.0);
    for (auto c : r.rank_buckets) out << ',' << c;
    out << '\n';
  }
  return out.str();
}

}  // namespace dppsel
