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
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "dppsel/corpus.hpp"
#include "dppsel/error.hpp"
#include "dppsel/random.hpp"

namespace dppsel {

/// Retrieved candidates for one query, best first. `scores` is aligned with
/// `positions`; empty for random pools.
struct CandidatePool {
  std::string query_id;
  std::vector<std::size_t> positions;
  std::vector<double> scores;

  std::size_t size() const noexcept { return positions.size(); }
};

namespace detail {

inline std::size_t available_rows(std::size_t total,
                                  std::optional<std::size_t> exclude) {
  return (exclude && *exclude < total) ? total - 1 : total;
}

inline void check_k(std::size_t k, std::size_t available) {
  if (k == 0) throw invalid_argument("k must be positive");
  if (k > available) {
    throw invalid_argument("k = " + std::to_string(k) + " exceeds the " +
                           std::to_string(available) + " available rows");
  }
}

/// Top-k over a dense score array: score descending, position ascending.
inline CandidatePool top_k_by_score(const std::vector<double>& scores,
                                    std::size_t k,
                                    std::optional<std::size_t> exclude) {
  std::vector<std::size_t> order;
  order.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!exclude || i != *exclude) order.push_back(i);
  }
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(k),
                    order.end(), better);
  CandidatePool pool;
  pool.positions.assign(order.begin(), order.begin() + static_cast<long>(k));
  pool.scores.reserve(k);
  for (auto p : pool.positions) pool.scores.push_back(scores[p]);
  return pool;
}

}  // namespace detail

/// Lowercases ASCII and splits on runs of non-alphanumeric ASCII. Bytes >= 0x80
/// count as word characters so UTF-8 words stay intact.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char ch : text) {
    const bool word = (ch >= '0' && ch <= '9') || (ch >= 'a' && ch <= 'z') ||
                      (ch >= 'A' && ch <= 'Z') || ch >= 0x80;
    if (word) {
      cur.push_back(static_cast<char>((ch >= 'A' && ch <= 'Z') ? ch + 32 : ch));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

/// Okapi BM25 over the corpus input texts.
///
/// idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)), which stays positive so a
/// document sharing no term with the query always scores exactly 0 and ranks
/// below every matching document.
class Bm25Index {
 public:
  struct Posting {
    std::size_t doc;
    std::size_t tf;
  };

  static constexpr double kDefaultK1 = 1.2;
  static constexpr double kDefaultB = 0.75;

  explicit Bm25Index(const Corpus& corpus, double k1 = kDefaultK1,
                     double b = kDefaultB)
      : k1_(k1), b_(b) {
    doc_lengths_.reserve(corpus.size());
    std::size_t total = 0;
    for (std::size_t d = 0; d < corpus.size(); ++d) {
      auto tokens = tokenize(corpus[d].input_text);
      doc_lengths_.push_back(tokens.size());
      total += tokens.size();
      std::unordered_map<std::string, std::size_t> tf;
      for (auto& t : tokens) ++tf[t];
      for (auto& [term, count] : tf) postings_[term].push_back({d, count});
    }
    avg_len_ = corpus.empty() ? 0.0
                              : static_cast<double>(total) /
                                    static_cast<double>(corpus.size());
  }

  std::size_t num_docs() const noexcept { return doc_lengths_.size(); }
  std::size_t vocabulary_size() const noexcept { return postings_.size(); }
  double avg_len() const noexcept { return avg_len_; }
  double k1() const noexcept { return k1_; }
  double b() const noexcept { return b_; }

  std::size_t doc_frequency(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
  }

  double idf(const std::string& term) const {
    const double n = static_cast<double>(num_docs());
    const double df = static_cast<double>(doc_frequency(term));
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
  }

  /// Dense score vector over all documents. Repeated query terms count
  /// repeatedly. Throws if the query has no tokens.
  std::vector<double> score_all(std::string_view query) const {
    auto terms = tokenize(query);
    if (terms.empty()) throw invalid_argument("query is empty after tokenization");
    std::vector<double> scores(num_docs(), 0.0);
    for (const auto& term : terms) {
      auto it = postings_.find(term);
      if (it == postings_.end()) continue;
      const double w = idf(term);
      for (const auto& p : it->second) {
        const double tf = static_cast<double>(p.tf);
        const double norm =
            k1_ * (1.0 - b_ + b_ * static_cast<double>(doc_lengths_[p.doc]) /
                                  avg_len_);
        scores[p.doc] += w * tf * (k1_ + 1.0) / (tf + norm);
      }
    }
    return scores;
  }

 private:
  double k1_;
  double b_;
  double avg_len_ = 0.0;
  std::vector<std::size_t> doc_lengths_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
};

inline CandidatePool bm25_topk(const Bm25Index& index, std::string_view query,
                               std::size_t k,
                               std::optional<std::size_t> exclude = {}) {
  detail::check_k(k, detail::available_rows(index.num_docs(), exclude));
  return detail::top_k_by_score(index.score_all(query), k, exclude);
}

/// Exhaustive inner-product scan over the rows of `embeddings`.
inline CandidatePool dense_topk(const Eigen::MatrixXd& embeddings,
                                const Eigen::VectorXd& query_vec,
                                std::size_t k,
                                std::optional<std::size_t> exclude = {}) {
  if (query_vec.size() != embeddings.cols()) {
    throw invalid_argument("query dim " + std::to_string(query_vec.size()) +
                           " != embedding dim " +
                           std::to_string(embeddings.cols()));
  }
  const auto rows = static_cast<std::size_t>(embeddings.rows());
  detail::check_k(k, detail::available_rows(rows, exclude));
  Eigen::VectorXd s = embeddings * query_vec;
  std::vector<double> scores(s.data(), s.data() + s.size());
  return detail::top_k_by_score(scores, k, exclude);
}

inline CandidatePool dense_topk(const EmbeddingMatrix& embeddings,
                                const Eigen::VectorXd& query_vec,
                                std::size_t k,
                                std::optional<std::size_t> exclude = {}) {
  return dense_topk(embeddings.data, query_vec, k, exclude);
}

/// k distinct positions drawn uniformly without replacement.
inline CandidatePool random_pool(std::size_t corpus_size, std::size_t k,
                                 std::uint64_t seed,
                                 std::optional<std::size_t> exclude = {}) {
  detail::check_k(k, detail::available_rows(corpus_size, exclude));
  std::vector<std::size_t> items;
  items.reserve(corpus_size);
  for (std::size_t i = 0; i < corpus_size; ++i) {
    if (!exclude || i != *exclude) items.push_back(i);
  }
  Rng rng(seed);
  // Partial Fisher-Yates: the first k slots end up a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(items[i], items[i + uniform_index(rng, items.size() - i)]);
  }
  CandidatePool pool;
  pool.positions.assign(items.begin(), items.begin() + static_cast<long>(k));
  return pool;
}

}  // namespace dppsel
