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

// Query-time exemplar selection shared by the CLI and the evaluation harness.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "dppsel/corpus.hpp"
#include "dppsel/dpp_kernel.hpp"
#include "dppsel/error.hpp"
#include "dppsel/inference.hpp"
#include "dppsel/retrieval.hpp"
#include "dppsel/training.hpp"

namespace dppsel {

enum class Method { kRandom, kBm25, kTopK, kDppUntrained, kDppTrained };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::kRandom: return "random";
    case Method::kBm25: return "bm25";
    case Method::kTopK: return "topk";
    case Method::kDppUntrained: return "dpp_untrained";
    case Method::kDppTrained: return "dpp_trained";
  }
  return "?";
}

inline Method parse_method(std::string_view name) {
  for (auto m : {Method::kRandom, Method::kBm25, Method::kTopK,
                 Method::kDppUntrained, Method::kDppTrained}) {
    if (method_name(m) == name) return m;
  }
  if (name == "dpp") return Method::kDppTrained;
  throw invalid_argument("unknown method \"" + std::string(name) +
                         "\" (expected random, bm25, topk, dpp_untrained, dpp_trained)");
}

/// One embedding space: a projection model applied to the base features.
class EmbeddingSpace {
 public:
  EmbeddingSpace(ProjectionModel model, const Eigen::MatrixXd& base_features)
      : model_(std::move(model)),
        examples_(model_.embed_examples(base_features)) {}

  const ProjectionModel& model() const noexcept { return model_; }
  /// Unit example embeddings, corpus-aligned.
  const Eigen::MatrixXd& examples() const noexcept { return examples_; }
  Eigen::VectorXd query(const Eigen::VectorXd& base_feature) const {
    return model_.embed_query(base_feature);
  }

 private:
  ProjectionModel model_;
  Eigen::MatrixXd examples_;
};

struct SelectionQuery {
  Eigen::VectorXd feature;              // base features of the query
  std::string text;                     // input text, for BM25
  std::optional<std::size_t> exclude;   // corpus position to leave out
  std::uint64_t seed = 0;               // random baseline only
};

struct Selection {
  std::vector<std::size_t> picked;   // corpus positions in selection order
  std::vector<std::size_t> ordered;  // prompt order: ascending relevance
  Eigen::VectorXd relevance;         // per picked item, in the method's space
  bool early_stopped = false;
};

struct SelectorOptions {
  std::size_t pool_size = 100;   // n
  std::size_t num_exemplars = 50;  // K
  double lambda_untrained = 0.1;
  double lambda_trained = 0.1;
};

/// Holds the embedding spaces a method needs and runs selection for queries.
/// Immutable after construction; select() is reentrant.
class Selector {
 public:
  Selector(const Corpus& corpus, const Eigen::MatrixXd& base_features,
           SelectorOptions options, std::optional<ProjectionModel> trained = {})
      : corpus_(corpus),
        options_(options),
        untrained_(ProjectionModel::identity(base_features.cols(), base_features.cols()),
                   base_features),
        bm25_(corpus) {
    if (static_cast<std::size_t>(base_features.rows()) != corpus.size()) {
      throw invalid_argument("base features are not aligned with the corpus");
    }
    if (options_.num_exemplars == 0 || options_.pool_size == 0) {
      throw invalid_argument("pool size and exemplar count must be positive");
    }
    if (options_.num_exemplars > options_.pool_size) {
      throw invalid_argument("K = " + std::to_string(options_.num_exemplars) +
                             " exceeds the pool size n = " +
                             std::to_string(options_.pool_size));
    }
    if (trained) trained_.emplace(std::move(*trained), base_features);
  }

  const SelectorOptions& options() const noexcept { return options_; }
  bool has_trained() const noexcept { return trained_.has_value(); }
  const EmbeddingSpace& untrained() const noexcept { return untrained_; }

  const EmbeddingSpace& space_for(Method m) const {
    if (m == Method::kDppTrained) {
      if (!trained_) throw not_found("method dpp_trained needs a trained model");
      return *trained_;
    }
    return untrained_;
  }

  Selection select(Method method, const SelectionQuery& q) const {
    const std::size_t k = options_.num_exemplars;
    const EmbeddingSpace& space = space_for(method);
    const Eigen::VectorXd qv = space.query(q.feature);
    Selection sel;
    switch (method) {
      case Method::kRandom:
        sel.picked = random_pool(corpus_.size(), k, q.seed, q.exclude).positions;
        break;
      case Method::kBm25:
        sel.picked = bm25_topk(bm25_, q.text, k, q.exclude).positions;
        break;
      case Method::kTopK:
        sel.picked = dense_topk(space.examples(), qv, k, q.exclude).positions;
        break;
      case Method::kDppUntrained:
      case Method::kDppTrained: {
        const double lambda = method == Method::kDppTrained
                                  ? options_.lambda_trained
                                  : options_.lambda_untrained;
        auto pool = dense_topk(space.examples(), qv, options_.pool_size, q.exclude);
        auto kernel = pool_kernel(gather_rows(space.examples(), pool.positions), qv,
                                  lambda);
        auto greedy = greedy_map_fast(kernel, std::min(k, pool.size()));
        sel.early_stopped = greedy.early_stopped;
        for (auto p : greedy.positions) sel.picked.push_back(pool.positions[p]);
        break;
      }
    }
    Eigen::VectorXd all_rel = gather_rows(space.examples(), sel.picked) * qv;
    sel.relevance = all_rel;
    std::vector<std::size_t> local(sel.picked.size());
    std::iota(local.begin(), local.end(), std::size_t{0});
    // Ascending relevance; equal relevance falls back to corpus position.
    std::sort(local.begin(), local.end(), [&](std::size_t a, std::size_t b) {
      const double ra = all_rel(static_cast<Eigen::Index>(a));
      const double rb = all_rel(static_cast<Eigen::Index>(b));
      if (ra != rb) return ra < rb;
      return sel.picked[a] < sel.picked[b];
    });
    for (auto i : local) sel.ordered.push_back(sel.picked[i]);
    return sel;
  }

  /// 0-based rank of each picked item in the method's full relevance order
  /// (exclusion respected; ties by position).
  std::vector<std::size_t> selection_ranks(Method method, const SelectionQuery& q,
                                           const Selection& sel) const {
    const EmbeddingSpace& space = space_for(method);
    const Eigen::VectorXd scores = space.examples() * space.query(q.feature);
    std::vector<std::size_t> ranks;
    ranks.reserve(sel.picked.size());
    for (auto p : sel.picked) {
      const double s = scores(static_cast<Eigen::Index>(p));
      std::size_t rank = 0;
      for (Eigen::Index i = 0; i < scores.size(); ++i) {
        const auto pi = static_cast<std::size_t>(i);
        if (q.exclude && pi == *q.exclude) continue;
        if (scores(i) > s || (scores(i) == s && pi < p)) ++rank;
      }
      ranks.push_back(rank);
    }
    return ranks;
  }

 private:
  const Corpus& corpus_;
  SelectorOptions options_;
  EmbeddingSpace untrained_;
  std::optional<EmbeddingSpace> trained_;
  Bm25Index bm25_;
};

}  // namespace dppsel
