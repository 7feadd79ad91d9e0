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

// A synthetic exemplar-selection task with a known quality oracle.
//
// Every record carries 1..max_attributes of T latent attributes. Its base
// feature vector concatenates
//   - attribute indicators, each scaled by a per-attribute weight,
//   - a one-hot "style" cluster unrelated to the attributes,
//   - isotropic noise.
// Raw cosine similarity is therefore partly driven by style, which the mock
// oracle ignores; a trained projection can learn to discount it.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dppsel/corpus.hpp"
#include "dppsel/random.hpp"
#include "dppsel/scoring.hpp"

namespace dppsel {

struct SyntheticConfig {
  std::size_t corpus_size = 500;
  std::size_t query_count = 100;
  int universe = MockWorld::kDefaultUniverse;  // T
  int max_attributes = 4;
  int style_clusters = 8;
  double style_strength = 1.5;
  int noise_dims = 16;
  double noise_scale = 0.5;
  std::uint64_t seed = 0;
};

struct SyntheticTask {
  Corpus corpus;
  EmbeddingMatrix features;        // corpus-aligned base features
  Corpus queries;                  // held out from the corpus
  EmbeddingMatrix query_features;
  MockWorld world;                 // attributes for corpus and queries
};

inline SyntheticTask make_synthetic_task(const SyntheticConfig& cfg) {
  if (cfg.universe <= 0 || cfg.max_attributes <= 0 ||
      cfg.max_attributes > cfg.universe || cfg.style_clusters <= 0) {
    throw invalid_argument("bad synthetic task configuration");
  }
  Rng rng(cfg.seed);
  const int t = cfg.universe;
  const Eigen::Index dim = t + cfg.style_clusters + cfg.noise_dims;

  std::vector<double> attr_weight(static_cast<std::size_t>(t));
  for (auto& w : attr_weight) w = 0.5 + uniform01(rng);

  SyntheticTask task;
  task.world.universe = t;

  auto make_records = [&](std::size_t count, const std::string& prefix,
                          EmbeddingMatrix& feats) {
    std::vector<ExampleRecord> records;
    feats.ids.clear();
    feats.data = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(count), dim);
    for (std::size_t i = 0; i < count; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const std::string id = prefix + std::to_string(i);
      const int n_attr =
          1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.max_attributes)));
      std::vector<int> all(static_cast<std::size_t>(t));
      for (int a = 0; a < t; ++a) all[static_cast<std::size_t>(a)] = a;
      for (int a = 0; a < n_attr; ++a) {
        std::swap(all[static_cast<std::size_t>(a)],
                  all[static_cast<std::size_t>(a) +
                      uniform_index(rng, static_cast<std::uint64_t>(t - a))]);
      }
      std::vector<int> attrs(all.begin(), all.begin() + n_attr);
      const int style = static_cast<int>(
          uniform_index(rng, static_cast<std::uint64_t>(cfg.style_clusters)));

      std::string text;
      for (int a : attrs) {
        feats.data(row, a) = attr_weight[static_cast<std::size_t>(a)];
        text += "attr" + std::to_string(a) + " ";
      }
      feats.data(row, t + style) = cfg.style_strength;
      text += "style" + std::to_string(style);
      for (int z = 0; z < cfg.noise_dims; ++z) {
        feats.data(row, t + cfg.style_clusters + z) = cfg.noise_scale * standard_normal(rng);
      }
      task.world.set_attributes(id, attrs);
      feats.ids.push_back(id);
      records.push_back({id, text, "answer-" + id});
    }
    return Corpus(std::move(records));
  };

  task.corpus = make_records(cfg.corpus_size, "ex", task.features);
  task.queries = make_records(cfg.query_count, "q", task.query_features);
  return task;
}

}  // namespace dppsel
