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

// Contrastive training of the two projection towers.
//
// A subset S of an anchor's candidate pool is scored by the conditioned DPP
//
//   s(S) = (1/lambda) sum_{i in S} <psi, phi_i> + log det(Phi_S Phi_S^T),
//
// with psi = unit(W_in x) for the anchor and phi_i = unit(W_ex a_i) for the
// candidates. The loss asks the model's order over an anchor's M subsets to
// agree with the oracle's ranks, with a rank-proportional margin.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <json.hpp>

#include "dppsel/binary_io.hpp"
#include "dppsel/corpus.hpp"
#include "dppsel/dpp_kernel.hpp"
#include "dppsel/error.hpp"
#include "dppsel/inference.hpp"
#include "dppsel/random.hpp"
#include "dppsel/retrieval.hpp"
#include "dppsel/scoring.hpp"

namespace dppsel {

// ---------------------------------------------------------------------------
// Training data

struct TrainingInstance {
  std::size_t anchor = 0;                // corpus position of the anchor
  std::vector<std::size_t> pool;         // corpus positions, best first
  std::vector<double> pool_relevance;    // retrieval scores aligned with pool
  std::vector<SubsetIndex> subsets;      // members index into `pool`
  std::vector<double> lm_scores;         // oracle log-likelihoods
  std::vector<int> ranks;                // 1 = best
};

/// Ranks by descending score; ties go to the lower subset index.
inline std::vector<int> ranks_from_scores(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  std::vector<int> ranks(scores.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    ranks[order[r]] = static_cast<int>(r + 1);
  }
  return ranks;
}

enum class SubsetSampling { kUniform, kKdpp };

struct TrainingDataConfig {
  std::size_t pool_size = 100;     // n
  std::size_t num_subsets = 50;    // M, including the top-K subset
  std::size_t subset_size = 16;    // K
  std::uint64_t seed = 0;
  bool exclude_self = true;
  SubsetSampling sampling = SubsetSampling::kUniform;
  double kdpp_lambda = 0.1;         // for kKdpp sampling
  bool kdpp_conditioned = true;     // false samples from the base kernel
};

namespace detail {

inline ScoreRequest make_score_request(const Corpus& corpus, std::size_t anchor,
                                       std::span<const std::size_t> ordered) {
  ScoreRequest req;
  req.query_id = corpus[anchor].id;
  req.query_input = corpus[anchor].input_text;
  req.target_output = corpus[anchor].output_text;
  for (auto p : ordered) {
    const auto& r = corpus[p];
    req.exemplars.push_back({r.id, r.input_text, r.output_text});
  }
  return req;
}

}  // namespace detail

/// Builds the scoring request for a subset of an instance's pool, exemplars in
/// ascending relevance.
inline ScoreRequest subset_request(const Corpus& corpus,
                                   const TrainingInstance& instance,
                                   const SubsetIndex& subset) {
  Eigen::VectorXd relevance = Eigen::Map<const Eigen::VectorXd>(
      instance.pool_relevance.data(),
      static_cast<Eigen::Index>(instance.pool_relevance.size()));
  auto ordered_pool = order_exemplars(subset.members(), relevance);
  std::vector<std::size_t> positions;
  positions.reserve(ordered_pool.size());
  for (auto p : ordered_pool) positions.push_back(instance.pool[p]);
  return detail::make_score_request(corpus, instance.anchor, positions);
}

/// For each anchor: dense top-n pool (self excluded), subset 0 = the K most
/// relevant pool members, subsets 1..M-1 sampled as distinct K-sets, each
/// scored by the oracle and ranked.
///
/// `features` must be row-normalized and aligned with `corpus`.
inline std::vector<TrainingInstance> construct_training_data(
    const Corpus& corpus, const Eigen::MatrixXd& features,
    std::span<const std::size_t> anchors, const TrainingDataConfig& config,
    SubsetScorer& scorer) {
  const std::size_t n = config.pool_size;
  const std::size_t k = config.subset_size;
  const std::size_t m = config.num_subsets;
  if (static_cast<std::size_t>(features.rows()) != corpus.size()) {
    throw invalid_argument("features are not aligned with the corpus");
  }
  if (m < 2) throw invalid_argument("need at least 2 subsets per anchor");
  if (k == 0 || k > n) throw invalid_argument("subset size must be in [1, n]");
  if (n >= corpus.size()) {
    throw invalid_argument("pool size n = " + std::to_string(n) +
                           " must be smaller than the corpus size " +
                           std::to_string(corpus.size()));
  }
  if (binomial(n, k) < static_cast<double>(m)) {
    throw invalid_argument("only " + std::to_string(binomial(n, k)) +
                           " distinct subsets of size " + std::to_string(k) +
                           " exist in a pool of " + std::to_string(n) +
                           ", fewer than M = " + std::to_string(m));
  }

  std::vector<TrainingInstance> out;
  out.reserve(anchors.size());
  for (std::size_t anchor : anchors) {
    if (anchor >= corpus.size()) throw invalid_argument("anchor out of range");
    const Eigen::VectorXd query = features.row(static_cast<Eigen::Index>(anchor));
    std::optional<std::size_t> exclude;
    if (config.exclude_self) exclude = anchor;
    CandidatePool pool = dense_topk(features, query, n, exclude);

    TrainingInstance inst;
    inst.anchor = anchor;
    inst.pool = pool.positions;
    inst.pool_relevance = pool.scores;

    std::set<std::vector<std::size_t>> seen;
    std::vector<std::size_t> top(k);
    std::iota(top.begin(), top.end(), std::size_t{0});
    seen.insert(top);
    inst.subsets.emplace_back(top);

    Rng rng(derive_seed(config.seed, anchor));
    std::optional<KdppSampler> sampler;
    if (config.sampling == SubsetSampling::kKdpp) {
      const Eigen::MatrixXd pool_features = gather_rows(features, inst.pool);
      auto kernel = config.kdpp_conditioned
                        ? pool_kernel(pool_features, query, config.kdpp_lambda)
                              .conditioned
                        : build_base_kernel(pool_features);
      sampler.emplace(kernel, k);
    }
    std::vector<std::size_t> items(n);
    const std::size_t max_attempts = 1000 * m + 10000;
    std::size_t attempts = 0;
    while (inst.subsets.size() < m) {
      if (++attempts > max_attempts) {
        throw invalid_argument("could not draw " + std::to_string(m) +
                               " distinct subsets for anchor \"" +
                               corpus[anchor].id + "\"");
      }
      std::vector<std::size_t> draw;
      if (sampler) {
        draw = sampler->sample(rng).members();
      } else {
        std::iota(items.begin(), items.end(), std::size_t{0});
        for (std::size_t i = 0; i < k; ++i) {
          std::swap(items[i], items[i + uniform_index(rng, n - i)]);
        }
        draw.assign(items.begin(), items.begin() + static_cast<long>(k));
        std::sort(draw.begin(), draw.end());
      }
      if (seen.insert(draw).second) inst.subsets.emplace_back(std::move(draw));
    }

    inst.lm_scores.reserve(m);
    for (const auto& subset : inst.subsets) {
      try {
        inst.lm_scores.push_back(scorer.score(subset_request(corpus, inst, subset)));
      } catch (const Error& e) {
        throw Error(e.kind(), "scoring anchor \"" + corpus[anchor].id +
                                  "\": " + e.what());
      }
    }
    inst.ranks = ranks_from_scores(inst.lm_scores);
    out.push_back(std::move(inst));
  }
  return out;
}

/// JSON Lines: {"anchor": id, "pool": [ids], "subsets": [[pool indices]],
/// "scores": [floats]}.
inline void write_training_instances(std::ostream& out, const Corpus& corpus,
                                     std::span<const TrainingInstance> instances) {
  for (const auto& inst : instances) {
    std::vector<std::string> pool_ids;
    pool_ids.reserve(inst.pool.size());
    for (auto p : inst.pool) pool_ids.push_back(corpus[p].id);
    std::vector<std::vector<std::size_t>> subsets;
    for (const auto& s : inst.subsets) subsets.push_back(s.members());
    nlohmann::json obj{{"anchor", corpus[inst.anchor].id},
                       {"pool", pool_ids},
                       {"subsets", subsets},
                       {"scores", inst.lm_scores}};
    out << obj.dump() << '\n';
  }
}

inline void write_training_instances(const std::string& path, const Corpus& corpus,
                                     std::span<const TrainingInstance> instances) {
  std::ofstream out(path);
  if (!out) throw not_found("cannot write training instances to " + path);
  write_training_instances(out, corpus, instances);
}

/// Reads instances back; pool relevance is recomputed from `features` when
/// given (row-normalized, corpus-aligned), otherwise left as pool order.
inline std::vector<TrainingInstance> read_training_instances(
    std::istream& in, const std::string& source, const Corpus& corpus,
    const Eigen::MatrixXd* features = nullptr) {
  std::vector<TrainingInstance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = source + ":" + std::to_string(line_no);
    TrainingInstance inst;
    try {
      auto obj = nlohmann::json::parse(line);
      inst.anchor = corpus.require_position(obj.at("anchor").get<std::string>());
      for (const auto& id : obj.at("pool").get<std::vector<std::string>>()) {
        inst.pool.push_back(corpus.require_position(id));
      }
      for (const auto& s : obj.at("subsets").get<std::vector<std::vector<std::size_t>>>()) {
        for (auto idx : s) {
          if (idx >= inst.pool.size()) {
            throw parse_error(where + ": subset index " + std::to_string(idx) +
                              " outside pool");
          }
        }
        inst.subsets.emplace_back(s);
      }
      inst.lm_scores = obj.at("scores").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw parse_error(where + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.kind(), where + ": " + e.what());
    }
    if (inst.lm_scores.size() != inst.subsets.size()) {
      throw parse_error(where + ": scores and subsets differ in length");
    }
    inst.ranks = ranks_from_scores(inst.lm_scores);
    if (features) {
      const Eigen::VectorXd q = features->row(static_cast<Eigen::Index>(inst.anchor));
      for (auto p : inst.pool) {
        inst.pool_relevance.push_back(features->row(static_cast<Eigen::Index>(p)).dot(q));
      }
    } else {
      for (std::size_t i = 0; i < inst.pool.size(); ++i) {
        inst.pool_relevance.push_back(-static_cast<double>(i));
      }
    }
    out.push_back(std::move(inst));
  }
  return out;
}

inline std::vector<TrainingInstance> read_training_instances(
    const std::string& path, const Corpus& corpus,
    const Eigen::MatrixXd* features = nullptr) {
  std::ifstream in(path);
  if (!in) throw not_found("cannot open training instances " + path);
  return read_training_instances(in, path, corpus, features);
}

/// Mean reciprocal rank.
inline double mrr(std::span<const int> ranks) {
  if (ranks.empty()) throw invalid_argument("MRR of an empty rank list");
  double sum = 0.0;
  for (int r : ranks) {
    if (r < 1) throw invalid_argument("ranks must be >= 1");
    sum += 1.0 / static_cast<double>(r);
  }
  return sum / static_cast<double>(ranks.size());
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kMinLossScale = 1e-6;

struct MarginLoss {
  double value = 0.0;
  double scale = 0.0;              // c: score range, floored
  std::vector<double> d_scores;    // dLoss / d score_j with c held fixed
  std::size_t active_pairs = 0;
};

/// Sum over every pair (S+, S-) with rank(S+) < rank(S-) of
///   max{0, (s(S-) - s(S+)) / c + (rank(S-) - rank(S+)) / M}.
/// c = max(s) - min(s) floored at 1e-6 unless `fixed_scale` is given; it is a
/// constant for differentiation. A term exactly at the hinge contributes no
/// gradient.
inline MarginLoss margin_loss_terms(std::span<const double> scores,
                                    std::span<const int> ranks,
                                    std::optional<double> fixed_scale = {}) {
  const std::size_t m = scores.size();
  if (m < 2) throw invalid_argument("margin loss needs at least 2 subsets");
  if (ranks.size() != m) throw invalid_argument("scores and ranks differ in length");
  std::vector<char> seen(m + 1, 0);
  for (int r : ranks) {
    if (r < 1 || static_cast<std::size_t>(r) > m || seen[static_cast<std::size_t>(r)]) {
      throw invalid_argument("ranks must be a permutation of 1..M");
    }
    seen[static_cast<std::size_t>(r)] = 1;
  }
  MarginLoss out;
  if (fixed_scale) {
    out.scale = *fixed_scale;
  } else {
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    out.scale = std::max(*hi - *lo, kMinLossScale);
  }
  out.d_scores.assign(m, 0.0);
  const double gamma = 1.0 / static_cast<double>(m);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m; ++b) {
      if (ranks[a] >= ranks[b]) continue;  // a is the better subset
      const double term = (scores[b] - scores[a]) / out.scale +
                          gamma * static_cast<double>(ranks[b] - ranks[a]);
      if (term > 0.0) {
        out.value += term;
        out.d_scores[b] += 1.0 / out.scale;
        out.d_scores[a] -= 1.0 / out.scale;
        ++out.active_pairs;
      }
    }
  }
  return out;
}

inline double pairwise_margin_loss(std::span<const double> scores,
                                   std::span<const int> ranks) {
  return margin_loss_terms(scores, ranks).value;
}

// ---------------------------------------------------------------------------
// Model

/// Two linear towers, each d_out x d_in: W_in embeds queries, W_ex embeds
/// candidate examples.
struct ProjectionModel {
  Eigen::MatrixXd w_in;
  Eigen::MatrixXd w_ex;

  Eigen::Index d_in() const { return w_in.cols(); }
  Eigen::Index d_out() const { return w_in.rows(); }

  /// Truncated identity in both towers: the untrained model scores with the
  /// first d_out base-feature coordinates.
  static ProjectionModel identity(Eigen::Index d_in, Eigen::Index d_out) {
    if (d_in <= 0 || d_out <= 0 || d_out > d_in) {
      throw invalid_argument("projection needs 0 < d_out <= d_in");
    }
    ProjectionModel m;
    m.w_in = Eigen::MatrixXd::Identity(d_out, d_in);
    m.w_ex = Eigen::MatrixXd::Identity(d_out, d_in);
    return m;
  }

  Eigen::VectorXd embed_query(const Eigen::VectorXd& x) const {
    return normalize_vector(w_in * x);
  }

  /// Rows of `features` projected by the example tower and normalized.
  Eigen::MatrixXd embed_examples(const Eigen::MatrixXd& features) const {
    return normalize_rows(features * w_ex.transpose());
  }
};

struct ModelGradient {
  Eigen::MatrixXd w_in;
  Eigen::MatrixXd w_ex;

  static ModelGradient zeros_like(const ProjectionModel& m) {
    return {Eigen::MatrixXd::Zero(m.w_in.rows(), m.w_in.cols()),
            Eigen::MatrixXd::Zero(m.w_ex.rows(), m.w_ex.cols())};
  }
};

/// Per-instance forward/backward result.
struct InstanceEvaluation {
  bool skipped = false;   // some subset restriction was singular
  double loss = 0.0;
  double scale = 0.0;
  std::vector<double> scores;
};

namespace detail {

struct ProjectedItems {
  Eigen::MatrixXd phi;     // unit rows, one per pool member in use
  Eigen::VectorXd norms;   // |W_ex a| before normalization
  Eigen::VectorXd psi;
  double psi_norm = 0.0;
};

}  // namespace detail

/// Model scores s(S_j) for an instance's subsets under `model` and `lambda`.
/// Entries are kNegInf for singular restrictions.
inline std::vector<double> model_subset_scores(const ProjectionModel& model,
                                               const Eigen::MatrixXd& features,
                                               const TrainingInstance& instance,
                                               double lambda) {
  const Eigen::VectorXd psi =
      model.embed_query(features.row(static_cast<Eigen::Index>(instance.anchor)));
  const Eigen::MatrixXd phi =
      model.embed_examples(gather_rows(features, instance.pool));
  const Eigen::MatrixXd base = phi * phi.transpose();
  const Eigen::VectorXd r = phi * psi;
  std::vector<double> scores;
  scores.reserve(instance.subsets.size());
  for (const auto& s : instance.subsets) {
    double rel = 0.0;
    for (auto i : s) rel += r(static_cast<Eigen::Index>(i));
    scores.push_back(rel / lambda + detail::logdet_ordered(base, s.members()));
  }
  return scores;
}

/// Loss of one instance and, if `grad` is non-null, accumulates
/// `weight * dLoss/dW` into it. `fixed_scale` pins c (used by gradient
/// checks); by default c comes from the current scores.
inline InstanceEvaluation loss_gradient(const ProjectionModel& model,
                                        const Eigen::MatrixXd& features,
                                        const TrainingInstance& instance,
                                        double lambda, ModelGradient* grad,
                                        double weight = 1.0,
                                        std::optional<double> fixed_scale = {}) {
  if (!(lambda > 0.0)) throw invalid_argument("lambda must be positive");
  InstanceEvaluation ev;

  // Only pool members that appear in some subset take part.
  std::vector<std::size_t> used;
  for (const auto& s : instance.subsets) used.insert(used.end(), s.begin(), s.end());
  std::sort(used.begin(), used.end());
  used.erase(std::unique(used.begin(), used.end()), used.end());
  std::vector<Eigen::Index> slot(instance.pool.size(), -1);
  for (std::size_t i = 0; i < used.size(); ++i) {
    slot[used[i]] = static_cast<Eigen::Index>(i);
  }

  const Eigen::VectorXd x = features.row(static_cast<Eigen::Index>(instance.anchor));
  const Eigen::VectorXd u_in = model.w_in * x;
  const double psi_norm = u_in.norm();
  if (!(psi_norm > 0.0)) throw numeric_error("query projection is zero");
  const Eigen::VectorXd psi = u_in / psi_norm;

  const auto nu = static_cast<Eigen::Index>(used.size());
  Eigen::MatrixXd a(nu, features.cols());
  for (Eigen::Index i = 0; i < nu; ++i) {
    a.row(i) = features.row(
        static_cast<Eigen::Index>(instance.pool[used[static_cast<std::size_t>(i)]]));
  }
  Eigen::MatrixXd u_ex = a * model.w_ex.transpose();  // nu x d_out
  Eigen::VectorXd norms = u_ex.rowwise().norm();
  if (nu > 0 && !(norms.minCoeff() > 0.0)) {
    throw numeric_error("an example projection is zero");
  }
  const Eigen::MatrixXd phi = norms.cwiseInverse().asDiagonal() * u_ex;
  const Eigen::MatrixXd base = phi * phi.transpose();
  const Eigen::VectorXd r = phi * psi;

  const std::size_t m = instance.subsets.size();
  ev.scores.resize(m);
  std::vector<std::vector<std::size_t>> local(m);
  for (std::size_t j = 0; j < m; ++j) {
    double rel = 0.0;
    for (auto p : instance.subsets[j]) {
      const auto s = static_cast<std::size_t>(slot[p]);
      local[j].push_back(s);
      rel += r(static_cast<Eigen::Index>(s));
    }
    const double ld = detail::logdet_ordered(base, local[j]);
    if (ld == kNegInf) {
      ev.skipped = true;
      return ev;
    }
    ev.scores[j] = rel / lambda + ld;
  }

  const MarginLoss terms = margin_loss_terms(ev.scores, instance.ranks, fixed_scale);
  ev.loss = terms.value;
  ev.scale = terms.scale;
  if (!grad || terms.active_pairs == 0) return ev;

  // Gradients w.r.t. the unit vectors phi (rows) and psi.
  Eigen::MatrixXd g_phi = Eigen::MatrixXd::Zero(nu, phi.cols());
  Eigen::VectorXd g_psi = Eigen::VectorXd::Zero(psi.size());
  for (std::size_t j = 0; j < m; ++j) {
    const double w = terms.d_scores[j];
    if (w == 0.0) continue;
    const auto& idx = local[j];
    const auto k = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd restricted(k, k);
    Eigen::MatrixXd phi_s(k, phi.cols());
    for (Eigen::Index p = 0; p < k; ++p) {
      const auto ip = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(p)]);
      phi_s.row(p) = phi.row(ip);
      for (Eigen::Index q = 0; q < k; ++q) {
        restricted(p, q) =
            base(ip, static_cast<Eigen::Index>(idx[static_cast<std::size_t>(q)]));
      }
    }
    // d log det(Phi_S Phi_S^T) / d Phi_S = 2 (Phi_S Phi_S^T)^{-1} Phi_S.
    Eigen::LLT<Eigen::MatrixXd> llt(restricted);
    const Eigen::MatrixXd d_phi_s = 2.0 * llt.solve(phi_s);
    for (Eigen::Index p = 0; p < k; ++p) {
      const auto ip = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(p)]);
      g_phi.row(ip) += w * (d_phi_s.row(p) + psi.transpose() / lambda);
      g_psi += (w / lambda) * phi.row(ip).transpose();
    }
  }

  // Back through v -> v / |v| and the linear maps.
  for (Eigen::Index i = 0; i < nu; ++i) {
    const Eigen::RowVectorXd p = phi.row(i);
    const Eigen::RowVectorXd g = g_phi.row(i);
    const Eigen::RowVectorXd g_u = (g - p * p.dot(g)) / norms(i);
    grad->w_ex.noalias() += weight * g_u.transpose() * a.row(i);
  }
  const Eigen::VectorXd g_u_in = (g_psi - psi * psi.dot(g_psi)) / psi_norm;
  grad->w_in.noalias() += weight * g_u_in * x.transpose();
  return ev;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
  std::int64_t step = 0;
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::MatrixXd m_in, v_in, m_ex, v_ex;

  static AdamState for_model(const ProjectionModel& model, double lr) {
    AdamState s;
    s.lr = lr;
    s.m_in = s.v_in = Eigen::MatrixXd::Zero(model.w_in.rows(), model.w_in.cols());
    s.m_ex = s.v_ex = Eigen::MatrixXd::Zero(model.w_ex.rows(), model.w_ex.cols());
    return s;
  }
};

/// One bias-corrected Adam update of both towers.
inline void adam_step(AdamState& state, ProjectionModel& model,
                      const ModelGradient& grad) {
  if (grad.w_in.rows() != model.w_in.rows() || grad.w_in.cols() != model.w_in.cols() ||
      grad.w_ex.rows() != model.w_ex.rows() || grad.w_ex.cols() != model.w_ex.cols() ||
      state.m_in.rows() != model.w_in.rows() || state.m_ex.rows() != model.w_ex.rows()) {
    throw invalid_argument("adam: parameter, gradient and state shapes differ");
  }
  if (!grad.w_in.allFinite()) throw numeric_error("adam: non-finite gradient in W_in");
  if (!grad.w_ex.allFinite()) throw numeric_error("adam: non-finite gradient in W_ex");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto update = [&](Eigen::MatrixXd& w, Eigen::MatrixXd& m, Eigen::MatrixXd& v,
                    const Eigen::MatrixXd& g) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    w.array() -= state.lr * (m.array() / c1) /
                 ((v.array() / c2).sqrt() + state.eps);
  };
  update(model.w_in, state.m_in, state.v_in, grad.w_in);
  update(model.w_ex, state.m_ex, state.v_ex, grad.w_ex);
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  std::vector<double> lambda_grid{0.01, 0.05, 0.1};
  int epochs = 30;
  std::size_t batch_size = 128;
  double lr = 1e-5;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  Eigen::Index d_out = 0;  // 0: same as the feature dimension
};

struct LambdaTrial {
  double lambda = 0.0;
  double validation_loss = 0.0;
  std::vector<double> loss_curve;
};

struct TrainResult {
  ProjectionModel model;
  double lambda = 0.0;
  /// loss_curve[0] is the mean training loss before any update; entry e is
  /// the mean loss observed during epoch e.
  std::vector<double> loss_curve;
  double validation_loss = 0.0;
  std::size_t skipped_instances = 0;
  std::vector<LambdaTrial> trials;

  double initial_loss() const { return loss_curve.front(); }
  double final_loss() const { return loss_curve.back(); }
};

/// Mean loss over `indices`; singular instances are counted in `skipped`.
inline double mean_loss(const ProjectionModel& model, const Eigen::MatrixXd& features,
                        std::span<const TrainingInstance> instances,
                        std::span<const std::size_t> indices, double lambda,
                        std::size_t* skipped = nullptr) {
  double sum = 0.0;
  std::size_t used = 0;
  for (auto i : indices) {
    auto ev = loss_gradient(model, features, instances[i], lambda, nullptr);
    if (ev.skipped) {
      if (skipped) ++*skipped;
      continue;
    }
    sum += ev.loss;
    ++used;
  }
  return used ? sum / static_cast<double>(used) : 0.0;
}

/// Trains one model at a fixed lambda over `train_idx`.
inline TrainResult train_fixed_lambda(const Eigen::MatrixXd& features,
                                      std::span<const TrainingInstance> instances,
                                      std::span<const std::size_t> train_idx,
                                      const TrainConfig& config, double lambda,
                                      const ProjectionModel& init) {
  if (train_idx.empty()) throw invalid_argument("no training instances");
  if (config.batch_size == 0) throw invalid_argument("batch size must be positive");
  TrainResult res;
  res.model = init;
  res.lambda = lambda;
  AdamState adam = AdamState::for_model(res.model, config.lr);
  const double initial = mean_loss(res.model, features, instances, train_idx, lambda);
  res.loss_curve.push_back(initial);

  std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
  Rng rng(derive_seed(config.seed, 0x7472616996ull));
  int over_budget = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, rng);
    double epoch_sum = 0.0;
    std::size_t epoch_used = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      ModelGradient grad = ModelGradient::zeros_like(res.model);
      std::size_t used = 0;
      for (std::size_t b = start; b < stop; ++b) {
        auto ev = loss_gradient(res.model, features, instances[order[b]], lambda, &grad);
        if (ev.skipped) {
          ++res.skipped_instances;
          continue;
        }
        epoch_sum += ev.loss;
        ++used;
      }
      if (used == 0) continue;
      grad.w_in /= static_cast<double>(used);
      grad.w_ex /= static_cast<double>(used);
      epoch_used += used;
      adam_step(adam, res.model, grad);
    }
    const double epoch_mean =
        epoch_used ? epoch_sum / static_cast<double>(epoch_used) : 0.0;
    res.loss_curve.push_back(epoch_mean);
    over_budget = (epoch_mean > 10.0 * initial && initial > 0.0) ? over_budget + 1 : 0;
    if (over_budget >= 2) {
      throw numeric_error("training diverged at lambda " + std::to_string(lambda) +
                          ": epoch loss " + std::to_string(epoch_mean) +
                          " exceeds 10x the initial " + std::to_string(initial));
    }
  }
  return res;
}

/// Trains one model per lambda in the grid and keeps the one with the lowest
/// validation loss (earlier grid entry on ties). Validation instances are a
/// seeded `validation_fraction` of the input; with fewer than two instances
/// the training set doubles as validation.
inline TrainResult train(const Eigen::MatrixXd& features,
                         std::span<const TrainingInstance> instances,
                         const TrainConfig& config,
                         std::optional<ProjectionModel> init = {}) {
  if (instances.empty()) throw invalid_argument("no training instances");
  if (config.lambda_grid.empty()) throw invalid_argument("empty lambda grid");
  for (double l : config.lambda_grid) {
    if (!(l > 0.0)) throw invalid_argument("lambda values must be positive");
  }
  const Eigen::Index d_out = config.d_out > 0 ? config.d_out : features.cols();
  const ProjectionModel start =
      init ? *init : ProjectionModel::identity(features.cols(), d_out);

  std::vector<std::size_t> all(instances.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> train_idx = all;
  std::vector<std::size_t> val_idx = all;
  const auto n_val = static_cast<std::size_t>(
      std::floor(config.validation_fraction * static_cast<double>(all.size())));
  if (n_val >= 1 && n_val < all.size()) {
    Rng rng(derive_seed(config.seed, 0x76616c));
    shuffle(all, rng);
    val_idx.assign(all.begin(), all.begin() + static_cast<long>(n_val));
    train_idx.assign(all.begin() + static_cast<long>(n_val), all.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
  }

  std::optional<TrainResult> best;
  std::vector<LambdaTrial> trials;
  for (double lambda : config.lambda_grid) {
    TrainResult run = train_fixed_lambda(features, instances, train_idx, config,
                                         lambda, start);
    run.validation_loss = mean_loss(run.model, features, instances, val_idx, lambda);
    trials.push_back({lambda, run.validation_loss, run.loss_curve});
    if (!best || run.validation_loss < best->validation_loss) best = std::move(run);
  }
  best->trials = std::move(trials);
  return std::move(*best);
}

// ---------------------------------------------------------------------------
// Model file: JSON header {"d_in", "d_out", "lambda"} then W_in and W_ex as
// little-endian float32, row-major.

inline void write_model(std::ostream& out, const ProjectionModel& model,
                        double lambda) {
  nlohmann::json header{{"d_in", model.d_in()}, {"d_out", model.d_out()},
                        {"lambda", lambda}};
  out << header.dump() << '\n';
  io::write_f32_matrix(out, model.w_in);
  io::write_f32_matrix(out, model.w_ex);
}

inline void write_model(const std::string& path, const ProjectionModel& model,
                        double lambda) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw not_found("cannot write model file " + path);
  write_model(out, model, lambda);
}

struct LoadedModel {
  ProjectionModel model;
  double lambda = 0.0;
};

inline LoadedModel read_model(std::istream& in, const std::string& source) {
  auto header = io::read_header_line(in, source);
  LoadedModel out;
  Eigen::Index d_in = 0, d_out = 0;
  try {
    d_in = header.at("d_in").get<Eigen::Index>();
    d_out = header.at("d_out").get<Eigen::Index>();
    out.lambda = header.at("lambda").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(source + ": bad model header: " + e.what());
  }
  if (d_in <= 0 || d_out <= 0) throw parse_error(source + ": bad model dimensions");
  out.model.w_in = io::read_f32_matrix(in, d_out, d_in, source);
  out.model.w_ex = io::read_f32_matrix(in, d_out, d_in, source);
  if (!io::at_eof(in)) throw parse_error(source + ": trailing bytes after weights");
  return out;
}

inline LoadedModel read_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw not_found("cannot open model file " + path);
  return read_model(in, path);
}

}  // namespace dppsel
