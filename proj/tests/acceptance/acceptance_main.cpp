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


// Acceptance gate. Each criterion prints one PASS/FAIL line with its measured
// value, tolerance and runtime; the exit status is nonzero if any fails.
//
//   acceptance_suite [name-filter]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/LU>

#include "../unit/test_util.hpp"
#include "dppsel/bench.hpp"
#include "dppsel/dpp_kernel.hpp"
#include "dppsel/inference.hpp"
#include "dppsel/pipeline.hpp"
#include "dppsel/synthetic.hpp"
#include "dppsel/training.hpp"

namespace dppsel {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double time_limit_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::vector<std::size_t> members_of(unsigned mask, Eigen::Index n) {
  std::vector<std::size_t> out;
  for (Eigen::Index i = 0; i < n; ++i)
    if (mask & (1u << i)) out.push_back(static_cast<std::size_t>(i));
  return out;
}

// Pool kernel from random unit embeddings and a random unit query.
ConditionalKernel random_pool_kernel(Eigen::Index n, Eigen::Index dim, double lambda, Rng& rng) {
  Eigen::MatrixXd rows = normalize_rows(testing::gaussian_matrix(n, dim, rng));
  Eigen::VectorXd q = normalize_vector(testing::gaussian_matrix(dim, 1, rng));
  return pool_kernel(rows, q, lambda);
}

Outcome normalization_identity() {
  Rng rng(101);
  double worst_sum = 0.0, worst_prob = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(uniform_index(rng, 10));
    const Eigen::Index dim = 1 + static_cast<Eigen::Index>(uniform_index(rng, 12));
    Eigen::MatrixXd k = testing::random_psd(n, dim, rng);
    double total = 0.0, prob = 0.0;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      total += testing::masked_det(k, mask);
      prob += dpp_prob_normalized(k, SubsetIndex(members_of(mask, n)));
    }
    const double z = (k + Eigen::MatrixXd::Identity(n, n)).determinant();
    worst_sum = std::max(worst_sum, std::abs(total - z));
    worst_prob = std::max(worst_prob, std::abs(prob - 1.0));
  }
  return {worst_sum <= 1e-8 && worst_prob <= 1e-8,
          "max |sum det - det(L+I)| = " + fmt("%.2e", worst_sum) +
              ", max |sum P - 1| = " + fmt("%.2e", worst_prob) + " (tol 1e-8, 100 kernels)"};
}

Outcome decomposition_identity() {
  Rng rng(202);
  const double lambdas[] = {0.01, 0.05, 0.1, 0.5, 1.0};
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(uniform_index(rng, 39));
    const double lambda = lambdas[uniform_index(rng, 5)];
    auto k = random_pool_kernel(n, n + 4, lambda, rng);
    std::vector<std::size_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    shuffle(idx, rng);
    idx.resize(1 + uniform_index(rng, std::min<std::uint64_t>(static_cast<std::uint64_t>(n), 16)));
    SubsetIndex s(idx);
    double rsum = 0.0;
    for (auto i : s) rsum += k.relevance(static_cast<Eigen::Index>(i));
    worst = std::max(worst, std::abs(set_score(k, s) - logdet_subset(k.base, s) - rsum / lambda));
  }
  return {worst <= 1e-8, "max deviation " + fmt("%.2e", worst) + " over 1000 cases (tol 1e-8)"};
}

Outcome fast_naive_equivalence() {
  Rng rng(303);
  const double lambdas[] = {0.01, 0.05, 0.1};
  int mismatched = 0;
  double worst_gain = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    auto k = random_pool_kernel(100, 32, lambdas[trial % 3], rng);
    auto fast = greedy_map_fast(k, 16);
    auto naive = greedy_map_naive(k, 16);
    if (fast.positions != naive.positions || fast.early_stopped != naive.early_stopped) {
      ++mismatched;
      continue;
    }
    for (std::size_t t = 0; t < fast.gains.size(); ++t)
      worst_gain = std::max(worst_gain, std::abs(fast.gains[t] - naive.gains[t]));
  }
  return {mismatched == 0 && worst_gain <= 1e-6,
          std::to_string(mismatched) + "/200 selection mismatches, max gain diff " +
              fmt("%.2e", worst_gain) + " (tol 1e-6; n=100, K=16)"};
}

Outcome brute_force_harness() {
  Rng rng(404);
  int exact = 0;
  double worst_ratio = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    auto k = random_pool_kernel(12, 8, 0.1, rng);
    auto greedy = greedy_map_fast(k, 3);
    const double g = set_score(k, SubsetIndex(greedy.positions));
    const SubsetIndex best = brute_force_map(k, 3);
    const double opt = set_score(k, best);
    if (SubsetIndex(greedy.positions) == best) ++exact;
    worst_ratio = std::max(worst_ratio, (opt - g) / std::abs(opt));
  }
  return {worst_ratio <= 0.05,
          "greedy hit the optimum in " + std::to_string(exact) +
              "/50, worst (opt - greedy)/|opt| = " + fmt("%.4f", worst_ratio) + " (tol 0.05)"};
}

// Directional central differences along random unit directions in (W_in,
// W_ex), with c pinned at the base point. A probe whose +-eps step changes
// the set of active hinges straddles a kink and is redrawn.
Outcome gradient_correctness() {
  SyntheticConfig sc;
  sc.corpus_size = 200;
  sc.query_count = 1;
  sc.seed = 505;
  auto task = make_synthetic_task(sc);
  const Eigen::MatrixXd feats = normalize_rows(task.features.data);
  MockScorer scorer(std::make_shared<MockWorld>(task.world));
  std::vector<std::size_t> anchors(40);
  std::iota(anchors.begin(), anchors.end(), std::size_t{0});
  TrainingDataConfig dc;
  dc.pool_size = 20;
  dc.subset_size = 4;
  dc.num_subsets = 10;
  dc.seed = 505;
  auto instances = construct_training_data(task.corpus, feats, anchors, dc, scorer);

  Rng rng(506);
  const double eps = 1e-5;
  const double lambdas[] = {0.01, 0.05, 0.1};
  const Eigen::Index d = feats.cols();
  int valid = 0, redrawn = 0;
  double worst = 0.0;
  while (valid < 100 && redrawn < 1000) {
    const auto& inst = instances[uniform_index(rng, instances.size())];
    const double lambda = lambdas[uniform_index(rng, 3)];
    auto model = ProjectionModel::identity(d, d);
    model.w_in += 0.2 * testing::gaussian_matrix(d, d, rng);
    model.w_ex += 0.2 * testing::gaussian_matrix(d, d, rng);
    ProjectionModel dir{testing::gaussian_matrix(d, d, rng), testing::gaussian_matrix(d, d, rng)};
    const double norm = std::sqrt(dir.w_in.squaredNorm() + dir.w_ex.squaredNorm());
    dir.w_in /= norm;
    dir.w_ex /= norm;

    auto grad = ModelGradient::zeros_like(model);
    auto ev = loss_gradient(model, feats, inst, lambda, &grad);
    if (ev.skipped || ev.loss == 0.0) {
      ++redrawn;
      continue;
    }
    auto shifted = [&](double t) {
      ProjectionModel m = model;
      m.w_in += t * dir.w_in;
      m.w_ex += t * dir.w_ex;
      return m;
    };
    const auto active = [&](const ProjectionModel& m) {
      auto s = model_subset_scores(m, feats, inst, lambda);
      return margin_loss_terms(s, inst.ranks, ev.scale).d_scores;
    };
    const auto up_m = shifted(eps), down_m = shifted(-eps);
    const auto here = active(model);
    if (active(up_m) != here || active(down_m) != here) {
      ++redrawn;
      continue;
    }
    const double up = loss_gradient(up_m, feats, inst, lambda, nullptr, 1.0, ev.scale).loss;
    const double down = loss_gradient(down_m, feats, inst, lambda, nullptr, 1.0, ev.scale).loss;
    const double numeric = (up - down) / (2 * eps);
    const double analytic = (grad.w_in.array() * dir.w_in.array()).sum() +
                            (grad.w_ex.array() * dir.w_ex.array()).sum();
    const double rel = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), 1e-300});
    worst = std::max(worst, rel);
    ++valid;
  }
  return {valid == 100 && worst <= 1e-4,
          std::to_string(valid) + " probes, worst relative error " + fmt("%.2e", worst) +
              " (tol 1e-4; " + std::to_string(redrawn) + " redrawn at kinks or flat points)"};
}

Outcome kdpp_exactness() {
  Rng rng(606);
  Eigen::MatrixXd l = testing::random_psd(6, 8, rng);
  std::map<SubsetIndex, double> expected;
  double z = 0.0;
  for (unsigned mask = 0; mask < 64; ++mask) {
    if (__builtin_popcount(mask) != 2) continue;
    const double det = testing::masked_det(l, mask);
    expected[SubsetIndex(members_of(mask, 6))] = det;
    z += det;
  }
  KdppSampler sampler(l, 2);
  std::map<SubsetIndex, int> counts;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    ++counts[sampler.sample(derive_seed(607, static_cast<std::uint64_t>(i)))];
  }
  double worst = 0.0;
  for (const auto& [s, det] : expected) {
    const double freq = counts.count(s) ? static_cast<double>(counts[s]) / draws : 0.0;
    worst = std::max(worst, std::abs(freq - det / z));
  }
  const bool only_pairs = counts.size() <= expected.size();
  return {worst <= 0.01 && only_pairs,
          "max |freq - P| = " + fmt("%.4f", worst) + " over 15 subsets, 100000 draws (tol 0.01)"};
}

struct LearningRun {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double lambda = 0.0;
  double topk = 0.0;
  double dpp_trained = 0.0;
  double dpp_untrained = 0.0;
};

LearningRun learning_run(std::uint64_t seed) {
  SyntheticConfig sc;  // T = 16, 500 examples, 100 held-out queries
  sc.seed = seed;
  auto task = make_synthetic_task(sc);
  auto world = std::make_shared<MockWorld>(task.world);
  MockScorer scorer(world);
  const Eigen::MatrixXd feats = normalize_rows(task.features.data);
  std::vector<std::size_t> anchors(200);
  std::iota(anchors.begin(), anchors.end(), std::size_t{0});
  TrainingDataConfig dc;
  dc.pool_size = 50;
  dc.subset_size = 4;
  dc.num_subsets = 10;
  dc.seed = seed;
  auto instances = construct_training_data(task.corpus, feats, anchors, dc, scorer);

  TrainConfig tc;  // lambda grid {0.01, 0.05, 0.1}, 30 epochs
  tc.lr = 1.2e-3;
  tc.batch_size = 32;
  tc.seed = seed;
  auto res = train(task.features.data, instances, tc);

  SelectorOptions so;
  so.pool_size = 50;
  so.num_exemplars = 4;
  so.lambda_trained = res.lambda;
  so.lambda_untrained = res.lambda;
  Selector selector(task.corpus, task.features.data, so, res.model);
  LearningRun out{res.initial_loss(), res.final_loss(), res.lambda, 0, 0, 0};
  for (std::size_t q = 0; q < task.queries.size(); ++q) {
    SelectionQuery sq;
    sq.feature = task.query_features.data.row(static_cast<Eigen::Index>(q));
    sq.text = task.queries[q].input_text;
    auto score = [&](Method m) {
      auto sel = selector.select(m, sq);
      ScoreRequest req;
      req.query_id = task.queries[q].id;
      req.query_input = task.queries[q].input_text;
      req.target_output = task.queries[q].output_text;
      for (auto p : sel.ordered) {
        const auto& e = task.corpus[p];
        req.exemplars.push_back({e.id, e.input_text, e.output_text});
      }
      return scorer.score(req);
    };
    out.topk += score(Method::kTopK);
    out.dpp_trained += score(Method::kDppTrained);
    out.dpp_untrained += score(Method::kDppUntrained);
  }
  const double nq = static_cast<double>(task.queries.size());
  out.topk /= nq;
  out.dpp_trained /= nq;
  out.dpp_untrained /= nq;
  return out;
}

Outcome end_to_end_learning() {
  bool pass = true;
  std::ostringstream detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto r = learning_run(seed);
    const double ratio = r.final_loss / r.initial_loss;
    const bool ok = ratio <= 0.5 && r.dpp_trained >= r.topk;
    pass = pass && ok;
    detail << "\n      seed " << seed << ": lambda " << r.lambda << ", loss "
           << fmt("%.3f", r.initial_loss) << " -> " << fmt("%.3f", r.final_loss) << " (x"
           << fmt("%.3f", ratio) << ", need <= 0.5); mock score dpp_trained "
           << fmt("%.4f", r.dpp_trained) << " vs topk " << fmt("%.4f", r.topk)
           << " (dpp_untrained " << fmt("%.4f", r.dpp_untrained) << ")" << (ok ? "" : "  <-- fails");
  }
  return {pass, "3 seeds, 500 examples, 200 anchors, n=50, K=4, M=10" + detail.str()};
}

Outcome mrr_echo() {
  SyntheticConfig sc;
  sc.seed = 1;
  auto task = make_synthetic_task(sc);
  MockScorer scorer(std::make_shared<MockWorld>(task.world));
  const Eigen::MatrixXd feats = normalize_rows(task.features.data);
  std::vector<std::size_t> anchors(200);
  std::iota(anchors.begin(), anchors.end(), std::size_t{0});
  TrainingDataConfig dc;  // n = 100, K = 16
  dc.num_subsets = 50;
  dc.seed = 1;
  auto instances = construct_training_data(task.corpus, feats, anchors, dc, scorer);
  std::vector<int> ranks;
  for (const auto& inst : instances) ranks.push_back(inst.ranks[0]);
  const double value = mrr(ranks);
  return {value >= 0.02 && value <= 0.30,
          "MRR of the top-K subset among 50 candidates = " + fmt("%.4f", value) +
              " (band [0.02, 0.30]; n=100, K=16, 200 anchors)"};
}

Outcome latency_echo() {
  // Large enough that the corpus scan dominates, as in a real index.
  const Eigen::Index corpus_n = 20000, dim = 256;
  Rng rng(909);
  Eigen::MatrixXd features = testing::gaussian_matrix(corpus_n, dim, rng);
  std::vector<ExampleRecord> records;
  for (Eigen::Index i = 0; i < corpus_n; ++i) {
    records.push_back({"e" + std::to_string(i), "x", "y"});
  }
  Corpus corpus(std::move(records));
  Eigen::MatrixXd queries = testing::gaussian_matrix(50, dim, rng);
  std::vector<std::optional<std::size_t>> exclude(50);
  const std::vector<std::size_t> grid{50, 100, 200, 400, 800};
  const std::vector<std::size_t> warm{100};
  run_bench(corpus, features, queries, exclude, warm, 50, 0.1, 1);
  auto rows = run_bench(corpus, features, queries, exclude, grid, 50, 0.1, 3);
  bool monotone = true;
  std::ostringstream detail;
  double ratio_at_100 = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0 && !(rows[i].map_ms > rows[i - 1].map_ms)) monotone = false;
    if (rows[i].n == 100) ratio_at_100 = rows[i].dpp_ms / rows[i].topk_ms;
    detail << "\n      n=" << rows[i].n << ": topk " << fmt("%.3f", rows[i].topk_ms)
           << " ms, pool+MAP " << fmt("%.3f", rows[i].dpp_ms) << " ms, MAP alone "
           << fmt("%.3f", rows[i].map_ms) << " ms";
  }
  return {ratio_at_100 <= 2.0 && monotone,
          "DPP/topk at n=100, K=50: " + fmt("%.2f", ratio_at_100) +
              "x (need <= 2); MAP time " + (monotone ? "increases" : "does NOT increase") +
              " with n (20000 x 256 index, 50 queries x 3 passes)" + detail.str()};
}

}  // namespace
}  // namespace dppsel

int main(int argc, char** argv) {
  using namespace dppsel;
  const std::string filter = argc > 1 ? argv[1] : "";
  const std::vector<Criterion> criteria{
      {"normalization_identity", 10, normalization_identity},
      {"decomposition_identity", 5, decomposition_identity},
      {"fast_naive_greedy_equivalence", 60, fast_naive_equivalence},
      {"brute_force_map_harness", 60, brute_force_harness},
      {"gradient_correctness", 60, gradient_correctness},
      {"kdpp_exactness", 120, kdpp_exactness},
      {"end_to_end_synthetic_learning", 600, end_to_end_learning},
      {"mrr_echo", 300, mrr_echo},
      {"latency_echo", 300, latency_echo},
  };
  int failed = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.time_limit_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    std::printf("%s  %-32s %s [%.1f s, limit %.0f s%s]\n", pass ? "PASS" : "FAIL", c.name.c_str(),
                o.detail.c_str(), secs, c.time_limit_s, in_time ? "" : ", over time");
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 && ran > 0 ? 0 : 1;
}
