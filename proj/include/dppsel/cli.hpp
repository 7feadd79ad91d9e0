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

// Command-line front end. run_cli() is the whole program; tools/dppsel.cpp
// only forwards argv and the standard streams.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "dppsel/bench.hpp"
#include "dppsel/corpus.hpp"
#include "dppsel/error.hpp"
#include "dppsel/pipeline.hpp"
#include "dppsel/remote.hpp"
#include "dppsel/scoring.hpp"
#include "dppsel/synthetic.hpp"
#include "dppsel/training.hpp"

namespace dppsel {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,     // numeric failure inside a computation
  kExitConfig = 2,
  kExitMissing = 3,
  kExitDependency = 4,
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kParse:
    case ErrorKind::kCapability: return kExitConfig;
    case ErrorKind::kNotFound: return kExitMissing;
    case ErrorKind::kDependency: return kExitDependency;
    case ErrorKind::kNumeric: return kExitFailure;
  }
  return kExitFailure;
}

struct ScorerConfig {
  std::string type = "mock";        // mock | cache | remote
  std::string world;                // mock world JSON
  std::string cache;                // cache JSONL
  bool cache_online = false;        // forward misses to the remote sidecar
  std::string endpoint = "http://127.0.0.1:8765";
  int timeout_ms = 30000;
  int retries = 3;
  int max_in_flight = 8;
};

/// One JSON file plus command-line overrides. Relative paths are resolved
/// against the directory of the config file.
struct RunConfig {
  std::string corpus;
  std::string embeddings;
  std::string queries;
  std::string query_embeddings;
  std::string training_data;
  std::string model;
  std::string embed_endpoint;
  ScorerConfig scorer;
  std::size_t n = 100;
  std::size_t K = 16;
  std::size_t M = 50;
  std::size_t anchors = 0;  // 0: every corpus example
  std::vector<double> lambda_grid{0.01, 0.05, 0.1};
  int epochs = 30;
  std::size_t batch_size = 128;
  double lr = 1e-5;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  std::size_t inference_K = 50;
  std::size_t inference_n = 100;
  double inference_lambda = 0.1;  // untrained DPP; trained uses the model's

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw invalid_argument(std::string(name) + " must be positive");
    };
    positive(n, "n");
    positive(K, "K");
    positive(M, "M");
    positive(batch_size, "batch_size");
    positive(inference_K, "inference_K");
    positive(inference_n, "inference_n");
    if (epochs < 0) throw invalid_argument("epochs must be non-negative");
    if (!(lr >= 0.0)) throw invalid_argument("lr must be non-negative");
    if (lambda_grid.empty()) throw invalid_argument("lambda_grid is empty");
    for (double l : lambda_grid) {
      if (!(l > 0.0)) throw invalid_argument("lambda values must be positive");
    }
    if (!(inference_lambda > 0.0)) throw invalid_argument("lambda must be positive");
    if (inference_K > inference_n) {
      throw invalid_argument("inference_K = " + std::to_string(inference_K) +
                             " exceeds inference_n = " + std::to_string(inference_n));
    }
  }
};

namespace cli_detail {

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

/// "inf" is accepted (pure-diversity MAP).
inline double parse_lambda(const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end == text.c_str() || *end != '\0' || !(v > 0.0)) {
    throw invalid_argument("--lambda expects a positive number or inf, got \"" + text + "\"");
  }
  return v;
}

}  // namespace cli_detail

inline RunConfig run_config_from_json(const nlohmann::json& j,
                                      const std::filesystem::path& base) {
  RunConfig c;
  using cli_detail::resolve;
  try {
    auto path = [&](const char* key, std::string& field) {
      if (j.contains(key)) field = resolve(base, j.at(key).get<std::string>());
    };
    path("corpus", c.corpus);
    path("embeddings", c.embeddings);
    path("queries", c.queries);
    path("query_embeddings", c.query_embeddings);
    path("training_data", c.training_data);
    path("model", c.model);
    c.embed_endpoint = j.value("embed_endpoint", c.embed_endpoint);
    if (j.contains("scorer")) {
      const auto& s = j.at("scorer");
      c.scorer.type = s.value("type", c.scorer.type);
      if (s.contains("world")) c.scorer.world = resolve(base, s.at("world").get<std::string>());
      if (s.contains("cache")) c.scorer.cache = resolve(base, s.at("cache").get<std::string>());
      c.scorer.cache_online = s.value("online", c.scorer.cache_online);
      c.scorer.endpoint = s.value("endpoint", c.scorer.endpoint);
      c.scorer.timeout_ms = s.value("timeout_ms", c.scorer.timeout_ms);
      c.scorer.retries = s.value("retries", c.scorer.retries);
      c.scorer.max_in_flight = s.value("max_in_flight", c.scorer.max_in_flight);
    }
    c.n = j.value("n", c.n);
    c.K = j.value("K", c.K);
    c.M = j.value("M", c.M);
    c.anchors = j.value("anchors", c.anchors);
    c.lambda_grid = j.value("lambda_grid", c.lambda_grid);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.seed = j.value("seed", c.seed);
    c.inference_K = j.value("inference_K", c.inference_K);
    c.inference_n = j.value("inference_n", c.inference_n);
    c.inference_lambda = j.value("lambda", c.inference_lambda);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(std::string("bad run config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw not_found("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path + ": " + e.what());
  }
  return run_config_from_json(j, std::filesystem::path(path).parent_path());
}

inline std::shared_ptr<SubsetScorer> make_scorer(const ScorerConfig& s) {
  RemoteOptions remote;
  remote.endpoint = s.endpoint;
  remote.timeout = std::chrono::milliseconds(s.timeout_ms);
  remote.retries = s.retries;
  remote.max_in_flight = s.max_in_flight;
  if (s.type == "mock") {
    if (s.world.empty()) throw invalid_argument("mock scorer needs scorer.world");
    return std::make_shared<MockScorer>(
        std::make_shared<const MockWorld>(load_mock_world(s.world)));
  }
  if (s.type == "remote") return std::make_shared<RemoteScorer>(remote);
  if (s.type == "cache") {
    if (s.cache.empty()) throw invalid_argument("cache scorer needs scorer.cache");
    if (!s.cache_online) {
      return std::make_shared<CachedScorer>(s.cache, CachedScorer::Mode::kOffline);
    }
    return std::make_shared<CachedScorer>(s.cache, CachedScorer::Mode::kOnline,
                                          std::make_shared<RemoteScorer>(remote));
  }
  throw invalid_argument("unknown scorer type \"" + s.type +
                         "\" (expected mock, cache, remote)");
}

namespace cli_detail {

inline void require(const std::string& value, const char* what) {
  if (value.empty()) throw invalid_argument(std::string("no ") + what + " configured");
}

/// Writes to --out when given, otherwise to `out`.
inline void emit(const std::string& out_path, std::ostream& out, const std::string& text) {
  if (out_path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(out_path, std::ios::binary);
  if (!f) throw not_found("cannot write " + out_path);
  f << text;
}

struct Workspace {
  Corpus corpus;
  EmbeddingMatrix features;  // raw, corpus-aligned
};

inline Workspace load_workspace(const RunConfig& cfg) {
  require(cfg.corpus, "corpus");
  require(cfg.embeddings, "embeddings");
  Workspace w{load_corpus(cfg.corpus), {}};
  w.features = attach_embeddings(w.corpus, cfg.embeddings);
  return w;
}

struct QuerySet {
  Corpus queries;
  EmbeddingMatrix features;
};

inline QuerySet load_queries(const RunConfig& cfg) {
  require(cfg.queries, "queries");
  require(cfg.query_embeddings, "query_embeddings");
  QuerySet q{load_corpus(cfg.queries), {}};
  q.features = attach_embeddings(q.queries, cfg.query_embeddings);
  return q;
}

/// Per-query seed for the random baseline.
inline std::uint64_t query_seed(std::uint64_t seed, std::size_t query) {
  return derive_seed(seed, 0x51000000ull + query);
}

inline std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace cli_detail

// ---------------------------------------------------------------------------
// Commands

inline void cmd_ingest(const std::string& input, const std::string& out_path,
                       bool keep_duplicates, std::ostream& out) {
  Corpus raw = load_corpus(input);
  Corpus clean = keep_duplicates ? raw : dedup(raw);
  if (out_path.empty()) {
    write_corpus(out, clean);
  } else {
    write_corpus(out_path, clean);
    out << nlohmann::json{{"read", raw.size()}, {"written", clean.size()}}.dump() << '\n';
  }
}

/// Aligns (or computes, through the sidecar) corpus embeddings and writes the
/// embedding file; reports index statistics.
inline void cmd_index(const RunConfig& cfg, const std::string& out_path, std::ostream& out) {
  cli_detail::require(cfg.corpus, "corpus");
  Corpus corpus = load_corpus(cfg.corpus);
  EmbeddingMatrix emb;
  if (!cfg.embeddings.empty()) {
    emb = attach_embeddings(corpus, cfg.embeddings);
  } else if (!cfg.embed_endpoint.empty()) {
    RemoteOptions o;
    o.endpoint = cfg.embed_endpoint;
    std::vector<std::string> texts;
    for (const auto& r : corpus) texts.push_back(r.input_text);
    emb.data = remote_embed(o, texts);
    for (const auto& r : corpus) emb.ids.push_back(r.id);
  } else {
    throw invalid_argument("index needs embeddings or embed_endpoint");
  }
  normalize_rows(emb.data);  // rejects zero rows up front
  if (!out_path.empty()) write_embedding_file(out_path, emb);
  Bm25Index bm25(corpus);
  out << nlohmann::json{{"examples", corpus.size()},
                        {"dim", emb.dim()},
                        {"bm25_vocabulary", bm25.vocabulary_size()},
                        {"bm25_avg_len", bm25.avg_len()}}
             .dump()
      << '\n';
}

inline std::vector<std::size_t> pick_anchors(std::size_t corpus_size, std::size_t count,
                                             std::uint64_t seed) {
  if (count == 0 || count >= corpus_size) {
    std::vector<std::size_t> all(corpus_size);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  auto anchors = random_pool(corpus_size, count, derive_seed(seed, 0xa7c4)).positions;
  std::sort(anchors.begin(), anchors.end());
  return anchors;
}

inline void cmd_gen_train_data(const RunConfig& cfg, const std::string& out_path,
                               std::ostream& out) {
  auto ws = cli_detail::load_workspace(cfg);
  auto scorer = make_scorer(cfg.scorer);
  TrainingDataConfig dc;
  dc.pool_size = cfg.n;
  dc.subset_size = cfg.K;
  dc.num_subsets = cfg.M;
  dc.seed = cfg.seed;
  const auto anchors = pick_anchors(ws.corpus.size(), cfg.anchors, cfg.seed);
  auto instances = construct_training_data(ws.corpus, normalize_rows(ws.features.data),
                                           anchors, dc, *scorer);
  std::ostringstream buf;
  write_training_instances(buf, ws.corpus, instances);
  cli_detail::emit(out_path, out, buf.str());
  if (!out_path.empty()) {
    std::vector<int> top_ranks;
    for (const auto& inst : instances) top_ranks.push_back(inst.ranks[0]);
    out << nlohmann::json{{"instances", instances.size()}, {"topk_mrr", mrr(top_ranks)}}.dump()
        << '\n';
  }
}

inline void cmd_train(const RunConfig& cfg, const std::string& out_path, std::ostream& out) {
  auto ws = cli_detail::load_workspace(cfg);
  cli_detail::require(cfg.training_data, "training_data");
  if (out_path.empty()) throw invalid_argument("train needs --out for the model file");
  const Eigen::MatrixXd feats = normalize_rows(ws.features.data);
  auto instances = read_training_instances(cfg.training_data, ws.corpus, &feats);
  TrainConfig tc;
  tc.lambda_grid = cfg.lambda_grid;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.lr = cfg.lr;
  tc.seed = cfg.seed;
  tc.validation_fraction = cfg.validation_fraction;
  auto res = train(feats, instances, tc);
  write_model(out_path, res.model, res.lambda);
  nlohmann::json trials = nlohmann::json::array();
  for (const auto& t : res.trials) {
    trials.push_back({{"lambda", t.lambda},
                      {"validation_loss", t.validation_loss},
                      {"loss_curve", t.loss_curve}});
  }
  out << nlohmann::json{{"lambda", res.lambda},
                        {"initial_loss", res.initial_loss()},
                        {"final_loss", res.final_loss()},
                        {"validation_loss", res.validation_loss},
                        {"skipped_instances", res.skipped_instances},
                        {"trials", trials}}
             .dump()
      << '\n';
}

struct SelectArgs {
  std::string query_id;
  std::string query_text;
  Method method = Method::kDppTrained;
  std::optional<double> lambda;
  bool include_self = false;
};

inline std::unique_ptr<Selector> make_selector(const RunConfig& cfg, const Corpus& corpus,
                                               const Eigen::MatrixXd& features,
                                               bool need_model, std::optional<double> lambda) {
  SelectorOptions opt;
  opt.pool_size = cfg.inference_n;
  opt.num_exemplars = cfg.inference_K;
  opt.lambda_untrained = lambda.value_or(cfg.inference_lambda);
  std::optional<ProjectionModel> model;
  if (need_model) {
    if (cfg.model.empty()) {
      throw not_found("method dpp_trained needs a model file (--model or config \"model\")");
    }
    auto loaded = read_model(cfg.model);
    opt.lambda_trained = lambda.value_or(loaded.lambda);
    model = std::move(loaded.model);
  }
  if (opt.pool_size > corpus.size()) {
    throw invalid_argument("inference_n = " + std::to_string(opt.pool_size) +
                           " exceeds the corpus size " + std::to_string(corpus.size()));
  }
  return std::make_unique<Selector>(corpus, features, opt, std::move(model));
}

inline void cmd_select(const RunConfig& cfg, const SelectArgs& args, std::ostream& out) {
  if (args.query_id.empty() == args.query_text.empty()) {
    throw invalid_argument("select needs exactly one of --query-id or --query-text");
  }
  auto ws = cli_detail::load_workspace(cfg);
  SelectionQuery q;
  q.seed = cli_detail::query_seed(cfg.seed, 0);
  if (!args.query_id.empty()) {
    auto pos = ws.corpus.position(args.query_id);
    if (pos) {
      q.feature = ws.features.data.row(static_cast<Eigen::Index>(*pos));
      q.text = ws.corpus[*pos].input_text;
      if (!args.include_self) q.exclude = *pos;
    } else {
      auto qs = cli_detail::load_queries(cfg);
      const auto qpos = qs.queries.position(args.query_id);
      if (!qpos) throw not_found("unknown query id \"" + args.query_id + "\"");
      q.feature = qs.features.data.row(static_cast<Eigen::Index>(*qpos));
      q.text = qs.queries[*qpos].input_text;
    }
  } else {
    if (cfg.embed_endpoint.empty()) {
      throw invalid_argument("--query-text needs embed_endpoint to embed the query");
    }
    RemoteOptions o;
    o.endpoint = cfg.embed_endpoint;
    q.feature = remote_embed(o, {args.query_text}).row(0);
    q.text = args.query_text;
  }
  auto selector = make_selector(cfg, ws.corpus, ws.features.data,
                                args.method == Method::kDppTrained, args.lambda);
  auto sel = selector->select(args.method, q);
  for (auto p : sel.ordered) out << ws.corpus[p].id << '\n';
}

struct EvalArgs {
  std::vector<Method> methods;
  std::optional<double> lambda;
  bool timing = true;
};

/// Per-method mean oracle score, MRR of the method's subset among the
/// evaluated methods (rank 1 = highest score for the query), the
/// selection-rank histogram and mean selection time per query.
inline nlohmann::json cmd_eval(const RunConfig& cfg, const EvalArgs& args) {
  if (args.methods.empty()) throw invalid_argument("no methods to evaluate");
  auto ws = cli_detail::load_workspace(cfg);
  auto qs = cli_detail::load_queries(cfg);
  if (qs.features.dim() != ws.features.dim()) {
    throw invalid_argument("query embeddings have dim " + std::to_string(qs.features.dim()) +
                           ", corpus embeddings " + std::to_string(ws.features.dim()));
  }
  auto scorer = make_scorer(cfg.scorer);
  const bool need_model = std::find(args.methods.begin(), args.methods.end(),
                                    Method::kDppTrained) != args.methods.end();
  auto selector = make_selector(cfg, ws.corpus, ws.features.data, need_model, args.lambda);

  const std::size_t nq = qs.queries.size();
  const std::size_t nm = args.methods.size();
  std::vector<std::vector<double>> scores(nm, std::vector<double>(nq));
  std::vector<double> time_ms(nm, 0.0);
  std::vector<std::vector<std::size_t>> hist(nm);
  for (std::size_t qi = 0; qi < nq; ++qi) {
    const auto& rec = qs.queries[qi];
    SelectionQuery q;
    q.feature = qs.features.data.row(static_cast<Eigen::Index>(qi));
    q.text = rec.input_text;
    q.exclude = ws.corpus.position(rec.id);
    q.seed = cli_detail::query_seed(cfg.seed, qi);
    for (std::size_t mi = 0; mi < nm; ++mi) {
      const auto t0 = std::chrono::steady_clock::now();
      auto sel = selector->select(args.methods[mi], q);
      time_ms[mi] += detail::ms_since(t0);
      ScoreRequest req;
      req.query_id = rec.id;
      req.query_input = rec.input_text;
      req.target_output = rec.output_text;
      for (auto p : sel.ordered) {
        const auto& e = ws.corpus[p];
        req.exemplars.push_back({e.id, e.input_text, e.output_text});
      }
      scores[mi][qi] = scorer->score(req);
      for (auto r : selector->selection_ranks(args.methods[mi], q, sel)) {
        if (hist[mi].size() <= r) hist[mi].resize(r + 1, 0);
        ++hist[mi][r];
      }
    }
  }

  nlohmann::json report;
  report["queries"] = nq;
  report["inference_K"] = cfg.inference_K;
  report["inference_n"] = cfg.inference_n;
  nlohmann::json methods = nlohmann::json::array();
  for (std::size_t mi = 0; mi < nm; ++mi) {
    std::vector<int> ranks;
    for (std::size_t qi = 0; qi < nq; ++qi) {
      int rank = 1;
      for (std::size_t other = 0; other < nm; ++other) {
        if (scores[other][qi] > scores[mi][qi]) ++rank;
      }
      ranks.push_back(rank);
    }
    const double mean =
        std::accumulate(scores[mi].begin(), scores[mi].end(), 0.0) / static_cast<double>(nq);
    methods.push_back({{"method", method_name(args.methods[mi])},
                       {"mean_score", mean},
                       {"mrr", mrr(ranks)},
                       {"rank_histogram", hist[mi]},
                       {"ms_per_query", args.timing ? time_ms[mi] / static_cast<double>(nq)
                                                    : 0.0}});
  }
  report["methods"] = methods;
  return report;
}

inline void cmd_bench(const RunConfig& cfg, std::span<const std::size_t> n_grid,
                      std::optional<double> lambda, int repeats, std::ostream& out,
                      const std::string& out_path) {
  auto ws = cli_detail::load_workspace(cfg);
  Eigen::MatrixXd qf;
  std::vector<std::optional<std::size_t>> exclude;
  if (!cfg.queries.empty()) {
    auto qs = cli_detail::load_queries(cfg);
    qf = qs.features.data;
    for (const auto& r : qs.queries) exclude.push_back(ws.corpus.position(r.id));
  } else {
    const auto nq = std::min<std::size_t>(ws.corpus.size(), 100);
    qf = ws.features.data.topRows(static_cast<Eigen::Index>(nq));
    for (std::size_t i = 0; i < nq; ++i) exclude.emplace_back(i);
  }
  auto rows = run_bench(ws.corpus, ws.features.data, qf, exclude, n_grid, cfg.inference_K,
                        lambda.value_or(cfg.inference_lambda), repeats);
  cli_detail::emit(out_path, out, bench_csv(rows));
}

/// Writes a synthetic task (corpus, queries, embeddings, mock world, config)
/// into `dir`.
inline void cmd_synth(const SyntheticConfig& sc, const std::string& dir, std::ostream& out) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto task = make_synthetic_task(sc);
  const fs::path base(dir);
  write_corpus((base / "corpus.jsonl").string(), task.corpus);
  write_embedding_file((base / "embeddings.bin").string(), task.features);
  write_corpus((base / "queries.jsonl").string(), task.queries);
  write_embedding_file((base / "query_embeddings.bin").string(), task.query_features);
  {
    std::ofstream w(base / "world.json");
    w << to_json(task.world).dump() << '\n';
  }
  nlohmann::json config{{"corpus", "corpus.jsonl"},
                        {"embeddings", "embeddings.bin"},
                        {"queries", "queries.jsonl"},
                        {"query_embeddings", "query_embeddings.bin"},
                        {"training_data", "train.jsonl"},
                        {"model", "model.bin"},
                        {"scorer", {{"type", "mock"}, {"world", "world.json"}}},
                        {"seed", sc.seed}};
  std::ofstream c(base / "config.json");
  c << config.dump(2) << '\n';
  out << nlohmann::json{{"corpus", task.corpus.size()},
                        {"queries", task.queries.size()},
                        {"dim", task.features.dim()}}
             .dump()
      << '\n';
}

// ---------------------------------------------------------------------------
// Entry point

inline int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"dppsel: exemplar selection with determinantal point processes"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::string config_path, out_path, method_flag, lambda_flag, model_flag;
  std::optional<std::uint64_t> seed_flag;
  auto common = [&](CLI::App* sub, bool with_method) {
    sub->add_option("--config", config_path, "Run config JSON");
    sub->add_option("--seed", seed_flag, "Override the config seed");
    sub->add_option("--out", out_path, "Output path (default: stdout)");
    sub->add_option("--lambda", lambda_flag, "Trade-off lambda (positive or inf)");
    if (with_method) sub->add_option("--method", method_flag, "Selection method");
  };

  auto* ingest = app.add_subcommand("ingest", "Validate and deduplicate a JSONL corpus");
  std::string ingest_input;
  bool keep_dups = false;
  ingest->add_option("input", ingest_input, "Corpus JSONL")->required();
  ingest->add_flag("--keep-duplicates", keep_dups, "Skip deduplication");
  common(ingest, false);

  auto* index = app.add_subcommand("index", "Align or compute corpus embeddings");
  common(index, false);

  auto* gen = app.add_subcommand("gen-train-data", "Sample and score training subsets");
  common(gen, false);

  auto* trainc = app.add_subcommand("train", "Fit the projection towers");
  common(trainc, false);

  auto* select = app.add_subcommand("select", "Select ordered exemplars for one query");
  SelectArgs sargs;
  bool untrained = false;
  select->add_option("--query-id", sargs.query_id, "Corpus or query-set id");
  select->add_option("--query-text", sargs.query_text, "Raw query text (needs /embed)");
  select->add_option("--model", model_flag, "Trained model file");
  select->add_flag("--untrained", untrained, "Use the untrained DPP (no model)");
  select->add_flag("--include-self", sargs.include_self,
                   "Allow the query's own corpus entry to be selected");
  common(select, true);

  auto* eval = app.add_subcommand("eval", "Compare selection methods on a query set");
  std::string methods_flag = "random,bm25,topk,dpp_untrained,dpp_trained";
  bool no_timing = false;
  eval->add_option("--methods", methods_flag, "Comma-separated methods");
  eval->add_option("--model", model_flag, "Trained model file");
  eval->add_flag("--no-timing", no_timing, "Report zero times (byte-stable output)");
  common(eval, false);

  auto* bench = app.add_subcommand("bench", "Time top-K against DPP MAP over pool sizes");
  std::vector<std::size_t> n_grid{50, 100, 200, 400, 800};
  int repeats = 1;
  bench->add_option("--n-grid", n_grid, "Pool sizes")->delimiter(',');
  bench->add_option("--repeats", repeats, "Passes over the query set")
      ->check(CLI::PositiveNumber);
  common(bench, false);

  auto* synth = app.add_subcommand("synth", "Write a synthetic task with a mock world");
  SyntheticConfig sc;
  std::string synth_dir;
  synth->add_option("dir", synth_dir, "Output directory")->required();
  synth->add_option("--corpus-size", sc.corpus_size);
  synth->add_option("--queries", sc.query_count);
  synth->add_option("--seed", sc.seed);
  synth->add_option("--noise-dims", sc.noise_dims);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (synth->parsed()) {
      cmd_synth(sc, synth_dir, out);
      return kExitOk;
    }
    if (ingest->parsed()) {
      cmd_ingest(ingest_input, out_path, keep_dups, out);
      return kExitOk;
    }
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    if (seed_flag) cfg.seed = *seed_flag;
    if (!model_flag.empty()) cfg.model = model_flag;
    std::optional<double> lambda;
    if (!lambda_flag.empty()) lambda = cli_detail::parse_lambda(lambda_flag);
    if (lambda) cfg.inference_lambda = *lambda;
    cfg.validate();

    if (index->parsed()) {
      cmd_index(cfg, out_path, out);
    } else if (gen->parsed()) {
      cmd_gen_train_data(cfg, out_path, out);
    } else if (trainc->parsed()) {
      if (lambda) cfg.lambda_grid = {*lambda};
      cmd_train(cfg, out_path, out);
    } else if (select->parsed()) {
      if (!method_flag.empty()) sargs.method = parse_method(method_flag);
      if (untrained) {
        if (!method_flag.empty() && sargs.method != Method::kDppUntrained &&
            sargs.method != Method::kDppTrained) {
          throw invalid_argument("--untrained only applies to the dpp method");
        }
        sargs.method = Method::kDppUntrained;
      }
      sargs.lambda = lambda;
      std::ostringstream buf;
      cmd_select(cfg, sargs, buf);
      cli_detail::emit(out_path, out, buf.str());
    } else if (eval->parsed()) {
      EvalArgs ea;
      for (const auto& name : cli_detail::split_csv(methods_flag)) {
        ea.methods.push_back(parse_method(name));
      }
      ea.lambda = lambda;
      ea.timing = !no_timing;
      cli_detail::emit(out_path, out, cmd_eval(cfg, ea).dump(2) + "\n");
    } else if (bench->parsed()) {
      cmd_bench(cfg, n_grid, lambda, repeats, out, out_path);
    }
    return kExitOk;
  } catch (const Error& e) {
    err << "dppsel: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "dppsel: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace dppsel
