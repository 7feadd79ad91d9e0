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

// Subset-quality oracles. Every scorer returns the log-likelihood of the
// query's target output given an ordered exemplar prompt.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dppsel/error.hpp"

namespace dppsel {

struct Exemplar {
  std::string id;  // not sent on the wire; used by the mock world
  std::string input;
  std::string output;
};

struct ScoreRequest {
  std::vector<Exemplar> exemplars;  // prompt order
  std::string query_id;
  std::string query_input;
  std::string target_output;
};

/// Wire form of a request: exemplar order preserved, ids dropped.
inline nlohmann::json to_wire_json(const ScoreRequest& request) {
  auto exemplars = nlohmann::json::array();
  for (const auto& e : request.exemplars) {
    exemplars.push_back({{"input", e.input}, {"output", e.output}});
  }
  return {{"exemplars", std::move(exemplars)},
          {"query_input", request.query_input},
          {"target_output", request.target_output}};
}

/// 64-bit FNV-1a of the wire JSON (keys sorted by nlohmann), as 16 hex digits.
inline std::string request_hash(const ScoreRequest& request) {
  const std::string canonical = to_wire_json(request).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Throws unless the request names a non-empty target.
inline void validate_request(const ScoreRequest& request) {
  if (request.target_output.empty()) {
    throw invalid_argument("score request for \"" + request.query_id +
                           "\" has an empty target output");
  }
}

class SubsetScorer {
 public:
  virtual ~SubsetScorer() = default;
  virtual double score(const ScoreRequest& request) = 0;
};

/// Synthetic world standing in for an LM: each example owns a subset of T
/// attributes, and a prompt is good when it covers the query's attributes
/// without repeating itself.
struct MockWorld {
  static constexpr int kDefaultUniverse = 16;
  static constexpr double kDefaultAlpha = 4.0;
  static constexpr double kDefaultRho = 2.0;

  int universe = kDefaultUniverse;
  double alpha = kDefaultAlpha;  // coverage weight
  double rho = kDefaultRho;      // redundancy penalty
  std::unordered_map<std::string, std::vector<int>> attributes;

  /// Stores a sorted, de-duplicated copy; throws on out-of-range attributes.
  void set_attributes(const std::string& id, std::vector<int> attrs) {
    std::sort(attrs.begin(), attrs.end());
    attrs.erase(std::unique(attrs.begin(), attrs.end()), attrs.end());
    for (int a : attrs) {
      if (a < 0 || a >= universe) {
        throw invalid_argument("attribute " + std::to_string(a) + " of \"" + id +
                               "\" outside [0, " + std::to_string(universe) + ")");
      }
    }
    attributes[id] = std::move(attrs);
  }

  const std::vector<int>& lookup(const std::string& id) const {
    auto it = attributes.find(id);
    if (it == attributes.end()) {
      throw not_found("mock world has no attributes for id \"" + id + "\"");
    }
    return it->second;
  }
};

inline nlohmann::json to_json(const MockWorld& world) {
  std::map<std::string, std::vector<int>> sorted(world.attributes.begin(),
                                                 world.attributes.end());
  return {{"T", world.universe},
          {"alpha", world.alpha},
          {"rho", world.rho},
          {"attributes", sorted}};
}

inline MockWorld mock_world_from_json(const nlohmann::json& j) {
  MockWorld w;
  try {
    w.universe = j.value("T", MockWorld::kDefaultUniverse);
    w.alpha = j.value("alpha", MockWorld::kDefaultAlpha);
    w.rho = j.value("rho", MockWorld::kDefaultRho);
    for (const auto& [id, attrs] : j.at("attributes").items()) {
      w.set_attributes(id, attrs.get<std::vector<int>>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(std::string("bad mock world: ") + e.what());
  }
  return w;
}

inline MockWorld load_mock_world(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw not_found("cannot open mock world file " + path);
  try {
    return mock_world_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path + ": " + e.what());
  }
}

inline double log_sigmoid(double z) {
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

/// log sigmoid(alpha * coverage - rho * redundancy), where coverage is the
/// fraction of query attributes present in some exemplar and redundancy is
/// the fraction of exemplar attribute slots that repeat an attribute already
/// seen. Order of exemplars does not matter.
inline double mock_score(const MockWorld& world, const ScoreRequest& request) {
  const auto& query = world.lookup(request.query_id);
  std::vector<char> present(static_cast<std::size_t>(world.universe), 0);
  std::size_t slots = 0;
  std::size_t distinct = 0;
  for (const auto& e : request.exemplars) {
    for (int a : world.lookup(e.id)) {
      ++slots;
      if (!present[static_cast<std::size_t>(a)]) {
        present[static_cast<std::size_t>(a)] = 1;
        ++distinct;
      }
    }
  }
  std::size_t covered = 0;
  for (int a : query) covered += present[static_cast<std::size_t>(a)] ? 1 : 0;
  const double coverage =
      query.empty() ? 0.0
                    : static_cast<double>(covered) / static_cast<double>(query.size());
  const double redundancy =
      slots == 0 ? 0.0
                 : static_cast<double>(slots - distinct) / static_cast<double>(slots);
  return log_sigmoid(world.alpha * coverage - world.rho * redundancy);
}

class MockScorer final : public SubsetScorer {
 public:
  explicit MockScorer(std::shared_ptr<const MockWorld> world)
      : world_(std::move(world)) {}

  double score(const ScoreRequest& request) override {
    validate_request(request);
    return mock_score(*world_, request);
  }

 private:
  std::shared_ptr<const MockWorld> world_;
};

/// File-backed score cache: JSON Lines {"hash": hex, "score": float}.
///
/// Offline mode turns a miss into an error; online mode forwards misses to the
/// upstream scorer and appends the result. Writers are serialized.
class CachedScorer final : public SubsetScorer {
 public:
  enum class Mode { kOffline, kOnline };

  CachedScorer(std::string cache_path, Mode mode,
               std::shared_ptr<SubsetScorer> upstream = nullptr)
      : path_(std::move(cache_path)), mode_(mode), upstream_(std::move(upstream)) {
    if (mode_ == Mode::kOnline && !upstream_) {
      throw invalid_argument("online cache needs an upstream scorer");
    }
    load();
  }

  double score(const ScoreRequest& request) override {
    const std::string hash = request_hash(request);
    {
      std::lock_guard lock(mu_);
      auto it = entries_.find(hash);
      if (it != entries_.end()) return it->second;
    }
    if (mode_ == Mode::kOffline) {
      throw dependency_error("score cache miss for request hash " + hash);
    }
    const double value = upstream_->score(request);
    std::lock_guard lock(mu_);
    auto [it, inserted] = entries_.emplace(hash, value);
    if (inserted) {
      std::ofstream out(path_, std::ios::app);
      if (!out) throw dependency_error("cannot append to score cache " + path_);
      out << nlohmann::json{{"hash", hash}, {"score", value}}.dump() << '\n';
    }
    return it->second;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

 private:
  void load() {
    std::ifstream in(path_);
    if (!in) return;  // a missing cache is an empty cache
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        auto obj = nlohmann::json::parse(line);
        entries_[obj.at("hash").get<std::string>()] = obj.at("score").get<double>();
      } catch (const nlohmann::json::exception& e) {
        throw parse_error(path_ + ":" + std::to_string(line_no) +
                          ": corrupt cache line: " + e.what());
      }
    }
  }

  std::string path_;
  Mode mode_;
  std::shared_ptr<SubsetScorer> upstream_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, double> entries_;
};

}  // namespace dppsel
