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

// HTTP clients for the LM sidecar: POST /score, POST /embed, GET /health.

#include <chrono>
#include <cmath>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <httplib.h>
#include <json.hpp>

#include "dppsel/error.hpp"
#include "dppsel/scoring.hpp"

namespace dppsel {

struct RemoteOptions {
  std::string endpoint = "http://127.0.0.1:8765";  // scheme://host:port
  std::chrono::milliseconds timeout{30000};
  int retries = 3;  // attempts after the first
  std::chrono::milliseconds backoff{100};  // doubled after each failure
  int max_in_flight = 8;
};

namespace detail {

/// POSTs (or GETs when body is null) with retries on transport errors and 5xx
/// replies. Returns the parsed JSON body of a 200 reply.
inline nlohmann::json call_sidecar(const RemoteOptions& opt, const std::string& path,
                                   const nlohmann::json* body) {
  auto delay = opt.backoff;
  std::string last_failure;
  for (int attempt = 0; attempt <= opt.retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    httplib::Client client(opt.endpoint);
    if (!client.is_valid()) {
      throw invalid_argument("invalid sidecar endpoint " + opt.endpoint);
    }
    client.set_connection_timeout(opt.timeout);
    client.set_read_timeout(opt.timeout);
    client.set_write_timeout(opt.timeout);
    auto res = body ? client.Post(path, body->dump(), "application/json")
                    : client.Get(path);
    if (!res) {
      last_failure = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_failure = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw dependency_error("sidecar " + path + " rejected the request with HTTP " +
                             std::to_string(res->status) + ": " + res->body);
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
      throw dependency_error("protocol violation: sidecar " + path +
                             " returned a non-JSON body");
    }
  }
  throw dependency_error("sidecar " + opt.endpoint + path + " timed out after " +
                         std::to_string(opt.retries + 1) + " attempts (" +
                         last_failure + ")");
}

}  // namespace detail

/// Scores requests against the sidecar's /score endpoint. Safe to share
/// between threads; at most `max_in_flight` requests are outstanding.
class RemoteScorer final : public SubsetScorer {
 public:
  explicit RemoteScorer(RemoteOptions options)
      : options_(std::move(options)), slots_(options_.max_in_flight) {
    if (options_.max_in_flight < 1 || options_.retries < 0) {
      throw invalid_argument("remote scorer needs max_in_flight >= 1, retries >= 0");
    }
  }

  double score(const ScoreRequest& request) override {
    validate_request(request);
    const auto body = to_wire_json(request);
    slots_.acquire();
    nlohmann::json reply;
    try {
      reply = detail::call_sidecar(options_, "/score", &body);
    } catch (...) {
      slots_.release();
      throw;
    }
    slots_.release();
    auto ll = reply.find("log_likelihood");
    auto ntok = reply.find("num_target_tokens");
    if (ll == reply.end() || !ll->is_number() || ntok == reply.end() ||
        !ntok->is_number_integer()) {
      throw dependency_error(
          "protocol violation: /score reply lacks log_likelihood or "
          "num_target_tokens");
    }
    const double value = ll->get<double>();
    if (!std::isfinite(value)) {
      throw dependency_error("protocol violation: non-finite log_likelihood");
    }
    return value;
  }

  const RemoteOptions& options() const noexcept { return options_; }

 private:
  RemoteOptions options_;
  std::counting_semaphore<> slots_;
};

/// Embeds texts through the sidecar's /embed endpoint; one row per text.
inline Eigen::MatrixXd remote_embed(const RemoteOptions& options,
                                    const std::vector<std::string>& texts) {
  if (texts.empty()) return {};
  const nlohmann::json body{{"texts", texts}};
  auto reply = detail::call_sidecar(options, "/embed", &body);
  try {
    const auto dim = reply.at("dim").get<Eigen::Index>();
    const auto& vectors = reply.at("vectors");
    if (vectors.size() != texts.size() || dim <= 0) {
      throw dependency_error("protocol violation: /embed returned " +
                             std::to_string(vectors.size()) + " vectors for " +
                             std::to_string(texts.size()) + " texts");
    }
    Eigen::MatrixXd out(static_cast<Eigen::Index>(texts.size()), dim);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const auto row = vectors[i].get<std::vector<double>>();
      if (static_cast<Eigen::Index>(row.size()) != dim) {
        throw dependency_error("protocol violation: /embed vector " +
                               std::to_string(i) + " has wrong length");
      }
      for (Eigen::Index j = 0; j < dim; ++j) {
        out(static_cast<Eigen::Index>(i), j) = row[static_cast<std::size_t>(j)];
      }
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw dependency_error(std::string("protocol violation: bad /embed reply: ") +
                           e.what());
  }
}

/// GET /health; returns the reply body ({status, model_name, context_length}).
inline nlohmann::json remote_health(const RemoteOptions& options) {
  return detail::call_sidecar(options, "/health", nullptr);
}

}  // namespace dppsel
