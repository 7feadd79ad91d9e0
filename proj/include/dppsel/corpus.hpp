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

#include <cstddef>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "dppsel/binary_io.hpp"
#include "dppsel/error.hpp"

namespace dppsel {

/// One demonstration pair. `output_text` may be empty for query-only records.
struct ExampleRecord {
  std::string id;
  std::string input_text;
  std::string output_text;

  friend bool operator==(const ExampleRecord&, const ExampleRecord&) = default;
};

/// Ordered, id-indexed collection of example records. Immutable once built;
/// derived corpora are new values.
class Corpus {
 public:
  Corpus() = default;

  /// Throws on empty or duplicate ids.
  explicit Corpus(std::vector<ExampleRecord> records)
      : records_(std::move(records)) {
    index_.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const auto& id = records_[i].id;
      if (id.empty()) {
        throw invalid_argument("record " + std::to_string(i) + " has empty id");
      }
      auto [it, inserted] = index_.emplace(id, i);
      if (!inserted) {
        throw invalid_argument("duplicate id \"" + id + "\" at positions " +
                               std::to_string(it->second) + " and " +
                               std::to_string(i));
      }
    }
  }

  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  const ExampleRecord& operator[](std::size_t pos) const {
    return records_[pos];
  }
  const ExampleRecord& at(std::size_t pos) const { return records_.at(pos); }
  const std::vector<ExampleRecord>& records() const noexcept {
    return records_;
  }

  std::optional<std::size_t> position(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t require_position(const std::string& id) const {
    auto pos = position(id);
    if (!pos) throw not_found("unknown example id \"" + id + "\"");
    return *pos;
  }

  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

 private:
  std::vector<ExampleRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Feature vectors aligned to corpus order. Kept in double precision; the file
/// format stores float32.
struct EmbeddingMatrix {
  std::vector<std::string> ids;
  Eigen::MatrixXd data;  // ids.size() x dim

  Eigen::Index dim() const { return data.cols(); }
  std::size_t rows() const { return ids.size(); }
};

/// Parses a JSON Lines corpus: one {"id", "input", "output"} object per line.
/// Blank lines are skipped. Line numbers in errors are 1-based.
inline Corpus load_corpus(std::istream& in, const std::string& source) {
  std::vector<ExampleRecord> records;
  std::unordered_map<std::string, std::size_t> first_line;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = source + ":" + std::to_string(line_no);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw parse_error(where + ": " + e.what());
    }
    if (!obj.is_object()) throw parse_error(where + ": expected a JSON object");
    auto field = [&](const char* key) -> std::string {
      auto it = obj.find(key);
      if (it == obj.end() || !it->is_string()) {
        throw parse_error(where + ": missing string field \"" + key + "\"");
      }
      return it->get<std::string>();
    };
    ExampleRecord rec{field("id"), field("input"), field("output")};
    if (rec.id.empty()) throw parse_error(where + ": empty id");
    if (rec.input_text.empty()) throw parse_error(where + ": empty input");
    auto [it, inserted] = first_line.emplace(rec.id, line_no);
    if (!inserted) {
      throw parse_error(source + ": duplicate id \"" + rec.id + "\" on lines " +
                        std::to_string(it->second) + " and " +
                        std::to_string(line_no));
    }
    records.push_back(std::move(rec));
  }
  return Corpus(std::move(records));
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw not_found("cannot open corpus file " + path);
  return load_corpus(in, path);
}

inline void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& r : corpus) {
    nlohmann::json obj{{"id", r.id}, {"input", r.input_text},
                       {"output", r.output_text}};
    out << obj.dump() << '\n';
  }
}

inline void write_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw not_found("cannot write corpus file " + path);
  write_corpus(out, corpus);
}

/// Collapses records with byte-identical (input, output) onto the first
/// occurrence.
inline Corpus dedup(const Corpus& corpus) {
  std::set<std::pair<std::string_view, std::string_view>> seen;
  std::vector<ExampleRecord> kept;
  kept.reserve(corpus.size());
  for (const auto& r : corpus) {
    if (seen.emplace(r.input_text, r.output_text).second) kept.push_back(r);
  }
  return Corpus(std::move(kept));
}

/// Embedding file: JSON header {"count", "dim", "ids"} then count*dim
/// little-endian float32 values, row-major.
inline EmbeddingMatrix read_embedding_file(std::istream& in,
                                           const std::string& source) {
  auto header = io::read_header_line(in, source);
  std::size_t count = 0;
  std::int64_t dim = 0;
  EmbeddingMatrix m;
  try {
    count = header.at("count").get<std::size_t>();
    dim = header.at("dim").get<std::int64_t>();
    m.ids = header.at("ids").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(source + ": bad embedding header: " + e.what());
  }
  if (dim <= 0) throw invalid_argument(source + ": embedding dim must be > 0");
  if (m.ids.size() != count) {
    throw parse_error(source + ": header count " + std::to_string(count) +
                      " but " + std::to_string(m.ids.size()) + " ids");
  }
  m.data = io::read_f32_matrix(in, static_cast<Eigen::Index>(count), dim,
                               source);
  if (!io::at_eof(in)) {
    throw parse_error(source + ": payload longer than count*dim floats");
  }
  return m;
}

inline void write_embedding_file(std::ostream& out, const EmbeddingMatrix& m) {
  nlohmann::json header{{"count", m.ids.size()}, {"dim", m.dim()},
                        {"ids", m.ids}};
  out << header.dump() << '\n';
  io::write_f32_matrix(out, m.data);
}

inline void write_embedding_file(const std::string& path,
                                 const EmbeddingMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw not_found("cannot write embedding file " + path);
  write_embedding_file(out, m);
}

/// Restricts and reorders `file_matrix` to corpus order.
inline EmbeddingMatrix align_embeddings(const Corpus& corpus,
                                        const EmbeddingMatrix& file_matrix) {
  std::unordered_map<std::string, Eigen::Index> row_of;
  for (std::size_t i = 0; i < file_matrix.ids.size(); ++i) {
    row_of.emplace(file_matrix.ids[i], static_cast<Eigen::Index>(i));
  }
  std::vector<std::string> missing;
  EmbeddingMatrix out;
  out.ids.reserve(corpus.size());
  out.data.resize(static_cast<Eigen::Index>(corpus.size()), file_matrix.dim());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto it = row_of.find(corpus[i].id);
    if (it == row_of.end()) {
      missing.push_back(corpus[i].id);
      continue;
    }
    out.ids.push_back(corpus[i].id);
    out.data.row(static_cast<Eigen::Index>(i)) = file_matrix.data.row(it->second);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw not_found("embedding file lacks ids: " + list);
  }
  return out;
}

inline EmbeddingMatrix attach_embeddings(const Corpus& corpus,
                                         const std::string& matrix_path) {
  std::ifstream in(matrix_path, std::ios::binary);
  if (!in) throw not_found("cannot open embedding file " + matrix_path);
  return align_embeddings(corpus, read_embedding_file(in, matrix_path));
}

}  // namespace dppsel
