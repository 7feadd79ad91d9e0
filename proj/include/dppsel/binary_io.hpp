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

// Helpers for the "JSON header line + little-endian float32 payload" files
// used for embeddings and model weights.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include <Eigen/Core>
#include <json.hpp>

#include "dppsel/error.hpp"

namespace dppsel::io {

inline std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) |
           (v >> 24);
  }
}

/// Reads the first line of `in` and parses it as a JSON object.
inline nlohmann::json read_header_line(std::istream& in,
                                       const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) {
    throw parse_error(source + ": missing JSON header line");
  }
  try {
    auto header = nlohmann::json::parse(line);
    if (!header.is_object()) {
      throw parse_error(source + ": header line is not a JSON object");
    }
    return header;
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(source + ": bad header line: " + e.what());
  }
}

/// Reads rows*cols float32 values (row-major) into a double matrix.
inline Eigen::MatrixXd read_f32_matrix(std::istream& in, Eigen::Index rows,
                                       Eigen::Index cols,
                                       const std::string& source) {
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      std::uint32_t raw = 0;
      if (!in.read(reinterpret_cast<char*>(&raw), sizeof(raw))) {
        throw parse_error(source + ": payload truncated at row " +
                          std::to_string(i) + ", column " + std::to_string(j));
      }
      raw = to_little_endian(raw);
      out(i, j) = static_cast<double>(std::bit_cast<float>(raw));
    }
  }
  return out;
}

inline void write_f32_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      auto raw = to_little_endian(
          std::bit_cast<std::uint32_t>(static_cast<float>(m(i, j))));
      out.write(reinterpret_cast<const char*>(&raw), sizeof(raw));
    }
  }
}

/// True when the stream has no bytes left.
inline bool at_eof(std::istream& in) {
  return in.peek() == std::char_traits<char>::eof();
}

}  // namespace dppsel::io
