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

#include <stdexcept>
#include <string>

namespace dppsel {

/// Coarse failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  kInvalidArgument,   // precondition or configuration violation
  kParse,             // malformed input file
  kNotFound,          // missing artifact or unknown id
  kNumeric,           // indefinite matrix, non-finite value
  kCapability,        // request exceeds what an exact routine supports
  kDependency,        // scorer / sidecar / cache failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error invalid_argument(const std::string& what) {
  return Error(ErrorKind::kInvalidArgument, what);
}
inline Error parse_error(const std::string& what) {
  return Error(ErrorKind::kParse, what);
}
inline Error not_found(const std::string& what) {
  return Error(ErrorKind::kNotFound, what);
}
inline Error numeric_error(const std::string& what) {
  return Error(ErrorKind::kNumeric, what);
}
inline Error capability_error(const std::string& what) {
  return Error(ErrorKind::kCapability, what);
}
inline Error dependency_error(const std::string& what) {
  return Error(ErrorKind::kDependency, what);
}

}  // namespace dppsel
