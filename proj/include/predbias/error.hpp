/* Copyright 2026 The predbias Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef PREDBIAS_ERROR_HPP_
#define PREDBIAS_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace predbias {

enum class ErrorKind {
  kParse,
  kVocabulary,
  kValidation,
  kCoverage,
  kPrecondition,
  kDegenerateBatch,
  kNumerical,
  kClassNeverSeen,
  kPlan,
  kDependency,
  kConfig,
  kIo,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kVocabulary: return "vocabulary error";
    case ErrorKind::kValidation: return "validation error";
    case ErrorKind::kCoverage: return "coverage error";
    case ErrorKind::kPrecondition: return "precondition error";
    case ErrorKind::kDegenerateBatch: return "degenerate batch";
    case ErrorKind::kNumerical: return "numerical failure";
    case ErrorKind::kClassNeverSeen: return "class never seen";
    case ErrorKind::kPlan: return "plan error";
    case ErrorKind::kDependency: return "dependency error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kIo: return "io error";
  }
  return "error";
}

// All library failures surface as this type; `kind()` tells callers which
// contract was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& message() const noexcept { return message_; }

  // Same error with a location prefix on the message.
  Error with_context(const std::string& where) const { return Error(kind_, where + ": " + message_); }

 private:
  ErrorKind kind_;
  std::string message_;
};

}  // namespace predbias

#endif  // PREDBIAS_ERROR_HPP_
