// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace knnmt {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (missing reverse model, nlist > |ds|, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data: corpus lines, domain specs.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Binary container corruption. Carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Shape mismatch between tensors.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or produced non-finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline void require(bool cond, const char* what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace knnmt
