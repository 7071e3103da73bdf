// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dprompt {

/// Row-major so that one row is one token position / one embedding.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape mismatches, invalid hyperparameters, mode mismatches.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The model produced a non-finite value.
class ModelFault : public Error {
 public:
  using Error::Error;
};

class TaskSpecError : public Error {
 public:
  using Error::Error;
};

/// Bad dataset content (unknown labels, malformed lines).
class DataError : public Error {
 public:
  using Error::Error;
};

class NumericalFault : public Error {
 public:
  NumericalFault(const std::string& what, std::int64_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

/// Caller violated an operation's precondition (empty inputs and the like).
class UsageError : public Error {
 public:
  using Error::Error;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace dprompt
