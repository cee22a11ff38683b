#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace doacal {

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A covariance block failed the positive-definiteness requirement.
class NotPositiveDefinite : public std::runtime_error {
 public:
  NotPositiveDefinite(std::size_t block, const std::string& detail);
  std::size_t block_index() const noexcept { return block_; }

 private:
  std::size_t block_;
};

/// A steering or design matrix lost column rank. `columns()` lists the
/// columns found to be linearly dependent on the others.
class RankDeficient : public std::runtime_error {
 public:
  RankDeficient(std::vector<std::size_t> columns, const std::string& detail);
  const std::vector<std::size_t>& columns() const noexcept { return columns_; }

 private:
  std::vector<std::size_t> columns_;
};

class SingularFim : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Wraps a failure inside an iterative estimator with the outer iteration
/// and the update that raised it.
class EstimationError : public std::runtime_error {
 public:
  EstimationError(int iteration, const std::string& stage, const std::string& detail);
  int iteration() const noexcept { return iteration_; }
  const std::string& stage() const noexcept { return stage_; }

 private:
  int iteration_;
  std::string stage_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace doacal
