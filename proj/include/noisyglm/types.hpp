#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace noisyglm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IndexSet = std::vector<Eigen::Index>;

// Error hierarchy. Everything thrown by the library derives from Error so
// callers (CLI, bindings) can map failures to exit codes in one place.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Singular or rank-deficient matrix. `columns` names offending column
// indices when they could be identified.
class RankDeficientError : public Error {
 public:
  RankDeficientError(const std::string& what, IndexSet columns = {})
      : Error(what), columns_(std::move(columns)) {}
  const IndexSet& columns() const noexcept { return columns_; }

 private:
  IndexSet columns_;
};

// Solver produced a non-finite objective or otherwise failed numerically.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace noisyglm
