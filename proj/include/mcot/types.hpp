#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mcot {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// One sample per row; rows are written by the samplers one at a time.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Invalid user input (bad config, malformed file, violated precondition).
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Numerical failure inside a solver (non-finite gradient, infeasible instance).
class SolverError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace mcot
