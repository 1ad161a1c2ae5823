#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sfda {

using Scalar = double;
using Index = Eigen::Index;

/// Dense row-major array. Rank-1 quantities are stored as a single row.
template <typename T>
using MatrixT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVectorT = Eigen::Matrix<T, 1, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = MatrixT<Scalar>;
using RowVector = RowVectorT<Scalar>;

using Labels = std::vector<int>;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Raised when a training loop produces a non-finite loss.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace sfda
