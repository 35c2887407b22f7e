#pragma once

#include <concepts>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace phikrylov {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename T>
concept Real = std::floating_point<T>;

/// Shapes or lengths that do not fit together.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

/// Non-finite data, or arguments outside the domain an operation supports.
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// The adaptive solver ran out of its substep budget.
class ConvergenceError : public std::runtime_error {
 public:
  explicit ConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

template <typename Derived>
typename Derived::Scalar norm1(const Eigen::MatrixBase<Derived>& m) {
  if (m.size() == 0) return typename Derived::Scalar(0);
  return m.cwiseAbs().colwise().sum().maxCoeff();
}

}  // namespace phikrylov
