#pragma once

// Brute-force dense reference values for phi-functions,
//
//   phi_k(z) = \int_0^1 e^{(1-t) z} t^{k-1} / (k-1)! dt,   phi_0(z) = e^z,
//
// and for the linear combination  sum_j tau^j phi_j(tau A) b_j.
// Everything here forms full dense matrices; it is meant for small
// reference problems and tests, never for the fast path.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "phikrylov/dense_linalg.hpp"

namespace phikrylov {

inline constexpr int kMaxOraclePhiIndex = 8;
inline constexpr Index kMaxOracleDimension = 256;

namespace detail {

inline void check_oracle_input(Index n, int k, const char* who) {
  if (k < 0 || k > kMaxOraclePhiIndex) {
    throw DomainError(std::string(who) + ": phi index " + std::to_string(k) + " outside [0, " +
                      std::to_string(kMaxOraclePhiIndex) + "]");
  }
  if (n > kMaxOracleDimension) {
    throw DomainError(std::string(who) + ": dimension " + std::to_string(n) +
                      " too large for the dense oracle");
  }
}

template <Real Scalar>
Scalar factorial(int k) {
  Scalar f = 1;
  for (int i = 2; i <= k; ++i) f *= Scalar(i);
  return f;
}

}  // namespace detail

/// phi_k(tau * a) from the exponential of the block matrix
///
///   [ tau*a  I  0 ... ]
///   [  0     0  I ... ]
///   [  ...          I ]
///   [  0     ...    0 ]        ((k+1) n square),
///
/// whose top-right n-by-n block is phi_k(tau * a).
template <typename Derived>
Matrix<typename Derived::Scalar> phi_dense(const Eigen::MatrixBase<Derived>& a,
                                           typename Derived::Scalar tau, int k) {
  using Scalar = typename Derived::Scalar;
  if (a.rows() != a.cols()) throw DimensionError("phi_dense: matrix must be square");
  const Index n = a.rows();
  detail::check_oracle_input(n, k, "phi_dense");

  if (k == 0) return expm(a, tau).value;

  const Index big = (k + 1) * n;
  Matrix<Scalar> block = Matrix<Scalar>::Zero(big, big);
  block.topLeftCorner(n, n) = tau * a;
  for (int i = 0; i < k; ++i) {
    block.block(i * n, (i + 1) * n, n, n).setIdentity();
  }
  const Matrix<Scalar> e = expm(block).value;
  return e.topRightCorner(n, n);
}

/// phi_k(tau * a) from its power series  sum_j (tau a)^j / (j+k)!,
/// accumulated with compensated summation. Intended for ||tau a||_1 of
/// order one; throws DomainError above 30.
template <typename Derived>
Matrix<typename Derived::Scalar> phi_taylor(const Eigen::MatrixBase<Derived>& a,
                                            typename Derived::Scalar tau, int k) {
  using Scalar = typename Derived::Scalar;
  if (a.rows() != a.cols()) throw DimensionError("phi_taylor: matrix must be square");
  const Index n = a.rows();
  detail::check_oracle_input(n, k, "phi_taylor");

  const Matrix<Scalar> ta = tau * a;
  if (norm1(ta) > Scalar(30)) throw DomainError("phi_taylor: ||tau A||_1 too large for series");

  Matrix<Scalar> term = Matrix<Scalar>::Identity(n, n) / detail::factorial<Scalar>(k);
  Matrix<Scalar> sum = term;
  Matrix<Scalar> comp = Matrix<Scalar>::Zero(n, n);
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  for (int j = 1; j < 400; ++j) {
    term = (term * ta) / Scalar(j + k);
    // Kahan update, entrywise.
    const Matrix<Scalar> y = term - comp;
    const Matrix<Scalar> t = sum + y;
    comp = (t - sum) - y;
    sum = t;
    if (j > 4 && norm1(term) <= Scalar(1e-3) * eps * norm1(sum)) break;
  }
  return sum;
}

/// Scalar phi_k(z) read off the augmented exponential (stable for any z).
template <Real Scalar>
Scalar phi_scalar(Scalar z, int k) {
  Matrix<Scalar> a(1, 1);
  a(0, 0) = z;
  return phi_dense(a, Scalar(1), k)(0, 0);
}

/// Scalar phi_k(z) from the recurrence phi_{j+1}(z) = (phi_j(z) - 1/j!) / z,
/// switching to the power series for |z| < 0.1 where the recurrence cancels.
template <Real Scalar>
Scalar phi_scalar_recurrence(Scalar z, int k) {
  if (k < 0) throw DomainError("phi_scalar_recurrence: negative index");
  if (std::abs(z) < Scalar(0.1)) {
    Scalar term = Scalar(1) / detail::factorial<Scalar>(k);
    Scalar sum = term;
    for (int j = 1; j < 60; ++j) {
      term *= z / Scalar(j + k);
      sum += term;
      if (std::abs(term) <= std::numeric_limits<Scalar>::epsilon() * std::abs(sum)) break;
    }
    return sum;
  }
  Scalar phi = std::exp(z);
  Scalar inv_fact = 1;
  for (int j = 0; j < k; ++j) {
    phi = (phi - inv_fact) / z;
    inv_fact /= Scalar(j + 1);
  }
  return phi;
}

/// Dense (N+p)-square augmented matrix [[a, B], [0, K]] with
/// B = [b_p, ..., b_1] and K the p-by-p upper shift.
/// `b` holds b_0 .. b_p; b_0 is not part of the matrix.
template <typename Derived>
Matrix<typename Derived::Scalar> assemble_augmented_dense(
    const Eigen::MatrixBase<Derived>& a, const std::vector<Vector<typename Derived::Scalar>>& b,
    typename Derived::Scalar b_scale = 1) {
  using Scalar = typename Derived::Scalar;
  if (a.rows() != a.cols()) throw DimensionError("assemble_augmented_dense: matrix must be square");
  if (b.empty()) throw DimensionError("assemble_augmented_dense: need at least b_0");
  const Index n = a.rows();
  const Index p = static_cast<Index>(b.size()) - 1;
  for (const auto& v : b) {
    if (v.size() != n) throw DimensionError("assemble_augmented_dense: vector length mismatch");
  }
  Matrix<Scalar> aug = Matrix<Scalar>::Zero(n + p, n + p);
  aug.topLeftCorner(n, n) = a;
  for (Index c = 0; c < p; ++c) {
    aug.col(n + c).head(n) = b_scale * b[static_cast<std::size_t>(p - c)];
  }
  for (Index i = 0; i + 1 < p; ++i) aug(n + i, n + i + 1) = 1;
  return aug;
}

/// Full e^{tau Ã} [b_0; e_p] of length N+p.
template <typename Derived>
Vector<typename Derived::Scalar> augmented_exponential_action(
    const Eigen::MatrixBase<Derived>& a, typename Derived::Scalar tau,
    const std::vector<Vector<typename Derived::Scalar>>& b) {
  using Scalar = typename Derived::Scalar;
  const Index n = a.rows();
  const Index p = static_cast<Index>(b.size()) - 1;
  if (p > kMaxOraclePhiIndex) throw DomainError("augmented_exponential_action: p too large");
  const Matrix<Scalar> aug = assemble_augmented_dense(a, b);
  Vector<Scalar> v = Vector<Scalar>::Zero(n + p);
  v.head(n) = b[0];
  if (p > 0) v(n + p - 1) = 1;
  return expm(aug, tau).value * v;
}

/// sum_{j=0}^{p} tau^j phi_j(tau a) b_j, with `b` = {b_0, ..., b_p}.
template <typename Derived>
Vector<typename Derived::Scalar> phi_combination_dense(
    const Eigen::MatrixBase<Derived>& a, typename Derived::Scalar tau,
    const std::vector<Vector<typename Derived::Scalar>>& b) {
  return augmented_exponential_action(a, tau, b).head(a.rows());
}

}  // namespace phikrylov
