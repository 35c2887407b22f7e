#pragma once

// Incomplete orthogonalization of length 2.
//
// Builds V = [v_1, ..., v_{j+1}] and the banded H with
//
//   Ã V_j = V_j H_j + h_{j+1,j} v_{j+1} e_j^T,
//
// orthogonalizing each new vector against the two previous ones only, so
// V_j is not orthonormal in general but has full rank and spans K_j(Ã, v).

#include <algorithm>
#include <cmath>
#include <string>

#include "phikrylov/augmented_operator.hpp"

namespace phikrylov {

inline constexpr double kBreakdownRelTol = 1e-12;
inline constexpr double kBreakdownAbsTol = 1e-14;

template <Real Scalar>
class KrylovState {
 public:
  KrylovState(Index dim, Index m_max) : m_max_(m_max) {
    if (dim <= 0) throw DimensionError("KrylovState: dimension must be positive");
    if (m_max <= 0) throw DimensionError("KrylovState: m_max must be positive");
    V.resize(dim, std::min<Index>(m_max + 1, 16));
    H = Matrix<Scalar>::Zero(m_max + 1, m_max + 1);
  }

  /// Basis vectors; only the first j (+1 unless happy) columns are meaningful.
  Matrix<Scalar> V;
  /// Projection coefficients; H(i, c) is zero for i < c - 1 and i > c + 1.
  Matrix<Scalar> H;
  Index j = 0;
  bool happy = false;

  Index m_max() const { return m_max_; }
  Index dim() const { return V.rows(); }

  /// Sets v_1 = v / ||v|| and clears the basis. Returns ||v||.
  Scalar start(const Eigen::Ref<const Vector<Scalar>>& v) {
    if (v.size() != dim()) throw DimensionError("KrylovState::start: length mismatch");
    const Scalar beta = v.norm();
    if (!std::isfinite(beta)) throw DomainError("KrylovState::start: non-finite start vector");
    if (beta == Scalar(0)) throw DomainError("KrylovState::start: zero start vector");
    V.col(0) = v / beta;
    j = 0;
    happy = false;
    return beta;
  }

  /// h_{j+1,j}; zero after a happy breakdown.
  Scalar residual_norm() const { return j > 0 ? H(j, j - 1) : Scalar(0); }

  void reserve_columns(Index cols) {
    cols = std::min(cols, m_max_ + 1);
    if (cols <= V.cols()) return;
    const Index grown = std::min(m_max_ + 1, std::max(cols, 2 * V.cols()));
    V.conservativeResize(Eigen::NoChange, grown);
  }

 private:
  Index m_max_;
};

/// Extends the factorization from j to m_target columns (fewer on happy
/// breakdown). Returns the number of operator applications performed.
/// Resuming with a larger target reproduces the columns of one
/// uninterrupted run bit for bit.
template <Real Scalar>
int iop_extend(const AugmentedSystem<Scalar>& sys, KrylovState<Scalar>& state, Index m_target) {
  if (m_target > state.m_max()) {
    throw DimensionError("iop_extend: target " + std::to_string(m_target) + " exceeds m_max " +
                         std::to_string(state.m_max()));
  }
  if (state.happy) throw DomainError("iop_extend: basis already hit a happy breakdown");
  if (sys.dim() != state.dim()) throw DimensionError("iop_extend: system/state size mismatch");

  state.reserve_columns(m_target + 1);
  auto& V = state.V;
  auto& H = state.H;
  int applications = 0;

  while (state.j < m_target) {
    const Index c = state.j;  // source column; the new vector goes to c + 1
    ++state.j;
    augmented_matvec<Scalar>(sys, V.col(c), V.col(c + 1));
    ++applications;
    const Scalar candidate_norm = V.col(c + 1).norm();
    if (!std::isfinite(candidate_norm)) {
      throw DomainError("iop_extend: operator produced non-finite values at step " +
                        std::to_string(state.j));
    }

    H.col(c).setZero();
    for (Index i = std::max<Index>(0, c - 1); i <= c; ++i) {
      H(i, c) = V.col(i).dot(V.col(c + 1));
      V.col(c + 1) -= H(i, c) * V.col(i);
    }

    const Scalar s = V.col(c + 1).norm();
    if (s <= std::max(Scalar(kBreakdownRelTol) * candidate_norm, Scalar(kBreakdownAbsTol))) {
      state.happy = true;
      break;
    }
    H(c + 1, c) = s;
    V.col(c + 1) /= s;
  }
  return applications;
}

}  // namespace phikrylov
