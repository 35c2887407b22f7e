#pragma once

// Matrix-free augmented operator
//
//   Ã = [ A  B ]      B = [b_p, ..., b_1]  (N x p),
//       [ 0  K ]      K = p x p upper shift,
//
// for which the first N entries of e^{tau Ã} [b_0; e_p] equal
// sum_j tau^j phi_j(tau A) b_j and the last p entries are
// [tau^{p-1}/(p-1)!, ..., tau, 1].
//
// B is stored pre-multiplied by nu = 2^{-ceil(log2 ||B||_1)}; every start
// vector must then carry mu = 1/nu times the exact tail.

#include <cmath>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "phikrylov/linear_operator.hpp"

namespace phikrylov {

template <Real Scalar>
struct AugmentedSystem {
  LinearOperator<Scalar> op;
  Matrix<Scalar> B;  // nu * [b_p, ..., b_1]
  Vector<Scalar> b0;
  Index p = 0;
  Scalar nu = 1;
  Scalar mu = 1;

  Index n() const { return op.dim; }
  Index dim() const { return op.dim + p; }
};

/// Power-of-two normalization pair (nu, mu) for a block with 1-norm `norm`.
template <Real Scalar>
std::pair<Scalar, Scalar> normalization_constants(Scalar norm) {
  if (!(norm > Scalar(0)) || !std::isfinite(norm)) return {Scalar(1), Scalar(1)};
  int e = 0;
  const Scalar f = std::frexp(norm, &e);
  if (f == Scalar(0.5)) --e;  // exact power of two
  return {std::ldexp(Scalar(1), -e), std::ldexp(Scalar(1), e)};
}

/// Builds the augmented system from U = [b_p, ..., b_1, b_0].
template <Real Scalar>
AugmentedSystem<Scalar> build_augmented(LinearOperator<Scalar> op,
                                        const std::vector<Vector<Scalar>>& u) {
  if (op.dim <= 0) throw DimensionError("build_augmented: operator dimension must be positive");
  if (u.empty()) throw DimensionError("build_augmented: need at least b_0");
  const Index n = op.dim;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (u[i].size() != n) {
      throw DimensionError("build_augmented: vector " + std::to_string(i) + " has length " +
                           std::to_string(u[i].size()) + ", operator dimension is " +
                           std::to_string(n));
    }
  }

  AugmentedSystem<Scalar> sys;
  sys.p = static_cast<Index>(u.size()) - 1;
  sys.b0 = u.back();
  sys.B.resize(n, sys.p);
  for (Index c = 0; c < sys.p; ++c) sys.B.col(c) = u[static_cast<std::size_t>(c)];
  std::tie(sys.nu, sys.mu) = normalization_constants(norm1(sys.B));
  if (sys.nu != Scalar(1)) sys.B *= sys.nu;
  sys.op = std::move(op);
  return sys;
}

/// out = Ã v. Exactly one call to the wrapped operator.
template <Real Scalar>
void augmented_matvec(const AugmentedSystem<Scalar>& sys,
                      const Eigen::Ref<const Vector<Scalar>>& v, Eigen::Ref<Vector<Scalar>> out) {
  const Index n = sys.n();
  const Index p = sys.p;
  if (v.size() != n + p || out.size() != n + p) {
    throw DimensionError("augmented_matvec: expected length " + std::to_string(n + p) + ", got " +
                         std::to_string(v.size()));
  }
  sys.op.apply(v.head(n), out.head(n));
  if (p == 0) return;
  out.head(n).noalias() += sys.B * v.tail(p);
  out.segment(n, p - 1) = v.segment(n + 1, p - 1);
  out(n + p - 1) = Scalar(0);
}

template <Real Scalar, typename Derived>
Vector<Scalar> augmented_matvec(const AugmentedSystem<Scalar>& sys,
                                const Eigen::MatrixBase<Derived>& v) {
  Vector<Scalar> out(sys.dim());
  augmented_matvec<Scalar>(sys, v, out);
  return out;
}

/// [t^{p-1}/(p-1)!, ..., t, 1] at t = t_now + tau.
template <Real Scalar>
Vector<Scalar> tail_exact(Scalar t_now, Scalar tau, Index p) {
  if (p < 1) throw DimensionError("tail_exact: p must be at least 1");
  const Scalar t = t_now + tau;
  Vector<Scalar> tail(p);
  tail(p - 1) = Scalar(1);
  for (Index k = 1; k < p; ++k) tail(p - 1 - k) = tail(p - k) * t / Scalar(k);
  return tail;
}

/// Nonzero count of Ã for the cost model: nnz(A) (hinted, else 10 N), the
/// dense B block and the p-1 shift entries.
template <Real Scalar>
Index augmented_nnz(const AugmentedSystem<Scalar>& sys) {
  const Index n = sys.n();
  const Index nnz_a = sys.op.nnz_hint.value_or(10 * n);
  return nnz_a + n * sys.p + (sys.p > 0 ? sys.p - 1 : 0);
}

}  // namespace phikrylov
