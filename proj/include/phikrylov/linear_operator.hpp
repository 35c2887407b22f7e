#pragma once

#include <functional>
#include <memory>
#include <optional>

#include <Eigen/SparseCore>

#include "phikrylov/types.hpp"

namespace phikrylov {

/// Matrix-free action x -> A x on R^dim.
///
/// `apply` must be deterministic, linear and free of side effects; it writes
/// A*in into `out`, which never aliases `in`. Solvers call it concurrently
/// only if the caller runs several solves in parallel on the same operator.
template <Real Scalar>
struct LinearOperator {
  using Apply = std::function<void(const Eigen::Ref<const Vector<Scalar>>& in,
                                   Eigen::Ref<Vector<Scalar>> out)>;

  Index dim = 0;
  Apply apply;
  /// Nonzero count of A, used only by the cost model.
  std::optional<Index> nnz_hint;

  Vector<Scalar> operator()(const Eigen::Ref<const Vector<Scalar>>& x) const {
    Vector<Scalar> y(dim);
    apply(x, y);
    return y;
  }
};

template <typename Derived>
LinearOperator<typename Derived::Scalar> make_dense_operator(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() != m.cols()) throw DimensionError("make_dense_operator: matrix must be square");
  auto mat = std::make_shared<const Matrix<Scalar>>(m);
  LinearOperator<Scalar> op;
  op.dim = m.rows();
  op.nnz_hint = static_cast<Index>((mat->array() != Scalar(0)).count());
  op.apply = [mat](const Eigen::Ref<const Vector<Scalar>>& in, Eigen::Ref<Vector<Scalar>> out) {
    out.noalias() = (*mat) * in;
  };
  return op;
}

template <Real Scalar, int Options, typename StorageIndex>
LinearOperator<Scalar> make_sparse_operator(
    const Eigen::SparseMatrix<Scalar, Options, StorageIndex>& m) {
  if (m.rows() != m.cols()) throw DimensionError("make_sparse_operator: matrix must be square");
  auto mat = std::make_shared<const Eigen::SparseMatrix<Scalar, Options, StorageIndex>>(m);
  LinearOperator<Scalar> op;
  op.dim = m.rows();
  op.nnz_hint = m.nonZeros();
  op.apply = [mat](const Eigen::Ref<const Vector<Scalar>>& in, Eigen::Ref<Vector<Scalar>> out) {
    out.noalias() = (*mat) * in;
  };
  return op;
}

/// tau * A for a scalar tau, sharing the wrapped operator.
template <Real Scalar>
LinearOperator<Scalar> scaled(LinearOperator<Scalar> op, Scalar factor) {
  LinearOperator<Scalar> out;
  out.dim = op.dim;
  out.nnz_hint = op.nnz_hint;
  out.apply = [inner = std::move(op.apply), factor](const Eigen::Ref<const Vector<Scalar>>& in,
                                                     Eigen::Ref<Vector<Scalar>> y) {
    inner(in, y);
    y *= factor;
  };
  return out;
}

}  // namespace phikrylov
