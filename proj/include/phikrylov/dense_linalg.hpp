#pragma once

// Small dense kernels used on projected (Krylov-sized) matrices.
//
// expm() is the scaling-and-squaring method with diagonal Padé approximants
// of degree 3, 5, 7, 9 or 13, selected by the 1-norm of the scaled input.
// The theta thresholds are the double-precision backward-error bounds of
// that method; they are used unchanged for other floating types.

#include <array>
#include <cmath>
#include <string>

#include <Eigen/LU>

#include "phikrylov/types.hpp"

namespace phikrylov {

template <Real Scalar>
struct ExpmResult {
  Matrix<Scalar> value;
  /// Dense matrix-matrix products performed, squarings included.
  int multiplications = 0;
  int squarings = 0;
  int pade_degree = 0;
};

namespace detail {

inline constexpr std::array<double, 4> kPadeDegrees = {3, 5, 7, 9};
inline constexpr std::array<double, 4> kPadeTheta = {
    1.495585217958292e-2, 2.539398330063230e-1, 9.504178996162932e-1, 2.097847961257068e0};
inline constexpr double kTheta13 = 5.371920351148152e0;

inline constexpr double kPade3[] = {120.0, 60.0, 12.0, 1.0};
inline constexpr double kPade5[] = {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
inline constexpr double kPade7[] = {17297280.0, 8648640.0, 1995840.0, 277200.0,
                                    25200.0,    1512.0,    56.0,      1.0};
inline constexpr double kPade9[] = {17643225600.0, 8821612800.0, 2075673600.0, 302702400.0,
                                    30270240.0,    2162160.0,    110880.0,     3960.0,
                                    90.0,          1.0};
inline constexpr double kPade13[] = {64764752532480000.0,
                                     32382376266240000.0,
                                     7771770303897600.0,
                                     1187353796428800.0,
                                     129060195264000.0,
                                     10559470521600.0,
                                     670442572800.0,
                                     33522128640.0,
                                     1323241920.0,
                                     40840800.0,
                                     960960.0,
                                     16380.0,
                                     182.0,
                                     1.0};

// ceil(log2(x)) for x > 0, exact at powers of two.
template <Real Scalar>
int ceil_log2(Scalar x) {
  int e = 0;
  const Scalar f = std::frexp(x, &e);  // x = f * 2^e, f in [0.5, 1)
  return f == Scalar(0.5) ? e - 1 : e;
}

// Diagonal Padé approximant r_m(A) for m in {3,5,7,9}.
template <Real Scalar>
Matrix<Scalar> pade_low(const Matrix<Scalar>& a, int degree, int& mults) {
  const Index n = a.rows();
  const double* b = degree == 3 ? kPade3 : degree == 5 ? kPade5 : degree == 7 ? kPade7 : kPade9;
  const Matrix<Scalar> ident = Matrix<Scalar>::Identity(n, n);

  // Even powers A^2 .. A^(degree-1).
  std::array<Matrix<Scalar>, 5> pw;
  pw[0] = ident;
  pw[1].noalias() = a * a;
  ++mults;
  for (int k = 2; 2 * k <= degree - 1; ++k) {
    pw[k].noalias() = pw[k - 1] * pw[1];
    ++mults;
  }

  Matrix<Scalar> u_inner = Matrix<Scalar>::Zero(n, n);
  Matrix<Scalar> v = Matrix<Scalar>::Zero(n, n);
  for (int k = 0; 2 * k <= degree; ++k) {
    v += Scalar(b[2 * k]) * pw[k];
    u_inner += Scalar(b[2 * k + 1]) * pw[k];
  }
  Matrix<Scalar> u(n, n);
  u.noalias() = a * u_inner;
  ++mults;
  return (v - u).partialPivLu().solve(v + u);
}

template <Real Scalar>
Matrix<Scalar> pade13(const Matrix<Scalar>& a, int& mults) {
  const Index n = a.rows();
  const double* b = kPade13;
  const Matrix<Scalar> ident = Matrix<Scalar>::Identity(n, n);
  Matrix<Scalar> a2(n, n), a4(n, n), a6(n, n);
  a2.noalias() = a * a;
  a4.noalias() = a2 * a2;
  a6.noalias() = a4 * a2;
  mults += 3;

  Matrix<Scalar> tmp = Scalar(b[13]) * a6 + Scalar(b[11]) * a4 + Scalar(b[9]) * a2;
  Matrix<Scalar> u_inner(n, n);
  u_inner.noalias() = a6 * tmp;
  u_inner += Scalar(b[7]) * a6 + Scalar(b[5]) * a4 + Scalar(b[3]) * a2 + Scalar(b[1]) * ident;
  Matrix<Scalar> u(n, n);
  u.noalias() = a * u_inner;

  tmp = Scalar(b[12]) * a6 + Scalar(b[10]) * a4 + Scalar(b[8]) * a2;
  Matrix<Scalar> v(n, n);
  v.noalias() = a6 * tmp;
  v += Scalar(b[6]) * a6 + Scalar(b[4]) * a4 + Scalar(b[2]) * a2 + Scalar(b[0]) * ident;
  mults += 3;

  return (v - u).partialPivLu().solve(v + u);
}

}  // namespace detail

/// e^{scale * m} by scaling and squaring with a diagonal Padé approximant.
///
/// Throws DimensionError for non-square input and DomainError when the input
/// or the scale is not finite.
template <typename Derived>
ExpmResult<typename Derived::Scalar> expm(const Eigen::MatrixBase<Derived>& m,
                                          typename Derived::Scalar scale = 1) {
  using Scalar = typename Derived::Scalar;
  static_assert(Real<Scalar>, "expm requires a real floating-point scalar");

  if (m.rows() != m.cols()) {
    throw DimensionError("expm: matrix is " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + ", expected square");
  }
  if (!std::isfinite(scale)) throw DomainError("expm: non-finite scale");
  if (!m.allFinite()) throw DomainError("expm: non-finite matrix entry");

  ExpmResult<Scalar> out;
  const Index n = m.rows();
  if (n == 0) {
    out.value.resize(0, 0);
    return out;
  }

  Matrix<Scalar> a = scale * m;
  const Scalar nrm = norm1(a);

  for (std::size_t k = 0; k < detail::kPadeDegrees.size(); ++k) {
    if (nrm <= Scalar(detail::kPadeTheta[k])) {
      out.pade_degree = static_cast<int>(detail::kPadeDegrees[k]);
      out.value = detail::pade_low(a, out.pade_degree, out.multiplications);
      return out;
    }
  }

  int s = 0;
  if (nrm > Scalar(detail::kTheta13)) s = detail::ceil_log2(nrm / Scalar(detail::kTheta13));
  if (s > 0) a *= std::ldexp(Scalar(1), -s);

  out.pade_degree = 13;
  out.value = detail::pade13(a, out.multiplications);
  Matrix<Scalar> sq(n, n);
  for (int i = 0; i < s; ++i) {
    sq.noalias() = out.value * out.value;
    out.value.swap(sq);
  }
  out.squarings = s;
  out.multiplications += s;
  return out;
}

/// Dense matrix-vector product with a shape check.
template <typename MatDerived, typename VecDerived>
Vector<typename MatDerived::Scalar> matvec_dense(const Eigen::MatrixBase<MatDerived>& m,
                                                 const Eigen::MatrixBase<VecDerived>& x) {
  if (m.cols() != x.size()) {
    throw DimensionError("matvec_dense: matrix has " + std::to_string(m.cols()) +
                         " columns, vector has " + std::to_string(x.size()) + " entries");
  }
  Vector<typename MatDerived::Scalar> y(m.rows());
  y.noalias() = m * x;
  return y;
}

}  // namespace phikrylov
