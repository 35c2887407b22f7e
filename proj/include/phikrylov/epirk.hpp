#pragma once

// Constant-step exponential integrators for u' = f(u):
// EPIRK4s3, EPIRK4s3A (two solver calls per step) and EPIRK5P1,
// EXPRB5s3 (three calls per step).

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "phikrylov/kiops.hpp"

namespace phikrylov {

using VecRef = Eigen::Ref<Vector<double>>;
using ConstVecRef = Eigen::Ref<const Vector<double>>;

struct OdeProblem {
  std::string name;
  Index dim = 0;
  /// out = f(u)
  std::function<void(ConstVecRef u, VecRef out)> rhs;
  /// out = J(u) x
  std::function<void(ConstVecRef u, ConstVecRef x, VecRef out)> jacobian;
  Vector<double> u0;
  double t0 = 0;
  double t_end = 1;
  /// Nonzeros of J, for the solver cost model.
  std::optional<Index> jacobian_nnz;
  /// Exact solution on the grid, when one is known.
  std::function<Vector<double>(double t)> exact;

  Vector<double> f(ConstVecRef u) const;
  Vector<double> jac(ConstVecRef u, ConstVecRef x) const;
};

enum class Scheme { Epirk4s3, Epirk4s3A, Epirk5P1, Exprb5s3 };

Scheme parse_scheme(std::string_view id);
std::string_view scheme_id(Scheme s);

/// Stage coefficients. Row i of alpha/g belongs to stage i+1 (the last row
/// to u_{n+1}); entries a scheme does not use are zero.
struct EpirkTableau {
  Scheme scheme = Scheme::Epirk4s3;
  int order = 4;
  int solver_calls = 2;
  std::array<std::array<double, 3>, 3> alpha{};
  std::array<std::array<double, 3>, 3> g{};
  std::array<double, 3> beta{};
};

const EpirkTableau& tableau(Scheme s);

struct KrylovOptions {
  double tol = 1e-7;
  Index m_min = 10;
  Index m_max = 128;
};

/// Per-call Krylov size hints, carried from one step to the next.
using KrylovHints = std::array<Index, 3>;
inline constexpr KrylovHints kDefaultHints{10, 10, 10};

struct StepResult {
  Vector<double> u;
  /// final_m of the last solver call.
  Index m_out = 0;
  KrylovHints hints = kDefaultHints;
  SolveStats stats;
  int solver_calls = 0;
};

struct IntegrateResult {
  Vector<double> u;
  int steps = 0;
  double h = 0;
  SolveStats stats;
  long solver_calls = 0;
  /// Mean Krylov dimension over all accepted substeps.
  double avg_m = 0;
};

/// r(u) = f(u) - f_n - J(u_n)(u - u_n).
Vector<double> remainder(const OdeProblem& prob, ConstVecRef u_n, ConstVecRef f_n, ConstVecRef u);

StepResult step(const EpirkTableau& scheme, const OdeProblem& prob, ConstVecRef u_n, double h,
                const KrylovOptions& opts, const KrylovHints& hints = kDefaultHints);

/// Takes round((t_end - t0) / h) steps of size (t_end - t0) / steps; the
/// quotient must be within 1% of an integer.
IntegrateResult integrate(const EpirkTableau& scheme, const OdeProblem& prob, double h,
                          const KrylovOptions& opts);

}  // namespace phikrylov
