#pragma once

// Adaptive Krylov evaluation of
//
//   w(T_l) = sum_{j=0}^{p} T_l^j phi_j(T_l A) b_j,     l = 1 .. end,
//
// as the first N entries of e^{T_l Ã} v (see augmented_operator.hpp).
// The exponential is advanced in substeps tau; in each substep the
// projected exponential of the IOP Hessenberg matrix is formed together
// with an embedded phi_1 error estimate, and (tau, m) are adapted.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "phikrylov/dense_linalg.hpp"
#include "phikrylov/iop.hpp"

namespace phikrylov {

/// Task I: one phi_q at several times, rescaled by 1/T^q.
/// Task II: the full linear combination at a single time.
enum class Task { I, II };

inline constexpr double kGamma = 0.9;      // stepsize safety factor
inline constexpr double kGammaMmax = 0.6;  // safety factor once m hits m_max
inline constexpr double kDelta = 1.4;      // acceptance threshold on omega
inline constexpr double kKappaDefault = 2.0;
inline constexpr double kKappaMin = 1.1;
inline constexpr double kKappaMax = 10.0;
inline constexpr Index kMinKrylovFloor = 3;

template <Real Scalar>
struct SubstepReport {
  Scalar t_now = 0;
  Scalar tau = 0;
  Index j = 0;
  bool happy = false;
  Scalar epsilon = 0;
  Scalar omega = 0;
  bool accepted = false;
  /// p > 0 only: tail of the start vector with mu removed.
  Vector<Scalar> tail_start;
  /// Accepted substeps with p > 0 only: propagated tail (mu removed) and the
  /// closed-form tail at t_now + tau.
  Vector<Scalar> tail_numeric;
  Vector<Scalar> tail_expected;
};

template <Real Scalar>
struct PhiRequest {
  std::vector<Scalar> T;
  LinearOperator<Scalar> op;
  /// [b_p, ..., b_1, b_0]
  std::vector<Vector<Scalar>> U;
  Scalar tol = Scalar(1e-7);
  Index m_init = 10;
  Index m_min = 10;
  Index m_max = 128;
  Task task = Task::II;
  int max_substeps = 10000;
  /// Optional cap on every substep length.
  std::optional<Scalar> max_substep;
  std::function<void(const SubstepReport<Scalar>&)> on_substep;
};

struct SolveStats {
  int substeps = 0;
  int rejections = 0;
  long matvecs = 0;
  int dense_exp_calls = 0;
  long krylov_dim_sum = 0;  // sum of j over accepted substeps
  double max_tail_error = 0;
  int last_n_mult = 0;
};

template <Real Scalar>
struct SolveResult {
  std::vector<Vector<Scalar>> outputs;
  Index final_m = 0;
  SolveStats stats;
};

template <Real Scalar>
struct RejectedAttempt {
  Scalar omega = 0;
  Scalar epsilon = 0;
  Scalar tau = 0;
  Index m = 0;
};

template <Real Scalar>
struct StepController {
  Scalar tau = 0;
  Index m = 0;
  Index m_min = 0;
  Index m_max = 0;
  /// Set after a rejection, cleared after every acceptance.
  std::optional<RejectedAttempt<Scalar>> rejected;
};

template <Real Scalar>
struct Suggestion {
  Scalar tau = 0;
  Index m = 0;
  Scalar q = 0;
  Scalar kappa = 0;
};

template <Real Scalar>
struct ProjectedStep {
  /// exp(tau [[H_j, e_1], [0, 0]]), (j+1) square.
  Matrix<Scalar> F;
  /// beta V_j F(1:j, 1), full augmented length.
  Vector<Scalar> w;
  Scalar epsilon = 0;
  int n_mult = 0;
};

/// One projected exponential with the embedded error estimate
/// epsilon = |beta h_{j+1,j} F(j, j+1)|, zero after a happy breakdown.
template <Real Scalar>
ProjectedStep<Scalar> projected_step(const KrylovState<Scalar>& state, Scalar tau, Scalar beta) {
  const Index j = state.j;
  if (j <= 0) throw DimensionError("projected_step: empty Krylov basis");
  Matrix<Scalar> h_aug = Matrix<Scalar>::Zero(j + 1, j + 1);
  h_aug.topLeftCorner(j, j) = state.H.topLeftCorner(j, j);
  h_aug(0, j) = Scalar(1);

  ExpmResult<Scalar> e = expm(h_aug, tau);
  ProjectedStep<Scalar> out;
  out.n_mult = e.multiplications;
  out.F = std::move(e.value);
  out.w.noalias() = beta * (state.V.leftCols(j) * out.F.col(0).head(j));
  out.epsilon = state.happy ? Scalar(0) : std::abs(beta * state.residual_norm() * out.F(j - 1, j));
  return out;
}

template <Real Scalar>
struct Acceptance {
  Scalar omega = 0;
  bool accept = false;
};

/// omega = T_end eps / (tau tol); accepted when omega <= 1.4.
template <Real Scalar>
Acceptance<Scalar> acceptance(Scalar epsilon, Scalar tau, Scalar t_end, Scalar tol) {
  const Scalar omega = t_end * epsilon / (tau * tol);
  return {omega, omega <= Scalar(kDelta)};
}

/// tau (gamma / omega)^{1 / (q + 1)}, unclipped.
template <Real Scalar>
Scalar stepsize_estimate(Scalar tau, Scalar omega, Scalar q, Scalar gamma = Scalar(kGamma)) {
  return tau * std::pow(gamma / omega, Scalar(1) / (q + Scalar(1)));
}

/// m + log(omega / gamma) / log(kappa), unclipped and unrounded.
template <Real Scalar>
Scalar dimension_estimate(Index m, Scalar omega, Scalar kappa, Scalar gamma = Scalar(kGamma)) {
  return Scalar(m) + std::log(omega / gamma) / std::log(kappa);
}

namespace detail {

template <Real Scalar>
Scalar default_order(Index m) {
  return std::max(Scalar(m) / Scalar(4) - Scalar(1), Scalar(0.25));
}

template <Real Scalar>
Scalar order_estimate(const StepController<Scalar>& ctrl, Scalar epsilon, Index m) {
  const Scalar fallback = default_order<Scalar>(m);
  if (!ctrl.rejected) return fallback;
  const auto& old = *ctrl.rejected;
  const Scalar ratio = epsilon / old.epsilon;
  const Scalar log_tau = std::log(ctrl.tau / old.tau);
  if (!(ratio > Scalar(0)) || !std::isfinite(ratio) || std::abs(log_tau) < Scalar(1e-12)) {
    return fallback;
  }
  // error ~ C tau^{q+1}
  const Scalar q = std::log(ratio) / log_tau - Scalar(1);
  return (q > Scalar(0) && std::isfinite(q)) ? q : fallback;
}

template <Real Scalar>
Scalar rate_estimate(const StepController<Scalar>& ctrl, Scalar omega, Index m) {
  if (!ctrl.rejected) return Scalar(kKappaDefault);
  const auto& old = *ctrl.rejected;
  if (old.m == m || !(omega > Scalar(0)) || !(old.omega > Scalar(0))) return Scalar(kKappaDefault);
  const Scalar kappa = std::pow(omega / old.omega, Scalar(1) / Scalar(old.m - m));
  if (!std::isfinite(kappa)) return Scalar(kKappaDefault);
  return std::clamp(kappa, Scalar(kKappaMin), Scalar(kKappaMax));
}

inline Index krylov_lower_clip(Index m) { return (3 * m + 3) / 4; }  // ceil(0.75 m)
inline Index krylov_upper_clip(Index m) { return (4 * m) / 3; }      // floor(4 m / 3)

template <Real Scalar>
Scalar clip_tau(Scalar tau_new, Scalar tau, Scalar t_remaining) {
  if (!(tau_new == tau_new)) tau_new = tau / Scalar(5);
  return std::min(t_remaining, std::clamp(tau_new, tau / Scalar(5), Scalar(5) * tau));
}

}  // namespace detail

/// Next (tau, m) after one projected step.
///
/// Happy breakdown keeps m and takes the remaining interval (capped by tau).
/// Below m_max the dimension varies with tau fixed; at m_max the stepsize
/// varies with m fixed. All clipping happens here: tau within [tau/5, 5 tau]
/// and at most t_remaining, m within [ceil(3m/4), floor(4m/3)] and
/// [m_min, m_max].
template <Real Scalar>
Suggestion<Scalar> suggest_parameters(const StepController<Scalar>& ctrl, Scalar omega,
                                      Scalar epsilon, const KrylovState<Scalar>& state,
                                      Scalar t_remaining) {
  const Scalar tau = ctrl.tau;
  const Index m = ctrl.m;
  Suggestion<Scalar> s;
  s.q = detail::order_estimate(ctrl, epsilon, m);
  s.kappa = detail::rate_estimate(ctrl, omega, m);

  if (state.happy) {
    s.tau = std::min(tau, t_remaining);
    s.m = m;
    return s;
  }

  if (state.j >= ctrl.m_max) {
    s.m = state.j;
    if (omega > Scalar(kDelta)) {
      const Scalar tau_new = tau * std::pow(Scalar(kGammaMmax) / omega, Scalar(1) / s.q);
      s.tau = std::min(t_remaining, std::max(tau / Scalar(5), tau_new));
    } else {
      const Scalar tau_new =
          omega > Scalar(0) ? stepsize_estimate(tau, omega, s.q) : Scalar(5) * tau;
      s.tau = detail::clip_tau(tau_new, tau, t_remaining);
    }
    return s;
  }

  const Index lo = std::max(detail::krylov_lower_clip(m), ctrl.m_min);
  const Index hi = std::min(detail::krylov_upper_clip(m), ctrl.m_max);
  Index m_new = lo;
  if (omega > Scalar(0)) {
    const Scalar raw = dimension_estimate(m, omega, s.kappa);
    // Absorb rounding so that e.g. 10 + log2(4) stays 12.
    const Scalar up = std::ceil(raw - Scalar(1e-9));
    m_new = up >= Scalar(hi) ? hi : up <= Scalar(lo) ? lo : static_cast<Index>(up);
  }
  s.m = std::clamp(m_new, lo, hi);
  s.tau = std::min(tau, t_remaining);
  return s;
}

/// Flop estimate of m incomplete-orthogonalization steps.
inline double cost_iop(Index m, Index n, Index p, Index nnz) {
  const double md = static_cast<double>(m);
  const double np = static_cast<double>(n + p);
  return md * (2.0 * static_cast<double>(nnz) + (2.0 * static_cast<double>(p) - 1.0) *
                                                    static_cast<double>(n) +
               static_cast<double>(p)) +
         8.0 * np - 4.0 * np + 3.0 * np * md;
}

/// Flop estimate of one dense exponential of size m+p with n_mult products.
inline double cost_exp(int n_mult, Index m, Index p) {
  const double k = static_cast<double>(m + p);
  return static_cast<double>(n_mult) * (2.0 * k - 1.0) * k * k;
}

/// Lower bound on the cost of finishing [t_now, t_end] with (tau, m).
inline double cost_model(Index m, double tau, double t_remaining, Index n, Index p, Index nnz,
                         int n_mult) {
  return std::ceil(t_remaining / tau) * (cost_iop(m, n, p, nnz) + cost_exp(n_mult, m, p));
}

/// Writes the solution for an accepted substep [t_now, t_now + tau].
///
/// Task I: every requested time strictly inside the substep gets its own
/// exponential of tau_k H_j; a time exactly at the substep end is served by
/// the main update. `ell` is the output cursor. Returns the number of extra
/// dense exponentials.
template <Real Scalar>
int record_outputs(Task task, std::span<const Scalar> T, Scalar t_now, Scalar tau,
                   const KrylovState<Scalar>& state, const Matrix<Scalar>& F, Scalar beta,
                   std::vector<Vector<Scalar>>& w, std::size_t& ell) {
  const Index j = state.j;
  const Index n = w.at(ell).size();
  const auto basis = state.V.topLeftCorner(n, j);
  int extra = 0;

  if (task == Task::I) {
    const Scalar t_next = t_now + tau;
    std::size_t n_tau = 0;
    for (std::size_t k = ell; k < T.size(); ++k) {
      if (std::abs(T[k]) < std::abs(t_next)) ++n_tau;
    }
    if (n_tau > 0) {
      const Matrix<Scalar> hj = state.H.topLeftCorner(j, j);
      for (std::size_t k = 0; k < n_tau; ++k) {
        const ExpmResult<Scalar> f2 = expm(hj, T[ell + k] - t_now);
        ++extra;
        w[ell + k].noalias() = beta * (basis * f2.value.col(0));
      }
      ell += n_tau;
    }
  }
  w[ell].noalias() = beta * (basis * F.col(0).head(j));
  return extra;
}

namespace detail {

// Returns q, the index of the single nonzero b_q for Task I (0 when p = 0).
template <Real Scalar>
int validate_request(const PhiRequest<Scalar>& req) {
  if (req.T.empty()) throw DomainError("kiops: no output times");
  for (std::size_t i = 0; i < req.T.size(); ++i) {
    if (!(req.T[i] > Scalar(0)) || !std::isfinite(req.T[i])) {
      throw DomainError("kiops: output times must be positive and finite");
    }
    if (i > 0 && !(req.T[i] > req.T[i - 1])) {
      throw DomainError("kiops: output times must be strictly increasing");
    }
  }
  if (!(req.tol > Scalar(0))) throw DomainError("kiops: tolerance must be positive");
  if (req.m_min < kMinKrylovFloor || req.m_max < req.m_min) {
    throw DomainError("kiops: need 3 <= m_min <= m_max");
  }
  if (req.U.empty()) throw DimensionError("kiops: U must contain at least b_0");
  if (!req.op.apply) throw DomainError("kiops: operator has no action");
  for (const auto& u : req.U) {
    if (u.size() != req.op.dim) throw DimensionError("kiops: vector length != operator dimension");
    if (!u.allFinite()) throw DomainError("kiops: non-finite input vector");
  }
  if (req.max_substep && !(*req.max_substep > Scalar(0))) {
    throw DomainError("kiops: max_substep must be positive");
  }

  const int p = static_cast<int>(req.U.size()) - 1;
  if (req.task == Task::II) {
    if (req.T.size() != 1) throw DomainError("kiops: Task II takes exactly one output time");
    return 0;
  }
  if (p == 0) return 0;
  int q = -1;
  for (int idx = 1; idx <= p; ++idx) {
    const auto& b = req.U[static_cast<std::size_t>(p - idx)];
    if (!b.isZero(0)) {
      if (q != -1) throw DomainError("kiops: Task I needs a single nonzero b_q");
      q = idx;
    }
  }
  // No nonzero b_q: a plain exponential at several times (or all zero).
  if (q == -1) return 0;
  if (!req.U.back().isZero(0)) throw DomainError("kiops: Task I with p > 0 needs b_0 = 0");
  return q;
}

}  // namespace detail

/// Evaluates the requested phi-function combination(s).
///
/// Throws DomainError / DimensionError for invalid requests or non-finite
/// operator output, and ConvergenceError when the substep budget runs out.
template <Real Scalar>
SolveResult<Scalar> kiops(const PhiRequest<Scalar>& req) {
  const int q_index = detail::validate_request(req);
  const AugmentedSystem<Scalar> sys = build_augmented(req.op, req.U);
  const Index n = sys.n();
  const Index p = sys.p;
  const Index aug_dim = sys.dim();

  SolveResult<Scalar> result;
  result.outputs.assign(req.T.size(), Vector<Scalar>::Zero(n));
  auto& w = result.outputs;
  auto& stats = result.stats;
  w[0] = sys.b0;

  StepController<Scalar> ctrl;
  ctrl.m_max = std::min(req.m_max, aug_dim);
  ctrl.m_min = std::min(req.m_min, ctrl.m_max);
  ctrl.m = std::clamp(req.m_init, ctrl.m_min, ctrl.m_max);

  if (sys.b0.isZero(0) && sys.B.isZero(0)) {
    result.final_m = ctrl.m;
    return result;
  }

  const std::span<const Scalar> T(req.T);
  const Scalar t_end = req.T.back();
  const Scalar t_snap = Scalar(4) * std::numeric_limits<Scalar>::epsilon() * t_end;
  auto cap = [&](Scalar tau) { return req.max_substep ? std::min(tau, *req.max_substep) : tau; };
  ctrl.tau = cap(t_end);

  KrylovState<Scalar> state(aug_dim, ctrl.m_max);
  Vector<Scalar> tail = p > 0 ? Vector<Scalar>(tail_exact(Scalar(0), Scalar(0), p)) : Vector<Scalar>();
  Vector<Scalar> start(aug_dim);
  Scalar t_now = 0;
  Scalar beta = 0;
  bool restart = true;
  std::size_t ell = 0;
  int attempts = 0;

  while (t_now < t_end) {
    if (++attempts > req.max_substeps) {
      std::ostringstream msg;
      msg << "kiops: substep budget of " << req.max_substeps << " exhausted at t = " << t_now
          << " of " << t_end << " (tau = " << ctrl.tau << ", m = " << ctrl.m
          << ", rejections = " << stats.rejections << ")";
      throw ConvergenceError(msg.str());
    }

    if (restart) {
      start.head(n) = w[ell];
      if (p > 0) start.tail(p) = sys.mu * tail;
      beta = state.start(start);
      restart = false;
    }
    if (state.j < ctrl.m && !state.happy) stats.matvecs += iop_extend(sys, state, ctrl.m);

    const ProjectedStep<Scalar> step = projected_step(state, ctrl.tau, beta);
    ++stats.dense_exp_calls;
    stats.last_n_mult = step.n_mult;

    Acceptance<Scalar> acc{Scalar(0), true};
    if (!state.happy) acc = acceptance(step.epsilon, ctrl.tau, t_end, req.tol);
    if (!std::isfinite(acc.omega)) throw DomainError("kiops: non-finite error estimate");

    const Scalar t_remaining = acc.accept ? t_end - (t_now + ctrl.tau) : t_end - t_now;
    const Suggestion<Scalar> next =
        suggest_parameters(ctrl, acc.omega, step.epsilon, state, t_remaining);

    SubstepReport<Scalar> report;
    const bool want_report = static_cast<bool>(req.on_substep);
    if (want_report) {
      report.t_now = t_now;
      report.tau = ctrl.tau;
      report.j = state.j;
      report.happy = state.happy;
      report.epsilon = step.epsilon;
      report.omega = acc.omega;
      report.accepted = acc.accept;
      if (p > 0) report.tail_start = start.tail(p) / sys.mu;
    }

    if (acc.accept) {
      stats.dense_exp_calls += record_outputs(req.task, T, t_now, ctrl.tau, state, step.F, beta, w, ell);
      Vector<Scalar> next_tail;
      if (p > 0) {
        next_tail = tail_exact(t_now, ctrl.tau, p);
        const Vector<Scalar> propagated = step.w.tail(p) / sys.mu;
        const Scalar scale = std::max(Scalar(1), next_tail.cwiseAbs().maxCoeff());
        stats.max_tail_error = std::max<double>(
            stats.max_tail_error, static_cast<double>((propagated - next_tail).cwiseAbs().maxCoeff() / scale));
        if (want_report) {
          report.tail_numeric = propagated;
          report.tail_expected = next_tail;
        }
      }
      ++stats.substeps;
      stats.krylov_dim_sum += state.j;
      t_now += ctrl.tau;
      if (t_end - t_now <= t_snap) t_now = t_end;
      if (p > 0) tail = std::move(next_tail);
      ctrl.rejected.reset();
      restart = true;
    } else {
      ++stats.rejections;
      ctrl.rejected = RejectedAttempt<Scalar>{acc.omega, step.epsilon, ctrl.tau, state.j};
    }
    if (want_report) req.on_substep(report);

    if (t_now < t_end) ctrl.tau = cap(next.tau);
    ctrl.m = next.m;
  }

  if (req.task == Task::I && q_index > 0) {
    for (std::size_t l = 0; l < w.size(); ++l) w[l] *= std::pow(Scalar(1) / req.T[l], q_index);
  }
  result.final_m = ctrl.m;
  return result;
}

}  // namespace phikrylov
