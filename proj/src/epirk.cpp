#include "phikrylov/epirk.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>
#include <vector>

namespace phikrylov {

Vector<double> OdeProblem::f(ConstVecRef u) const {
  Vector<double> out(dim);
  rhs(u, out);
  return out;
}

Vector<double> OdeProblem::jac(ConstVecRef u, ConstVecRef x) const {
  Vector<double> out(dim);
  jacobian(u, x, out);
  return out;
}

Scheme parse_scheme(std::string_view id) {
  if (id == "epirk4s3") return Scheme::Epirk4s3;
  if (id == "epirk4s3a") return Scheme::Epirk4s3A;
  if (id == "epirk5p1") return Scheme::Epirk5P1;
  if (id == "exprb5s3") return Scheme::Exprb5s3;
  throw DomainError("unknown scheme '" + std::string(id) + "'");
}

std::string_view scheme_id(Scheme s) {
  switch (s) {
    case Scheme::Epirk4s3: return "epirk4s3";
    case Scheme::Epirk4s3A: return "epirk4s3a";
    case Scheme::Epirk5P1: return "epirk5p1";
    case Scheme::Exprb5s3: return "exprb5s3";
  }
  return "unknown";
}

namespace {

EpirkTableau make_epirk4s3() {
  EpirkTableau t;
  t.scheme = Scheme::Epirk4s3;
  t.alpha[0] = {1.0 / 8.0, 0, 0};
  t.alpha[1] = {1.0 / 9.0, 0, 0};
  t.g[0] = {1.0 / 8.0, 0, 0};
  t.g[1] = {1.0 / 9.0, 0, 0};
  t.g[2] = {1.0, 1.0, 1.0};
  t.beta = {1.0, 0, 0};
  return t;
}

EpirkTableau make_epirk4s3a() {
  EpirkTableau t;
  t.scheme = Scheme::Epirk4s3A;
  t.alpha[0] = {1.0 / 2.0, 0, 0};
  t.alpha[1] = {2.0 / 3.0, 0, 0};
  t.g[0] = {1.0 / 2.0, 0, 0};
  t.g[1] = {2.0 / 3.0, 0, 0};
  t.g[2] = {1.0, 1.0, 1.0};
  t.beta = {1.0, 0, 0};
  return t;
}

EpirkTableau make_epirk5p1() {
  EpirkTableau t;
  t.scheme = Scheme::Epirk5P1;
  t.order = 5;
  t.solver_calls = 3;
  t.alpha[0] = {0.3512959269505819, 0, 0};
  t.alpha[1] = {0.8440547201165712, 1.690589160956896, 0};
  t.g[0] = {0.3512959269505819, 0, 0};
  t.g[1] = {0.8440547201165712, 1.0, 0};
  t.g[2] = {1.0, 0.71111109536436687, 0.6237811195337149};
  t.beta = {1.0, 1.272712731735689, 2.271459926542262};
  return t;
}

EpirkTableau make_exprb5s3() {
  EpirkTableau t;
  t.scheme = Scheme::Exprb5s3;
  t.order = 5;
  t.solver_calls = 3;
  t.alpha[0] = {1.0 / 2.0, 0, 0};
  t.alpha[1] = {9.0 / 10.0, 0, 0};
  t.g[0] = {1.0 / 2.0, 0, 0};
  t.g[1] = {9.0 / 10.0, 1.0 / 2.0, 0};
  t.g[2] = {1.0, 1.0, 1.0};
  t.beta = {1.0, 0, 0};
  return t;
}

struct Stepper {
  const OdeProblem& prob;
  ConstVecRef u_n;
  double h;
  const KrylovOptions& opts;
  KrylovHints hints;
  Vector<double> f_n;
  LinearOperator<double> hj;
  SolveStats stats;
  int calls = 0;
  Index last_m = 0;

  Stepper(const OdeProblem& p, ConstVecRef u, double step, const KrylovOptions& o,
          const KrylovHints& hin)
      : prob(p), u_n(u), h(step), opts(o), hints(hin) {
    f_n = prob.f(u_n);
    if (!f_n.allFinite()) throw DomainError("right-hand side is not finite at u_n");
    hj.dim = prob.dim;
    hj.nnz_hint = prob.jacobian_nnz;
    hj.apply = [this](const Eigen::Ref<const Vector<double>>& in, Eigen::Ref<Vector<double>> out) {
      prob.jacobian(u_n, in, out);
      out *= h;
    };
  }

  Vector<double> r(ConstVecRef u) const { return remainder(prob, u_n, f_n, u); }

  // Task I: phi_q(T_k hJ) v for each T_k.
  std::vector<Vector<double>> phi_times(int slot, int q, const Vector<double>& v,
                                        std::vector<double> times) {
    std::vector<Vector<double>> u(static_cast<std::size_t>(q) + 1, Vector<double>::Zero(prob.dim));
    u.front() = v;
    return call(slot, Task::I, std::move(times), std::move(u));
  }

  // Task II at T = 1, b = {b_1, ..., b_4}, b_0 = 0.
  Vector<double> combination(int slot, const std::array<Vector<double>, 4>& b) {
    std::vector<Vector<double>> u{b[3], b[2], b[1], b[0], Vector<double>::Zero(prob.dim)};
    return call(slot, Task::II, {1.0}, std::move(u)).front();
  }

  std::vector<Vector<double>> call(int slot, Task task, std::vector<double> times,
                                   std::vector<Vector<double>> u) {
    PhiRequest<double> req;
    req.T = std::move(times);
    req.op = hj;
    req.U = std::move(u);
    req.tol = opts.tol;
    req.m_min = opts.m_min;
    req.m_max = opts.m_max;
    req.m_init = hints[static_cast<std::size_t>(slot)];
    req.task = task;
    SolveResult<double> res;
    try {
      res = kiops(req);
    } catch (const ConvergenceError& e) {
      throw ConvergenceError(context(slot) + e.what());
    } catch (const DomainError& e) {
      throw DomainError(context(slot) + e.what());
    }
    ++calls;
    hints[static_cast<std::size_t>(slot)] = res.final_m;
    last_m = res.final_m;
    accumulate(stats, res.stats);
    return std::move(res.outputs);
  }

  std::string context(int slot) const {
    return std::string(prob.name) + ": solver call " + std::to_string(slot + 1) + ": ";
  }

  static void accumulate(SolveStats& acc, const SolveStats& s) {
    acc.substeps += s.substeps;
    acc.rejections += s.rejections;
    acc.matvecs += s.matvecs;
    acc.dense_exp_calls += s.dense_exp_calls;
    acc.krylov_dim_sum += s.krylov_dim_sum;
    acc.max_tail_error = std::max(acc.max_tail_error, s.max_tail_error);
    acc.last_n_mult = s.last_n_mult;
  }
};

Vector<double> step_epirk4(const EpirkTableau& t, Stepper& s, double c3r2, double c3r3,
                           double c4r2, double c4r3) {
  const Vector<double> hf = s.h * s.f_n;
  const double g2 = t.g[0][0];
  const double g3 = t.g[1][0];
  const bool second_first = g3 < g2;
  std::vector<double> times = second_first ? std::vector<double>{g3, g2} : std::vector<double>{g2, g3};
  const auto y = s.phi_times(0, 1, hf, times);
  const Vector<double>& phi_g2 = second_first ? y[1] : y[0];
  const Vector<double>& phi_g3 = second_first ? y[0] : y[1];

  const Vector<double> u2 = s.u_n + t.alpha[0][0] * phi_g2;
  const Vector<double> u3 = s.u_n + t.alpha[1][0] * phi_g3;
  const Vector<double> hr2 = s.h * s.r(u2);
  const Vector<double> hr3 = s.h * s.r(u3);

  const Vector<double> zero = Vector<double>::Zero(s.prob.dim);
  const std::array<Vector<double>, 4> b{hf, zero, c3r2 * hr2 + c3r3 * hr3, c4r2 * hr2 + c4r3 * hr3};
  return s.u_n + s.combination(1, b);
}

Vector<double> step_epirk5p1(const EpirkTableau& t, Stepper& s) {
  const auto& a = t.alpha;
  const auto& g = t.g;
  const auto& b = t.beta;
  const Vector<double> hf = s.h * s.f_n;

  // phi_1 on h f at g_11 < g_21 < g_31 = 1.
  const auto y1 = s.phi_times(0, 1, hf, {g[0][0], g[1][0], g[2][0]});
  const Vector<double> u2 = s.u_n + a[0][0] * y1[0];
  const Vector<double> hr2 = s.h * s.r(u2);

  // phi_1 on h r(U2) at g_32 < g_22 = 1.
  const auto y2 = s.phi_times(1, 1, hr2, {g[2][1], g[1][1]});
  const Vector<double> u3 = s.u_n + a[1][0] * y1[1] + a[1][1] * y2[1];
  const Vector<double> hr3 = s.h * s.r(u3);

  const Vector<double> d = -2.0 * hr2 + hr3;
  const auto y3 = s.phi_times(2, 3, d, {g[2][2]});
  return s.u_n + b[0] * y1[2] + b[1] * y2[0] + b[2] * y3[0];
}

Vector<double> step_exprb5s3(const EpirkTableau& t, Stepper& s) {
  const Vector<double> hf = s.h * s.f_n;
  const double c2 = t.g[0][0];
  const double c3 = t.g[1][0];

  const auto y1 = s.phi_times(0, 1, hf, {c2, c3});
  const Vector<double> u2 = s.u_n + c2 * y1[0];
  const Vector<double> hr2 = s.h * s.r(u2);

  const auto y2 = s.phi_times(1, 3, hr2, {c2, c3});
  const Vector<double> u3 =
      s.u_n + c3 * y1[1] + (27.0 / 25.0) * y2[0] + (729.0 / 125.0) * y2[1];
  const Vector<double> hr3 = s.h * s.r(u3);

  const Vector<double> zero = Vector<double>::Zero(s.prob.dim);
  const std::array<Vector<double>, 4> b{hf, zero, 18.0 * hr2 - (250.0 / 81.0) * hr3,
                                        -60.0 * hr2 + (500.0 / 27.0) * hr3};
  return s.u_n + s.combination(2, b);
}

template <typename E>
[[noreturn]] void rethrow_at_step(const E& e, int index) {
  throw E("step " + std::to_string(index) + ": " + e.what());
}

}  // namespace

const EpirkTableau& tableau(Scheme s) {
  static const EpirkTableau t4 = make_epirk4s3();
  static const EpirkTableau t4a = make_epirk4s3a();
  static const EpirkTableau t5 = make_epirk5p1();
  static const EpirkTableau t5s = make_exprb5s3();
  switch (s) {
    case Scheme::Epirk4s3: return t4;
    case Scheme::Epirk4s3A: return t4a;
    case Scheme::Epirk5P1: return t5;
    case Scheme::Exprb5s3: return t5s;
  }
  throw DomainError("unknown scheme");
}

Vector<double> remainder(const OdeProblem& prob, ConstVecRef u_n, ConstVecRef f_n, ConstVecRef u) {
  if (u_n.size() != prob.dim || f_n.size() != prob.dim || u.size() != prob.dim) {
    throw DimensionError("remainder: vector length does not match the problem dimension");
  }
  Vector<double> r = prob.f(u);
  if (!r.allFinite()) throw DomainError("remainder: right-hand side is not finite");
  r -= f_n;
  r -= prob.jac(u_n, u - u_n);
  return r;
}

StepResult step(const EpirkTableau& scheme, const OdeProblem& prob, ConstVecRef u_n, double h,
                const KrylovOptions& opts, const KrylovHints& hints) {
  if (!(h > 0) || !std::isfinite(h)) throw DomainError("step: h must be positive");
  if (u_n.size() != prob.dim) throw DimensionError("step: state length mismatch");

  Stepper s(prob, u_n, h, opts, hints);
  StepResult out;
  switch (scheme.scheme) {
    case Scheme::Epirk4s3:
      out.u = step_epirk4(scheme, s, 1892.0 - 2.0 * 1458.0, 1458.0, -42336.0 + 2.0 * 34992.0,
                          -34992.0);
      break;
    case Scheme::Epirk4s3A:
      out.u = step_epirk4(scheme, s, 32.0, -27.0 / 2.0, -144.0, 81.0);
      break;
    case Scheme::Epirk5P1:
      out.u = step_epirk5p1(scheme, s);
      break;
    case Scheme::Exprb5s3:
      out.u = step_exprb5s3(scheme, s);
      break;
  }
  out.m_out = s.last_m;
  out.hints = s.hints;
  out.stats = s.stats;
  out.solver_calls = s.calls;
  return out;
}

IntegrateResult integrate(const EpirkTableau& scheme, const OdeProblem& prob, double h,
                          const KrylovOptions& opts) {
  if (!(h > 0) || !std::isfinite(h)) throw DomainError("integrate: h must be positive");
  const double span = prob.t_end - prob.t0;
  const double quotient = span / h;
  const double steps = std::round(quotient);
  if (steps < 1 || std::abs(quotient - steps) > 0.01) {
    std::ostringstream msg;
    msg << "integrate: (t_end - t0) / h = " << quotient << " is not within 1% of an integer";
    throw DomainError(msg.str());
  }

  IntegrateResult res;
  res.steps = static_cast<int>(steps);
  res.h = span / steps;
  res.u = prob.u0;
  KrylovHints hints = kDefaultHints;
  for (int k = 0; k < res.steps; ++k) {
    StepResult sr;
    try {
      sr = step(scheme, prob, res.u, res.h, opts, hints);
    } catch (const ConvergenceError& e) {
      rethrow_at_step(e, k);
    } catch (const DomainError& e) {
      rethrow_at_step(e, k);
    }
    res.u = std::move(sr.u);
    hints = sr.hints;
    res.solver_calls += sr.solver_calls;
    res.stats.substeps += sr.stats.substeps;
    res.stats.rejections += sr.stats.rejections;
    res.stats.matvecs += sr.stats.matvecs;
    res.stats.dense_exp_calls += sr.stats.dense_exp_calls;
    res.stats.krylov_dim_sum += sr.stats.krylov_dim_sum;
    res.stats.max_tail_error = std::max(res.stats.max_tail_error, sr.stats.max_tail_error);
  }
  if (res.stats.substeps > 0) {
    res.avg_m = static_cast<double>(res.stats.krylov_dim_sum) / res.stats.substeps;
  }
  return res;
}

}  // namespace phikrylov
