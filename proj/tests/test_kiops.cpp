#include <random>

#include "doctest.h"
#include "phikrylov/kiops.hpp"
#include "phikrylov/phi_oracle.hpp"
#include "test_support.hpp"

using namespace phikrylov;
using test::random_stiff_matrix;
using test::random_vector;
using test::rel_err;

namespace {

PhiRequest<double> task2(const Matrix<double>& a, std::vector<Vector<double>> u, double tol) {
  PhiRequest<double> req;
  req.T = {1.0};
  req.op = make_dense_operator(a);
  req.U = std::move(u);
  req.tol = tol;
  return req;
}

// Oracle order {b_0 .. b_p} from U = [b_p .. b_0].
std::vector<Vector<double>> oracle_order(const std::vector<Vector<double>>& u) {
  return {u.rbegin(), u.rend()};
}

}  // namespace

TEST_CASE("zero operator returns b_0 after one happy substep") {
  const Index n = 9;
  std::mt19937_64 rng(51);
  const Vector<double> x = random_vector(n, rng);
  const auto res = kiops(task2(Matrix<double>::Zero(n, n), {x}, 1e-7));
  REQUIRE(res.outputs.size() == 1);
  CHECK(rel_err(res.outputs[0], x) <= 1e-15);
  CHECK(res.stats.substeps == 1);
  CHECK(res.stats.rejections == 0);
  CHECK(res.stats.matvecs == 1);
}

TEST_CASE("all-zero input gives zero output without work") {
  const Index n = 5;
  const auto res = kiops(task2(Matrix<double>::Identity(n, n),
                               {Vector<double>::Zero(n), Vector<double>::Zero(n)}, 1e-7));
  CHECK(res.outputs[0].isZero(0));
  CHECK(res.stats.matvecs == 0);
}

TEST_CASE("Task II matches the dense oracle") {
  std::mt19937_64 rng(52);
  const Index n = 40;
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix<double> a = random_stiff_matrix(n, rng, 2.0);
    std::vector<Vector<double>> u;
    for (int k = 0; k <= 4; ++k) u.push_back(random_vector(n, rng));
    const auto res = kiops(task2(a, u, 1e-10));
    const Vector<double> want = phi_combination_dense(a, 1.0, oracle_order(u));
    CHECK(rel_err(res.outputs[0], want) <= 1e-8);
    CHECK(res.stats.substeps >= 1);
    // The propagated tail is discarded after each substep; its drift tracks the tolerance.
    CHECK(res.stats.max_tail_error <= 1e-10);
  }
}

TEST_CASE("Task II at a non-unit time") {
  std::mt19937_64 rng(53);
  const Index n = 30;
  const Matrix<double> a = random_stiff_matrix(n, rng, 10.0);
  std::vector<Vector<double>> u;
  for (int k = 0; k <= 2; ++k) u.push_back(random_vector(n, rng));
  auto req = task2(a, u, 1e-11);
  req.T = {0.37};
  const auto res = kiops(req);
  CHECK(rel_err(res.outputs[0], phi_combination_dense(a, 0.37, oracle_order(u))) <= 1e-9);
}

TEST_CASE("Task I phi_1 at two times") {
  std::mt19937_64 rng(54);
  const Index n = 64;
  const Matrix<double> a = random_stiff_matrix(n, rng, 100.0);
  const Vector<double> b = random_vector(n, rng);
  for (double tol : {1e-6, 1e-10}) {
    PhiRequest<double> req;
    req.T = {1.0 / 9.0, 1.0 / 8.0};
    req.op = make_dense_operator(a);
    req.U = {b, Vector<double>::Zero(n)};
    req.tol = tol;
    req.task = Task::I;
    const auto res = kiops(req);
    REQUIRE(res.outputs.size() == 2);
    for (std::size_t l = 0; l < 2; ++l) {
      const Vector<double> want = phi_dense(a, req.T[l], 1) * b;
      CHECK(rel_err(res.outputs[l], want) <= 10 * tol);
    }
  }
}

TEST_CASE("Task I with phi_3 and with plain exponentials") {
  std::mt19937_64 rng(55);
  const Index n = 25;
  const Matrix<double> a = random_stiff_matrix(n, rng, 30.0);
  const Vector<double> b = random_vector(n, rng);
  PhiRequest<double> req;
  req.T = {0.2, 0.5, 0.9};
  req.op = make_dense_operator(a);
  req.U = {b, Vector<double>::Zero(n), Vector<double>::Zero(n), Vector<double>::Zero(n)};
  req.tol = 1e-11;
  req.task = Task::I;
  auto res = kiops(req);
  for (std::size_t l = 0; l < req.T.size(); ++l) {
    CHECK(rel_err(res.outputs[l], Vector<double>(phi_dense(a, req.T[l], 3) * b)) <= 1e-9);
  }

  req.U = {b};
  res = kiops(req);
  for (std::size_t l = 0; l < req.T.size(); ++l) {
    // The output decays well below |b|, and the tolerance is absolute.
    const Vector<double> want = expm(a, req.T[l]).value * b;
    CHECK((res.outputs[l] - want).cwiseAbs().maxCoeff() <= 1e-9 * b.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("projected_step on a 1x1 basis") {
  KrylovState<double> st(3, 4);
  st.start(Vector<double>::Unit(3, 0));
  st.j = 1;
  const double lambda = -2.5;
  const double s = 0.75;
  st.H(0, 0) = lambda;
  st.H(1, 0) = s;
  const double tau = 0.4;
  const double beta = 3.0;
  const auto step = projected_step(st, tau, beta);
  CHECK(step.F(0, 1) == doctest::Approx(tau * phi_scalar(tau * lambda, 1)).epsilon(1e-14));
  CHECK(step.epsilon == doctest::Approx(beta * s * tau * phi_scalar(tau * lambda, 1)).epsilon(1e-14));
  CHECK(step.w(0) == doctest::Approx(beta * std::exp(tau * lambda)).epsilon(1e-14));

  st.happy = true;
  CHECK(projected_step(st, tau, beta).epsilon == 0.0);
}

TEST_CASE("embedded error estimate matches the direct phi_1 formula") {
  std::mt19937_64 rng(56);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 50;
    const Index p = trial % 4;
    const Index m = 4 + trial % 12;
    const Matrix<double> a = random_stiff_matrix(n, rng, 5.0 + 10.0 * trial);
    std::vector<Vector<double>> u;
    for (Index k = 0; k <= p; ++k) u.push_back(random_vector(n, rng));
    const auto sys = build_augmented(make_dense_operator(a), u);
    Vector<double> v = Vector<double>::Zero(n + p);
    v.head(n) = u.back();
    if (p > 0) v(n + p - 1) = sys.mu;
    KrylovState<double> st(n + p, m);
    const double beta = st.start(v);
    iop_extend(sys, st, m);
    const double tau = 0.05 + 0.03 * trial;
    const auto step = projected_step(st, tau, beta);
    const Matrix<double> phi1 = phi_dense(Matrix<double>(st.H.topLeftCorner(m, m)), tau, 1);
    const double direct = std::abs(tau * st.residual_norm() * phi1(m - 1, 0) * beta);
    CHECK(std::abs(step.epsilon - direct) <= 1e-12 * std::max(direct, 1e-300) + 1e-300);
  }
}

TEST_CASE("acceptance") {
  auto a = acceptance(0.0, 0.5, 1.0, 1e-7);
  CHECK(a.omega == 0.0);
  CHECK(a.accept);
  a = acceptance(1e-8, 0.5, 1.0, 1e-7);
  CHECK(a.omega == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(a.accept);
  a = acceptance(1e-6, 0.5, 1.0, 1e-7);
  CHECK(a.omega == doctest::Approx(20.0).epsilon(1e-14));
  CHECK_FALSE(a.accept);
  CHECK(acceptance(1.4, 1.0, 1.0, 1.0).accept);
  CHECK_FALSE(acceptance(1.4000001, 1.0, 1.0, 1.0).accept);
}

TEST_CASE("suggest_parameters reference values") {
  KrylovState<double> st(200, 128);
  StepController<double> ctrl;
  ctrl.m_min = 10;
  ctrl.m_max = 128;

  SUBCASE("happy breakdown") {
    st.happy = true;
    st.j = 3;
    ctrl.tau = 0.4;
    ctrl.m = 10;
    const auto s = suggest_parameters(ctrl, 0.0, 0.0, st, 0.25);
    CHECK(s.tau == 0.25);
    CHECK(s.m == 10);
  }
  SUBCASE("dimension grows by log2(omega / gamma)") {
    st.j = 10;
    ctrl.tau = 1.0;
    ctrl.m = 10;
    const auto s = suggest_parameters(ctrl, 3.6, 1e-3, st, 1.0);
    CHECK(dimension_estimate(10, 3.6, 2.0) == doctest::Approx(12.0).epsilon(1e-14));
    CHECK(s.m == 12);
    CHECK(s.tau == 1.0);
    CHECK(s.kappa == 2.0);
  }
  SUBCASE("stepsize formula") {
    CHECK(stepsize_estimate(1.0, 3.6, 4.0) == doctest::Approx(std::pow(0.25, 0.2)).epsilon(1e-14));
    CHECK(stepsize_estimate(1.0, 3.6, 4.0) == doctest::Approx(0.758).epsilon(1e-3));
  }
  SUBCASE("rate estimate from a rejection") {
    st.j = 12;
    ctrl.tau = 1.0;
    ctrl.m = 12;
    ctrl.rejected = RejectedAttempt<double>{2.0, 1e-3, 1.0, 8};
    const auto s = suggest_parameters(ctrl, 1.0, 1e-4, st, 1.0);
    CHECK(s.kappa == doctest::Approx(std::pow(2.0, 0.25)).epsilon(1e-14));
  }
  SUBCASE("order estimate from a rejection") {
    st.j = ctrl.m_max = ctrl.m = 20;
    ctrl.tau = 0.5;
    // error ~ tau^{q+1} with q = 3: halving tau divides the error by 16.
    ctrl.rejected = RejectedAttempt<double>{100.0, 1.6e-5, 1.0, 20};
    const auto s = suggest_parameters(ctrl, 6.25, 1e-6, st, 10.0);
    CHECK(s.q == doctest::Approx(3.0).epsilon(1e-12));
  }
  SUBCASE("m_max branch with rejection uses the 0.6 safety factor") {
    st.j = ctrl.m = ctrl.m_max = 30;
    ctrl.tau = 1.0;
    const double q = 30.0 / 4.0 - 1.0;
    const auto s = suggest_parameters(ctrl, 50.0, 1e-3, st, 10.0);
    CHECK(s.tau == doctest::Approx(std::pow(0.6 / 50.0, 1.0 / q)).epsilon(1e-14));
    CHECK(s.m == 30);
  }
  SUBCASE("m_max branch floors the decrease at tau / 5") {
    st.j = ctrl.m = ctrl.m_max = 12;
    ctrl.tau = 1.0;
    const auto s = suggest_parameters(ctrl, 1e12, 1.0, st, 10.0);
    CHECK(s.tau == doctest::Approx(0.2).epsilon(1e-15));
  }
  SUBCASE("accepted at m_max grows tau at most 5x") {
    st.j = ctrl.m = ctrl.m_max = 12;
    ctrl.tau = 0.01;
    const auto s = suggest_parameters(ctrl, 1e-12, 1e-20, st, 10.0);
    CHECK(s.tau == doctest::Approx(0.05).epsilon(1e-14));
    const auto capped = suggest_parameters(ctrl, 1e-12, 1e-20, st, 0.02);
    CHECK(capped.tau == 0.02);
  }
  SUBCASE("dimension clipping") {
    st.j = ctrl.m = 40;
    ctrl.tau = 1.0;
    CHECK(suggest_parameters(ctrl, 1e10, 1.0, st, 1.0).m == 53);
    CHECK(suggest_parameters(ctrl, 1e-10, 1.0, st, 1.0).m == 30);
    ctrl.m = st.j = 11;
    CHECK(suggest_parameters(ctrl, 1e-10, 1.0, st, 1.0).m == 10);
  }
}

TEST_CASE("suggest_parameters clipping holds for random inputs") {
  std::mt19937_64 rng(57);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  KrylovState<double> st(300, 200);
  for (int i = 0; i < 20000; ++i) {
    StepController<double> ctrl;
    ctrl.m_min = 3 + static_cast<Index>(unit(rng) * 20);
    ctrl.m_max = ctrl.m_min + static_cast<Index>(unit(rng) * 150);
    ctrl.m = ctrl.m_min + static_cast<Index>(unit(rng) * static_cast<double>(ctrl.m_max - ctrl.m_min));
    ctrl.tau = std::pow(10.0, -6 + 6 * unit(rng));
    st.happy = unit(rng) < 0.1;
    st.j = st.happy ? 1 + static_cast<Index>(unit(rng) * static_cast<double>(ctrl.m - 1)) : ctrl.m;
    if (unit(rng) < 0.5) {
      ctrl.rejected = RejectedAttempt<double>{std::pow(10.0, -4 + 12 * unit(rng)),
                                              std::pow(10.0, -16 + 14 * unit(rng)),
                                              ctrl.tau * (0.2 + 5 * unit(rng)),
                                              ctrl.m_min + static_cast<Index>(unit(rng) * 10)};
    }
    const double omega = st.happy ? 0.0 : std::pow(10.0, -6 + 14 * unit(rng));
    const double eps = std::pow(10.0, -16 + 14 * unit(rng));
    const double t_rem = ctrl.tau * std::pow(10.0, -2 + 4 * unit(rng));
    const auto s = suggest_parameters(ctrl, omega, eps, st, t_rem);

    REQUIRE(s.tau > 0.0);
    REQUIRE(s.tau <= t_rem);
    REQUIRE(s.tau <= 5.0 * ctrl.tau * (1 + 1e-15));
    if (s.tau < t_rem) REQUIRE(s.tau >= ctrl.tau / 5.0 * (1 - 1e-15));
    REQUIRE(s.m >= ctrl.m_min);
    REQUIRE(s.m <= ctrl.m_max);
    REQUIRE(4 * s.m >= 3 * ctrl.m);
    REQUIRE(3 * s.m <= 4 * ctrl.m);
    REQUIRE(s.q > 0.0);
    REQUIRE(s.kappa > 1.0);
    if (st.happy) REQUIRE(s.m == ctrl.m);
  }
}

TEST_CASE("cost model") {
  CHECK(cost_exp(1, 1, 0) == 1.0);
  CHECK(cost_exp(6, 10, 4) == 31752.0);
  CHECK(cost_iop(10, 100, 4, 500) == 20576.0);
  CHECK(cost_model(10, 0.25, 1.0, 100, 4, 500, 6) == 4.0 * (20576.0 + 31752.0));
  CHECK(cost_model(10, 0.3, 1.0, 100, 4, 500, 6) == 4.0 * (20576.0 + 31752.0));
}

TEST_CASE("record_outputs") {
  const Index n = 4;
  KrylovState<double> st(n, 3);
  st.start(Vector<double>::Unit(n, 0));
  st.j = 2;
  st.V.col(1) = Vector<double>::Unit(n, 1);
  st.H(0, 0) = -1.0;
  st.H(1, 0) = 0.5;
  st.H(1, 1) = -2.0;
  st.H(0, 1) = 0.1;
  Matrix<double> h_aug = Matrix<double>::Zero(3, 3);
  h_aug.topLeftCorner(2, 2) = st.H.topLeftCorner(2, 2);
  h_aug(0, 2) = 1.0;
  const double beta = 2.0;

  SUBCASE("Task I, one interior output") {
    const std::vector<double> T{0.3, 0.7, 1.0};
    std::vector<Vector<double>> w(3, Vector<double>::Zero(n));
    std::size_t ell = 0;
    const Matrix<double> f = expm(h_aug, 0.5).value;
    const int extra = record_outputs<double>(Task::I, T, 0.0, 0.5, st, f, beta, w, ell);
    CHECK(extra == 1);
    CHECK(ell == 1);
    const Vector<double> at_03 = beta * st.V.leftCols(2) *
                                 expm(Matrix<double>(st.H.topLeftCorner(2, 2)), 0.3).value.col(0);
    CHECK(rel_err(w[0], at_03) <= 1e-15);
    const Vector<double> at_05 = beta * st.V.leftCols(2) * f.col(0).head(2);
    CHECK(rel_err(w[1], at_05) <= 1e-15);
  }
  SUBCASE("Task I, output exactly at the substep end") {
    const std::vector<double> T{0.5, 1.0};
    std::vector<Vector<double>> w(2, Vector<double>::Zero(n));
    std::size_t ell = 0;
    const Matrix<double> f = expm(h_aug, 0.5).value;
    CHECK(record_outputs<double>(Task::I, T, 0.0, 0.5, st, f, beta, w, ell) == 0);
    CHECK(ell == 0);
    CHECK(!w[0].isZero(0));
  }
  SUBCASE("Task II") {
    const std::vector<double> T{1.0};
    std::vector<Vector<double>> w(1, Vector<double>::Zero(n));
    std::size_t ell = 0;
    const Matrix<double> f = expm(h_aug, 0.5).value;
    CHECK(record_outputs<double>(Task::II, T, 0.0, 0.5, st, f, beta, w, ell) == 0);
    CHECK(ell == 0);
  }
}

TEST_CASE("forced substeps agree with a single step") {
  std::mt19937_64 rng(58);
  const Index n = 40;
  const Matrix<double> a = random_stiff_matrix(n, rng, 3.0);
  std::vector<Vector<double>> u;
  for (int k = 0; k <= 3; ++k) u.push_back(random_vector(n, rng));
  auto req = task2(a, u, 1e-12);
  req.m_init = req.m_min = req.m_max = 40;
  const auto one = kiops(req);
  CHECK(one.stats.substeps == 1);
  req.max_substep = 0.5;
  const auto two = kiops(req);
  CHECK(two.stats.substeps == 2);
  CHECK(two.stats.rejections == 0);
  CHECK(rel_err(two.outputs[0], one.outputs[0]) <= 1e-9);
}

TEST_CASE("tightening the tolerance never increases the error") {
  std::mt19937_64 rng(59);
  const Index n = 60;
  const Matrix<double> a = random_stiff_matrix(n, rng, 200.0);
  std::vector<Vector<double>> u;
  for (int k = 0; k <= 2; ++k) u.push_back(random_vector(n, rng));
  const Vector<double> want = phi_combination_dense(a, 1.0, oracle_order(u));
  double previous = INFINITY;
  for (double tol : {1e-4, 1e-6, 1e-8, 1e-10}) {
    const double err = rel_err(kiops(task2(a, u, tol)).outputs[0], want);
    CHECK(err <= previous);
    previous = err;
  }
}

TEST_CASE("nilpotent operator is exact in one substep") {
  const Index n = 6;
  Matrix<double> s = Matrix<double>::Zero(n, n);
  for (Index i = 0; i + 1 < n; ++i) s(i + 1, i) = 3.0;
  // b_1 = e_1, b_0 = 0: the augmented chain is orthonormal and ends after N + 1 steps.
  std::vector<Vector<double>> u{Vector<double>::Unit(n, 0), Vector<double>::Zero(n)};
  auto req = task2(s, u, 1e-7);
  const auto res = kiops(req);
  CHECK(res.stats.substeps == 1);
  CHECK(res.stats.rejections == 0);
  CHECK(rel_err(res.outputs[0], phi_combination_dense(s, 1.0, oracle_order(u))) <= 1e-12);
}

TEST_CASE("tiny systems clamp the Krylov bounds") {
  Matrix<double> a(1, 1);
  a(0, 0) = -1.0;
  const auto res = kiops(task2(a, {Vector<double>::Ones(1)}, 1e-10));
  CHECK(res.outputs[0](0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(res.final_m == 1);
}

TEST_CASE("substep callback reports the propagated tail") {
  std::mt19937_64 rng(61);
  const Index n = 30;
  const Matrix<double> a = random_stiff_matrix(n, rng, 300.0);
  std::vector<Vector<double>> u;
  for (int k = 0; k <= 3; ++k) u.push_back(random_vector(n, rng));
  auto req = task2(a, u, 1e-10);
  req.m_max = 12;
  int accepted = 0;
  double t = 0;
  req.on_substep = [&](const SubstepReport<double>& r) {
    if (!r.accepted) return;
    ++accepted;
    CHECK(r.t_now == doctest::Approx(t).epsilon(1e-15));
    t = r.t_now + r.tau;
    const Vector<double> closed{{r.t_now * r.t_now / 2, r.t_now, 1.0}};
    CHECK((r.tail_start - closed).cwiseAbs().maxCoeff() <= 1e-13 * std::max(1.0, r.t_now));
    REQUIRE(r.tail_numeric.size() == 3);
    CHECK((r.tail_numeric - r.tail_expected).cwiseAbs().maxCoeff() <= 1e-10);
  };
  const auto res = kiops(req);
  CHECK(accepted == res.stats.substeps);
  CHECK(accepted > 1);
  CHECK(t == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("request validation") {
  const Index n = 4;
  const Matrix<double> a = Matrix<double>::Identity(n, n);
  const Vector<double> one = Vector<double>::Ones(n);
  const Vector<double> zero = Vector<double>::Zero(n);

  auto req = task2(a, {one}, 1e-7);
  req.T = {0.5, 1.0};
  CHECK_THROWS_AS(kiops(req), DomainError);  // Task II with two times
  req.task = Task::I;
  req.T = {1.0, 0.5};
  CHECK_THROWS_AS(kiops(req), DomainError);
  req.T = {0.0, 1.0};
  CHECK_THROWS_AS(kiops(req), DomainError);
  req.T = {0.5, 1.0};
  req.U = {one, one, zero};
  CHECK_THROWS_AS(kiops(req), DomainError);  // two phi indices
  req.U = {one, one};
  CHECK_THROWS_AS(kiops(req), DomainError);  // b_0 with phi_1
  req.U = {one, zero};
  CHECK_NOTHROW(kiops(req));

  req = task2(a, {one}, 0.0);
  CHECK_THROWS_AS(kiops(req), DomainError);
  req = task2(a, {one}, 1e-7);
  req.m_min = 2;
  CHECK_THROWS_AS(kiops(req), DomainError);
  req = task2(a, {Vector<double>::Ones(3)}, 1e-7);
  CHECK_THROWS_AS(kiops(req), DimensionError);
  req = task2(a, {Vector<double>::Constant(n, NAN)}, 1e-7);
  CHECK_THROWS_AS(kiops(req), DomainError);
}

TEST_CASE("non-finite operator output and budget exhaustion") {
  const Index n = 8;
  PhiRequest<double> req;
  req.T = {1.0};
  req.op.dim = n;
  req.op.apply = [](const Eigen::Ref<const Vector<double>>& in, Eigen::Ref<Vector<double>> out) {
    out = in / 0.0;
  };
  req.U = {Vector<double>::Ones(n)};
  CHECK_THROWS_AS(kiops(req), DomainError);

  std::mt19937_64 rng(62);
  const Matrix<double> a = random_stiff_matrix(200, rng, 1e5);
  auto hard = task2(a, {random_vector(200, rng)}, 1e-12);
  hard.m_min = hard.m_max = hard.m_init = 10;
  hard.max_substeps = 5;
  CHECK_THROWS_AS(kiops(hard), ConvergenceError);
}
