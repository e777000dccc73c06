#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pdfb/accel.hpp"
#include "pdfb/bench.hpp"

using namespace pdfb;

namespace {

oracle::DenseProblem random_dense(std::uint64_t seed, Index n, Index p, Index l, double lambda) {
  Rng rng(seed, 1);
  oracle::DenseProblem d;
  d.A = rng.normal_matrix(n, p);
  d.c = rng.normal_vector(n);
  d.K = rng.normal_matrix(l, p);
  d.lambda = lambda;
  return d;
}

SaddleProblem as_problem(const oracle::DenseProblem& d) {
  return make_problem(quadratic_loss(LinearOperator::dense(d.A), d.c), LinearOperator::dense(d.K),
                      ConjugateProxSpec::box(d.lambda, d.K.rows()));
}

std::vector<AccelMode> all_modes() {
  return {AccelMode::with_kappa(0.0), AccelMode::with_kappa(1.0), AccelMode::with_kappa(0.5),
          AccelMode::with_kappa(-0.5), AccelMode::chen()};
}

}  // namespace

TEST(Schedule, WeightRecursion) {
  Schedule sc;
  for (long k = 1; k < 1000; ++k) {
    const double lhs = 1.0 / sc.rho(k + 1) - 1.0;
    const double rhs = sc.theta(k + 1) / sc.rho(k);
    EXPECT_NEAR(lhs, rhs, 1e-12 * lhs);
  }
  EXPECT_EQ(sc.rho(1), 1.0);
  EXPECT_EQ(coefficients(sc, 1).theta, 0.0);
}

TEST(Schedule, BoundedStepsFollowFormula) {
  const SaddleProblem prob = as_problem(random_dense(1, 8, 5, 4, 0.5));
  const double ox = 3.0, oy = 2.0;
  const Schedule sc = schedule_bounded(prob, AccelMode::with_kappa(0.0), ox, oy, 0.5, 0.25, 500);
  const double P = 2.0, Q = std::max(0.0, 2.0 / 0.75);
  for (long k : {1L, 2L, 10L, 499L}) {
    const double kd = static_cast<double>(k);
    EXPECT_NEAR(sc.tau(k), kd / (2.0 * P * prob.L_f() + kd * Q * prob.norm_K * oy / ox), 1e-14 * sc.tau(k));
    EXPECT_NEAR(sc.sigma(k), oy / (prob.norm_K * ox), 1e-14);
    EXPECT_GE(sc.cond1(k), -1e-10);
    EXPECT_GE(sc.cond2(k), -1e-10);
  }
}

TEST(Schedule, UnboundedStepsFollowFormula) {
  const SaddleProblem prob = as_problem(random_dense(2, 8, 5, 4, 0.5));
  for (const AccelMode& mode : all_modes()) {
    const Schedule sc = schedule_unbounded(prob, mode, 300, 0.4, 0.3);
    const NormFactors f = mode.factors();
    const double Q = std::max({f.a * f.a / (0.6 * 0.3), (2 * f.c * f.d + f.b * f.b / 0.4) / 0.7, 1.0});
    EXPECT_NEAR(sc.Q, Q, 1e-14 * Q) << mode.name();
    EXPECT_NEAR(sc.tau(7), 7.0 / (2.0 / 0.6 * prob.L_f() + Q * 300 * prob.norm_K), 1e-15);
    EXPECT_NEAR(sc.sigma(7), 7.0 / (300 * prob.norm_K), 1e-15);
    for (long k = 1; k <= 300; ++k) {
      EXPECT_GE(sc.cond1(k), -1e-10) << k;
      EXPECT_GE(sc.cond2(k), -1e-10) << k;
    }
  }
}

TEST(Schedule, ArgumentChecks) {
  const SaddleProblem prob = as_problem(random_dense(3, 6, 4, 3, 0.5));
  const AccelMode m = AccelMode::with_kappa(0.0);
  EXPECT_THROW(schedule_bounded(prob, m, 1.0, 1.0, 0.0, 0.5, 10), InvalidArgument);
  EXPECT_THROW(schedule_bounded(prob, m, 1.0, 1.0, 0.5, 1.0, 10), InvalidArgument);
  EXPECT_THROW(schedule_bounded(prob, m, 0.0, 1.0, 0.5, 0.5, 10), InvalidArgument);
  EXPECT_THROW(schedule_unbounded(prob, m, 100, 0.5, 0.5), InvalidArgument);
  EXPECT_THROW(schedule_unbounded(prob, m, 1, 0.5, 0.25), InvalidArgument);
  const SaddleProblem degenerate =
      make_problem(zero_loss(2), LinearOperator::zero(2, 2), ConjugateProxSpec::box(1.0, 2));
  EXPECT_THROW(schedule_bounded(degenerate, m, 1.0, 1.0, 0.5, 0.5, 10), DegenerateProblem);
}

TEST(Schedule, NoCouplingUsesUnitDualStep) {
  Rng rng(4);
  const SaddleProblem prob = make_problem(quadratic_loss(LinearOperator::dense(rng.normal_matrix(5, 3)), rng.normal_vector(5)),
                                          LinearOperator::zero(2, 3), ConjugateProxSpec::box(1.0, 2));
  const Schedule sc = schedule_bounded(prob, AccelMode::with_kappa(0.0), 1.0, 1.0, 0.5, 0.5, 100);
  EXPECT_EQ(sc.sigma(5), 1.0);
  EXPECT_NEAR(sc.tau(5), 5.0 / (4.0 * prob.L_f()), 1e-15);
}

TEST(Modes, NormFactors) {
  const NormFactors lv = AccelMode::with_kappa(0.0).factors();
  EXPECT_EQ(lv.a, 0.0);
  EXPECT_EQ(lv.c, 1.0);
  const NormFactors cv = AccelMode::with_kappa(1.0).factors();
  EXPECT_EQ(cv.c, 0.0);
  EXPECT_EQ(cv.d, 2.0);
  const NormFactors ch = AccelMode::chen().factors();
  EXPECT_EQ(ch.a, 1.0);
  EXPECT_EQ(ch.b, 0.0);
  EXPECT_EQ(AccelMode::chen().alpha(), -1.0);
  EXPECT_EQ(AccelMode::with_kappa(0.3).alpha(), -0.3);
}

TEST(AccelStep, MatchesDenseTranscription) {
  const oracle::DenseProblem d = random_dense(5, 9, 5, 4, 0.4);
  const SaddleProblem prob = as_problem(d);
  Rng rng(6);
  const PrimalDual z0{rng.normal_vector(5), 0.1 * rng.normal_vector(4)};
  for (const AccelMode& mode : all_modes()) {
    const Schedule sc = schedule_unbounded(prob, mode, 60, 0.5, 0.25);
    AccelState s = AccelState::from(z0);
    oracle::AccelDense o(d, mode.alpha(), mode.beta(), {z0.x, z0.y});
    for (long k = 1; k <= 60; ++k) {
      accel_step(prob, mode, sc, s);
      o.step(sc.rho(k), k == 1 ? 0.0 : sc.theta(k), sc.tau(k), sc.tau_prev(k), sc.sigma(k));
      ASSERT_LE((s.x - o.x).cwiseAbs().maxCoeff(), 1e-12) << mode.name() << " k=" << k;
      ASSERT_LE((s.yt - o.yt).cwiseAbs().maxCoeff(), 1e-12) << mode.name() << " k=" << k;
    }
    EXPECT_EQ(s.k, 61);
  }
}

TEST(AccelStep, ChenModeIsExtrapolatedPrimalDual) {
  const oracle::DenseProblem d = random_dense(7, 9, 5, 4, 0.4);
  const SaddleProblem prob = as_problem(d);
  Rng rng(8);
  const PrimalDual z0{rng.normal_vector(5), 0.1 * rng.normal_vector(4)};
  const AccelMode mode = AccelMode::chen();
  const Schedule sc = schedule_bounded(prob, mode, 2.0, 1.0, 0.5, 0.5, 80);
  AccelState s = AccelState::from(z0);
  oracle::ChenDense o(d, {z0.x, z0.y});
  for (long k = 1; k <= 80; ++k) {
    accel_step(prob, mode, sc, s);
    o.step(sc.rho(k), k == 1 ? 0.0 : sc.theta(k), sc.tau(k), sc.sigma(k));
    ASSERT_LE((s.x - o.x).cwiseAbs().maxCoeff(), 1e-12) << "k=" << k;
    ASSERT_LE((s.y - o.y).cwiseAbs().maxCoeff(), 1e-12) << "k=" << k;
  }
}

TEST(TuneQr, NoWorseThanDefaults) {
  const SaddleProblem prob = as_problem(random_dense(9, 8, 5, 4, 0.5));
  for (const AccelMode& mode : all_modes()) {
    const TunedQR b = tune_qr(prob, mode, Schedule::Setting::bounded, 1000, 2.0, 1.0);
    const NormFactors f = mode.factors();
    const double ref = bounded_rate_bound(accel_P(0.5), accel_Q(f, 0.5, 0.25, false), prob.L_f(), prob.norm_K, 2.0, 1.0, 1000);
    EXPECT_LE(b.bound, ref) << mode.name();
    const TunedQR u = tune_qr(prob, mode, Schedule::Setting::unbounded, 1000);
    EXPECT_LT(u.r, 0.5);
    EXPECT_NO_THROW(schedule_unbounded(prob, mode, 1000, u.q, u.r));
  }
}

TEST(RateBounds, Formulas) {
  EXPECT_DOUBLE_EQ(bounded_rate_bound(2.0, 3.0, 1.0, 1.0, 1.0, 1.0, 2), 4.0 * 2.0 / 2.0 + 2.0 * 4.0 / 2.0);
  EXPECT_DOUBLE_EQ(unbounded_rate_bound(2.0, 1.0, 0.5, 0.25, 1.0, 1.0, 2), (2.0 + 1.0) * (2.0 + 1.0 + 3.0));
}

TEST(RunAccel, ObjectiveGapShrinks) {
  const GeneratedProblem g = make_lasso(30, 10, 0.5, 0.1, 10, true);
  const ReferenceSolution ref = reference_solve(g.prob, {200000, 1e-11, true});
  const DomainBounds db = pilot_domain_bounds(g.prob);
  for (const AccelMode& mode : all_modes()) {
    AccelParams ap;
    ap.mode = mode;
    ap.omega_x = db.omega_x;
    ap.omega_y = db.omega_y;
    ap.tune = true;
    ap.max_iters = 4000;
    ap.record_every = 100;
    const AccelResult r = run_accel(g.prob, ap, {Vector::Zero(10), Vector::Zero(9)});
    const double early = r.trace.records.front().objective - ref.objective;
    const double late = r.trace.records.back().objective - ref.objective;
    EXPECT_GE(late, -1e-9) << mode.name();
    EXPECT_LT(late, 0.05 * early) << mode.name();
  }
}

TEST(RunAccel, WrongShapeRejected) {
  const SaddleProblem prob = as_problem(random_dense(11, 6, 4, 3, 0.5));
  const Schedule sc = schedule_unbounded(prob, AccelMode::with_kappa(0.0), 10, 0.5, 0.25);
  EXPECT_THROW(run_accel(prob, AccelMode::with_kappa(0.0), sc, 5, {Vector::Zero(3), Vector::Zero(3)}), DimensionError);
}

TEST(Perturbation, NeedsAStep) {
  const SaddleProblem prob = as_problem(random_dense(12, 6, 4, 3, 0.5));
  const Schedule sc = schedule_unbounded(prob, AccelMode::with_kappa(0.0), 10, 0.5, 0.25);
  const AccelState s = AccelState::from({Vector::Zero(4), Vector::Zero(3)});
  EXPECT_THROW(compute_perturbation(prob, s, sc, AccelMode::with_kappa(0.0), 1.0), MissingHistory);
  AccelState empty;
  EXPECT_THROW(perturbation_radius(sc, empty, {Vector::Zero(4), Vector::Zero(3)}), MissingHistory);
}

TEST(Perturbation, MatchesDirectFormula) {
  const oracle::DenseProblem d = random_dense(13, 8, 5, 4, 0.5);
  const SaddleProblem prob = as_problem(d);
  const AccelMode mode = AccelMode::with_kappa(0.5);
  const Schedule sc = schedule_unbounded(prob, mode, 40, 0.5, 0.25);
  Rng rng(14);
  AccelState s = AccelState::from({rng.normal_vector(5), 0.1 * rng.normal_vector(4)});
  for (int i = 0; i < 12; ++i) accel_step(prob, mode, sc, s);
  const long k = 12;
  const double rho = sc.rho(k), tau = sc.tau(k), sigma = sc.sigma(k);
  const oracle::Mat A = -0.5 * d.K, B = 0.5 * d.K;
  const oracle::Vec dx = s.xt - s.xt_prev, dy = s.yt - s.yt_prev;
  const oracle::Vec vx = rho / tau * (s.xt1 - s.xt) - rho * B.transpose() * dy;
  const oracle::Vec vy = rho / sigma * (s.yt1 - s.yt) + rho * A * dx + rho * tau * (d.K + A) * (d.K + B).transpose() * dy;
  const PerturbationDiagnostic p = compute_perturbation(prob, s, sc, mode, 1.0);
  EXPECT_LE((p.vx - vx).norm(), 1e-12 * (1 + vx.norm()));
  EXPECT_LE((p.vy - vy).norm(), 1e-12 * (1 + vy.norm()));
}
