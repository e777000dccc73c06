#include <gtest/gtest.h>

#include <atomic>

#include "oracles.hpp"
#include "pdfb/bench.hpp"
#include "pdfb/stoch.hpp"

using namespace pdfb;

namespace {

GeneratedProblem small_ogl() { return generate(SyntheticSpec::ogl(3, 15, 50, 9)); }

const VarianceBounds kChi{1.0, 0.0, 0.5, 0.0, 0.0};

/// Exact oracle that poisons the gradient for a range of call indices. A
/// failing run stops early, so poisoning a single call keeps later seeds clean.
class PoisonedOracle final : public StochasticOracle {
 public:
  PoisonedOracle(const SaddleProblem& prob, long first, long last)
      : prob_(prob), mode_(AccelMode::chen()), first_(first), last_(last) {}
  const SaddleProblem& problem() const override { return prob_; }
  const AccelMode& mode() const override { return mode_; }
  Vector grad(const Vector& x, Rng&) const override {
    const long c = calls_++;
    if (c >= first_ && c < last_) return Vector::Constant(x.size(), kNaN);
    return prob_.grad_f(x);
  }
  Vector kx(const Vector& x, Rng&) const override { return prob_.K.apply(x); }
  Vector kty(const Vector& y, Rng&) const override { return prob_.K.apply_adjoint(y); }
  Vector ax(const Vector& x, Rng&) const override { return -prob_.K.apply(x); }
  Vector bty(const Vector&, Rng&) const override { return Vector::Zero(prob_.p()); }
  VarianceBounds declared() const override { return {}; }

 private:
  const SaddleProblem& prob_;
  AccelMode mode_;
  long first_, last_;
  mutable std::atomic<long> calls_{0};
};

}  // namespace

TEST(MaskedGradOracle, RejectsBadProbability) {
  const GeneratedProblem g = small_ogl();
  EXPECT_THROW(MaskedGradOracle(g.prob, AccelMode::chen(), 0.0), InvalidArgument);
  EXPECT_THROW(MaskedGradOracle(g.prob, AccelMode::chen(), 1.5), InvalidArgument);
}

TEST(MaskedGradOracle, GradientIsUnbiased) {
  const GeneratedProblem g = small_ogl();
  const MaskedGradOracle o(g.prob, AccelMode::chen(), 0.3);
  Rng rng(1);
  const Vector x = rng.normal_vector(g.prob.p());
  const Vector exact = g.prob.grad_f(x);
  const int draws = 20000;
  Vector sum = Vector::Zero(x.size()), sq = Vector::Zero(x.size());
  for (int i = 0; i < draws; ++i) {
    const Vector d = o.grad(x, rng) - exact;
    sum += d;
    sq += d.cwiseProduct(d);
  }
  const Vector mean = sum / draws;
  const Vector var = sq / draws - mean.cwiseProduct(mean);
  double worst = 0.0;
  for (Index i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(mean[i]) / std::sqrt(var[i] / draws));
  // Max of p standard normals rarely exceeds 4.5 for p around 50.
  EXPECT_LT(worst, 4.5);
}

TEST(MaskedGradOracle, FullProbabilityIsExact) {
  const GeneratedProblem g = small_ogl();
  const MaskedGradOracle o(g.prob, AccelMode::chen(), 1.0);
  Rng rng(2);
  const PrimalDual z{rng.normal_vector(g.prob.p()), rng.normal_vector(g.prob.l())};
  const VarianceBounds chi = estimate_chi(o, {z}, 50);
  EXPECT_EQ(chi.chi_xf, 0.0);
  EXPECT_EQ(chi.chi_y, 0.0);
  EXPECT_EQ(o.grad(z.x, rng), g.prob.grad_f(z.x));
}

TEST(MaskedGradOracle, EmpiricalChiBelowClosedFormBound) {
  const GeneratedProblem g = small_ogl();
  const MaskedGradOracle o(g.prob, AccelMode::chen(), 0.5);
  Rng rng(3);
  Vector x = rng.normal_vector(g.prob.p());
  x *= 2.0 / x.norm();
  const VarianceBounds chi = estimate_chi(o, {{x, Vector::Zero(g.prob.l())}}, 2000, 1.0, 4);
  EXPECT_GT(chi.chi_xf, 0.0);
  EXPECT_LE(chi.chi_xf, o.quadratic_chi_bound(2.0));
  EXPECT_EQ(chi.chi_xK, 0.0);
}

TEST(StocSchedule, RequiresChenModeUnlessFlagged) {
  const GeneratedProblem g = small_ogl();
  EXPECT_THROW(schedule_stoc_bounded(g.prob, AccelMode::with_kappa(0.0), kChi, 1.0, 1.0, 100, 0.5, 0.25, 0.75, 0.5),
               UnsupportedMode);
  EXPECT_NO_THROW(
      schedule_stoc_bounded(g.prob, AccelMode::with_kappa(0.0), kChi, 1.0, 1.0, 100, 0.5, 0.25, 0.75, 0.5, true));
  EXPECT_THROW(schedule_stoc_unbounded(g.prob, AccelMode::with_kappa(0.5), kChi, 100, 1.0, 0.3, 0.25, 0.75, 0.5),
               UnsupportedMode);
}

TEST(StocSchedule, ConstantOrdering) {
  const GeneratedProblem g = small_ogl();
  const AccelMode m = AccelMode::chen();
  EXPECT_THROW(schedule_stoc_bounded(g.prob, m, kChi, 1.0, 1.0, 100, 0.8, 0.25, 0.75, 0.5), InvalidArgument);
  EXPECT_THROW(schedule_stoc_bounded(g.prob, m, kChi, 1.0, 1.0, 100, 0.5, 0.6, 0.75, 0.5), InvalidArgument);
  EXPECT_THROW(schedule_stoc_unbounded(g.prob, m, kChi, 100, 1.0, 0.5, 0.5, 0.75, 0.8), InvalidArgument);
  EXPECT_THROW(schedule_stoc_bounded(g.prob, m, kChi, 1.0, 1.0, 1, 0.5, 0.25, 0.75, 0.5), InvalidArgument);
}

TEST(StocSchedule, BoundedStepFormula) {
  const GeneratedProblem g = small_ogl();
  const double ox = 2.0, oy = 3.0;
  const long n = 400;
  const Schedule sc = schedule_stoc_bounded(g.prob, AccelMode::chen(), kChi, ox, oy, n, 0.5, 0.25, 0.75, 0.5);
  const double P = 1.0 / 0.25, Q = std::max(1.0 / (0.25 * 0.25), 0.0);
  EXPECT_DOUBLE_EQ(sc.P, P);
  EXPECT_DOUBLE_EQ(sc.Q, Q);
  const double spread = n * std::sqrt(n - 1.0);
  const double tau = ox * 5 / (2 * P * g.prob.L_f() * ox + Q * g.prob.norm_K * oy * (n - 1) + kChi.chi_x() * spread);
  const double sigma = oy * 5 / (g.prob.norm_K * ox * (n - 1) + kChi.chi_y * spread);
  EXPECT_NEAR(sc.tau(5), tau, 1e-14 * tau);
  EXPECT_NEAR(sc.sigma(5), sigma, 1e-14 * sigma);
  for (long k = 1; k < n; ++k) {
    EXPECT_GE(sc.cond1(k), -1e-9) << k;
    EXPECT_GE(sc.cond2(k), -1e-9) << k;
  }
}

TEST(StocSchedule, C0Formula) {
  Schedule sc;
  sc.P = 2.0;
  sc.Q = 3.0;
  sc.L_f = 1.0;
  sc.norm_K = 1.0;
  sc.omega_x = 1.0;
  sc.omega_y = 1.0;
  sc.chi_x = 1.0;
  sc.chi_y = 1.0;
  sc.r = 0.5;
  sc.s = 0.5;
  // N = 5: 8*2/20 + 4*4/5 + 8/2 + (1.5/1.5)/2 + (1.5/1.5)/2.
  EXPECT_NEAR(stoc_c0(sc, 5), 0.8 + 3.2 + 4.0 + 0.5 + 0.5, 1e-14);
}

TEST(RunStoc, FullProbabilityMatchesDeterministicRun) {
  const GeneratedProblem g = small_ogl();
  const MaskedGradOracle o(g.prob, AccelMode::chen(), 1.0);
  const Schedule sc = schedule_stoc_bounded(g.prob, AccelMode::chen(), kChi, 2.0, 1.0, 200, 0.5, 0.25, 0.75, 0.5);
  const PrimalDual z0{Vector::Zero(g.prob.p()), Vector::Zero(g.prob.l())};
  const StocResult s = run_stoc(o, sc, z0, {7}, 199, 10);
  const AccelResult d = run_accel(g.prob, AccelMode::chen(), sc, 199, z0, 10);
  ASSERT_TRUE(s.runs[0].result.has_value());
  EXPECT_EQ(s.runs[0].result->state.x, d.state.x);
  EXPECT_EQ(s.runs[0].result->state.y, d.state.y);
}

TEST(RunStoc, ThreadCountDoesNotChangeResults) {
  const GeneratedProblem g = small_ogl();
  const MaskedGradOracle o(g.prob, AccelMode::chen(), 0.5);
  const Schedule sc = schedule_stoc_bounded(g.prob, AccelMode::chen(), kChi, 2.0, 1.0, 100, 0.5, 0.25, 0.75, 0.5);
  const PrimalDual z0{Vector::Zero(g.prob.p()), Vector::Zero(g.prob.l())};
  const std::vector<std::uint64_t> seeds{11, 12, 13, 14};
  const StocResult a = run_stoc(o, sc, z0, seeds, 99, 9, 1);
  const StocResult b = run_stoc(o, sc, z0, seeds, 99, 9, 3);
  ASSERT_EQ(a.aggregate.size(), 11u);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    EXPECT_EQ(a.runs[i].seed, seeds[i]);
    EXPECT_EQ(a.runs[i].result->state.x, b.runs[i].result->state.x);
  }
  EXPECT_NE(a.runs[0].result->state.x, a.runs[1].result->state.x);
  for (std::size_t j = 0; j < a.aggregate.size(); ++j) {
    EXPECT_EQ(a.aggregate[j].mean_objective, b.aggregate[j].mean_objective);
    EXPECT_LE(a.aggregate[j].q10, a.aggregate[j].median_objective);
    EXPECT_LE(a.aggregate[j].median_objective, a.aggregate[j].q90);
  }
}

TEST(RunStoc, FailingSeedIsIsolated) {
  const GeneratedProblem g = small_ogl();
  const long iters = 30;
  const PoisonedOracle o(g.prob, iters, iters + 1);
  const Schedule sc = schedule_stoc_bounded(g.prob, AccelMode::chen(), kChi, 2.0, 1.0, 100, 0.5, 0.25, 0.75, 0.5);
  const PrimalDual z0{Vector::Zero(g.prob.p()), Vector::Zero(g.prob.l())};
  const StocResult r = run_stoc(o, sc, z0, {1, 2, 3}, iters, 10, 1);
  EXPECT_TRUE(r.runs[0].result.has_value());
  EXPECT_FALSE(r.runs[1].result.has_value());
  EXPECT_FALSE(r.runs[1].error.empty());
  EXPECT_TRUE(r.runs[2].result.has_value());
  ASSERT_EQ(r.aggregate.size(), 3u);
  EXPECT_DOUBLE_EQ(r.aggregate.back().mean_objective, r.runs[0].result->trace.records.back().objective);
}

TEST(RunStoc, NeedsSeeds) {
  const GeneratedProblem g = small_ogl();
  const MaskedGradOracle o(g.prob, AccelMode::chen(), 0.5);
  const Schedule sc = schedule_stoc_bounded(g.prob, AccelMode::chen(), kChi, 2.0, 1.0, 100, 0.5, 0.25, 0.75, 0.5);
  EXPECT_THROW(run_stoc(o, sc, {Vector::Zero(g.prob.p()), Vector::Zero(g.prob.l())}, {}, 10), InvalidArgument);
}

TEST(Quantile, Interpolates) {
  EXPECT_DOUBLE_EQ(quantile({4.0, 1.0, 3.0, 2.0}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({1.0, 2.0, 3.0, 4.0, 5.0}, 0.1), 1.4);
  EXPECT_TRUE(std::isnan(quantile({}, 0.5)));
}
