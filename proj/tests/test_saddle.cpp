#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pdfb/bench.hpp"
#include "pdfb/saddle.hpp"

using namespace pdfb;

TEST(QuadraticLoss, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  const Matrix a = rng.normal_matrix(7, 4);
  const Vector b = rng.normal_vector(7);
  const SmoothLoss f = quadratic_loss(LinearOperator::dense(a), b);
  const Vector x = rng.normal_vector(4);
  const Vector fd = oracle::fd_gradient(f.value, x);
  EXPECT_LE((f.grad(x) - fd).norm(), 1e-6 * (1.0 + fd.norm()));
  EXPECT_NEAR(f.lipschitz, std::pow(oracle::spectral_norm(a), 2), 1e-7 * f.lipschitz);
}

TEST(QuadraticLoss, DimensionMismatch) {
  EXPECT_THROW(quadratic_loss(LinearOperator::identity(3), Vector::Zero(2)), DimensionError);
}

TEST(LogisticLoss, GradientAtZero) {
  Rng rng(2);
  const Matrix a = rng.normal_matrix(6, 3);
  Vector b(6);
  b << 1, 0, 0, 1, 1, 0;
  const SmoothLoss f = logistic_loss(LinearOperator::dense(a), b);
  const Vector want = a.transpose() * (Vector::Constant(6, 0.5) - b);
  EXPECT_LE((f.grad(Vector::Zero(3)) - want).norm(), 1e-14);
  EXPECT_NEAR(f.lipschitz, 0.25 * std::pow(oracle::spectral_norm(a), 2), 1e-7 * f.lipschitz);
}

TEST(LogisticLoss, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  const Matrix a = rng.normal_matrix(9, 4);
  Vector b(9);
  for (Index i = 0; i < 9; ++i) b[i] = i % 3 == 0 ? 1.0 : 0.0;
  const SmoothLoss f = logistic_loss(LinearOperator::dense(a), b);
  const Vector x = rng.normal_vector(4);
  const Vector fd = oracle::fd_gradient(f.value, x);
  EXPECT_LE((f.grad(x) - fd).norm(), 1e-6 * (1.0 + fd.norm()));
}

TEST(LogisticLoss, StationaryWhenResidualsCancel) {
  // Rows a and -a, both labelled 1: at x = 0 the residuals sigmoid(0) - 1
  // cancel in A^T r.
  Matrix a(2, 1);
  a << 1.0, -1.0;
  const SmoothLoss f = logistic_loss(LinearOperator::dense(a), Vector::Ones(2));
  EXPECT_EQ(f.grad(Vector::Zero(1))[0], 0.0);
}

TEST(LogisticLoss, BadLabels) {
  Vector b(2);
  b << 1.0, -1.0;
  EXPECT_THROW(logistic_loss(LinearOperator::identity(2), b), BadLabels);
}

TEST(Lagrangian, FeasibleAndInfeasible) {
  Rng rng(4);
  const Matrix a = rng.normal_matrix(5, 3);
  const Vector b = rng.normal_vector(5);
  const SaddleProblem prob =
      make_problem(quadratic_loss(LinearOperator::dense(a), b), LinearOperator::identity(3), ConjugateProxSpec::box(1.0, 3));
  const Vector x = rng.normal_vector(3);
  Vector y(3);
  y << 0.5, -1.0, 0.2;
  EXPECT_NEAR(lagrangian(prob, x, y), 0.5 * (a * x - b).squaredNorm() + x.dot(y), 1e-12);
  y[0] = 1.5;
  EXPECT_EQ(lagrangian(prob, x, y), kInf);
}

TEST(Lagrangian, HingeAddsLinearTerm) {
  Vector labels(2);
  labels << 1.0, -1.0;
  const SaddleProblem prob = split_dual_construct(LinearOperator::zero(0, 2), LinearOperator::identity(2), labels,
                                                  ConjugateProxSpec::box(1.0, 0));
  Vector x(2), y(2);
  x << 0.3, -0.2;
  y << -0.5, 0.25;  // b*y = (-0.5, -0.25), inside [-1, 0]
  EXPECT_NEAR(lagrangian(prob, x, y), x.dot(y) - (-0.5 - 0.25), 1e-15);
}

TEST(PrimalObjective, LassoAtZero) {
  const SaddleProblem prob = make_problem(quadratic_loss(LinearOperator::identity(3), Vector::Zero(3)),
                                          LinearOperator::identity(3), ConjugateProxSpec::box(1.0, 3));
  EXPECT_EQ(primal_objective(prob, Vector::Zero(3)), 0.0);
}

TEST(PrimalObjective, MissingEvaluator) {
  SaddleProblem prob = make_problem(zero_loss(2), LinearOperator::identity(2), ConjugateProxSpec::box(1.0, 2));
  prob.has_h_primal = false;
  EXPECT_THROW(primal_objective(prob, Vector::Zero(2)), MissingPrimalEvaluator);
}

TEST(SplitDual, Structure) {
  Rng rng(5);
  const Matrix a = rng.normal_matrix(4, 3);
  Vector labels(4);
  labels << 1, -1, 1, 1;
  const LinearOperator d = LinearOperator::csr(chain_difference(3));
  const SaddleProblem prob = split_dual_construct(d, LinearOperator::dense(a), labels, ConjugateProxSpec::box(0.5, 2));
  EXPECT_EQ(prob.L_f(), 0.0);
  EXPECT_EQ(prob.l(), 6);
  const Vector x = rng.normal_vector(3);
  Vector want(6);
  want << d.apply(x), a * x;
  EXPECT_LE((prob.K.apply(x) - want).norm(), 1e-14);
  EXPECT_EQ(prob.hconj.kind(), ConjugateProxSpec::Kind::composite);
  // h(Kx) = 0.5 ||D x||_1 + sum of hinge terms.
  double hinge = 0.0;
  for (Index i = 0; i < 4; ++i) hinge += std::max(0.0, 1.0 - labels[i] * a.row(i).dot(x));
  EXPECT_NEAR(primal_objective(prob, x), 0.5 * d.apply(x).lpNorm<1>() + hinge, 1e-12);
}

TEST(SplitDual, EmptyDataIsPenaltyOnly) {
  const LinearOperator d = LinearOperator::csr(chain_difference(4));
  const SaddleProblem prob =
      split_dual_construct(d, LinearOperator::zero(0, 4), Vector(0), ConjugateProxSpec::box(1.0, 3));
  EXPECT_EQ(prob.l(), 3);
  Rng rng(6);
  const Vector z = 3.0 * rng.normal_vector(3);
  EXPECT_EQ(prox_conjugate(prob.hconj, z, 1.0), prox_conjugate(ConjugateProxSpec::box(1.0, 3), z, 1.0));
}

TEST(SplitDual, DimensionErrors) {
  EXPECT_THROW(split_dual_construct(LinearOperator::identity(3), LinearOperator::identity(2), Vector::Ones(2),
                                    ConjugateProxSpec::box(1.0, 3)),
               DimensionError);
  EXPECT_THROW(split_dual_construct(LinearOperator::identity(2), LinearOperator::identity(2), Vector::Ones(3),
                                    ConjugateProxSpec::box(1.0, 2)),
               DimensionError);
}

TEST(LatentGroup, OperatorAndObjective) {
  Rng rng(7);
  const std::vector<std::vector<Index>> groups = {{0, 1, 2}, {2, 3}};
  const Matrix a = rng.normal_matrix(6, 4);
  const Vector b = rng.normal_vector(6);
  const SaddleProblem prob = latent_group_construct(groups, LinearOperator::dense(a), b, {0.7, 1.1});
  const Index p = 4, m = 5;
  EXPECT_EQ(prob.p(), p + m);
  EXPECT_EQ(prob.l(), m + p);
  const Matrix d(build_group_membership(groups, p));
  const Vector x = rng.normal_vector(p), v = rng.normal_vector(m);
  Vector z(p + m);
  z << x, v;
  Vector want(m + p);
  want << v, x - d.transpose() * v;
  EXPECT_LE((prob.K.apply(z) - want).norm(), 1e-14);
  // Reported objective uses x = D^T v.
  const Vector xv = d.transpose() * v;
  const double obj = 0.5 * (a * xv - b).squaredNorm() + 0.7 * v.head(3).norm() + 1.1 * v.tail(2).norm();
  EXPECT_NEAR(primal_objective(prob, z), obj, 1e-12);
  // The smooth part only sees x.
  Vector g = prob.grad_f(z);
  EXPECT_LE((g.head(p) - a.transpose() * (a * x - b)).norm(), 1e-12);
  EXPECT_EQ(g.tail(m), Vector::Zero(m));
}

TEST(LatentGroup, WeightCountMismatch) {
  EXPECT_THROW(latent_group_construct({{0}, {1}}, LinearOperator::identity(2), Vector::Zero(2), {1.0}),
               DimensionError);
}

TEST(FixedPoint, ZeroAtSolution) {
  // Lasso with K = I: x* from the oracle, y* = -grad f(x*).
  const GeneratedProblem g = make_lasso(15, 5, 0.4, 0.1, 3);
  const Vector xs = oracle::ista(g.A, g.b, 0.4, 100000);
  const PrimalDual z{xs, -g.prob.grad_f(xs)};
  EXPECT_LE(relative_fixed_point_residual(g.prob, z), 1e-12);
  const FixedPointResidual r = fixed_point_residual(g.prob, z, 0.1, 0.3);
  EXPECT_LE(r.primal, 1e-12);
  EXPECT_LE(r.dual, 1e-12);
}

TEST(MakeProblem, DimensionChecks) {
  EXPECT_THROW(make_problem(zero_loss(3), LinearOperator::identity(2), ConjugateProxSpec::box(1.0, 2)),
               DimensionError);
  EXPECT_THROW(make_problem(zero_loss(2), LinearOperator::identity(2), ConjugateProxSpec::box(1.0, 3)),
               DimensionError);
}
