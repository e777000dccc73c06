#include <gtest/gtest.h>

#include <sstream>

#include "pdfb/bench.hpp"
#include "pdfb/shard.hpp"

using namespace pdfb;

namespace {

double max_diff(const PrimalDual& a, const PrimalDual& b) {
  return std::max((a.x - b.x).cwiseAbs().maxCoeff(), (a.y - b.y).cwiseAbs().maxCoeff());
}

}  // namespace

TEST(BalancedRanges, SizesDifferByAtMostOne) {
  const auto r = balanced_ranges(10, 3);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].size(), 4);
  EXPECT_EQ(r[1].size(), 3);
  EXPECT_EQ(r[2].size(), 3);
  EXPECT_EQ(r[0].begin, 0);
  EXPECT_EQ(r[2].end, 10);
  for (std::size_t i = 1; i < r.size(); ++i) EXPECT_EQ(r[i].begin, r[i - 1].end);
}

TEST(PartitionProblem, WorkerCountChecks) {
  const GeneratedProblem g = make_lasso(10, 4, 0.5, 0.1, 1);
  EXPECT_THROW(partition_problem(g.prob, 0), InvalidArgument);
  EXPECT_THROW(partition_problem(g.prob, 5), TooManyWorkers);
  EXPECT_NO_THROW(partition_problem(g.prob, 4));
}

TEST(PartitionProblem, ChainDifferenceCrossTraffic) {
  // Six variables, five chain rows, two workers: only row 2 (x2 - x3)
  // straddles the column split.
  const GeneratedProblem g = make_lasso(8, 6, 0.5, 0.1, 2, true);
  const ShardPlan plan = partition_problem(g.prob, 2);
  EXPECT_EQ(plan.penalty_per_k, 1);
  EXPECT_EQ(plan.penalty_per_kt, 1);
  EXPECT_EQ(plan.n, 8);
}

TEST(PartitionProblem, BlockDiagonalHasNoPenaltyTraffic) {
  const GeneratedProblem g = make_lasso(8, 6, 0.5, 0.1, 3);
  const ShardPlan plan = partition_problem(g.prob, 3);
  EXPECT_EQ(plan.penalty_per_k, 0);
  EXPECT_EQ(plan.penalty_per_kt, 0);
}

TEST(ShardedProducts, MatchGlobalOperators) {
  const GeneratedProblem g = generate(SyntheticSpec::ogl(4, 15, 30, 4));
  const ShardPlan plan = partition_problem(g.prob, 3);
  Rng rng(5);
  const Vector x = rng.normal_vector(g.prob.p()), y = rng.normal_vector(g.prob.l());
  CommLedger ledger;
  EXPECT_LE((sharded_penalty_matvec(plan, x, ledger) - g.prob.K.apply(x)).norm(), 1e-12);
  EXPECT_LE((sharded_penalty_adjoint(plan, y, ledger) - g.prob.K.apply_adjoint(y)).norm(), 1e-12);
  EXPECT_LE((sharded_grad(g.prob, plan, x, ledger) - g.prob.grad_f(x)).norm(), 1e-10 * (1 + g.prob.grad_f(x).norm()));
  EXPECT_EQ(ledger.loss, 2 * 30);
  EXPECT_EQ(ledger.penalty, plan.penalty_per_k + plan.penalty_per_kt);
}

TEST(RunFbSharded, SingleWorkerMatchesDense) {
  const GeneratedProblem g = generate(SyntheticSpec::ogl(3, 15, 30, 6));
  FbParams p = default_fb_params(g.prob);
  p.max_iters = 100;
  const PrimalDual z0{Vector::Zero(g.prob.p()), Vector::Zero(g.prob.l())};
  const FbResult dense = run_fb(g.prob, p, z0);
  const ShardedResult s = run_fb_sharded(g.prob, p, partition_problem(g.prob, 1), z0);
  EXPECT_LE(max_diff(dense.z, s.run.z), 1e-12);
  EXPECT_EQ(s.ledger.total(), 0);
  EXPECT_EQ(s.ledger.rows.size(), 100u);
}

TEST(RunFbSharded, LogisticLossAcrossWorkers) {
  Rng rng(7);
  const Matrix a = rng.normal_matrix(20, 9);
  Vector b(20);
  for (Index i = 0; i < 20; ++i) b[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  const SaddleProblem prob = make_problem(logistic_loss(LinearOperator::dense(a), b),
                                          LinearOperator::sparse(chain_difference(9)), ConjugateProxSpec::box(0.2, 8));
  FbParams p = default_fb_params(prob, 0.5);
  p.max_iters = 150;
  const PrimalDual z0{Vector::Zero(9), Vector::Zero(8)};
  const FbResult dense = run_fb(prob, p, z0);
  const ShardedResult s = run_fb_sharded(prob, p, partition_problem(prob, 4), z0);
  EXPECT_LE(max_diff(dense.z, s.run.z), 1e-10);
}

TEST(RunFbSharded, LedgerRowsAreCumulative) {
  const GeneratedProblem g = generate(SyntheticSpec::ogl(3, 15, 25, 8));
  const ShardPlan plan = partition_problem(g.prob, 3);
  FbParams p = default_fb_params(g.prob);
  p.max_iters = 5;
  const ShardedResult s = run_fb_sharded(g.prob, p, plan, {Vector::Zero(g.prob.p()), Vector::Zero(g.prob.l())});
  ASSERT_EQ(s.ledger.rows.size(), 5u);
  const long per_iter_penalty = plan.penalty_per_k + 2 * plan.penalty_per_kt;
  for (std::size_t i = 0; i < 5; ++i) {
    const long k = static_cast<long>(i) + 1;
    EXPECT_EQ(s.ledger.rows[i].iter, k);
    EXPECT_EQ(s.ledger.rows[i].loss_comm, k * 2 * 25);
    EXPECT_EQ(s.ledger.rows[i].penalty_comm, k * per_iter_penalty);
    EXPECT_EQ(s.ledger.rows[i].total_comm, s.ledger.rows[i].loss_comm + s.ledger.rows[i].penalty_comm);
  }
  std::ostringstream out;
  write_ledger_csv(out, s.ledger);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "iter,loss_comm,penalty_comm,total_comm");
}
