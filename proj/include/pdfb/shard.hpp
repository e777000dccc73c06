#pragma once

#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "pdfb/errors.hpp"
#include "pdfb/fb.hpp"
#include "pdfb/linops.hpp"
#include "pdfb/saddle.hpp"

namespace pdfb {

/// Half-open range [begin, end).
struct Range {
  Index begin = 0;
  Index end = 0;
  Index size() const { return end - begin; }
};

/// Contiguous split of n items into m parts whose sizes differ by at most
/// one, larger parts first.
inline std::vector<Range> balanced_ranges(Index n, Index m) {
  std::vector<Range> out;
  const Index base = n / m, extra = n % m;
  Index at = 0;
  for (Index i = 0; i < m; ++i) {
    const Index len = base + (i < extra ? 1 : 0);
    out.push_back({at, at + len});
    at += len;
  }
  return out;
}

/// Feature split over M simulated workers. Worker i owns x[cols[i]] and
/// y[rows[i]], the column block A^[i] of the data matrix and the blocks
/// K_[i]^[j] of K.
struct ShardPlan {
  Index M = 1;
  std::vector<Range> cols;
  std::vector<Range> rows;
  std::vector<LinearOperator> data_blocks;             // A^[i], n x p_i
  std::vector<std::vector<LinearOperator>> k_blocks;   // [i][j] = K_[i]^[j]
  /// Values sent per K multiply and per K^T multiply.
  long penalty_per_k = 0;
  long penalty_per_kt = 0;
  Index n = 0;
};

namespace detail {

inline LinearOperator extract_block(const LinearOperator& op, const Range& r, const Range& c) {
  if (op.kind() == LinearOperator::Kind::dense)
    return LinearOperator::dense(op.to_dense().block(r.begin, c.begin, r.size(), c.size()));
  const SparseMatrix m = op.to_sparse();
  SparseMatrix b = m.block(r.begin, c.begin, r.size(), c.size());
  b.makeCompressed();
  return LinearOperator::sparse(std::move(b));
}

inline long nonzero_rows(const SparseMatrix& m) {
  long count = 0;
  for (Index r = 0; r < m.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(m, r); it; ++it) {
      if (it.value() != 0.0) {
        ++count;
        break;
      }
    }
  }
  return count;
}

inline long nonzero_cols(const SparseMatrix& m) {
  std::vector<char> seen(static_cast<std::size_t>(m.cols()), 0);
  for (Index r = 0; r < m.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(m, r); it; ++it)
      if (it.value() != 0.0) seen[static_cast<std::size_t>(it.col())] = 1;
  long count = 0;
  for (char s : seen) count += s;
  return count;
}

}  // namespace detail

/// Splits primal and dual indices into M balanced contiguous parts and
/// extracts the operator blocks. With M = 1 the global operators are used
/// as they are.
inline ShardPlan partition_problem(const SaddleProblem& prob, Index m) {
  if (m < 1) throw InvalidArgument("partition_problem: M must be at least 1");
  if (m > prob.p())
    throw TooManyWorkers("partition_problem: " + std::to_string(m) + " workers for " + std::to_string(prob.p()) +
                         " variables");
  ShardPlan plan;
  plan.M = m;
  plan.cols = balanced_ranges(prob.p(), m);
  plan.rows = balanced_ranges(prob.l(), m);
  if (prob.loss.data) plan.n = prob.loss.data->rows();

  if (m == 1) {
    if (prob.loss.data) plan.data_blocks.push_back(*prob.loss.data);
    plan.k_blocks = {{prob.K}};
    return plan;
  }
  if (prob.loss.data)
    for (const Range& c : plan.cols)
      plan.data_blocks.push_back(detail::extract_block(*prob.loss.data, {0, plan.n}, c));
  const SparseMatrix k = prob.K.to_sparse();
  plan.k_blocks.resize(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < m; ++j) {
      const Range& r = plan.rows[static_cast<std::size_t>(i)];
      const Range& c = plan.cols[static_cast<std::size_t>(j)];
      SparseMatrix b = k.block(r.begin, c.begin, r.size(), c.size());
      b.makeCompressed();
      if (i != j) {
        plan.penalty_per_k += detail::nonzero_rows(b);
        plan.penalty_per_kt += detail::nonzero_cols(b);
      }
      plan.k_blocks[static_cast<std::size_t>(i)].push_back(LinearOperator::sparse(std::move(b)));
    }
  }
  return plan;
}

/// Scalar values moved between workers, cumulative over a run.
struct CommLedger {
  struct Row {
    long iter;
    long loss_comm;
    long penalty_comm;
    long total_comm;
  };
  long loss = 0;
  long penalty = 0;
  std::vector<Row> rows;

  long total() const { return loss + penalty; }
  void close_iteration(long iter) { rows.push_back({iter, loss, penalty, total()}); }
};

inline void write_ledger_csv(std::ostream& out, const CommLedger& ledger) {
  out << "iter,loss_comm,penalty_comm,total_comm\n";
  for (const auto& r : ledger.rows)
    out << r.iter << ',' << r.loss_comm << ',' << r.penalty_comm << ',' << r.total_comm << '\n';
}

/// A x as the left-to-right sum of A^[i] x_[i]; the master gathers (M-1) n
/// values.
inline Vector sharded_loss_matvec(const ShardPlan& plan, const Vector& x, CommLedger& ledger) {
  if (plan.data_blocks.empty()) throw InvalidArgument("sharded_loss_matvec: problem has no data matrix");
  Vector out = plan.data_blocks[0].apply(x.segment(plan.cols[0].begin, plan.cols[0].size()));
  for (std::size_t i = 1; i < plan.data_blocks.size(); ++i)
    out += plan.data_blocks[i].apply(x.segment(plan.cols[i].begin, plan.cols[i].size()));
  ledger.loss += (plan.M - 1) * plan.n;
  return out;
}

/// A^T r computed blockwise; each worker produces its own slice.
inline Vector sharded_loss_adjoint(const ShardPlan& plan, const Vector& r) {
  Index p = plan.cols.back().end;
  Vector out(p);
  for (std::size_t i = 0; i < plan.data_blocks.size(); ++i)
    out.segment(plan.cols[i].begin, plan.cols[i].size()) = plan.data_blocks[i].apply_adjoint(r);
  return out;
}

/// K x: worker i forms sum_j K_[i]^[j] x_[j], left to right in j. Nonzero
/// partial results of off-diagonal blocks are transferred.
inline Vector sharded_penalty_matvec(const ShardPlan& plan, const Vector& x, CommLedger& ledger) {
  Vector out(plan.rows.back().end);
  for (std::size_t i = 0; i < plan.rows.size(); ++i) {
    const auto& row = plan.k_blocks[i];
    Vector acc = row[0].apply(x.segment(plan.cols[0].begin, plan.cols[0].size()));
    for (std::size_t j = 1; j < row.size(); ++j) acc += row[j].apply(x.segment(plan.cols[j].begin, plan.cols[j].size()));
    out.segment(plan.rows[i].begin, plan.rows[i].size()) = acc;
  }
  ledger.penalty += plan.penalty_per_k;
  return out;
}

/// K^T y: worker j forms sum_i (K_[i]^[j])^T y_[i], left to right in i.
inline Vector sharded_penalty_adjoint(const ShardPlan& plan, const Vector& y, CommLedger& ledger) {
  Vector out(plan.cols.back().end);
  for (std::size_t j = 0; j < plan.cols.size(); ++j) {
    Vector acc = plan.k_blocks[0][j].apply_adjoint(y.segment(plan.rows[0].begin, plan.rows[0].size()));
    for (std::size_t i = 1; i < plan.rows.size(); ++i)
      acc += plan.k_blocks[i][j].apply_adjoint(y.segment(plan.rows[i].begin, plan.rows[i].size()));
    out.segment(plan.cols[j].begin, plan.cols[j].size()) = acc;
  }
  ledger.penalty += plan.penalty_per_kt;
  return out;
}

inline Vector sharded_grad(const SaddleProblem& prob, const ShardPlan& plan, const Vector& x, CommLedger& ledger) {
  switch (prob.loss.kind) {
    case SmoothLoss::Kind::quadratic:
      return sharded_loss_adjoint(plan, sharded_loss_matvec(plan, x, ledger) - prob.loss.target);
    case SmoothLoss::Kind::logistic: {
      const Vector t = sharded_loss_matvec(plan, x, ledger);
      Vector r(t.size());
      for (Index i = 0; i < t.size(); ++i) r[i] = 1.0 / (1.0 + std::exp(-t[i])) - prob.loss.target[i];
      return sharded_loss_adjoint(plan, r);
    }
    default:
      return prob.grad_f(x);
  }
}

/// fb_step with every product routed through the worker blocks.
inline FbStep sharded_fb_step(const SaddleProblem& prob, const ShardPlan& plan, double kappa, double tau,
                              double sigma, double rho, const PrimalDual& z, CommLedger& ledger) {
  const Vector g = sharded_grad(prob, plan, z.x, ledger);
  const Vector kty = sharded_penalty_adjoint(plan, z.y, ledger);
  const Vector shifted = z.x + tau * (kappa - 1.0) * (g + kty);
  FbStep s;
  s.resolvent.y =
      prox_conjugate(prob.hconj, z.y + sigma * sharded_penalty_matvec(plan, shifted, ledger), sigma);
  const Vector kty_new = sharded_penalty_adjoint(plan, s.resolvent.y, ledger);
  s.resolvent.x = z.x - tau * (g - kappa * kty + (1.0 + kappa) * kty_new);
  if (rho == 1.0) {
    s.next = s.resolvent;
  } else {
    s.next.x = (1.0 - rho) * z.x + rho * s.resolvent.x;
    s.next.y = (1.0 - rho) * z.y + rho * s.resolvent.y;
  }
  return s;
}

struct ShardedResult {
  FbResult run;
  CommLedger ledger;
};

inline ShardedResult run_fb_sharded(const SaddleProblem& prob, const FbParams& params, const ShardPlan& plan,
                                    const PrimalDual& z0, const RunOptions& opts = {}) {
  ShardedResult out;
  long iter = 0;
  out.run = run_fb_with(prob, params, z0, opts, [&](const PrimalDual& z, double rho) {
    FbStep s = sharded_fb_step(prob, plan, params.kappa, params.tau, params.sigma, rho, z, out.ledger);
    out.ledger.close_iteration(++iter);
    return s;
  });
  return out;
}

}  // namespace pdfb
