#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pdfb/errors.hpp"
#include "pdfb/linops.hpp"
#include "pdfb/prox.hpp"
#include "pdfb/types.hpp"

namespace pdfb {

/// Smooth part f of the objective together with the Lipschitz constant of
/// its gradient. Quadratic and logistic losses keep their data so they can
/// be serialized and sharded; custom losses carry only the oracles.
struct SmoothLoss {
  enum class Kind { zero, quadratic, logistic, custom };

  Kind kind = Kind::zero;
  Index p = 0;
  double lipschitz = 0.0;
  std::optional<LinearOperator> data;  // A for quadratic / logistic
  Vector target;                       // b for quadratic / logistic
  std::function<Vector(const Vector&)> grad;
  std::function<double(const Vector&)> value;
};

inline SmoothLoss zero_loss(Index p) {
  SmoothLoss s;
  s.kind = SmoothLoss::Kind::zero;
  s.p = p;
  s.grad = [p](const Vector&) -> Vector { return Vector::Zero(p); };
  s.value = [](const Vector&) { return 0.0; };
  return s;
}

/// f(x) = 1/2 ||A x - b||^2 with L_f = ||A||^2.
inline SmoothLoss quadratic_loss(const LinearOperator& a, const Vector& b) {
  if (b.size() != a.rows())
    throw DimensionError("quadratic_loss: b has length " + std::to_string(b.size()) + ", A has " +
                         std::to_string(a.rows()) + " rows");
  SmoothLoss s;
  s.kind = SmoothLoss::Kind::quadratic;
  s.p = a.cols();
  const double na = op_norm(a);
  s.lipschitz = na * na;
  s.data = a;
  s.target = b;
  s.grad = [a, b](const Vector& x) -> Vector { return a.apply_adjoint(a.apply(x) - b); };
  s.value = [a, b](const Vector& x) { return 0.5 * (a.apply(x) - b).squaredNorm(); };
  return s;
}

/// Logistic negative log-likelihood sum_i log(1 + exp(a_i x)) - b_i a_i x
/// with labels b_i in {0, 1}; L_f = ||A||^2 / 4.
inline SmoothLoss logistic_loss(const LinearOperator& a, const Vector& b) {
  if (b.size() != a.rows())
    throw DimensionError("logistic_loss: b has length " + std::to_string(b.size()) + ", A has " +
                         std::to_string(a.rows()) + " rows");
  for (Index i = 0; i < b.size(); ++i)
    if (b[i] != 0.0 && b[i] != 1.0)
      throw BadLabels("logistic_loss: label " + std::to_string(b[i]) + " at " + std::to_string(i) +
                      " is not 0 or 1");
  SmoothLoss s;
  s.kind = SmoothLoss::Kind::logistic;
  s.p = a.cols();
  const double na = op_norm(a);
  s.lipschitz = 0.25 * na * na;
  s.data = a;
  s.target = b;
  s.grad = [a, b](const Vector& x) -> Vector {
    const Vector t = a.apply(x);
    Vector r(t.size());
    for (Index i = 0; i < t.size(); ++i) r[i] = 1.0 / (1.0 + std::exp(-t[i])) - b[i];
    return a.apply_adjoint(r);
  };
  s.value = [a, b](const Vector& x) {
    const Vector t = a.apply(x);
    double v = 0.0;
    for (Index i = 0; i < t.size(); ++i)
      v += std::max(t[i], 0.0) + std::log1p(std::exp(-std::abs(t[i]))) - b[i] * t[i];
    return v;
  };
  return s;
}

/// min_x f(x) + h(K x), handled through the saddle function
/// f(x) + <K x, y> - h*(y).
struct SaddleProblem {
  SmoothLoss loss;
  LinearOperator K;
  ConjugateProxSpec hconj;
  /// ||K||_2 estimate multiplied by kNormSafety; what step rules consume.
  double norm_K = 0.0;
  /// False when h(K x) cannot be evaluated; primal_objective then throws.
  bool has_h_primal = true;
  /// Replaces f(x) + h(K x) for reporting when set.
  std::function<double(const Vector&)> objective_override;

  Index p() const { return K.cols(); }
  Index l() const { return K.rows(); }
  double L_f() const { return loss.lipschitz; }
  Vector grad_f(const Vector& x) const { return loss.grad(x); }
  double f(const Vector& x) const { return loss.value(x); }
};

inline SaddleProblem make_problem(SmoothLoss loss, LinearOperator k, ConjugateProxSpec hconj) {
  if (loss.p != k.cols())
    throw DimensionError("make_problem: loss acts on " + std::to_string(loss.p) + " variables, K has " +
                         std::to_string(k.cols()) + " columns");
  if (hconj.dim() != k.rows())
    throw DimensionError("make_problem: prox spec has dimension " + std::to_string(hconj.dim()) + ", K has " +
                         std::to_string(k.rows()) + " rows");
  SaddleProblem prob;
  prob.loss = std::move(loss);
  prob.K = std::move(k);
  prob.hconj = std::move(hconj);
  prob.norm_K = safe_op_norm(prob.K);
  return prob;
}

/// L(x, y) = f(x) + <K x, y> - h*(y). Returns +inf as an infeasibility flag
/// when y lies outside dom h*.
inline double lagrangian(const SaddleProblem& prob, const Vector& x, const Vector& y) {
  const double hc = h_conj_value(prob.hconj, y);
  if (hc == kInf) return kInf;
  return prob.f(x) + prob.K.apply(x).dot(y) - hc;
}

/// F(x) = f(x) + h(K x).
inline double primal_objective(const SaddleProblem& prob, const Vector& x) {
  if (prob.objective_override) return prob.objective_override(x);
  if (!prob.has_h_primal) throw MissingPrimalEvaluator("primal_objective: no evaluator for h");
  return prob.f(x) + h_value(prob.hconj, prob.K.apply(x));
}

/// Dualizes a hinge loss alongside the penalty: f = 0, K = [D; A] and h* is
/// the penalty conjugate followed by the hinge conjugate. Labels are +-1.
inline SaddleProblem split_dual_construct(const LinearOperator& d, const LinearOperator& a, const Vector& labels,
                                          const ConjugateProxSpec& penalty) {
  if (d.cols() != a.cols())
    throw DimensionError("split_dual_construct: D has " + std::to_string(d.cols()) + " columns, A has " +
                         std::to_string(a.cols()));
  if (labels.size() != a.rows())
    throw DimensionError("split_dual_construct: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(a.rows()) + " samples");
  if (penalty.dim() != d.rows())
    throw DimensionError("split_dual_construct: penalty dimension does not match rows of D");
  auto hconj = ConjugateProxSpec::composite({penalty, ConjugateProxSpec::hinge(labels)});
  return make_problem(zero_loss(d.cols()), LinearOperator::vstack({d, a}), std::move(hconj));
}

/// Latent group lasso on z = (x, v), v stacking one copy of the variables
/// per group: K z = (v, x - D^T v), h* = (group balls, 0). The reported
/// objective is f(D^T v) + sum_g lambda_g ||v_g||, which is the latent group
/// norm objective at the feasible point x = D^T v.
inline SaddleProblem latent_group_construct(const std::vector<std::vector<Index>>& groups,
                                            const LinearOperator& a, const Vector& b,
                                            const std::vector<double>& lambdas) {
  const Index p = a.cols();
  if (groups.size() != lambdas.size())
    throw DimensionError("latent_group_construct: one weight per group required");
  const SparseMatrix dm = build_group_membership(groups, p);
  const Index m = dm.rows();

  std::vector<Triplet> entries;
  for (Index i = 0; i < m; ++i) entries.emplace_back(i, p + i, 1.0);
  for (Index i = 0; i < p; ++i) entries.emplace_back(m + i, i, 1.0);
  for (Index r = 0; r < dm.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(dm, r); it; ++it) entries.emplace_back(m + it.col(), p + it.row(), -it.value());
  LinearOperator k = LinearOperator::sparse(make_csr(m + p, p + m, entries));

  std::vector<Index> sizes;
  for (const auto& g : groups) sizes.push_back(static_cast<Index>(g.size()));
  auto hconj = ConjugateProxSpec::composite(
      {ConjugateProxSpec::group_l2_balls(GroupPartition::from_sizes(sizes), lambdas), ConjugateProxSpec::zero_conj(p)});

  SmoothLoss base = quadratic_loss(a, b);
  SmoothLoss lifted;
  lifted.kind = SmoothLoss::Kind::custom;
  lifted.p = p + m;
  lifted.lipschitz = base.lipschitz;
  lifted.grad = [g = base.grad, p, m](const Vector& z) -> Vector {
    Vector out = Vector::Zero(p + m);
    out.head(p) = g(z.head(p));
    return out;
  };
  lifted.value = [v = base.value, p](const Vector& z) { return v(z.head(p)); };

  SaddleProblem prob = make_problem(std::move(lifted), std::move(k), hconj);
  const LinearOperator dop = LinearOperator::sparse(dm);
  const ConjugateProxSpec balls = hconj.blocks().front().spec;
  prob.objective_override = [value = base.value, dop, balls, m](const Vector& z) {
    const Vector v = z.tail(m);
    return value(dop.apply_adjoint(v)) + h_value(balls, v);
  };
  return prob;
}

/// Fixed-point residual of z = (x, y) for steps (tau, sigma):
/// ||tau (grad f(x) + K^T y)|| and ||y - prox_{sigma h*}(y + sigma K x)||.
struct FixedPointResidual {
  double primal;
  double dual;
};

inline FixedPointResidual fixed_point_residual(const SaddleProblem& prob, const PrimalDual& z, double tau,
                                               double sigma) {
  const Vector gx = prob.grad_f(z.x) + prob.K.apply_adjoint(z.y);
  const Vector py = prox_conjugate(prob.hconj, z.y + sigma * prob.K.apply(z.x), sigma);
  return {tau * gx.norm(), (z.y - py).norm()};
}

/// Scale-free version with unit steps, each part divided by the size of the
/// quantities it balances.
inline double relative_fixed_point_residual(const SaddleProblem& prob, const PrimalDual& z) {
  const Vector g = prob.grad_f(z.x);
  const Vector kty = prob.K.apply_adjoint(z.y);
  const double rx = (g + kty).norm() / (1.0 + g.norm() + kty.norm());
  const Vector py = prox_conjugate(prob.hconj, z.y + prob.K.apply(z.x), 1.0);
  const double ry = (z.y - py).norm() / (1.0 + z.y.norm());
  return std::max(rx, ry);
}

}  // namespace pdfb
