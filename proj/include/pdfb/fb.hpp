#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pdfb/errors.hpp"
#include "pdfb/prox.hpp"
#include "pdfb/saddle.hpp"
#include "pdfb/trace.hpp"
#include "pdfb/types.hpp"

namespace pdfb {

/// Relaxation weight rho_k. `recipe` uses rho = safety * delta where delta
/// is the largest admissible relaxation for the chosen steps.
struct Relaxation {
  enum class Kind { constant, recipe };
  Kind kind = Kind::constant;
  double value = 1.0;

  static Relaxation constant(double rho) { return {Kind::constant, rho}; }
  static Relaxation recipe(double safety = 0.9) { return {Kind::recipe, safety}; }
};

struct FbParams {
  double kappa = 0.0;
  double tau = 0.0;
  double sigma = 0.0;
  Relaxation relaxation;
  long max_iters = 0;
  long record_every = 1;
  /// Refuse to run outside the convergence region.
  bool check_region = true;
};

struct ValidationReport {
  bool valid = false;
  /// 1/tau - L_f/2.
  double slack_tau = 0.0;
  /// (1/tau - L_f/2)(1/sigma - tau ||K||^2) - (tau L_f/2) kappa^2 ||K||^2.
  double slack_sigma = 0.0;
  /// Relative distances to the boundary: (1/tau)/(L_f/2) - 1 and
  /// (1/sigma)/(1/sigma_crit) - 1, where sigma_crit is the largest sigma
  /// allowed for this tau.
  double margin_tau = 0.0;
  double margin_sigma = 0.0;
  /// Largest admissible relaxation and the relaxation actually used.
  double delta = 0.0;
  double rho = 0.0;

  double margin() const { return std::min(margin_tau, margin_sigma); }
};

/// Relaxation cap 2 - (tau L_f/2)(1 - (1-kappa^2) tau sigma ||K||^2)/(1 - tau sigma ||K||^2).
inline double relaxation_cap(double lf, double nk, double kappa, double tau, double sigma) {
  if (lf == 0.0) return 2.0;
  const double ts = tau * sigma * nk * nk;
  return 2.0 - 0.5 * tau * lf * (1.0 - (1.0 - kappa * kappa) * ts) / (1.0 - ts);
}

inline double relaxation_weight(const SaddleProblem& prob, const FbParams& params) {
  if (params.relaxation.kind == Relaxation::Kind::constant) return params.relaxation.value;
  return params.relaxation.value * relaxation_cap(prob.L_f(), prob.norm_K, params.kappa, params.tau, params.sigma);
}

inline ValidationReport validate_params(const SaddleProblem& prob, const FbParams& params) {
  const double lf = prob.L_f();
  const double nk2 = prob.norm_K * prob.norm_K;
  const double k2 = params.kappa * params.kappa;
  const double inv_tau = 1.0 / params.tau;
  ValidationReport r;
  r.slack_tau = inv_tau - 0.5 * lf;
  r.slack_sigma = r.slack_tau * (1.0 / params.sigma - params.tau * nk2) - 0.5 * params.tau * lf * k2 * nk2;
  r.margin_tau = lf > 0.0 ? inv_tau / (0.5 * lf) - 1.0 : kInf;
  if (r.slack_tau > 0.0) {
    const double inv_sigma_crit = params.tau * nk2 + 0.5 * params.tau * lf * k2 * nk2 / r.slack_tau;
    r.margin_sigma = inv_sigma_crit > 0.0 ? (1.0 / params.sigma) / inv_sigma_crit - 1.0 : kInf;
  } else {
    r.margin_sigma = -kInf;
  }
  r.delta = relaxation_cap(lf, prob.norm_K, params.kappa, params.tau, params.sigma);
  r.rho = relaxation_weight(prob, params);
  r.valid = params.tau > 0.0 && params.sigma > 0.0 && std::abs(params.kappa) <= 1.0 && r.slack_tau > 0.0 &&
            r.slack_sigma > 0.0 && r.rho > 0.0 && r.rho < r.delta;
  return r;
}

struct StepSizes {
  double tau;
  double sigma;
  double delta;
};

/// tau = 1.8/L_f and sigma = 0.9 (1 - tau L_f/2) / (tau ||K||^2 (1 - (1-kappa^2) tau L_f/2)).
/// Without a smooth part tau = 1/||K|| and sigma = 0.9/(tau ||K||^2); without
/// K the dual step is irrelevant and set to 1.
inline StepSizes default_step_sizes(const SaddleProblem& prob, double kappa) {
  const double lf = prob.L_f();
  const double nk = prob.norm_K;
  if (lf == 0.0 && nk == 0.0) throw DegenerateProblem("default_step_sizes: L_f = 0 and ||K|| = 0");
  StepSizes s{};
  if (lf == 0.0) {
    s.tau = 1.0 / nk;
    s.sigma = 0.9 / (s.tau * nk * nk);
  } else {
    s.tau = 0.9 * 2.0 / lf;
    const double half = 0.5 * s.tau * lf;
    s.sigma = nk == 0.0 ? 1.0 : 0.9 / (s.tau * nk * nk) * (1.0 - half) / (1.0 - (1.0 - kappa * kappa) * half);
  }
  s.delta = relaxation_cap(lf, nk, kappa, s.tau, s.sigma);
  return s;
}

/// Squared M-norm of dz for M = [I/tau, C^T; C, I/sigma + tau (C C^T - K K^T)]
/// with C = kappa K, evaluated without forming M.
inline double m_norm_sq(const SaddleProblem& prob, double kappa, double tau, double sigma, const PrimalDual& dz) {
  const Vector kx = prob.K.apply(dz.x);
  const Vector kty = prob.K.apply_adjoint(dz.y);
  return dz.x.squaredNorm() / tau + 2.0 * kappa * kx.dot(dz.y) + dz.y.squaredNorm() / sigma -
         tau * (1.0 - kappa * kappa) * kty.squaredNorm();
}

inline double m_distance(const SaddleProblem& prob, double kappa, double tau, double sigma, const PrimalDual& a,
                         const PrimalDual& b) {
  return std::sqrt(std::max(0.0, m_norm_sq(prob, kappa, tau, sigma, {a.x - b.x, a.y - b.y})));
}

struct FbStep {
  PrimalDual resolvent;  // ztilde^k
  PrimalDual next;       // z^{k+1}
};

inline void require_finite(const PrimalDual& z, long k, const char* who) {
  if (!z.all_finite()) throw NonFiniteIterate(std::string(who) + ": non-finite iterate at k=" + std::to_string(k));
}

/// One step of the preconditioned forward-backward iteration with C = kappa K:
///   ytilde = prox_{sigma h*}(y + sigma K [x + tau (kappa-1)(grad f(x) + K^T y)])
///   xtilde = x - tau (grad f(x) - kappa K^T y + (1+kappa) K^T ytilde)
///   z+ = (1-rho) z + rho ztilde
inline FbStep fb_step(const SaddleProblem& prob, double kappa, double tau, double sigma, double rho,
                      const PrimalDual& z) {
  const Vector g = prob.grad_f(z.x);
  const Vector kty = prob.K.apply_adjoint(z.y);
  const Vector shifted = z.x + tau * (kappa - 1.0) * (g + kty);
  FbStep s;
  s.resolvent.y = prox_conjugate(prob.hconj, z.y + sigma * prob.K.apply(shifted), sigma);
  const Vector kty_new = prob.K.apply_adjoint(s.resolvent.y);
  s.resolvent.x = z.x - tau * (g - kappa * kty + (1.0 + kappa) * kty_new);
  if (rho == 1.0) {
    s.next = s.resolvent;
  } else {
    s.next.x = (1.0 - rho) * z.x + rho * s.resolvent.x;
    s.next.y = (1.0 - rho) * z.y + rho * s.resolvent.y;
  }
  return s;
}

inline FbStep fb_step(const SaddleProblem& prob, const FbParams& params, const PrimalDual& z) {
  return fb_step(prob, params.kappa, params.tau, params.sigma, relaxation_weight(prob, params), z);
}

struct RunOptions {
  std::optional<PrimalDual> reference;
  /// Evaluate primal objectives at recorded iterations.
  bool objectives = true;
  /// Record ||ztilde^k - z^{k-1}||_M^2.
  bool resolvent_norms = false;
  /// Stop once ||z^{k+1} - z^k|| falls below this value (0 disables).
  double stop_residual = 0.0;
};

struct FbResult {
  PrimalDual z;
  /// rho-weighted averages of the resolvent outputs.
  PrimalDual ergodic;
  IterTrace trace;
  long iterations = 0;
};

inline double objective_or_nan(const SaddleProblem& prob, const Vector& x) {
  if (!prob.has_h_primal && !prob.objective_override) return kNaN;
  return primal_objective(prob, x);
}

/// Core loop shared by dense and sharded execution. `step` maps z^k to
/// (ztilde^k, z^{k+1}).
template <class StepFn>
FbResult run_fb_with(const SaddleProblem& prob, const FbParams& params, const PrimalDual& z0,
                     const RunOptions& opts, StepFn&& step) {
  const ValidationReport report = validate_params(prob, params);
  if (params.check_region && !report.valid)
    throw InvalidArgument("run_fb: parameters outside the convergence region (slacks " +
                          std::to_string(report.slack_tau) + ", " + std::to_string(report.slack_sigma) + ")");
  if (z0.x.size() != prob.p() || z0.y.size() != prob.l()) throw DimensionError("run_fb: z0 has wrong shape");
  if (params.record_every < 1) throw InvalidArgument("run_fb: record_every must be positive");

  const double rho = report.rho;
  FbResult res;
  res.z = z0;
  res.ergodic = z0;
  if (opts.reference)
    res.trace.initial_mdist = m_distance(prob, params.kappa, params.tau, params.sigma, z0, *opts.reference);
  PrimalDual sum{Vector::Zero(prob.p()), Vector::Zero(prob.l())};
  double weight = 0.0;
  Stopwatch clock;

  for (long k = 1; k <= params.max_iters; ++k) {
    FbStep s = step(res.z, rho);
    require_finite(s.next, k, "run_fb");
    sum.x += rho * s.resolvent.x;
    sum.y += rho * s.resolvent.y;
    weight += rho;
    const double residual = std::sqrt(squared_distance(s.next, res.z));
    const bool record = k % params.record_every == 0;
    if (record) {
      IterRecord r;
      r.k = k;
      res.ergodic = {sum.x / weight, sum.y / weight};
      if (opts.objectives) {
        r.objective = objective_or_nan(prob, s.resolvent.x);
        r.ergodic_objective = objective_or_nan(prob, res.ergodic.x);
      }
      r.residual = residual;
      if (opts.reference)
        r.mdist = m_distance(prob, params.kappa, params.tau, params.sigma, s.next, *opts.reference);
      if (opts.resolvent_norms)
        r.resolvent_msq = m_norm_sq(prob, params.kappa, params.tau, params.sigma,
                                    {s.resolvent.x - res.z.x, s.resolvent.y - res.z.y});
      r.rho_k = rho;
      r.seconds = clock.seconds();
      res.trace.records.push_back(r);
    }
    res.z = std::move(s.next);
    res.iterations = k;
    if (opts.stop_residual > 0.0 && residual < opts.stop_residual) break;
  }
  if (weight > 0.0) res.ergodic = {sum.x / weight, sum.y / weight};
  return res;
}

inline FbResult run_fb(const SaddleProblem& prob, const FbParams& params, const PrimalDual& z0,
                       const RunOptions& opts = {}) {
  return run_fb_with(prob, params, z0, opts, [&](const PrimalDual& z, double rho) {
    return fb_step(prob, params.kappa, params.tau, params.sigma, rho, z);
  });
}

struct FejerResult {
  bool pass = true;
  /// Position of the first violating entry, or -1.
  long first_violation = -1;
};

/// Checks d[i+1] <= d[i] + 1e-10 (1 + d[0]) on a sequence of M-distances.
inline FejerResult fejer_check(const std::vector<double>& distances) {
  FejerResult r;
  if (distances.empty()) return r;
  const double slack = 1e-10 * (1.0 + distances.front());
  for (std::size_t i = 1; i < distances.size(); ++i) {
    if (distances[i] > distances[i - 1] + slack) {
      r.pass = false;
      r.first_violation = static_cast<long>(i);
      return r;
    }
  }
  return r;
}

/// Same check on a trace recorded with a reference; the reported index is
/// the iteration number k of the first violation.
inline FejerResult fejer_check(const IterTrace& trace) {
  if (std::isnan(trace.initial_mdist)) throw MissingHistory("fejer_check: trace has no reference distances");
  std::vector<double> d{trace.initial_mdist};
  for (const auto& r : trace.records) d.push_back(r.mdist);
  FejerResult r = fejer_check(d);
  if (!r.pass) r.first_violation = trace.records[static_cast<std::size_t>(r.first_violation - 1)].k;
  return r;
}

// Inertial forward-backward-forward benchmark.

struct FbfParams {
  double tau = 0.0;
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  long max_iters = 0;
  long record_every = 1;
};

struct FbfState {
  PrimalDual z;
  PrimalDual prev;
};

inline FbfState fbf_step(const SaddleProblem& prob, double tau, double alpha1, double alpha2, const FbfState& s) {
  const Vector& x = s.z.x;
  const Vector& y = s.z.y;
  const Vector dx = x - s.prev.x;
  const Vector dy = y - s.prev.y;
  const Vector xt = x - tau * (prob.grad_f(x) + prob.K.apply_adjoint(y)) + alpha1 * dx;
  const Vector yt = prox_conjugate(prob.hconj, y + tau * prob.K.apply(x) + alpha1 * dy, tau);
  FbfState out;
  out.prev = s.z;
  out.z.y = yt + tau * prob.K.apply(xt - x) + alpha2 * dy;
  out.z.x = xt - tau * prob.K.apply_adjoint(yt - y) + alpha2 * dx;
  return out;
}

inline FbResult run_fbf(const SaddleProblem& prob, const FbfParams& params, const PrimalDual& z0,
                        const RunOptions& opts = {}) {
  if (!(params.tau > 0.0) || !(params.tau < 1.0 / (prob.L_f() + prob.norm_K)))
    throw InvalidArgument("run_fbf: tau must lie in (0, 1/(L_f + ||K||))");
  if (params.record_every < 1) throw InvalidArgument("run_fbf: record_every must be positive");
  FbResult res;
  res.z = z0;
  res.ergodic = z0;
  FbfState s{z0, z0};
  Stopwatch clock;
  for (long k = 1; k <= params.max_iters; ++k) {
    FbfState next = fbf_step(prob, params.tau, params.alpha1, params.alpha2, s);
    require_finite(next.z, k, "run_fbf");
    const double residual = std::sqrt(squared_distance(next.z, s.z));
    s = std::move(next);
    if (k % params.record_every == 0) {
      IterRecord r;
      r.k = k;
      if (opts.objectives) r.objective = objective_or_nan(prob, s.z.x);
      r.residual = residual;
      r.seconds = clock.seconds();
      res.trace.records.push_back(r);
    }
    res.iterations = k;
    if (opts.stop_residual > 0.0 && residual < opts.stop_residual) break;
  }
  res.z = s.z;
  return res;
}

}  // namespace pdfb
