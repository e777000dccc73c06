#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>

#include "pdfb/errors.hpp"
#include "pdfb/fb.hpp"
#include "pdfb/prox.hpp"
#include "pdfb/saddle.hpp"
#include "pdfb/trace.hpp"
#include "pdfb/types.hpp"

namespace pdfb {

/// Bounds ||A|| <= a||K||, ||B|| <= b||K||, ||K+A|| <= c||K||, ||K+B|| <= d||K||.
struct NormFactors {
  double a, b, c, d;
};

/// Choice of the auxiliary operators A = alpha K and B = beta K.
/// `kappa` gives A = -kappa K, B = kappa K; `chen` gives A = -K, B = 0.
struct AccelMode {
  enum class Kind { kappa, chen };
  Kind kind = Kind::kappa;
  double kappa = 0.0;

  static AccelMode with_kappa(double k) { return {Kind::kappa, k}; }
  static AccelMode chen() { return {Kind::chen, 0.0}; }

  double alpha() const { return kind == Kind::chen ? -1.0 : -kappa; }
  double beta() const { return kind == Kind::chen ? 0.0 : kappa; }
  NormFactors factors() const {
    if (kind == Kind::chen) return {1.0, 0.0, 0.0, 1.0};
    const double k = std::abs(kappa);
    return {k, k, std::abs(1.0 - kappa), std::abs(1.0 + kappa)};
  }
  std::string name() const { return kind == Kind::chen ? "chen" : "kappa=" + std::to_string(kappa); }
};

/// Per-iteration parameters. Step sizes are rational in k:
/// tau_k = (tn0 + tn1 k)/(td0 + td1 k), sigma_k likewise.
struct Schedule {
  enum class Setting { bounded, unbounded };
  Setting setting = Setting::bounded;
  bool stochastic = false;

  NormFactors factors{};
  double q = 0.5, r = 0.5, s = 1.0, t = 1.0;
  double P = 0.0, Q = 0.0;
  double L_f = 0.0, norm_K = 0.0;
  double omega_x = 0.0, omega_y = 0.0;
  long horizon = 0;  // N for unbounded and stochastic schedules
  double chi_x = 0.0, chi_y = 0.0, chi = 0.0, r_tilde = 0.0;

  double tn0 = 0.0, tn1 = 0.0, td0 = 0.0, td1 = 0.0;
  double sn0 = 0.0, sn1 = 0.0, sd0 = 0.0, sd1 = 0.0;

  double rho(long k) const { return 2.0 / (static_cast<double>(k) + 1.0); }
  double theta(long k) const { return (static_cast<double>(k) - 1.0) / static_cast<double>(k); }
  double gamma(long k) const { return static_cast<double>(k); }
  double tau(long k) const {
    const double kd = static_cast<double>(k);
    return (tn0 + tn1 * kd) / (td0 + td1 * kd);
  }
  double sigma(long k) const {
    const double kd = static_cast<double>(k);
    return (sn0 + sn1 * kd) / (sd0 + sd1 * kd);
  }
  /// tau_{k-1}, with tau_0 = tau_1.
  double tau_prev(long k) const { return tau(k > 1 ? k - 1 : 1); }

  /// Left-hand sides of the two step-size conditions at k (nonnegative when
  /// they hold). Deterministic schedules use s = t = 1.
  double cond1(long k) const {
    const double a = factors.a;
    return (s - q) / tau(k) - L_f * rho(k) - a * a * norm_K * norm_K * sigma(k) / r;
  }
  double cond2(long k) const {
    const double b = factors.b;
    return (t - r) / sigma(k) - tau(k) * norm_K * norm_K * (2.0 * factors.c * factors.d + b * b / q);
  }
};

namespace detail {

inline double condition_tolerance(const Schedule& sc, long k) {
  // Scale of the terms being compared, for a relative tolerance.
  return 1e-12 * ((sc.s + sc.t) / sc.tau(k) + 1.0 / sc.sigma(k) + sc.L_f);
}

inline void check_conditions(const Schedule& sc, long upto) {
  for (long k = 1; k <= upto; ++k) {
    const double tol = condition_tolerance(sc, k);
    if (sc.cond1(k) < -tol) throw ConstraintViolation("schedule: first step-size condition fails", k);
    if (sc.cond2(k) < -tol) throw ConstraintViolation("schedule: second step-size condition fails", k);
  }
}

inline void check_qr(double q, double r, bool unbounded) {
  if (!(q > 0.0 && q < 1.0)) throw InvalidArgument("schedule: q must lie in (0, 1)");
  if (!(r > 0.0 && r < (unbounded ? 0.5 : 1.0)))
    throw InvalidArgument(unbounded ? "schedule: r must lie in (0, 1/2)" : "schedule: r must lie in (0, 1)");
}

inline void check_degenerate(const SaddleProblem& prob) {
  if (prob.L_f() == 0.0 && prob.norm_K == 0.0) throw DegenerateProblem("schedule: L_f = 0 and ||K|| = 0");
}

}  // namespace detail

inline double accel_P(double q) { return 1.0 / (1.0 - q); }

inline double accel_Q(const NormFactors& f, double q, double r, bool unbounded) {
  double Q = std::max(f.a * f.a / ((1.0 - q) * r), (2.0 * f.c * f.d + f.b * f.b / q) / (1.0 - r));
  if (unbounded) Q = std::max(Q, 1.0);
  return Q;
}

/// tau_k = k/(2 P L_f + k Q ||K|| Omega_Y/Omega_X), sigma_k = Omega_Y/(||K|| Omega_X),
/// checked against both step-size conditions for k <= check_upto.
inline Schedule schedule_bounded(const SaddleProblem& prob, const AccelMode& mode, double omega_x, double omega_y,
                                 double q, double r, long check_upto) {
  detail::check_degenerate(prob);
  detail::check_qr(q, r, false);
  if (!(omega_x > 0.0 && omega_y > 0.0)) throw InvalidArgument("schedule_bounded: Omega_X, Omega_Y must be positive");
  Schedule sc;
  sc.setting = Schedule::Setting::bounded;
  sc.factors = mode.factors();
  sc.q = q;
  sc.r = r;
  sc.P = accel_P(q);
  sc.Q = accel_Q(sc.factors, q, r, false);
  sc.L_f = prob.L_f();
  sc.norm_K = prob.norm_K;
  sc.omega_x = omega_x;
  sc.omega_y = omega_y;
  sc.tn1 = 1.0;
  sc.td0 = 2.0 * sc.P * sc.L_f;
  sc.td1 = sc.Q * sc.norm_K * omega_y / omega_x;
  if (sc.norm_K > 0.0) {
    sc.sn0 = omega_y;
    sc.sd0 = sc.norm_K * omega_x;
  } else {
    // K = 0: the dual update is prox_{sigma h*}(y) for any sigma.
    sc.sn0 = sc.sd0 = 1.0;
  }
  detail::check_conditions(sc, check_upto);
  return sc;
}

/// tau_k = k/(2 P L_f + Q N ||K||), sigma_k = k/(N ||K||), checked for k <= N.
inline Schedule schedule_unbounded(const SaddleProblem& prob, const AccelMode& mode, long horizon, double q,
                                   double r) {
  detail::check_degenerate(prob);
  detail::check_qr(q, r, true);
  if (horizon < 2) throw InvalidArgument("schedule_unbounded: N must be at least 2");
  Schedule sc;
  sc.setting = Schedule::Setting::unbounded;
  sc.factors = mode.factors();
  sc.q = q;
  sc.r = r;
  sc.P = accel_P(q);
  sc.Q = accel_Q(sc.factors, q, r, true);
  sc.L_f = prob.L_f();
  sc.norm_K = prob.norm_K;
  sc.horizon = horizon;
  const double n = static_cast<double>(horizon);
  sc.tn1 = 1.0;
  sc.td0 = 2.0 * sc.P * sc.L_f + sc.Q * n * sc.norm_K;
  sc.sn1 = 1.0;
  sc.sd0 = sc.norm_K > 0.0 ? n * sc.norm_K : n;
  detail::check_conditions(sc, horizon);
  return sc;
}

/// Bounded setting: 4 P Omega_X^2 L_f/(N(N-1)) + 2 Omega_X Omega_Y (Q+1) ||K|| / N.
inline double bounded_rate_bound(double P, double Q, double lf, double nk, double ox, double oy, long n) {
  const double nd = static_cast<double>(n);
  return 4.0 * P * ox * ox * lf / (nd * (nd - 1.0)) + 2.0 * ox * oy * (Q + 1.0) * nk / nd;
}

/// Unbounded setting: (4 P L_f/N^2 + 2 Q ||K||/N)(2 + q/(1-q) + (r+1/2)/(1/2-r)).
inline double unbounded_rate_bound(double P, double Q, double q, double r, double lf, double nk, long n) {
  const double nd = static_cast<double>(n);
  return (4.0 * P * lf / (nd * nd) + 2.0 * Q * nk / nd) * (2.0 + q / (1.0 - q) + (r + 0.5) / (0.5 - r));
}

struct TunedQR {
  double q;
  double r;
  double bound;
};

/// Grid search over q, r in {0.01, ..., 0.99} (r < 1/2 when unbounded) for
/// the smallest rate bound. Ties keep the smaller q, then the smaller r.
inline TunedQR tune_qr(const SaddleProblem& prob, const AccelMode& mode, Schedule::Setting setting, long n,
                       double omega_x = 1.0, double omega_y = 1.0) {
  const NormFactors f = mode.factors();
  const bool unbounded = setting == Schedule::Setting::unbounded;
  TunedQR best{0.0, 0.0, kInf};
  for (int qi = 1; qi <= 99; ++qi) {
    const double q = qi / 100.0;
    for (int ri = 1; ri <= (unbounded ? 49 : 99); ++ri) {
      const double r = ri / 100.0;
      const double P = accel_P(q);
      const double Q = accel_Q(f, q, r, unbounded);
      const double v = unbounded ? unbounded_rate_bound(P, Q, q, r, prob.L_f(), prob.norm_K, n)
                                 : bounded_rate_bound(P, Q, prob.L_f(), prob.norm_K, omega_x, omega_y, n);
      if (v < best.bound) best = {q, r, v};
    }
  }
  return best;
}

/// Iterate of the accelerated method: the averaged pair (x, y) and the
/// auxiliary sequence (xt, yt) with one step of history.
struct AccelState {
  Vector x, y;
  Vector xt, yt;
  Vector xt_prev, yt_prev;
  /// (xt, yt) at k = 1, kept for perturbation diagnostics.
  Vector xt1, yt1;
  long k = 1;

  static AccelState from(const PrimalDual& z0) {
    return {z0.x, z0.y, z0.x, z0.y, z0.x, z0.y, z0.x, z0.y, 1};
  }
  PrimalDual averaged() const { return {x, y}; }
};

struct StepCoefficients {
  double rho, theta, tau, tau_prev, sigma;
};

/// Exact operator access for the accelerated step, with A = alpha K and
/// B = beta K.
struct ExactOps {
  const SaddleProblem& prob;
  double alpha;
  double beta;

  Vector grad(const Vector& x) { return prob.grad_f(x); }
  Vector kx(const Vector& x) { return prob.K.apply(x); }
  Vector kty(const Vector& y) { return prob.K.apply_adjoint(y); }
  Vector ax(const Vector& x) { return alpha == 0.0 ? Vector::Zero(prob.l()) : Vector(alpha * prob.K.apply(x)); }
  Vector bty(const Vector& y) {
    return beta == 0.0 ? Vector::Zero(prob.p()) : Vector(beta * prob.K.apply_adjoint(y));
  }
};

/// One step of the accelerated iteration:
///   ubar  = K xt - theta A (xt - xt_prev)
///   vbar  = K^T (yt + theta (tau_prev/tau) dyt) + B^T (theta (tau_prev/tau - 1) dyt)
///   xmd   = (1-rho) x + rho xt
///   ut+   = ubar - tau (K + A)(grad f(xmd) + vbar)
///   yt+   = prox_{sigma h*}(yt + sigma ut+)
///   vt+   = K^T yt+ + B^T (yt+ - yt) - theta B^T dyt
///   xt+   = xt - tau (grad f(xmd) + vt+)
///   (x, y)+ = (1-rho)(x, y) + rho (xt+, yt+)
/// with dyt = yt - yt_prev. The gradient is evaluated once and reused.
template <class Ops>
void accel_step_with(const SaddleProblem& prob, Ops& ops, const StepCoefficients& c, AccelState& s) {
  const double ratio = c.tau_prev / c.tau;
  const Vector dxt = s.xt - s.xt_prev;
  const Vector dyt = s.yt - s.yt_prev;

  Vector ubar = ops.kx(s.xt);
  if (c.theta != 0.0) ubar -= c.theta * ops.ax(dxt);
  const Vector vbar = ops.kty(s.yt + (c.theta * ratio) * dyt) + ops.bty((c.theta * (ratio - 1.0)) * dyt);
  const Vector xmd = (1.0 - c.rho) * s.x + c.rho * s.xt;
  const Vector g = ops.grad(xmd);
  const Vector w = g + vbar;
  const Vector ut = ubar - c.tau * (ops.kx(w) + ops.ax(w));
  Vector yt_new = prox_conjugate(prob.hconj, s.yt + c.sigma * ut, c.sigma);
  const Vector vt = ops.kty(yt_new) + ops.bty(yt_new - s.yt - c.theta * dyt);
  Vector xt_new = s.xt - c.tau * (g + vt);

  s.x = (1.0 - c.rho) * s.x + c.rho * xt_new;
  s.y = (1.0 - c.rho) * s.y + c.rho * yt_new;
  s.xt_prev = std::move(s.xt);
  s.yt_prev = std::move(s.yt);
  s.xt = std::move(xt_new);
  s.yt = std::move(yt_new);
  ++s.k;
}

inline StepCoefficients coefficients(const Schedule& sc, long k) {
  return {sc.rho(k), k == 1 ? 0.0 : sc.theta(k), sc.tau(k), sc.tau_prev(k), sc.sigma(k)};
}

inline void accel_step(const SaddleProblem& prob, const AccelMode& mode, const StepCoefficients& c, AccelState& s) {
  ExactOps ops{prob, mode.alpha(), mode.beta()};
  accel_step_with(prob, ops, c, s);
}

inline void accel_step(const SaddleProblem& prob, const AccelMode& mode, const Schedule& sc, AccelState& s) {
  accel_step(prob, mode, coefficients(sc, s.k), s);
}

struct AccelResult {
  AccelState state;
  IterTrace trace;
  long iterations = 0;
  double max_x_norm = 0.0;
  double max_y_norm = 0.0;
};

/// Runs `iterations` steps of the accelerated method using `ops` for operator
/// access. Records the primal objective of x after each recorded step.
template <class Ops>
AccelResult run_accel_with(const SaddleProblem& prob, Ops& ops, const Schedule& sc, long iterations,
                           const PrimalDual& z0, long record_every, const RunOptions& opts = {}) {
  if (z0.x.size() != prob.p() || z0.y.size() != prob.l()) throw DimensionError("run_accel: z0 has wrong shape");
  if (record_every < 1) throw InvalidArgument("run_accel: record_every must be positive");
  AccelResult res;
  res.state = AccelState::from(z0);
  res.trace.schedule_columns = true;
  res.max_x_norm = z0.x.norm();
  res.max_y_norm = z0.y.norm();
  Stopwatch clock;
  for (long i = 1; i <= iterations; ++i) {
    const long k = res.state.k;
    const StepCoefficients c = coefficients(sc, k);
    const Vector x_old = res.state.x;
    const Vector y_old = res.state.y;
    accel_step_with(prob, ops, c, res.state);
    if (!res.state.averaged().all_finite() || !res.state.xt.allFinite() || !res.state.yt.allFinite())
      throw NonFiniteIterate("run_accel: non-finite iterate at k=" + std::to_string(k));
    res.max_x_norm = std::max(res.max_x_norm, res.state.x.norm());
    res.max_y_norm = std::max(res.max_y_norm, res.state.y.norm());
    const double residual = std::sqrt((res.state.x - x_old).squaredNorm() + (res.state.y - y_old).squaredNorm());
    if (i % record_every == 0) {
      IterRecord r;
      r.k = i;
      if (opts.objectives) r.objective = objective_or_nan(prob, res.state.x);
      r.residual = residual;
      r.tau_k = c.tau;
      r.sigma_k = c.sigma;
      r.rho_k = c.rho;
      r.seconds = clock.seconds();
      res.trace.records.push_back(r);
    }
    res.iterations = i;
  }
  return res;
}

inline AccelResult run_accel(const SaddleProblem& prob, const AccelMode& mode, const Schedule& sc, long iterations,
                             const PrimalDual& z0, long record_every = 1, const RunOptions& opts = {}) {
  ExactOps ops{prob, mode.alpha(), mode.beta()};
  return run_accel_with(prob, ops, sc, iterations, z0, record_every, opts);
}

/// Run description for the accelerated method: bounded runs take
/// `max_iters` steps, unbounded runs take N steps.
struct AccelParams {
  AccelMode mode;
  Schedule::Setting setting = Schedule::Setting::bounded;
  double omega_x = 1.0;
  double omega_y = 1.0;
  long horizon = 0;
  double q = 0.5;
  double r = 0.25;
  /// Replace (q, r) by the grid-search optimum of the rate bound.
  bool tune = false;
  long max_iters = 0;
  long record_every = 1;
};

inline Schedule make_schedule(const SaddleProblem& prob, AccelParams& params) {
  const bool unbounded = params.setting == Schedule::Setting::unbounded;
  if (params.tune) {
    const long n = unbounded ? params.horizon : std::max(params.max_iters, 2L);
    const TunedQR t = tune_qr(prob, params.mode, params.setting, n, params.omega_x, params.omega_y);
    params.q = t.q;
    params.r = t.r;
  }
  if (unbounded) return schedule_unbounded(prob, params.mode, params.horizon, params.q, params.r);
  return schedule_bounded(prob, params.mode, params.omega_x, params.omega_y, params.q, params.r,
                          std::max(params.max_iters, 1L));
}

inline AccelResult run_accel(const SaddleProblem& prob, AccelParams params, const PrimalDual& z0,
                             const RunOptions& opts = {}) {
  const Schedule sc = make_schedule(prob, params);
  const long iters = params.setting == Schedule::Setting::unbounded ? params.horizon : params.max_iters;
  return run_accel(prob, params.mode, sc, iters, z0, params.record_every, opts);
}

struct PerturbationDiagnostic {
  Vector vx, vy;
  double norm = 0.0;
  double epsilon = 0.0;
  double R = 0.0;
};

/// R = sqrt(||xhat - xt1||^2 + (tau_1/sigma_1) ||yhat - yt1||^2).
inline double perturbation_radius(const Schedule& sc, const AccelState& s, const PrimalDual& reference) {
  if (s.xt1.size() == 0 || s.yt1.size() == 0) throw MissingHistory("perturbation_radius: no initial iterate kept");
  return std::sqrt((reference.x - s.xt1).squaredNorm() +
                   sc.tau(1) / sc.sigma(1) * (reference.y - s.yt1).squaredNorm());
}

/// Perturbation vector after step k (the state holds xt^{k+1}, xt^k, ...):
///   v_x = (rho/tau)(xt^1 - xt^{k+1}) - rho B^T dy
///   v_y = (rho/sigma)(yt^1 - yt^{k+1}) + rho A dx + rho tau (K+A)(K+B)^T dy
/// with dx = xt^{k+1} - xt^k, dy = yt^{k+1} - yt^k, and the bound
///   eps = (rho/tau)(2 + q/(1-q) + (2r+1)/(1-2r)) R^2.
inline PerturbationDiagnostic compute_perturbation(const SaddleProblem& prob, const AccelState& s, const Schedule& sc,
                                                   const AccelMode& mode, double R) {
  if (s.xt1.size() == 0 || s.yt1.size() == 0) throw MissingHistory("compute_perturbation: no initial iterate kept");
  if (s.k < 2) throw MissingHistory("compute_perturbation: no step taken yet");
  const long k = s.k - 1;
  const double rho = sc.rho(k), tau = sc.tau(k), sigma = sc.sigma(k);
  const double alpha = mode.alpha(), beta = mode.beta();
  const Vector dx = s.xt - s.xt_prev;
  const Vector dy = s.yt - s.yt_prev;
  const Vector ktdy = prob.K.apply_adjoint(dy);
  PerturbationDiagnostic d;
  d.vx = (rho / tau) * (s.xt1 - s.xt) - rho * beta * ktdy;
  d.vy = (rho / sigma) * (s.yt1 - s.yt) + rho * alpha * prob.K.apply(dx) +
         rho * tau * (1.0 + alpha) * (1.0 + beta) * prob.K.apply(ktdy);
  d.norm = std::sqrt(d.vx.squaredNorm() + d.vy.squaredNorm());
  d.R = R;
  d.epsilon = (rho / tau) * (2.0 + sc.q / (1.0 - sc.q) + (2.0 * sc.r + 1.0) / (1.0 - 2.0 * sc.r)) * R * R;
  return d;
}

}  // namespace pdfb
