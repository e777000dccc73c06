#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "pdfb/accel.hpp"
#include "pdfb/errors.hpp"
#include "pdfb/rng.hpp"
#include "pdfb/saddle.hpp"
#include "pdfb/trace.hpp"

namespace pdfb {

/// Second-moment bounds of a stochastic oracle:
/// E||F - grad f||^2 <= chi_xf^2, E||Kx_hat - Kx||^2 <= chi_y^2,
/// E||Ky_hat - K^T y||^2 <= chi_xK^2, and chi_A, chi_B for A and B^T.
struct VarianceBounds {
  double chi_xf = 0.0;
  double chi_xK = 0.0;
  double chi_y = 0.0;
  double chi_A = 0.0;
  double chi_B = 0.0;

  double chi_x() const { return std::sqrt(chi_xf * chi_xf + chi_xK * chi_xK); }
};

/// Randomized first-order oracle for grad f, K, K^T, A = alpha K and
/// B^T = beta K^T. Every call draws fresh randomness from `rng`.
class StochasticOracle {
 public:
  virtual ~StochasticOracle() = default;
  virtual const SaddleProblem& problem() const = 0;
  virtual const AccelMode& mode() const = 0;
  virtual Vector grad(const Vector& x, Rng& rng) const = 0;
  virtual Vector kx(const Vector& x, Rng& rng) const = 0;
  virtual Vector kty(const Vector& y, Rng& rng) const = 0;
  virtual Vector ax(const Vector& x, Rng& rng) const = 0;
  virtual Vector bty(const Vector& y, Rng& rng) const = 0;
  virtual VarianceBounds declared() const = 0;
};

/// Returns grad f(M x) with M diagonal, M_ii = 1/pi with probability pi and
/// 0 otherwise, so E[M] = I. Operator products are exact.
class MaskedGradOracle final : public StochasticOracle {
 public:
  MaskedGradOracle(const SaddleProblem& prob, AccelMode mode, double pi, VarianceBounds declared = {})
      : prob_(prob), mode_(mode), pi_(pi), declared_(declared) {
    if (!(pi > 0.0 && pi <= 1.0)) throw InvalidArgument("MaskedGradOracle: pi must lie in (0, 1]");
  }

  const SaddleProblem& problem() const override { return prob_; }
  const AccelMode& mode() const override { return mode_; }
  double pi() const { return pi_; }

  Vector mask(Index n, Rng& rng) const {
    Vector m(n);
    const double scale = 1.0 / pi_;
    for (Index i = 0; i < n; ++i) m[i] = rng.bernoulli(pi_) ? scale : 0.0;
    return m;
  }

  Vector grad(const Vector& x, Rng& rng) const override {
    if (pi_ == 1.0) return prob_.grad_f(x);
    return prob_.grad_f(x.cwiseProduct(mask(x.size(), rng)));
  }
  Vector kx(const Vector& x, Rng&) const override { return exact().kx(x); }
  Vector kty(const Vector& y, Rng&) const override { return exact().kty(y); }
  Vector ax(const Vector& x, Rng&) const override { return exact().ax(x); }
  Vector bty(const Vector& y, Rng&) const override { return exact().bty(y); }
  VarianceBounds declared() const override { return declared_; }

  /// For a quadratic loss, E||grad f(Mx) - grad f(x)||^2 equals
  /// ((1-pi)/pi) sum_i x_i^2 ||H e_i||^2 with H = A^T A. Over the ball of
  /// radius `radius` this is at most ((1-pi)/pi) max_i ||H e_i||^2 radius^2.
  double quadratic_chi_bound(double radius) const {
    if (prob_.loss.kind != SmoothLoss::Kind::quadratic)
      throw InvalidArgument("quadratic_chi_bound: loss is not quadratic");
    const Matrix a = prob_.loss.data->to_dense();
    const Matrix h = a.transpose() * a;
    const double cmax = h.colwise().squaredNorm().maxCoeff();
    return std::sqrt((1.0 - pi_) / pi_ * cmax) * radius;
  }

 private:
  ExactOps exact() const { return ExactOps{prob_, mode_.alpha(), mode_.beta()}; }

  const SaddleProblem& prob_;
  AccelMode mode_;
  double pi_;
  VarianceBounds declared_;
};

struct OracleSample {
  Vector grad, kx, kty, ax, bty;
};

inline OracleSample oracle_sample(const StochasticOracle& o, const Vector& x, const Vector& y, Rng& rng) {
  return {o.grad(x, rng), o.kx(x, rng), o.kty(y, rng), o.ax(x, rng), o.bty(y, rng)};
}

/// Empirical root second moments of the oracle errors over `draws` samples
/// at each probe point, maximized over probes and inflated by `inflation`.
inline VarianceBounds estimate_chi(const StochasticOracle& o, const std::vector<PrimalDual>& probes,
                                   int draws = 1000, double inflation = 1.5, std::uint64_t seed = 0) {
  const SaddleProblem& prob = o.problem();
  ExactOps exact{prob, o.mode().alpha(), o.mode().beta()};
  Rng rng(seed, 0x5eedc41ULL);
  VarianceBounds out;
  for (const auto& z : probes) {
    const Vector g = exact.grad(z.x), kx = exact.kx(z.x), kty = exact.kty(z.y), ax = exact.ax(z.x),
                 bty = exact.bty(z.y);
    double mf = 0, mk = 0, my = 0, ma = 0, mb = 0;
    for (int i = 0; i < draws; ++i) {
      const OracleSample s = oracle_sample(o, z.x, z.y, rng);
      mf += (s.grad - g).squaredNorm();
      my += (s.kx - kx).squaredNorm();
      mk += (s.kty - kty).squaredNorm();
      ma += (s.ax - ax).squaredNorm();
      mb += (s.bty - bty).squaredNorm();
    }
    const double n = draws;
    out.chi_xf = std::max(out.chi_xf, std::sqrt(mf / n));
    out.chi_xK = std::max(out.chi_xK, std::sqrt(mk / n));
    out.chi_y = std::max(out.chi_y, std::sqrt(my / n));
    out.chi_A = std::max(out.chi_A, std::sqrt(ma / n));
    out.chi_B = std::max(out.chi_B, std::sqrt(mb / n));
  }
  out.chi_xf *= inflation;
  out.chi_xK *= inflation;
  out.chi_y *= inflation;
  out.chi_A *= inflation;
  out.chi_B *= inflation;
  return out;
}

namespace detail {

inline void check_stoc_constants(double q, double r, double s, double t, long n, bool unbounded) {
  if (!(0.0 < q && q < s && s < 1.0)) throw InvalidArgument("stochastic schedule: need 0 < q < s < 1");
  if (!(0.0 < r && r < t && t < 1.0)) throw InvalidArgument("stochastic schedule: need 0 < r < t < 1");
  if (unbounded && !(r < 0.5)) throw InvalidArgument("stochastic schedule: r must be below 1/2");
  if (n < 2) throw InvalidArgument("stochastic schedule: N must be at least 2");
}

inline void check_stoc_mode(const AccelMode& mode, bool unproven) {
  if (mode.alpha() != -1.0 && !unproven)
    throw UnsupportedMode("stochastic schedule: rates are established for A = -K only; mode " + mode.name() +
                          " requires the unproven flag");
}

inline Schedule stoc_base(const SaddleProblem& prob, const AccelMode& mode, double q, double r, double s, double t,
                          long n, bool unbounded) {
  Schedule sc;
  sc.stochastic = true;
  sc.setting = unbounded ? Schedule::Setting::unbounded : Schedule::Setting::bounded;
  sc.factors = mode.factors();
  sc.q = q;
  sc.r = r;
  sc.s = s;
  sc.t = t;
  sc.P = 1.0 / (s - q);
  const NormFactors& f = sc.factors;
  sc.Q = std::max(f.a * f.a / (r * (s - q)), (2.0 * f.c * f.d + f.b * f.b / q) / (t - r));
  if (unbounded) sc.Q = std::max(sc.Q, 1.0);
  sc.L_f = prob.L_f();
  sc.norm_K = prob.norm_K;
  sc.horizon = n;
  return sc;
}

}  // namespace detail

/// tau_k = Omega_X k/(2 P L_f Omega_X + Q ||K|| Omega_Y (N-1) + chi_x N sqrt(N-1)),
/// sigma_k = Omega_Y k/(||K|| Omega_X (N-1) + chi_y N sqrt(N-1)).
/// The step-size conditions are checked for k <= N-1, the steps that
/// produce z^N.
inline Schedule schedule_stoc_bounded(const SaddleProblem& prob, const AccelMode& mode, const VarianceBounds& chi,
                                      double omega_x, double omega_y, long n, double q, double r, double s, double t,
                                      bool unproven = false) {
  detail::check_stoc_mode(mode, unproven);
  detail::check_stoc_constants(q, r, s, t, n, false);
  detail::check_degenerate(prob);
  if (!(omega_x > 0.0 && omega_y > 0.0)) throw InvalidArgument("schedule_stoc_bounded: Omega must be positive");
  Schedule sc = detail::stoc_base(prob, mode, q, r, s, t, n, false);
  sc.omega_x = omega_x;
  sc.omega_y = omega_y;
  sc.chi_x = chi.chi_x();
  sc.chi_y = chi.chi_y;
  const double nm1 = static_cast<double>(n - 1);
  const double spread = static_cast<double>(n) * std::sqrt(nm1);
  sc.tn1 = omega_x;
  sc.td0 = 2.0 * sc.P * sc.L_f * omega_x + sc.Q * sc.norm_K * omega_y * nm1 + sc.chi_x * spread;
  sc.sn1 = omega_y;
  sc.sd0 = sc.norm_K * omega_x * nm1 + sc.chi_y * spread;
  if (sc.sd0 == 0.0) sc.sd0 = 1.0;
  detail::check_conditions(sc, n - 1);
  return sc;
}

/// tau_k = k/T with T = 2 P L_f + Q ||K|| (N-1) + N sqrt(N-1) chi/Rt and
/// sigma_k = k/(||K|| (N-1) + N sqrt(N-1) chi/Rt), where
/// chi = sqrt((2-s)/(1-s) chi_x^2 + (2-t)/(1-t) chi_y^2).
inline Schedule schedule_stoc_unbounded(const SaddleProblem& prob, const AccelMode& mode, const VarianceBounds& chi,
                                        long n, double r_tilde, double q, double r, double s, double t,
                                        bool unproven = false) {
  detail::check_stoc_mode(mode, unproven);
  detail::check_stoc_constants(q, r, s, t, n, true);
  detail::check_degenerate(prob);
  if (!(r_tilde > 0.0)) throw InvalidArgument("schedule_stoc_unbounded: R~ must be positive");
  Schedule sc = detail::stoc_base(prob, mode, q, r, s, t, n, true);
  sc.chi_x = chi.chi_x();
  sc.chi_y = chi.chi_y;
  sc.r_tilde = r_tilde;
  sc.chi = std::sqrt((2.0 - s) / (1.0 - s) * sc.chi_x * sc.chi_x + (2.0 - t) / (1.0 - t) * sc.chi_y * sc.chi_y);
  const double nm1 = static_cast<double>(n - 1);
  const double noise = static_cast<double>(n) * std::sqrt(nm1) * sc.chi / r_tilde;
  sc.tn1 = 1.0;
  sc.td0 = 2.0 * sc.P * sc.L_f + sc.Q * sc.norm_K * nm1 + noise;
  sc.sn1 = 1.0;
  sc.sd0 = sc.norm_K * nm1 + noise;
  if (sc.sd0 == 0.0) sc.sd0 = 1.0;
  detail::check_conditions(sc, n - 1);
  return sc;
}

/// C0(N) = 8 P L_f Omega_X^2/(N(N-1)) + 4 ||K|| Omega_X Omega_Y (Q+1)/N
///       + (4 chi_x Omega_X + 4 chi_y Omega_Y)/sqrt(N-1)
///       + (2-r) Omega_X chi_x/(3(1-r) sqrt(N-1)) + (2-s) Omega_Y chi_y/(3(1-s) sqrt(N-1)).
inline double stoc_c0(const Schedule& sc, long n) {
  const double nd = static_cast<double>(n);
  const double root = std::sqrt(nd - 1.0);
  const double ox = sc.omega_x, oy = sc.omega_y;
  return 8.0 * sc.P * sc.L_f * ox * ox / (nd * (nd - 1.0)) + 4.0 * sc.norm_K * ox * oy * (sc.Q + 1.0) / nd +
         (4.0 * sc.chi_x * ox + 4.0 * sc.chi_y * oy) / root +
         (2.0 - sc.r) * ox * sc.chi_x / (3.0 * (1.0 - sc.r) * root) +
         (2.0 - sc.s) * oy * sc.chi_y / (3.0 * (1.0 - sc.s) * root);
}

/// Operator access through a stochastic oracle with a per-run generator.
struct StochasticOps {
  const StochasticOracle& oracle;
  Rng& rng;

  Vector grad(const Vector& x) { return oracle.grad(x, rng); }
  Vector kx(const Vector& x) { return oracle.kx(x, rng); }
  Vector kty(const Vector& y) { return oracle.kty(y, rng); }
  Vector ax(const Vector& x) { return oracle.ax(x, rng); }
  Vector bty(const Vector& y) { return oracle.bty(y, rng); }
};

inline void stoc_accel_step(const StochasticOracle& oracle, const Schedule& sc, AccelState& s, Rng& rng) {
  StochasticOps ops{oracle, rng};
  accel_step_with(oracle.problem(), ops, coefficients(sc, s.k), s);
}

struct SeedRun {
  std::uint64_t seed = 0;
  std::optional<AccelResult> result;
  std::string error;
};

struct AggregateRecord {
  long k;
  double mean_objective, median_objective, q10, q90;
};

struct StocResult {
  std::vector<SeedRun> runs;
  std::vector<AggregateRecord> aggregate;
};

/// Quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Runs `iterations` stochastic steps for every seed, fanning seeds out over
/// up to `jobs` threads. A failing seed records its error and leaves the
/// others untouched. The aggregate covers successful seeds only.
inline StocResult run_stoc(const StochasticOracle& oracle, const Schedule& sc, const PrimalDual& z0,
                           const std::vector<std::uint64_t>& seeds, long iterations, long record_every = 1,
                           int jobs = 1, const RunOptions& opts = {}) {
  if (seeds.empty()) throw InvalidArgument("run_stoc: at least one seed required");
  StocResult out;
  out.runs.resize(seeds.size());
  auto work = [&](std::size_t i) {
    SeedRun& run = out.runs[i];
    run.seed = seeds[i];
    try {
      Rng rng(seeds[i]);
      StochasticOps ops{oracle, rng};
      AccelResult r = run_accel_with(oracle.problem(), ops, sc, iterations, z0, record_every, opts);
      r.trace.seed = seeds[i];
      run.result = std::move(r);
    } catch (const Error& e) {
      run.error = e.what();
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(jobs, seeds.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < seeds.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < seeds.size(); i += workers) work(i);
      });
    for (auto& th : pool) th.join();
  }

  std::vector<const IterTrace*> ok;
  for (const auto& r : out.runs)
    if (r.result) ok.push_back(&r.result->trace);
  if (!ok.empty()) {
    const std::size_t rows = ok.front()->records.size();
    for (std::size_t j = 0; j < rows; ++j) {
      std::vector<double> vals;
      double sum = 0.0;
      for (const IterTrace* t : ok) {
        vals.push_back(t->records[j].objective);
        sum += t->records[j].objective;
      }
      out.aggregate.push_back({ok.front()->records[j].k, sum / static_cast<double>(vals.size()),
                               quantile(vals, 0.5), quantile(vals, 0.1), quantile(vals, 0.9)});
    }
  }
  return out;
}

inline void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRecord>& agg) {
  out << "k,mean_objective,median_objective,q10,q90\n" << std::setprecision(17);
  for (const auto& a : agg)
    out << a.k << ',' << a.mean_objective << ',' << a.median_objective << ',' << a.q10 << ',' << a.q90 << '\n';
}

}  // namespace pdfb
