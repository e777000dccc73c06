#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pdfb/accel.hpp"
#include "pdfb/errors.hpp"
#include "pdfb/fb.hpp"
#include "pdfb/linops.hpp"
#include "pdfb/prox.hpp"
#include "pdfb/rng.hpp"
#include "pdfb/saddle.hpp"

namespace pdfb {

struct SyntheticSpec {
  enum class Kind { overlapping_group_lasso, graph_guided_fused_lasso, latent_group_lasso };
  Kind kind = Kind::overlapping_group_lasso;
  // Group lasso: R groups of S adjacent variables overlapping by 10.
  Index R = 10;
  Index S = 20;
  // Fused lasso: J cliques of size T, the first J_a of them active.
  Index T = 5;
  Index J = 40;
  Index J_a = 4;
  Index n = 200;
  /// Penalty level; negative selects the default (R/100 for group lasso,
  /// 1 for fused lasso).
  double lambda = -1.0;
  /// Noise standard deviation; negative selects the default (1 for group
  /// lasso, 100 for fused lasso).
  double noise_sd = -1.0;
  std::uint64_t seed = 0;

  static SyntheticSpec ogl(Index r = 10, Index s = 20, Index n = 200, std::uint64_t seed = 0) {
    SyntheticSpec sp;
    sp.kind = Kind::overlapping_group_lasso;
    sp.R = r;
    sp.S = s;
    sp.n = n;
    sp.seed = seed;
    return sp;
  }
  static SyntheticSpec ggfl(Index t = 5, Index j = 40, Index ja = 4, Index n = 200, std::uint64_t seed = 0) {
    SyntheticSpec sp;
    sp.kind = Kind::graph_guided_fused_lasso;
    sp.T = t;
    sp.J = j;
    sp.J_a = ja;
    sp.n = n;
    sp.seed = seed;
    return sp;
  }

  Index p() const {
    return kind == Kind::graph_guided_fused_lasso ? J * T : R * (S - 10) + 10;
  }
};

struct GeneratedProblem {
  SaddleProblem prob;
  Vector x_true;
  Matrix A;
  Vector b;
  std::vector<std::vector<Index>> groups;
  std::vector<std::pair<Index, Index>> edges;
};

/// 0-based groups {(S-10)(j-1), ..., (S-10)(j-1)+S-1} for j = 1..R.
inline std::vector<std::vector<Index>> ogl_groups(Index r, Index s) {
  std::vector<std::vector<Index>> groups;
  for (Index j = 0; j < r; ++j) {
    std::vector<Index> g;
    for (Index i = 0; i < s; ++i) g.push_back((s - 10) * j + i);
    groups.push_back(std::move(g));
  }
  return groups;
}

inline GeneratedProblem gen_overlapping_group_lasso(const SyntheticSpec& spec) {
  if (spec.S <= 10) throw InvalidArgument("gen_overlapping_group_lasso: S must exceed 10");
  if (spec.R < 1 || spec.n < 1) throw InvalidArgument("gen_overlapping_group_lasso: R and n must be positive");
  const Index p = spec.p();
  GeneratedProblem g;
  g.groups = ogl_groups(spec.R, spec.S);
  g.x_true.resize(p);
  for (Index j = 0; j < p; ++j) g.x_true[j] = (j % 2 == 0 ? -1.0 : 1.0) * std::exp(-static_cast<double>(j) / 100.0);
  Rng data(spec.seed, 1), noise(spec.seed, 2);
  g.A = data.normal_matrix(spec.n, p);
  const double sd = spec.noise_sd >= 0.0 ? spec.noise_sd : 1.0;
  g.b = g.A * g.x_true + sd * noise.normal_vector(spec.n);

  const double lambda = spec.lambda >= 0.0 ? spec.lambda : static_cast<double>(spec.R) / 100.0;
  const double w = lambda * std::sqrt(static_cast<double>(spec.S));
  if (spec.kind == SyntheticSpec::Kind::latent_group_lasso) {
    g.prob = latent_group_construct(g.groups, LinearOperator::dense(g.A), g.b,
                                    std::vector<double>(static_cast<std::size_t>(spec.R), w));
    return g;
  }
  const SparseMatrix d = build_group_membership(g.groups, p);
  auto hconj = ConjugateProxSpec::group_l2_balls(
      GroupPartition::from_sizes(std::vector<Index>(static_cast<std::size_t>(spec.R), spec.S)),
      std::vector<double>(static_cast<std::size_t>(spec.R), w));
  g.prob = make_problem(quadratic_loss(LinearOperator::dense(g.A), g.b), LinearOperator::sparse(d), hconj);
  return g;
}

/// Clique edges inside each subnetwork, then for each active variable J-1
/// distinct inactive partners drawn uniformly.
inline std::vector<std::pair<Index, Index>> ggfl_edges(Index t, Index j, Index ja, Rng& rng) {
  std::vector<std::pair<Index, Index>> edges;
  for (Index blk = 0; blk < j; ++blk)
    for (Index a = 0; a < t; ++a)
      for (Index b = a + 1; b < t; ++b) edges.emplace_back(blk * t + a, blk * t + b);
  if (ja == 0) return edges;
  const Index inactive = (j - ja) * t;
  if (inactive < j - 1)
    throw InsufficientInactives("gen_graph_guided_fused_lasso: " + std::to_string(inactive) +
                                " inactive variables, need " + std::to_string(j - 1));
  std::vector<Index> pool(static_cast<std::size_t>(inactive));
  for (Index v = 0; v < ja * t; ++v) {
    for (Index i = 0; i < inactive; ++i) pool[static_cast<std::size_t>(i)] = ja * t + i;
    for (Index i = 0; i < j - 1; ++i) {
      const auto pick = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(inactive - i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick)]);
      edges.emplace_back(v, pool[static_cast<std::size_t>(i)]);
    }
  }
  return edges;
}

inline GeneratedProblem gen_graph_guided_fused_lasso(const SyntheticSpec& spec) {
  if (spec.T < 1 || spec.J < 1 || spec.n < 1) throw InvalidArgument("gen_graph_guided_fused_lasso: sizes must be positive");
  if (spec.J_a < 0 || spec.J_a > spec.J) throw InvalidArgument("gen_graph_guided_fused_lasso: need 0 <= J_a <= J");
  const Index t = spec.T, p = spec.p();
  GeneratedProblem g;
  g.x_true = Vector::Zero(p);
  for (Index blk = 0; blk < spec.J_a; ++blk) {
    const Index j1 = blk + 1;
    const double v = (j1 % 2 == 1 ? 1.0 : -1.0) * static_cast<double>((j1 + 1) / 2);
    g.x_true.segment(blk * t, t).setConstant(v);
  }
  Rng data(spec.seed, 1), noise(spec.seed, 2), graph(spec.seed, 3);
  // First member of each block is the transcription factor; targets have
  // correlation 0.7 with it.
  g.A.resize(spec.n, p);
  const double rest = std::sqrt(1.0 - 0.7 * 0.7);
  for (Index i = 0; i < spec.n; ++i) {
    for (Index blk = 0; blk < spec.J; ++blk) {
      const double tf = data.normal();
      g.A(i, blk * t) = tf;
      for (Index m = 1; m < t; ++m) g.A(i, blk * t + m) = 0.7 * tf + rest * data.normal();
    }
  }
  const double sd = spec.noise_sd >= 0.0 ? spec.noise_sd : 100.0;
  g.b = g.A * g.x_true + sd * noise.normal_vector(spec.n);
  g.edges = ggfl_edges(t, spec.J, spec.J_a, graph);
  const double lambda = spec.lambda >= 0.0 ? spec.lambda : 1.0;
  const SparseMatrix d = build_graph_difference(g.edges, p);
  g.prob = make_problem(quadratic_loss(LinearOperator::dense(g.A), g.b), LinearOperator::sparse(d),
                        ConjugateProxSpec::box(lambda, d.rows()));
  return g;
}

inline GeneratedProblem generate(const SyntheticSpec& spec) {
  if (spec.kind == SyntheticSpec::Kind::graph_guided_fused_lasso) return gen_graph_guided_fused_lasso(spec);
  return gen_overlapping_group_lasso(spec);
}

/// Small lasso-type problem: A is n x p standard Gaussian, x_true has its
/// first max(1, p/5) entries equal to 1, b = A x_true + noise_sd N(0, I).
/// With `fused` the penalty is lambda ||D x||_1 for the chain difference D,
/// otherwise lambda ||x||_1.
inline GeneratedProblem make_lasso(Index n, Index p, double lambda, double noise_sd, std::uint64_t seed,
                                   bool fused = false) {
  if (n < 1 || p < 2) throw InvalidArgument("make_lasso: need n >= 1 and p >= 2");
  GeneratedProblem g;
  Rng data(seed, 1), noise(seed, 2);
  g.A = data.normal_matrix(n, p);
  g.x_true = Vector::Zero(p);
  g.x_true.head(std::max<Index>(1, p / 5)).setOnes();
  g.b = g.A * g.x_true + noise_sd * noise.normal_vector(n);
  const LinearOperator k = fused ? LinearOperator::sparse(chain_difference(p)) : LinearOperator::identity(p);
  g.prob = make_problem(quadratic_loss(LinearOperator::dense(g.A), g.b), k, ConjugateProxSpec::box(lambda, k.rows()));
  return g;
}

struct ReferenceSolution {
  PrimalDual z;
  double objective = kNaN;
  std::string method;
  long iterations = 0;
  double residual = kNaN;
  bool converged = false;
};

struct ReferenceOptions {
  /// Iterations of the accelerated phase; the polishing phase may use as
  /// many again.
  long budget = 100000;
  double tolerance = 1e-8;
  /// Throw ResidualTooLarge instead of returning a flagged result.
  bool strict = true;
};

/// LV parameters with the default steps and the relaxation recipe.
inline FbParams default_fb_params(const SaddleProblem& prob, double kappa = 0.0) {
  FbParams fb;
  const StepSizes steps = default_step_sizes(prob, kappa);
  fb.kappa = kappa;
  fb.tau = steps.tau;
  fb.sigma = steps.sigma;
  fb.relaxation = Relaxation::recipe();
  return fb;
}

/// Diameter bounds for the bounded schedules. Omega_Y covers dom h*;
/// Omega_X covers a ball 1.5 times the size of a pilot solution. An
/// unbounded dual domain falls back to the pilot dual iterate.
struct DomainBounds {
  double omega_x = 0.0;
  double omega_y = 0.0;
  PrimalDual pilot;
};

inline DomainBounds pilot_domain_bounds(const SaddleProblem& prob, long pilot_iters = 2000) {
  const PrimalDual z0{Vector::Zero(prob.p()), Vector::Zero(prob.l())};
  FbParams fb = default_fb_params(prob);
  fb.max_iters = pilot_iters;
  RunOptions quiet;
  quiet.objectives = false;
  DomainBounds d;
  d.pilot = run_fb(prob, fb, z0, quiet).z;
  const double rx = std::max(d.pilot.x.norm(), 1.0);
  double ry = prob.hconj.domain_radius();
  if (!std::isfinite(ry)) ry = std::max(d.pilot.y.norm(), 1.0);
  d.omega_x = std::sqrt(2.0) * 1.5 * rx;
  d.omega_y = std::sqrt(2.0) * std::max(ry, 1e-12);
  return d;
}

/// Accelerated LV run with bounded parameters, followed by base forward-
/// backward polishing until the relative fixed-point residual settles.
/// Omega_Y comes from the dual domain, Omega_X from a short base run.
inline ReferenceSolution reference_solve(const SaddleProblem& prob, const ReferenceOptions& opt = {}) {
  const PrimalDual z0{Vector::Zero(prob.p()), Vector::Zero(prob.l())};
  FbParams fb = default_fb_params(prob);
  RunOptions quiet;
  quiet.objectives = false;
  const DomainBounds bounds = pilot_domain_bounds(prob, std::min<long>(opt.budget, 2000));

  AccelParams ap;
  ap.mode = AccelMode::with_kappa(0.0);
  ap.setting = Schedule::Setting::bounded;
  ap.omega_x = bounds.omega_x;
  ap.omega_y = bounds.omega_y;
  ap.tune = true;
  ap.max_iters = opt.budget;
  ap.record_every = std::max(opt.budget, 1L);
  const AccelResult acc = run_accel(prob, ap, z0, quiet);

  ReferenceSolution ref;
  ref.method = "accel-lv-bounded+fb-polish";
  PrimalDual z = acc.state.averaged();
  ref.iterations = acc.iterations;
  double best = relative_fixed_point_residual(prob, z);
  PrimalDual best_z = z;

  // Polishing in chunks; stop when the residual reaches the floor or stops
  // improving.
  fb.max_iters = 1000;
  long polish = 0;
  int stalls = 0;
  while (polish < opt.budget && best > 1e-3 * opt.tolerance && stalls < 5) {
    const FbResult r = run_fb(prob, fb, z, quiet);
    z = r.z;
    polish += r.iterations;
    const double res = relative_fixed_point_residual(prob, z);
    if (res < 0.5 * best) {
      stalls = 0;
    } else {
      ++stalls;
    }
    if (res < best) {
      best = res;
      best_z = z;
    }
  }
  ref.iterations += polish;
  ref.z = best_z;
  ref.residual = best;
  ref.objective = objective_or_nan(prob, best_z.x);
  ref.converged = best <= opt.tolerance;
  if (!ref.converged && opt.strict)
    throw ResidualTooLarge("reference_solve: relative fixed-point residual " + std::to_string(best) +
                               " above " + std::to_string(opt.tolerance),
                           best);
  return ref;
}

struct SlopeFit {
  double slope = kNaN;
  double stderr_ = kNaN;
  long points = 0;
  long k_min = 0;
  long k_max = 0;
};

/// Least-squares slope of log(gap) against log(k) over the last decade of
/// k, using only gaps above 100 eps |F*|.
inline SlopeFit rate_slope(const std::vector<long>& ks, const std::vector<double>& gaps, double f_star) {
  if (ks.size() != gaps.size()) throw DimensionError("rate_slope: ks and gaps differ in length");
  const double floor = 100.0 * std::numeric_limits<double>::epsilon() * std::abs(f_star);
  std::vector<std::pair<double, double>> pts;
  long kmax = 0;
  for (std::size_t i = 0; i < ks.size(); ++i)
    if (ks[i] > 0 && gaps[i] > floor && gaps[i] > 0.0) kmax = std::max(kmax, ks[i]);
  for (std::size_t i = 0; i < ks.size(); ++i)
    if (ks[i] > 0 && gaps[i] > floor && gaps[i] > 0.0 && ks[i] * 10 >= kmax)
      pts.emplace_back(std::log(static_cast<double>(ks[i])), std::log(gaps[i]));
  if (pts.size() < 10)
    throw InsufficientData("rate_slope: " + std::to_string(pts.size()) + " points above the precision floor");
  double mx = 0, my = 0;
  for (const auto& [x, y] : pts) {
    mx += x;
    my += y;
  }
  const double n = static_cast<double>(pts.size());
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (const auto& [x, y] : pts) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  SlopeFit fit;
  fit.slope = sxy / sxx;
  double ssr = 0;
  for (const auto& [x, y] : pts) {
    const double e = y - my - fit.slope * (x - mx);
    ssr += e * e;
  }
  fit.stderr_ = n > 2 ? std::sqrt(ssr / (n - 2.0) / sxx) : 0.0;
  fit.points = static_cast<long>(pts.size());
  fit.k_max = kmax;
  fit.k_min = static_cast<long>(std::ceil(static_cast<double>(kmax) / 10.0));
  return fit;
}

/// Slope of the (ergodic or last-iterate) objective gap recorded in a trace.
inline SlopeFit rate_slope(const IterTrace& trace, double f_star, bool ergodic) {
  std::vector<long> ks;
  std::vector<double> gaps;
  for (const auto& r : trace.records) {
    ks.push_back(r.k);
    gaps.push_back((ergodic ? r.ergodic_objective : r.objective) - f_star);
  }
  return rate_slope(ks, gaps, f_star);
}

}  // namespace pdfb
