#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pdfb/accel.hpp"
#include "pdfb/bench.hpp"
#include "pdfb/bundle.hpp"
#include "pdfb/errors.hpp"
#include "pdfb/fb.hpp"
#include "pdfb/shard.hpp"
#include "pdfb/stoch.hpp"
#include "pdfb/trace.hpp"

namespace pdfb::cli {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

/// Every accepted key with its default. A null default means "derive it".
inline const std::map<std::string, Json>& config_defaults() {
  static const std::map<std::string, Json> d = {
      // problem
      {"problem", "lasso"},
      {"bundle", nullptr},
      {"R", 10},
      {"S", 20},
      {"T", 5},
      {"J", 40},
      {"J_a", 4},
      {"n", 200},
      {"p", 20},
      {"lambda", nullptr},
      {"noise_sd", nullptr},
      {"seed", 0},
      // algorithm
      {"algorithm", "fb"},
      {"kappa", 0.0},
      {"tau", nullptr},
      {"sigma", nullptr},
      {"rho", nullptr},
      {"alpha1", 0.0},
      {"alpha2", 0.0},
      {"max_iters", 1000},
      {"record_every", 1},
      {"workers", 1},
      {"mode", "lv"},
      {"schedule", "bounded"},
      {"omega_x", nullptr},
      {"omega_y", nullptr},
      {"horizon", nullptr},
      {"q", 0.5},
      {"r", 0.25},
      {"s", 0.75},
      {"t", 0.5},
      {"tune", false},
      {"pi", 0.5},
      {"seeds", 5},
      {"chi_x", nullptr},
      {"chi_y", nullptr},
      {"r_tilde", nullptr},
      {"unproven", false},
      {"reference", false},
      {"f_star", nullptr},
      {"reference_budget", 100000},
      {"reference_tolerance", 1e-8},
      // region scan
      {"kappas", Json::array({0.0, 0.25, 0.5, 0.75, 1.0})},
      {"grid", 20},
      {"span", 4.0},
      {"budget", 5000},
      {"tolerance", 1e-6},
      {"subsample", 1},
      {"interior_margin", 0.1},
      // output
      {"out", "out"},
  };
  return d;
}

class Config {
 public:
  Config() = default;

  /// Parses flat `key=value` text. Values are JSON scalars or arrays; an
  /// unquoted value that is not valid JSON is taken as a string.
  static Config parse(std::istream& in, const std::string& what = "config") {
    Config c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto first = line.find_first_not_of(" \t");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(what + ":" + std::to_string(lineno) + ": expected key=value");
      std::string key = trim(line.substr(first, eq - first));
      std::string raw = trim(line.substr(eq + 1));
      c.set(key, parse_value(raw));
    }
    return c;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    return parse(in, path);
  }

  void set(const std::string& key, Json value) {
    if (!config_defaults().count(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = std::move(value);
  }

  bool given(const std::string& key) const { return values_.count(key) > 0; }

  Json get(const std::string& key) const {
    auto it = values_.find(key);
    if (it != values_.end()) return it->second;
    auto d = config_defaults().find(key);
    if (d == config_defaults().end()) throw ConfigError("unknown config key '" + key + "'");
    return d->second;
  }

  bool is_null(const std::string& key) const { return get(key).is_null(); }

  double num(const std::string& key) const {
    const Json v = get(key);
    if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
    return v.get<double>();
  }

  long integer(const std::string& key) const {
    const Json v = get(key);
    if (!v.is_number_integer() && !(v.is_number() && v.get<double>() == std::floor(v.get<double>())))
      throw ConfigError("config key '" + key + "' must be an integer");
    return static_cast<long>(v.get<double>());
  }

  std::string str(const std::string& key) const {
    const Json v = get(key);
    if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
    return v.get<std::string>();
  }

  bool flag(const std::string& key) const {
    const Json v = get(key);
    if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be true or false");
    return v.get<bool>();
  }

  std::optional<double> opt_num(const std::string& key) const {
    if (is_null(key)) return std::nullopt;
    return num(key);
  }

  std::vector<double> num_list(const std::string& key) const {
    const Json v = get(key);
    if (v.is_number()) return {v.get<double>()};
    if (!v.is_array()) throw ConfigError("config key '" + key + "' must be a number or an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError("config key '" + key + "' must hold numbers only");
      out.push_back(e.get<double>());
    }
    return out;
  }

  const std::map<std::string, Json>& explicit_values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  }

  static Json parse_value(const std::string& raw) {
    if (raw.empty()) return nullptr;
    try {
      return Json::parse(raw);
    } catch (const Json::exception&) {
      if (raw.front() == '"' || raw.front() == '[' || raw.front() == '{')
        throw ConfigError("malformed value '" + raw + "'");
      return raw;
    }
  }

  std::map<std::string, Json> values_;
};

/// Resolved parameters of a run, written to the summary file.
class Summary {
 public:
  void put(const std::string& key, const Json& value) { entries_.emplace_back(key, value); }
  void put(const std::string& key, const std::string& value) { entries_.emplace_back(key, Json(value)); }
  void put(const std::string& key, const char* value) { entries_.emplace_back(key, Json(value)); }
  void put(const std::string& key, bool value) { entries_.emplace_back(key, Json(value)); }
  void put(const std::string& key, long value) { entries_.emplace_back(key, Json(value)); }
  void put(const std::string& key, double value) {
    entries_.emplace_back(key, std::isfinite(value) ? Json(value) : Json(format_double(value)));
  }

  std::string render() const {
    std::ostringstream out;
    for (const auto& [k, v] : entries_) {
      if (v.is_number_float()) {
        out << k << '=' << format_double(v.get<double>()) << '\n';
      } else {
        out << k << '=' << v.dump() << '\n';
      }
    }
    return out.str();
  }

  static std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream o;
    o << std::setprecision(17) << v;
    return o.str();
  }

 private:
  std::vector<std::pair<std::string, Json>> entries_;
};

template <class Writer>
void write_csv_atomic(const std::filesystem::path& path, Writer&& writer) {
  std::ostringstream out;
  writer(out);
  write_file_atomic(path, out.str());
}

// ---------------------------------------------------------------------------
// Problems and modes

struct LoadedProblem {
  SaddleProblem prob;
  std::optional<Vector> x_true;
  std::map<std::string, std::string> meta;
};

inline LoadedProblem load_problem(const Config& cfg) {
  const std::string kind = cfg.str("problem");
  const auto seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  LoadedProblem out;
  out.meta["problem"] = kind;
  out.meta["seed"] = std::to_string(seed);
  if (kind == "bundle") {
    if (cfg.is_null("bundle")) throw ConfigError("problem=bundle needs the 'bundle' key");
    Bundle b = read_bundle(cfg.str("bundle"));
    out.prob = std::move(b.prob);
    out.x_true = std::move(b.x_true);
    for (const auto& [k, v] : b.meta) out.meta["bundle." + k] = v;
    return out;
  }
  if (kind == "lasso" || kind == "fused_lasso") {
    const double lambda = cfg.opt_num("lambda").value_or(1.0);
    const double sd = cfg.opt_num("noise_sd").value_or(0.1);
    GeneratedProblem g = make_lasso(cfg.integer("n"), cfg.integer("p"), lambda, sd, seed, kind == "fused_lasso");
    out.prob = std::move(g.prob);
    out.x_true = std::move(g.x_true);
    return out;
  }
  SyntheticSpec spec;
  if (kind == "ogl" || kind == "latent") {
    spec = SyntheticSpec::ogl(cfg.integer("R"), cfg.integer("S"), cfg.integer("n"), seed);
    if (kind == "latent") spec.kind = SyntheticSpec::Kind::latent_group_lasso;
  } else if (kind == "ggfl") {
    spec = SyntheticSpec::ggfl(cfg.integer("T"), cfg.integer("J"), cfg.integer("J_a"), cfg.integer("n"), seed);
  } else {
    throw ConfigError("unknown problem '" + kind + "'");
  }
  spec.lambda = cfg.opt_num("lambda").value_or(-1.0);
  spec.noise_sd = cfg.opt_num("noise_sd").value_or(-1.0);
  GeneratedProblem g = generate(spec);
  out.prob = std::move(g.prob);
  out.x_true = std::move(g.x_true);
  return out;
}

struct NamedMode {
  std::string name;
  AccelMode mode;
};

inline NamedMode parse_mode(const std::string& name) {
  if (name == "lv") return {name, AccelMode::with_kappa(0.0)};
  if (name == "cv") return {name, AccelMode::with_kappa(1.0)};
  if (name == "midpoint") return {name, AccelMode::with_kappa(0.5)};
  if (name == "chen") return {name, AccelMode::chen()};
  throw ConfigError("unknown mode '" + name + "' (expected lv, cv, midpoint, chen or all)");
}

inline std::vector<NamedMode> parse_modes(const std::string& name) {
  if (name == "all") return {parse_mode("lv"), parse_mode("cv"), parse_mode("midpoint"), parse_mode("chen")};
  return {parse_mode(name)};
}

inline Schedule::Setting parse_setting(const std::string& s) {
  if (s == "bounded") return Schedule::Setting::bounded;
  if (s == "unbounded") return Schedule::Setting::unbounded;
  throw ConfigError("unknown schedule '" + s + "' (expected bounded or unbounded)");
}

// ---------------------------------------------------------------------------
// Region scan

struct RegionPoint {
  double kappa = 0.0;
  double inv_tau = 0.0;
  double inv_sigma = 0.0;
  bool valid = false;
  /// Relative distance to the boundary: positive inside, negative outside.
  /// When 1/tau <= L_f/2 this is the tau margin alone.
  double margin = 0.0;
  bool tested = false;
  bool converged = false;
  double final_residual = kNaN;
};

struct RegionScanOptions {
  std::vector<double> kappas{0.0, 0.25, 0.5, 0.75, 1.0};
  int grid = 20;
  /// The grid spans [scale/span, scale*span] geometrically on both axes.
  double span = 4.0;
  long budget = 5000;
  double tolerance = 1e-6;
  /// Test every subsample-th grid point empirically.
  int subsample = 1;
  int jobs = 1;
};

/// Axis scales: 1/tau is centred on L_f/2 and 1/sigma on ||K||^2/(L_f/2),
/// where the LV boundary crosses the diagonal. Without a smooth part ||K||
/// replaces L_f/2.
inline std::pair<std::vector<double>, std::vector<double>> region_axes(const SaddleProblem& prob,
                                                                       const RegionScanOptions& o) {
  if (o.grid < 2) throw InvalidArgument("region scan: grid must be at least 2");
  if (!(o.span > 1.0)) throw InvalidArgument("region scan: span must exceed 1");
  const double nk = prob.norm_K;
  const double a = prob.L_f() > 0.0 ? 0.5 * prob.L_f() : nk;
  if (!(a > 0.0)) throw DegenerateProblem("region scan: L_f = 0 and ||K|| = 0");
  const double b = nk > 0.0 ? nk * nk / a : 1.0;
  std::vector<double> it, is;
  for (int i = 0; i < o.grid; ++i) {
    const double u = -1.0 + 2.0 * i / (o.grid - 1);
    it.push_back(a * std::pow(o.span, u));
    is.push_back(b * std::pow(o.span, u));
  }
  return {it, is};
}

inline double boundary_margin(const ValidationReport& r) {
  if (r.slack_tau <= 0.0) return r.margin_tau;
  return std::min(r.margin_tau, r.margin_sigma);
}

/// Runs the unrelaxed iteration from zero and reports whether the relative
/// fixed-point residual falls below tol within the budget.
inline std::pair<bool, double> empirical_convergence(const SaddleProblem& prob, double kappa, double tau, double sigma,
                                                     long budget, double tol) {
  PrimalDual z{Vector::Zero(prob.p()), Vector::Zero(prob.l())};
  double res = kNaN;
  for (long k = 1; k <= budget; ++k) {
    z = fb_step(prob, kappa, tau, sigma, 1.0, z).next;
    if (!z.all_finite() || z.x.norm() + z.y.norm() > 1e12) return {false, kInf};
    if (k % 10 == 0 || k == budget) {
      res = relative_fixed_point_residual(prob, z);
      if (res < tol) return {true, res};
    }
  }
  return {false, res};
}

inline std::vector<RegionPoint> region_scan(const SaddleProblem& prob, const RegionScanOptions& o) {
  if (o.subsample < 1) throw InvalidArgument("region scan: subsample must be positive");
  const auto [inv_tau, inv_sigma] = region_axes(prob, o);
  const std::size_t g = inv_tau.size();
  std::vector<RegionPoint> pts;
  for (double kappa : o.kappas)
    for (std::size_t i = 0; i < g; ++i)
      for (std::size_t j = 0; j < g; ++j) {
        RegionPoint pt;
        pt.kappa = kappa;
        pt.inv_tau = inv_tau[i];
        pt.inv_sigma = inv_sigma[j];
        FbParams fp;
        fp.kappa = kappa;
        fp.tau = 1.0 / pt.inv_tau;
        fp.sigma = 1.0 / pt.inv_sigma;
        fp.relaxation = Relaxation::constant(1.0);
        const ValidationReport r = validate_params(prob, fp);
        pt.valid = std::abs(kappa) <= 1.0 && r.slack_tau > 0.0 && r.slack_sigma > 0.0;
        pt.margin = boundary_margin(r);
        pt.tested = (i * g + j) % static_cast<std::size_t>(o.subsample) == 0;
        pts.push_back(pt);
      }

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t idx = next++; idx < pts.size(); idx = next++) {
      RegionPoint& pt = pts[idx];
      if (!pt.tested) continue;
      const auto [ok, res] = empirical_convergence(prob, pt.kappa, 1.0 / pt.inv_tau, 1.0 / pt.inv_sigma, o.budget,
                                                   o.tolerance);
      pt.converged = ok;
      pt.final_residual = res;
    }
  };
  const int workers = std::max(1, o.jobs);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  return pts;
}

struct RegionStats {
  /// Points valid at |kappa| = 1 but invalid at kappa = 0; -1 if either
  /// kappa is missing from the scan.
  long nesting_violations = -1;
  /// Largest kappa-ordered nesting failures over consecutive |kappa| values.
  long monotone_violations = 0;
  long interior_valid = 0;
  long interior_valid_converged = 0;
  long interior_invalid = 0;
  long interior_invalid_diverged = 0;

  double valid_agreement() const {
    return interior_valid > 0 ? static_cast<double>(interior_valid_converged) / interior_valid : kNaN;
  }
  double two_sided_agreement() const {
    const long n = interior_valid + interior_invalid;
    return n > 0 ? static_cast<double>(interior_valid_converged + interior_invalid_diverged) / n : kNaN;
  }
};

inline RegionStats region_stats(const std::vector<RegionPoint>& pts, double interior_margin = 0.1) {
  RegionStats s;
  std::map<double, std::map<std::pair<double, double>, bool>> by_kappa;
  for (const auto& p : pts) by_kappa[std::abs(p.kappa)][{p.inv_tau, p.inv_sigma}] = p.valid;
  if (by_kappa.count(0.0) && by_kappa.count(1.0)) {
    s.nesting_violations = 0;
    for (const auto& [pt, v] : by_kappa[1.0])
      if (v && !by_kappa[0.0][pt]) ++s.nesting_violations;
  }
  for (auto it = by_kappa.begin(); it != by_kappa.end(); ++it) {
    auto nx = std::next(it);
    if (nx == by_kappa.end()) break;
    for (const auto& [pt, v] : nx->second)
      if (v && !it->second[pt]) ++s.monotone_violations;
  }
  for (const auto& p : pts) {
    if (!p.tested || !(std::abs(p.margin) > interior_margin)) continue;
    if (p.valid) {
      ++s.interior_valid;
      s.interior_valid_converged += p.converged;
    } else {
      ++s.interior_invalid;
      s.interior_invalid_diverged += !p.converged;
    }
  }
  return s;
}

inline void write_region_csv(std::ostream& out, const std::vector<RegionPoint>& pts) {
  out << "kappa,inv_tau,inv_sigma,valid,margin,tested,converged,final_residual\n" << std::setprecision(17);
  for (const auto& p : pts)
    out << p.kappa << ',' << p.inv_tau << ',' << p.inv_sigma << ',' << p.valid << ',' << p.margin << ',' << p.tested
        << ',' << p.converged << ',' << p.final_residual << '\n';
}

// ---------------------------------------------------------------------------
// Commands

struct Overrides {
  std::optional<std::string> out;
  std::optional<long> seed;
  int jobs = 1;
  bool unproven = false;
};

inline void apply_overrides(Config& cfg, const Overrides& ov) {
  if (ov.out) cfg.set("out", *ov.out);
  if (ov.seed) cfg.set("seed", *ov.seed);
  if (ov.unproven) cfg.set("unproven", true);
}

inline std::filesystem::path prepare_out(const Config& cfg) {
  std::filesystem::path dir = cfg.str("out");
  std::filesystem::create_directories(dir);
  return dir;
}

inline void put_config(Summary& s, const Config& cfg) {
  for (const auto& [k, d] : config_defaults()) s.put("config." + k, cfg.get(k));
}

inline void put_problem(Summary& s, const LoadedProblem& lp) {
  for (const auto& [k, v] : lp.meta) s.put("problem." + k, v);
  s.put("problem.p", static_cast<long>(lp.prob.p()));
  s.put("problem.l", static_cast<long>(lp.prob.l()));
  s.put("problem.L_f", lp.prob.L_f());
  s.put("problem.norm_K", lp.prob.norm_K);
}

inline void write_reference_files(const std::filesystem::path& dir, const ReferenceSolution& ref) {
  Summary s;
  s.put("method", ref.method);
  s.put("objective", ref.objective);
  s.put("residual", ref.residual);
  s.put("iterations", ref.iterations);
  s.put("converged", ref.converged);
  write_file_atomic(dir / "reference.txt", s.render());
  write_file_atomic(dir / "reference_x.txt", format_vector(ref.z.x));
  write_file_atomic(dir / "reference_y.txt", format_vector(ref.z.y));
}

inline std::optional<ReferenceSolution> maybe_reference(const Config& cfg, const SaddleProblem& prob) {
  if (!cfg.flag("reference")) return std::nullopt;
  ReferenceOptions ro;
  ro.budget = cfg.integer("reference_budget");
  ro.tolerance = cfg.num("reference_tolerance");
  ro.strict = false;
  return reference_solve(prob, ro);
}

inline void put_slope(Summary& s, const std::string& key, const IterTrace& trace, std::optional<double> f_star,
                      bool ergodic) {
  if (!f_star) {
    s.put(key, kNaN);
    return;
  }
  try {
    const SlopeFit fit = rate_slope(trace, *f_star, ergodic);
    s.put(key, fit.slope);
  } catch (const InsufficientData&) {
    s.put(key, kNaN);
  }
}

inline double final_objective(const IterTrace& t, bool ergodic = false) {
  if (t.records.empty()) return kNaN;
  return ergodic ? t.records.back().ergodic_objective : t.records.back().objective;
}

inline int cmd_run_fb(const Config& cfg, const LoadedProblem& lp, const std::filesystem::path& dir, Summary& sum,
                      const std::optional<ReferenceSolution>& ref, std::optional<double> f_star) {
  const SaddleProblem& prob = lp.prob;
  FbParams fp;
  fp.kappa = cfg.num("kappa");
  const bool need_defaults = cfg.is_null("tau") || cfg.is_null("sigma");
  const StepSizes steps = need_defaults ? default_step_sizes(prob, fp.kappa) : StepSizes{};
  fp.tau = cfg.opt_num("tau").value_or(steps.tau);
  fp.sigma = cfg.opt_num("sigma").value_or(steps.sigma);
  fp.relaxation = cfg.is_null("rho") ? Relaxation::recipe() : Relaxation::constant(cfg.num("rho"));
  fp.max_iters = cfg.integer("max_iters");
  fp.record_every = cfg.integer("record_every");
  const ValidationReport rep = validate_params(prob, fp);
  sum.put("resolved.kappa", fp.kappa);
  sum.put("resolved.tau", fp.tau);
  sum.put("resolved.sigma", fp.sigma);
  sum.put("resolved.rho", rep.rho);
  sum.put("resolved.delta", rep.delta);
  sum.put("resolved.margin", rep.margin());
  RunOptions ro;
  if (ref) ro.reference = ref->z;
  const long workers = cfg.integer("workers");
  FbResult res;
  if (workers > 1) {
    const ShardPlan plan = partition_problem(prob, workers);
    ShardedResult sr = run_fb_sharded(prob, fp, plan, {Vector::Zero(prob.p()), Vector::Zero(prob.l())}, ro);
    res = std::move(sr.run);
    write_csv_atomic(dir / "ledger.csv", [&](std::ostream& o) { write_ledger_csv(o, sr.ledger); });
    sum.put("comm.loss", sr.ledger.loss);
    sum.put("comm.penalty", sr.ledger.penalty);
    sum.put("comm.total", sr.ledger.total());
  } else {
    res = run_fb(prob, fp, {Vector::Zero(prob.p()), Vector::Zero(prob.l())}, ro);
  }
  write_csv_atomic(dir / "trace.csv", [&](std::ostream& o) { write_trace_csv(o, res.trace); });
  sum.put("result.iterations", res.iterations);
  sum.put("result.final_objective", final_objective(res.trace));
  sum.put("result.final_ergodic_objective", final_objective(res.trace, true));
  put_slope(sum, "result.ergodic_slope", res.trace, f_star, true);
  return 0;
}

inline int cmd_run_fbf(const Config& cfg, const LoadedProblem& lp, const std::filesystem::path& dir, Summary& sum) {
  const SaddleProblem& prob = lp.prob;
  FbfParams fp;
  fp.tau = cfg.opt_num("tau").value_or(0.9 / (prob.L_f() + prob.norm_K));
  fp.alpha1 = cfg.num("alpha1");
  fp.alpha2 = cfg.num("alpha2");
  fp.max_iters = cfg.integer("max_iters");
  fp.record_every = cfg.integer("record_every");
  sum.put("resolved.tau", fp.tau);
  const FbResult res = run_fbf(prob, fp, {Vector::Zero(prob.p()), Vector::Zero(prob.l())});
  write_csv_atomic(dir / "trace.csv", [&](std::ostream& o) { write_trace_csv(o, res.trace); });
  sum.put("result.iterations", res.iterations);
  sum.put("result.final_objective", final_objective(res.trace));
  return 0;
}

struct OmegaChoice {
  double omega_x;
  double omega_y;
  PrimalDual anchor;
};

inline OmegaChoice resolve_omegas(const Config& cfg, const SaddleProblem& prob,
                                  const std::optional<ReferenceSolution>& ref) {
  if (!cfg.is_null("omega_x") && !cfg.is_null("omega_y")) {
    PrimalDual anchor = ref ? ref->z : PrimalDual{Vector::Zero(prob.p()), Vector::Zero(prob.l())};
    return {cfg.num("omega_x"), cfg.num("omega_y"), anchor};
  }
  const DomainBounds d = pilot_domain_bounds(prob);
  return {cfg.opt_num("omega_x").value_or(d.omega_x), cfg.opt_num("omega_y").value_or(d.omega_y),
          ref ? ref->z : d.pilot};
}

inline int cmd_run_accel(const Config& cfg, const LoadedProblem& lp, const std::filesystem::path& dir, Summary& sum,
                         const std::optional<ReferenceSolution>& ref, std::optional<double> f_star, int jobs) {
  const SaddleProblem& prob = lp.prob;
  const auto modes = parse_modes(cfg.str("mode"));
  const Schedule::Setting setting = parse_setting(cfg.str("schedule"));
  const OmegaChoice om = resolve_omegas(cfg, prob, ref);
  const long iters = cfg.integer("max_iters");
  const long horizon = cfg.is_null("horizon") ? iters : cfg.integer("horizon");
  sum.put("resolved.omega_x", om.omega_x);
  sum.put("resolved.omega_y", om.omega_y);
  sum.put("resolved.horizon", horizon);

  struct Cell {
    NamedMode mode;
    AccelParams params;
    std::optional<AccelResult> result;
    std::string error;
    bool numerical = false;
  };
  std::vector<Cell> cells;
  for (const auto& m : modes) {
    AccelParams ap;
    ap.mode = m.mode;
    ap.setting = setting;
    ap.omega_x = om.omega_x;
    ap.omega_y = om.omega_y;
    ap.horizon = horizon;
    ap.q = cfg.num("q");
    ap.r = cfg.num("r");
    ap.tune = cfg.flag("tune");
    ap.max_iters = iters;
    ap.record_every = cfg.integer("record_every");
    cells.push_back({m, ap, std::nullopt, "", false});
  }
  auto work = [&](Cell& c) {
    try {
      Schedule sc = make_schedule(prob, c.params);
      const long n = setting == Schedule::Setting::unbounded ? c.params.horizon : c.params.max_iters;
      c.result = run_accel(prob, c.mode.mode, sc, n, {Vector::Zero(prob.p()), Vector::Zero(prob.l())},
                           c.params.record_every);
    } catch (const InvalidArgument& e) {
      c.error = e.what();
    } catch (const Error& e) {
      c.error = e.what();
      c.numerical = true;
    }
  };
  if (jobs <= 1 || cells.size() == 1) {
    for (auto& c : cells) work(c);
  } else {
    std::vector<std::thread> pool;
    for (auto& c : cells) pool.emplace_back([&work, &c] { work(c); });
    for (auto& th : pool) th.join();
  }
  for (const auto& c : cells) {
    if (!c.result) {
      if (c.numerical) throw NonFiniteIterate("accelerated run for mode " + c.mode.name + " failed: " + c.error);
      throw ConfigError("accelerated run for mode " + c.mode.name + ": " + c.error);
    }
  }
  const bool single = cells.size() == 1;
  for (const auto& c : cells) {
    const std::string file = single ? "trace.csv" : "trace_" + c.mode.name + ".csv";
    write_csv_atomic(dir / file, [&](std::ostream& o) { write_trace_csv(o, c.result->trace); });
    const std::string pre = single ? "result." : "result." + c.mode.name + ".";
    sum.put(pre + "q", c.params.q);
    sum.put(pre + "r", c.params.r);
    sum.put(pre + "final_objective", final_objective(c.result->trace));
    put_slope(sum, pre + "slope", c.result->trace, f_star, false);
  }
  if (!single) {
    std::vector<const Cell*> order;
    for (const auto& c : cells) order.push_back(&c);
    std::stable_sort(order.begin(), order.end(), [](const Cell* a, const Cell* b) {
      return final_objective(a->result->trace) < final_objective(b->result->trace);
    });
    write_csv_atomic(dir / "comparison.csv", [&](std::ostream& o) {
      o << "rank,mode,final_objective,iterations,q,r\n" << std::setprecision(17);
      int rank = 1;
      for (const Cell* c : order)
        o << rank++ << ',' << c->mode.name << ',' << final_objective(c->result->trace) << ','
          << c->result->iterations << ',' << c->params.q << ',' << c->params.r << '\n';
    });
  }
  return 0;
}

inline int cmd_run_stoc(const Config& cfg, const LoadedProblem& lp, const std::filesystem::path& dir, Summary& sum,
                        const std::optional<ReferenceSolution>& ref, int jobs) {
  const SaddleProblem& prob = lp.prob;
  const NamedMode mode = parse_mode(cfg.str("mode"));
  const Schedule::Setting setting = parse_setting(cfg.str("schedule"));
  const long n = cfg.is_null("horizon") ? cfg.integer("max_iters") : cfg.integer("horizon");
  const bool unproven = cfg.flag("unproven");
  MaskedGradOracle oracle(prob, mode.mode, cfg.num("pi"));
  const OmegaChoice om = resolve_omegas(cfg, prob, ref);
  VarianceBounds chi;
  if (!cfg.is_null("chi_x") && !cfg.is_null("chi_y")) {
    chi.chi_xf = cfg.num("chi_x");
    chi.chi_y = cfg.num("chi_y");
  } else {
    const PrimalDual z0{Vector::Zero(prob.p()), Vector::Zero(prob.l())};
    chi = estimate_chi(oracle, {z0, om.anchor}, 1000, 1.5, static_cast<std::uint64_t>(cfg.integer("seed")));
  }
  const double q = cfg.num("q"), r = cfg.num("r"), s = cfg.num("s"), t = cfg.num("t");
  Schedule sc;
  if (setting == Schedule::Setting::bounded) {
    sc = schedule_stoc_bounded(prob, mode.mode, chi, om.omega_x, om.omega_y, n, q, r, s, t, unproven);
  } else {
    const double rt = cfg.opt_num("r_tilde").value_or(om.omega_x);
    sc = schedule_stoc_unbounded(prob, mode.mode, chi, n, rt, q, r, s, t, unproven);
    sum.put("resolved.r_tilde", rt);
  }
  sum.put("resolved.omega_x", om.omega_x);
  sum.put("resolved.omega_y", om.omega_y);
  sum.put("resolved.chi_x", chi.chi_x());
  sum.put("resolved.chi_y", chi.chi_y);
  sum.put("resolved.horizon", n);
  if (setting == Schedule::Setting::bounded) sum.put("resolved.c0_bound", stoc_c0(sc, n));

  std::vector<std::uint64_t> seeds;
  const auto base = static_cast<std::uint64_t>(cfg.integer("seed"));
  for (long i = 0; i < cfg.integer("seeds"); ++i) seeds.push_back(base + 1000 + static_cast<std::uint64_t>(i));
  const StocResult res = run_stoc(oracle, sc, {Vector::Zero(prob.p()), Vector::Zero(prob.l())}, seeds, n - 1,
                                  cfg.integer("record_every"), jobs);
  long failed = 0;
  for (const auto& run : res.runs) {
    if (!run.result) {
      ++failed;
      sum.put("result.seed_" + std::to_string(run.seed) + ".error", run.error);
      continue;
    }
    write_csv_atomic(dir / ("trace_seed" + std::to_string(run.seed) + ".csv"),
                     [&](std::ostream& o) { write_trace_csv(o, run.result->trace); });
  }
  write_csv_atomic(dir / "aggregate.csv", [&](std::ostream& o) { write_aggregate_csv(o, res.aggregate); });
  sum.put("result.failed_seeds", failed);
  if (!res.aggregate.empty()) sum.put("result.mean_final_objective", res.aggregate.back().mean_objective);
  if (failed == static_cast<long>(seeds.size())) throw NonFiniteIterate("every stochastic seed failed");
  return 0;
}

inline int cmd_run(Config cfg, const Overrides& ov) {
  apply_overrides(cfg, ov);
  const auto dir = prepare_out(cfg);
  const LoadedProblem lp = load_problem(cfg);
  Summary sum;
  put_config(sum, cfg);
  put_problem(sum, lp);
  const auto ref = maybe_reference(cfg, lp.prob);
  std::optional<double> f_star = cfg.opt_num("f_star");
  if (ref) {
    write_reference_files(dir, *ref);
    if (!f_star) f_star = ref->objective;
    sum.put("reference.objective", ref->objective);
    sum.put("reference.residual", ref->residual);
  }
  const std::string alg = cfg.str("algorithm");
  int rc;
  if (alg == "fb") {
    rc = cmd_run_fb(cfg, lp, dir, sum, ref, f_star);
  } else if (alg == "fbf") {
    rc = cmd_run_fbf(cfg, lp, dir, sum);
  } else if (alg == "accel") {
    rc = cmd_run_accel(cfg, lp, dir, sum, ref, f_star, ov.jobs);
  } else if (alg == "stoc") {
    rc = cmd_run_stoc(cfg, lp, dir, sum, ref, ov.jobs);
  } else {
    throw ConfigError("unknown algorithm '" + alg + "' (expected fb, fbf, accel or stoc)");
  }
  write_file_atomic(dir / "summary.txt", sum.render());
  return rc;
}

inline int cmd_region_scan(Config cfg, const Overrides& ov) {
  apply_overrides(cfg, ov);
  const auto dir = prepare_out(cfg);
  const LoadedProblem lp = load_problem(cfg);
  RegionScanOptions o;
  o.kappas = cfg.num_list("kappas");
  o.grid = static_cast<int>(cfg.integer("grid"));
  o.span = cfg.num("span");
  o.budget = cfg.integer("budget");
  o.tolerance = cfg.num("tolerance");
  o.subsample = static_cast<int>(cfg.integer("subsample"));
  o.jobs = ov.jobs;
  const auto pts = region_scan(lp.prob, o);
  write_csv_atomic(dir / "region_scan.csv", [&](std::ostream& out) { write_region_csv(out, pts); });
  const RegionStats st = region_stats(pts, cfg.num("interior_margin"));
  Summary sum;
  put_config(sum, cfg);
  put_problem(sum, lp);
  sum.put("scan.nesting_violations", st.nesting_violations);
  sum.put("scan.monotone_violations", st.monotone_violations);
  sum.put("scan.interior_valid", st.interior_valid);
  sum.put("scan.interior_valid_converged", st.interior_valid_converged);
  sum.put("scan.interior_invalid", st.interior_invalid);
  sum.put("scan.interior_invalid_diverged", st.interior_invalid_diverged);
  sum.put("scan.valid_agreement", st.valid_agreement());
  sum.put("scan.two_sided_agreement", st.two_sided_agreement());
  write_file_atomic(dir / "summary.txt", sum.render());
  return 0;
}

inline int cmd_gen(Config cfg, const Overrides& ov) {
  apply_overrides(cfg, ov);
  const std::filesystem::path dir = cfg.str("out");
  const LoadedProblem lp = load_problem(cfg);
  std::map<std::string, std::string> meta;
  for (const auto& [k, v] : cfg.explicit_values()) meta["config." + k] = v.dump();
  write_bundle(dir, lp.prob, lp.x_true, meta);
  return 0;
}

inline int cmd_reference(Config cfg, const Overrides& ov) {
  apply_overrides(cfg, ov);
  const auto dir = prepare_out(cfg);
  const LoadedProblem lp = load_problem(cfg);
  ReferenceOptions ro;
  ro.budget = cfg.integer("reference_budget");
  ro.tolerance = cfg.num("reference_tolerance");
  ro.strict = true;
  const ReferenceSolution ref = reference_solve(lp.prob, ro);
  write_reference_files(dir, ref);
  return 0;
}

/// Maps library errors to exit codes: 1 for configuration and input
/// problems, 2 for numerical failures.
inline int run_guarded(const std::function<int()>& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 1;
  } catch (const FormatError& e) {
    err << "input error: " << e.what() << '\n';
    return 1;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << '\n';
    return 1;
  } catch (const InvalidArgument& e) {
    err << "invalid setting: " << e.what() << '\n';
    return 1;
  } catch (const UnsupportedMode& e) {
    err << "invalid setting: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "io error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace pdfb::cli
