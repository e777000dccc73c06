#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <vector>

namespace pdfb {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// One recorded iteration. Fields that do not apply to a run are NaN.
struct IterRecord {
  long k = 0;
  double objective = kNaN;
  double ergodic_objective = kNaN;
  double residual = kNaN;  // ||z^{k} - z^{k-1}||
  double mdist = kNaN;     // ||z^{k} - z*||_M
  double seconds = 0.0;
  double tau_k = kNaN;
  double sigma_k = kNaN;
  double rho_k = kNaN;
  double resolvent_msq = kNaN;  // ||ztilde^{k} - z^{k-1}||_M^2
};

struct IterTrace {
  std::vector<IterRecord> records;
  /// ||z^0 - z*||_M when a reference was supplied.
  double initial_mdist = kNaN;
  bool schedule_columns = false;
  std::optional<std::uint64_t> seed;
};

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

/// Writes `k,objective,ergodic_objective,residual,mdist,seconds`, followed
/// by `tau_k,sigma_k,rho_k` for scheduled runs and `seed` for stochastic
/// ones, with 17 significant digits.
inline void write_trace_csv(std::ostream& out, const IterTrace& trace) {
  out << "k,objective,ergodic_objective,residual,mdist,seconds";
  if (trace.schedule_columns) out << ",tau_k,sigma_k,rho_k";
  if (trace.seed) out << ",seed";
  out << '\n' << std::setprecision(17);
  for (const auto& r : trace.records) {
    out << r.k << ',' << r.objective << ',' << r.ergodic_objective << ',' << r.residual << ',' << r.mdist << ','
        << r.seconds;
    if (trace.schedule_columns) out << ',' << r.tau_k << ',' << r.sigma_k << ',' << r.rho_k;
    if (trace.seed) out << ',' << *trace.seed;
    out << '\n';
  }
}

}  // namespace pdfb
