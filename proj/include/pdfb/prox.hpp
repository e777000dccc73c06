#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pdfb/errors.hpp"
#include "pdfb/types.hpp"

namespace pdfb {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Contiguous half-open index ranges [begin, end) into a dual vector.
struct GroupPartition {
  std::vector<std::pair<Index, Index>> ranges;

  static GroupPartition from_sizes(const std::vector<Index>& sizes) {
    GroupPartition g;
    Index at = 0;
    for (Index s : sizes) {
      if (s <= 0) throw InvalidArgument("GroupPartition: group sizes must be positive");
      g.ranges.emplace_back(at, at + s);
      at += s;
    }
    return g;
  }

  Index dim() const { return ranges.empty() ? 0 : ranges.back().second; }
  std::size_t size() const { return ranges.size(); }

  /// Throws unless the ranges are nonempty, ordered, disjoint and cover
  /// [0, l) exactly.
  void validate(Index l) const {
    Index at = 0;
    for (const auto& [b, e] : ranges) {
      if (b != at || e <= b) throw InvalidArgument("GroupPartition: ranges must be contiguous and nonempty");
      at = e;
    }
    if (at != l)
      throw DimensionError("GroupPartition: covers " + std::to_string(at) + " entries, expected " +
                           std::to_string(l));
  }
};

/// Describes h* through its proximity operator. Each kind also fixes the
/// primal h, which is used for objective evaluation and Moreau's identity:
///
///   kind            h*                          h
///   box             indicator of ||.||_inf <= l  l ||.||_1
///   l2_ball         indicator of ||.||_2 <= l    l ||.||_2
///   l1_ball         indicator of ||.||_1 <= l    l ||.||_inf
///   group_l2_balls  product of l2 balls          sum_g l_g ||.[g]||_2
///   hinge           b_i w_i on b_i w_i in [-1,0] sum_i max(0, 1 - b_i u_i)
///   zero_conj       0                           indicator of {0}
///   composite       blockwise                   blockwise
class ConjugateProxSpec {
 public:
  enum class Kind { box, l2_ball, l1_ball, group_l2_balls, hinge, zero_conj, composite };

  struct Block;

  static ConjugateProxSpec box(double lambda, Index dim) { return scalar(Kind::box, lambda, dim); }
  static ConjugateProxSpec l2_ball(double lambda, Index dim) { return scalar(Kind::l2_ball, lambda, dim); }
  static ConjugateProxSpec l1_ball(double lambda, Index dim) { return scalar(Kind::l1_ball, lambda, dim); }

  static ConjugateProxSpec group_l2_balls(GroupPartition groups, std::vector<double> lambdas) {
    if (groups.size() != lambdas.size())
      throw DimensionError("group_l2_balls: " + std::to_string(lambdas.size()) + " weights for " +
                           std::to_string(groups.size()) + " groups");
    groups.validate(groups.dim());
    for (double l : lambdas)
      if (!(l >= 0.0)) throw InvalidArgument("group_l2_balls: weights must be nonnegative");
    ConjugateProxSpec s;
    s.kind_ = Kind::group_l2_balls;
    s.dim_ = groups.dim();
    s.groups_ = std::make_shared<const GroupPartition>(std::move(groups));
    s.weights_ = std::make_shared<const std::vector<double>>(std::move(lambdas));
    return s;
  }

  /// Labels must all be +1 or -1.
  static ConjugateProxSpec hinge(const Vector& labels) {
    for (Index i = 0; i < labels.size(); ++i)
      if (labels[i] != 1.0 && labels[i] != -1.0)
        throw BadLabels("hinge: label " + std::to_string(labels[i]) + " at " + std::to_string(i) +
                        " is not +1 or -1");
    ConjugateProxSpec s;
    s.kind_ = Kind::hinge;
    s.dim_ = labels.size();
    s.labels_ = std::make_shared<const Vector>(labels);
    return s;
  }

  static ConjugateProxSpec zero_conj(Index dim) {
    ConjugateProxSpec s;
    s.kind_ = Kind::zero_conj;
    s.dim_ = dim;
    return s;
  }

  /// Concatenation of specs over consecutive blocks, in order.
  static ConjugateProxSpec composite(const std::vector<ConjugateProxSpec>& parts);

  Kind kind() const { return kind_; }
  Index dim() const { return dim_; }
  double lambda() const { return lambda_; }
  const GroupPartition& groups() const { return *groups_; }
  const std::vector<double>& weights() const { return *weights_; }
  const Vector& labels() const { return *labels_; }
  const std::vector<Block>& blocks() const { return *blocks_; }

  /// True when h* is an indicator function, so its prox is a projection.
  bool is_indicator() const;

  /// Largest Euclidean norm of any point in dom h*, or +inf if unbounded.
  double domain_radius() const;

 private:
  static ConjugateProxSpec scalar(Kind k, double lambda, Index dim) {
    if (!(lambda >= 0.0)) throw InvalidArgument("prox spec: lambda must be nonnegative");
    if (dim < 0) throw DimensionError("prox spec: negative dimension");
    ConjugateProxSpec s;
    s.kind_ = k;
    s.lambda_ = lambda;
    s.dim_ = dim;
    return s;
  }

  Kind kind_ = Kind::zero_conj;
  Index dim_ = 0;
  double lambda_ = 0.0;
  std::shared_ptr<const GroupPartition> groups_;
  std::shared_ptr<const std::vector<double>> weights_;
  std::shared_ptr<const Vector> labels_;
  std::shared_ptr<const std::vector<Block>> blocks_;
};

struct ConjugateProxSpec::Block {
  Index begin;
  Index end;
  ConjugateProxSpec spec;
};

inline ConjugateProxSpec ConjugateProxSpec::composite(const std::vector<ConjugateProxSpec>& parts) {
  ConjugateProxSpec s;
  s.kind_ = Kind::composite;
  std::vector<Block> blocks;
  Index at = 0;
  for (const auto& p : parts) {
    blocks.push_back(Block{at, at + p.dim(), p});
    at += p.dim();
  }
  s.dim_ = at;
  s.blocks_ = std::make_shared<const std::vector<Block>>(std::move(blocks));
  return s;
}

inline bool ConjugateProxSpec::is_indicator() const {
  switch (kind_) {
    case Kind::box:
    case Kind::l2_ball:
    case Kind::l1_ball:
    case Kind::group_l2_balls:
      return true;
    case Kind::composite:
      return std::all_of(blocks_->begin(), blocks_->end(), [](const Block& b) { return b.spec.is_indicator(); });
    default:
      return false;
  }
}

inline double ConjugateProxSpec::domain_radius() const {
  switch (kind_) {
    case Kind::box:
      return lambda_ * std::sqrt(static_cast<double>(dim_));
    case Kind::l2_ball:
    case Kind::l1_ball:
      return lambda_;
    case Kind::group_l2_balls: {
      double s = 0.0;
      for (double w : *weights_) s += w * w;
      return std::sqrt(s);
    }
    case Kind::hinge:
      return std::sqrt(static_cast<double>(dim_));
    case Kind::zero_conj:
      return kInf;
    case Kind::composite: {
      double s = 0.0;
      for (const auto& b : *blocks_) {
        const double r = b.spec.domain_radius();
        s += r * r;
      }
      return std::sqrt(s);
    }
  }
  return kInf;
}

inline Vector project_l2_ball(const Vector& z, double lambda) {
  const double n = z.norm();
  if (n <= lambda) return z;
  return (lambda / n) * z;
}

/// Euclidean projection onto {v : ||v||_1 <= lambda} by sorting the
/// magnitudes and locating the soft-threshold level exactly.
inline Vector project_l1_ball(const Vector& z, double lambda) {
  if (!(lambda > 0.0)) throw InvalidArgument("project_l1_ball: lambda must be positive");
  if (z.lpNorm<1>() <= lambda) return z;
  std::vector<double> u(static_cast<std::size_t>(z.size()));
  for (Index i = 0; i < z.size(); ++i) u[static_cast<std::size_t>(i)] = std::abs(z[i]);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumsum += u[j];
    const double t = (cumsum - lambda) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  Vector w(z.size());
  for (Index i = 0; i < z.size(); ++i) {
    const double m = std::max(std::abs(z[i]) - theta, 0.0);
    w[i] = z[i] < 0.0 ? -m : m;
  }
  return w;
}

inline Vector soft_threshold(const Vector& z, double t) {
  return z.array().sign() * (z.array().abs() - t).max(0.0);
}

inline Vector block_shrink(const Vector& z, double t) {
  const double n = z.norm();
  if (n <= t) return Vector::Zero(z.size());
  return (1.0 - t / n) * z;
}

namespace detail {
inline void check_dim(const ConjugateProxSpec& spec, const Vector& z, const char* who) {
  if (z.size() != spec.dim())
    throw DimensionError(std::string(who) + ": vector of length " + std::to_string(z.size()) +
                         " for spec of dimension " + std::to_string(spec.dim()));
}
}  // namespace detail

/// prox_{sigma h*}(z).
inline Vector prox_conjugate(const ConjugateProxSpec& spec, const Vector& z, double sigma) {
  detail::check_dim(spec, z, "prox_conjugate");
  if (!(sigma > 0.0)) throw InvalidArgument("prox_conjugate: sigma must be positive");
  using K = ConjugateProxSpec::Kind;
  switch (spec.kind()) {
    case K::box:
      return z.cwiseMax(-spec.lambda()).cwiseMin(spec.lambda());
    case K::l2_ball:
      return project_l2_ball(z, spec.lambda());
    case K::l1_ball:
      if (spec.lambda() == 0.0) return Vector::Zero(z.size());
      return project_l1_ball(z, spec.lambda());
    case K::group_l2_balls: {
      Vector out(z.size());
      const auto& ranges = spec.groups().ranges;
      for (std::size_t g = 0; g < ranges.size(); ++g) {
        const auto [b, e] = ranges[g];
        out.segment(b, e - b) = project_l2_ball(z.segment(b, e - b), spec.weights()[g]);
      }
      return out;
    }
    case K::hinge: {
      // h*(w) = b w on b w in [-1, 0]; in the variable s = b w the prox is a
      // shifted clip.
      const Vector& b = spec.labels();
      Vector out(z.size());
      for (Index i = 0; i < z.size(); ++i) out[i] = b[i] * std::clamp(b[i] * z[i] - sigma, -1.0, 0.0);
      return out;
    }
    case K::zero_conj:
      return z;
    case K::composite: {
      Vector out(z.size());
      for (const auto& blk : spec.blocks())
        out.segment(blk.begin, blk.end - blk.begin) =
            prox_conjugate(blk.spec, z.segment(blk.begin, blk.end - blk.begin), sigma);
      return out;
    }
  }
  throw UnknownKind("prox_conjugate: unknown spec kind");
}

/// prox_{t h}(z) for the primal h paired with `spec`. Available for the l1,
/// l2, group-l2 and {0}-indicator cases.
inline Vector prox_primal(const ConjugateProxSpec& spec, const Vector& z, double t) {
  detail::check_dim(spec, z, "prox_primal");
  using K = ConjugateProxSpec::Kind;
  switch (spec.kind()) {
    case K::box:
      return soft_threshold(z, t * spec.lambda());
    case K::l2_ball:
      return block_shrink(z, t * spec.lambda());
    case K::group_l2_balls: {
      Vector out(z.size());
      const auto& ranges = spec.groups().ranges;
      for (std::size_t g = 0; g < ranges.size(); ++g) {
        const auto [b, e] = ranges[g];
        out.segment(b, e - b) = block_shrink(z.segment(b, e - b), t * spec.weights()[g]);
      }
      return out;
    }
    case K::zero_conj:
      return Vector::Zero(z.size());
    case K::composite: {
      Vector out(z.size());
      for (const auto& blk : spec.blocks())
        out.segment(blk.begin, blk.end - blk.begin) =
            prox_primal(blk.spec, z.segment(blk.begin, blk.end - blk.begin), t);
      return out;
    }
    case K::l1_ball:
      throw UnsupportedPrimalProx("prox_primal: no primal rule for the l-infinity norm");
    case K::hinge:
      throw UnsupportedPrimalProx("prox_primal: no primal rule for the hinge loss");
  }
  throw UnknownKind("prox_primal: unknown spec kind");
}

/// prox_{sigma h*}(z) via Moreau: z - sigma prox_{h/sigma}(z/sigma).
inline Vector moreau_prox_primal(const ConjugateProxSpec& spec, const Vector& z, double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("moreau_prox_primal: sigma must be positive");
  return z - sigma * prox_primal(spec, z / sigma, 1.0 / sigma);
}

/// Primal h(u).
inline double h_value(const ConjugateProxSpec& spec, const Vector& u) {
  detail::check_dim(spec, u, "h_value");
  using K = ConjugateProxSpec::Kind;
  switch (spec.kind()) {
    case K::box:
      return spec.lambda() * u.lpNorm<1>();
    case K::l2_ball:
      return spec.lambda() * u.norm();
    case K::l1_ball:
      return u.size() == 0 ? 0.0 : spec.lambda() * u.lpNorm<Eigen::Infinity>();
    case K::group_l2_balls: {
      double s = 0.0;
      const auto& ranges = spec.groups().ranges;
      for (std::size_t g = 0; g < ranges.size(); ++g)
        s += spec.weights()[g] * u.segment(ranges[g].first, ranges[g].second - ranges[g].first).norm();
      return s;
    }
    case K::hinge: {
      const Vector& b = spec.labels();
      double s = 0.0;
      for (Index i = 0; i < u.size(); ++i) s += std::max(0.0, 1.0 - b[i] * u[i]);
      return s;
    }
    case K::zero_conj:
      return u.isZero(0.0) ? 0.0 : kInf;
    case K::composite: {
      double s = 0.0;
      for (const auto& blk : spec.blocks())
        s += h_value(blk.spec, u.segment(blk.begin, blk.end - blk.begin));
      return s;
    }
  }
  throw UnknownKind("h_value: unknown spec kind");
}

/// Conjugate h*(y); +inf outside the domain. Membership is tested with a
/// relative tolerance of 1e-12 so projected points count as feasible.
inline double h_conj_value(const ConjugateProxSpec& spec, const Vector& y) {
  detail::check_dim(spec, y, "h_conj_value");
  constexpr double tol = 1e-12;
  auto within = [](double v, double bound) { return v <= bound * (1.0 + tol) + tol; };
  using K = ConjugateProxSpec::Kind;
  switch (spec.kind()) {
    case K::box:
      return y.size() == 0 || within(y.lpNorm<Eigen::Infinity>(), spec.lambda()) ? 0.0 : kInf;
    case K::l2_ball:
      return within(y.norm(), spec.lambda()) ? 0.0 : kInf;
    case K::l1_ball:
      return within(y.lpNorm<1>(), spec.lambda()) ? 0.0 : kInf;
    case K::group_l2_balls: {
      const auto& ranges = spec.groups().ranges;
      for (std::size_t g = 0; g < ranges.size(); ++g)
        if (!within(y.segment(ranges[g].first, ranges[g].second - ranges[g].first).norm(), spec.weights()[g]))
          return kInf;
      return 0.0;
    }
    case K::hinge: {
      const Vector& b = spec.labels();
      double s = 0.0;
      for (Index i = 0; i < y.size(); ++i) {
        const double v = b[i] * y[i];
        if (v > tol || v < -1.0 - tol) return kInf;
        s += v;
      }
      return s;
    }
    case K::zero_conj:
      return 0.0;
    case K::composite: {
      double s = 0.0;
      for (const auto& blk : spec.blocks()) {
        s += h_conj_value(blk.spec, y.segment(blk.begin, blk.end - blk.begin));
        if (s == kInf) return kInf;
      }
      return s;
    }
  }
  throw UnknownKind("h_conj_value: unknown spec kind");
}

}  // namespace pdfb
