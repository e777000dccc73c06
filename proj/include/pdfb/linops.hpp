#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pdfb/errors.hpp"
#include "pdfb/rng.hpp"
#include "pdfb/types.hpp"

namespace pdfb {

/// Multiplier applied to power-iteration norm estimates wherever a step-size
/// rule consumes ||K||_2. The rules are strict inequalities and the estimate
/// is a lower bound.
inline constexpr double kNormSafety = 1.01;

/// Dimensions at or above which sparse input is kept in CSR form.
inline constexpr Index kDenseFallbackDim = 64;

/// Builds a CSR matrix from triplets. Duplicates are summed, explicit zeros
/// are dropped and column indices end up sorted within each row.
inline SparseMatrix make_csr(Index rows, Index cols, const std::vector<Triplet>& entries) {
  if (rows < 0 || cols < 0) throw DimensionError("make_csr: negative shape");
  for (const auto& t : entries) {
    if (t.row() < 0 || t.row() >= rows || t.col() < 0 || t.col() >= cols)
      throw IndexOutOfRange("make_csr: entry (" + std::to_string(t.row()) + ", " +
                            std::to_string(t.col()) + ") outside " + std::to_string(rows) +
                            "x" + std::to_string(cols));
  }
  SparseMatrix m(rows, cols);
  m.setFromTriplets(entries.begin(), entries.end());
  m.prune(0.0, 0.0);
  m.makeCompressed();
  return m;
}

class LinearOperator;

namespace detail {
struct OperatorNode;
}

/// Immutable linear map with an adjoint. Copies share the underlying storage,
/// so operators are cheap to pass by value and safe to share across threads.
class LinearOperator {
 public:
  enum class Kind { dense, sparse_csr, identity, zero, scaled, vstack, scaled_copy };

  /// Empty 0x0 operator.
  LinearOperator();

  static LinearOperator dense(Matrix m);
  /// CSR storage; matrices smaller than 64x64 in both dimensions are stored
  /// densely instead.
  static LinearOperator sparse(SparseMatrix m);
  /// CSR storage regardless of size.
  static LinearOperator csr(SparseMatrix m);
  static LinearOperator identity(Index n);
  static LinearOperator zero(Index rows, Index cols);
  static LinearOperator scaled(double alpha, LinearOperator inner);
  /// C = kappa K. Tagged separately so C K^T = K C^T is known structurally.
  static LinearOperator scaled_copy(double kappa, LinearOperator k);
  /// Lazy vertical stack [B_1; B_2; ...]; blocks are never copied.
  static LinearOperator vstack(std::vector<LinearOperator> blocks);

  Kind kind() const;
  Index rows() const;
  Index cols() const;

  Vector apply(const Vector& v) const;
  Vector apply_adjoint(const Vector& v) const;

  /// Scale factor for scaled / scaled_copy operators, 1 otherwise.
  double scale() const;
  /// Wrapped operator for scaled / scaled_copy.
  const LinearOperator& inner() const;
  /// Blocks of a vstack.
  const std::vector<LinearOperator>& blocks() const;

  Matrix to_dense() const;
  SparseMatrix to_sparse() const;

 private:
  explicit LinearOperator(std::shared_ptr<const detail::OperatorNode> node);
  std::shared_ptr<const detail::OperatorNode> node_;
};

namespace detail {

struct DenseNode {
  Matrix m;
};
struct SparseNode {
  SparseMatrix m;
};
struct IdentityNode {
  Index n;
};
struct ZeroNode {
  Index rows, cols;
};
struct ScaledNode {
  double alpha;
  LinearOperator inner;
  bool copy_of_k;
};
struct StackNode {
  std::vector<LinearOperator> blocks;
  std::vector<Index> offsets;  // row offset of each block, plus the total
  Index cols;
};

struct OperatorNode {
  std::variant<DenseNode, SparseNode, IdentityNode, ZeroNode, ScaledNode, StackNode> v;
};

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace detail

inline LinearOperator::LinearOperator()
    : node_(std::make_shared<detail::OperatorNode>(detail::OperatorNode{detail::ZeroNode{0, 0}})) {}

inline LinearOperator::LinearOperator(std::shared_ptr<const detail::OperatorNode> node)
    : node_(std::move(node)) {}

inline LinearOperator LinearOperator::dense(Matrix m) {
  return LinearOperator(std::make_shared<detail::OperatorNode>(detail::OperatorNode{detail::DenseNode{std::move(m)}}));
}

inline LinearOperator LinearOperator::csr(SparseMatrix m) {
  m.makeCompressed();
  return LinearOperator(std::make_shared<detail::OperatorNode>(detail::OperatorNode{detail::SparseNode{std::move(m)}}));
}

inline LinearOperator LinearOperator::sparse(SparseMatrix m) {
  if (m.rows() < kDenseFallbackDim && m.cols() < kDenseFallbackDim) return dense(Matrix(m));
  return csr(std::move(m));
}

inline LinearOperator LinearOperator::identity(Index n) {
  if (n < 0) throw DimensionError("identity: negative size");
  return LinearOperator(std::make_shared<detail::OperatorNode>(detail::OperatorNode{detail::IdentityNode{n}}));
}

inline LinearOperator LinearOperator::zero(Index rows, Index cols) {
  if (rows < 0 || cols < 0) throw DimensionError("zero: negative shape");
  return LinearOperator(std::make_shared<detail::OperatorNode>(detail::OperatorNode{detail::ZeroNode{rows, cols}}));
}

inline LinearOperator LinearOperator::scaled(double alpha, LinearOperator inner) {
  return LinearOperator(std::make_shared<detail::OperatorNode>(
      detail::OperatorNode{detail::ScaledNode{alpha, std::move(inner), false}}));
}

inline LinearOperator LinearOperator::scaled_copy(double kappa, LinearOperator k) {
  return LinearOperator(std::make_shared<detail::OperatorNode>(
      detail::OperatorNode{detail::ScaledNode{kappa, std::move(k), true}}));
}

inline LinearOperator LinearOperator::vstack(std::vector<LinearOperator> blocks) {
  if (blocks.empty()) throw DimensionError("vstack: no blocks");
  const Index cols = blocks.front().cols();
  std::vector<Index> offsets{0};
  for (const auto& b : blocks) {
    if (b.cols() != cols)
      throw DimensionError("vstack: block has " + std::to_string(b.cols()) + " columns, expected " +
                           std::to_string(cols));
    offsets.push_back(offsets.back() + b.rows());
  }
  return LinearOperator(std::make_shared<detail::OperatorNode>(
      detail::OperatorNode{detail::StackNode{std::move(blocks), std::move(offsets), cols}}));
}

inline LinearOperator::Kind LinearOperator::kind() const {
  return std::visit(detail::Overloaded{
                        [](const detail::DenseNode&) { return Kind::dense; },
                        [](const detail::SparseNode&) { return Kind::sparse_csr; },
                        [](const detail::IdentityNode&) { return Kind::identity; },
                        [](const detail::ZeroNode&) { return Kind::zero; },
                        [](const detail::ScaledNode& s) { return s.copy_of_k ? Kind::scaled_copy : Kind::scaled; },
                        [](const detail::StackNode&) { return Kind::vstack; },
                    },
                    node_->v);
}

inline Index LinearOperator::rows() const {
  return std::visit(detail::Overloaded{
                        [](const detail::DenseNode& d) { return d.m.rows(); },
                        [](const detail::SparseNode& s) { return s.m.rows(); },
                        [](const detail::IdentityNode& i) { return i.n; },
                        [](const detail::ZeroNode& z) { return z.rows; },
                        [](const detail::ScaledNode& s) { return s.inner.rows(); },
                        [](const detail::StackNode& s) { return s.offsets.back(); },
                    },
                    node_->v);
}

inline Index LinearOperator::cols() const {
  return std::visit(detail::Overloaded{
                        [](const detail::DenseNode& d) { return d.m.cols(); },
                        [](const detail::SparseNode& s) { return s.m.cols(); },
                        [](const detail::IdentityNode& i) { return i.n; },
                        [](const detail::ZeroNode& z) { return z.cols; },
                        [](const detail::ScaledNode& s) { return s.inner.cols(); },
                        [](const detail::StackNode& s) { return s.cols; },
                    },
                    node_->v);
}

inline Vector LinearOperator::apply(const Vector& v) const {
  if (v.size() != cols())
    throw DimensionError("apply: vector of length " + std::to_string(v.size()) + " for operator with " +
                         std::to_string(cols()) + " columns");
  return std::visit(detail::Overloaded{
                        [&](const detail::DenseNode& d) -> Vector { return d.m * v; },
                        [&](const detail::SparseNode& s) -> Vector { return s.m * v; },
                        [&](const detail::IdentityNode&) -> Vector { return v; },
                        [&](const detail::ZeroNode& z) -> Vector { return Vector::Zero(z.rows); },
                        [&](const detail::ScaledNode& s) -> Vector { return s.alpha * s.inner.apply(v); },
                        [&](const detail::StackNode& s) -> Vector {
                          Vector out(s.offsets.back());
                          for (std::size_t b = 0; b < s.blocks.size(); ++b)
                            out.segment(s.offsets[b], s.blocks[b].rows()) = s.blocks[b].apply(v);
                          return out;
                        },
                    },
                    node_->v);
}

inline Vector LinearOperator::apply_adjoint(const Vector& v) const {
  if (v.size() != rows())
    throw DimensionError("apply_adjoint: vector of length " + std::to_string(v.size()) +
                         " for operator with " + std::to_string(rows()) + " rows");
  return std::visit(detail::Overloaded{
                        [&](const detail::DenseNode& d) -> Vector { return d.m.transpose() * v; },
                        [&](const detail::SparseNode& s) -> Vector { return s.m.transpose() * v; },
                        [&](const detail::IdentityNode&) -> Vector { return v; },
                        [&](const detail::ZeroNode& z) -> Vector { return Vector::Zero(z.cols); },
                        [&](const detail::ScaledNode& s) -> Vector { return s.alpha * s.inner.apply_adjoint(v); },
                        [&](const detail::StackNode& s) -> Vector {
                          // Fixed left-to-right block order keeps the sum reproducible.
                          Vector out = Vector::Zero(s.cols);
                          for (std::size_t b = 0; b < s.blocks.size(); ++b)
                            out += s.blocks[b].apply_adjoint(v.segment(s.offsets[b], s.blocks[b].rows()));
                          return out;
                        },
                    },
                    node_->v);
}

inline double LinearOperator::scale() const {
  if (const auto* s = std::get_if<detail::ScaledNode>(&node_->v)) return s->alpha;
  return 1.0;
}

inline const LinearOperator& LinearOperator::inner() const {
  if (const auto* s = std::get_if<detail::ScaledNode>(&node_->v)) return s->inner;
  return *this;
}

inline const std::vector<LinearOperator>& LinearOperator::blocks() const {
  if (const auto* s = std::get_if<detail::StackNode>(&node_->v)) return s->blocks;
  throw InvalidArgument("blocks: operator is not a vstack");
}

inline Matrix LinearOperator::to_dense() const {
  return std::visit(detail::Overloaded{
                        [](const detail::DenseNode& d) -> Matrix { return d.m; },
                        [](const detail::SparseNode& s) -> Matrix { return Matrix(s.m); },
                        [](const detail::IdentityNode& i) -> Matrix { return Matrix::Identity(i.n, i.n); },
                        [](const detail::ZeroNode& z) -> Matrix { return Matrix::Zero(z.rows, z.cols); },
                        [](const detail::ScaledNode& s) -> Matrix { return s.alpha * s.inner.to_dense(); },
                        [](const detail::StackNode& s) -> Matrix {
                          Matrix out(s.offsets.back(), s.cols);
                          for (std::size_t b = 0; b < s.blocks.size(); ++b)
                            out.middleRows(s.offsets[b], s.blocks[b].rows()) = s.blocks[b].to_dense();
                          return out;
                        },
                    },
                    node_->v);
}

inline SparseMatrix LinearOperator::to_sparse() const {
  return std::visit(detail::Overloaded{
                        [](const detail::DenseNode& d) -> SparseMatrix {
                          SparseMatrix m = d.m.sparseView(0.0, 0.0);
                          m.makeCompressed();
                          return m;
                        },
                        [](const detail::SparseNode& s) -> SparseMatrix { return s.m; },
                        [](const detail::IdentityNode& i) -> SparseMatrix {
                          SparseMatrix m(i.n, i.n);
                          m.setIdentity();
                          m.makeCompressed();
                          return m;
                        },
                        [](const detail::ZeroNode& z) -> SparseMatrix { return SparseMatrix(z.rows, z.cols); },
                        [](const detail::ScaledNode& s) -> SparseMatrix {
                          SparseMatrix m = s.alpha * s.inner.to_sparse();
                          m.prune(0.0, 0.0);
                          m.makeCompressed();
                          return m;
                        },
                        [](const detail::StackNode& s) -> SparseMatrix {
                          std::vector<Triplet> entries;
                          for (std::size_t b = 0; b < s.blocks.size(); ++b) {
                            const SparseMatrix m = s.blocks[b].to_sparse();
                            for (Index r = 0; r < m.outerSize(); ++r)
                              for (SparseMatrix::InnerIterator it(m, r); it; ++it)
                                entries.emplace_back(s.offsets[b] + it.row(), it.col(), it.value());
                          }
                          return make_csr(s.offsets.back(), s.cols, entries);
                        },
                    },
                    node_->v);
}

/// Estimates ||op||_2 by power iteration on op^T op from a fixed seed-0
/// Gaussian start vector. The returned value ||op v|| (v unit) never exceeds
/// the true norm. Throws NonConvergence carrying the last estimate if the
/// relative change is still above `tol` after `max_iters` iterations.
inline double op_norm(const LinearOperator& op, double tol = 1e-9, int max_iters = 10000) {
  if (!(tol > 0.0)) throw InvalidArgument("op_norm: tol must be positive");
  switch (op.kind()) {
    case LinearOperator::Kind::identity:
      return op.rows() > 0 ? 1.0 : 0.0;
    case LinearOperator::Kind::zero:
      return 0.0;
    case LinearOperator::Kind::scaled:
    case LinearOperator::Kind::scaled_copy:
      return std::abs(op.scale()) * op_norm(op.inner(), tol, max_iters);
    default:
      break;
  }
  if (op.rows() == 0 || op.cols() == 0) return 0.0;

  Rng rng(0);
  Vector v = rng.normal_vector(op.cols());
  v.normalize();
  double estimate = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    const Vector w = op.apply(v);
    const double next = w.norm();
    Vector u = op.apply_adjoint(w);
    const double un = u.norm();
    if (un == 0.0) return next;
    if (it > 0 && std::abs(next - estimate) <= tol * next) return next;
    estimate = next;
    v = u / un;
  }
  throw NonConvergence("op_norm: no convergence after " + std::to_string(max_iters) + " iterations", estimate);
}

/// op_norm inflated by kNormSafety; what step-size rules should consume.
inline double safe_op_norm(const LinearOperator& op) { return kNormSafety * op_norm(op); }

/// Group membership matrix: one row per (group, member) pair with a single 1
/// in the member's column. Indices are 0-based. Rows are ordered group by
/// group, members in the order given.
inline SparseMatrix build_group_membership(const std::vector<std::vector<Index>>& groups, Index p) {
  std::vector<Triplet> entries;
  Index row = 0;
  for (const auto& g : groups) {
    for (Index j : g) {
      if (j < 0 || j >= p)
        throw IndexOutOfRange("build_group_membership: index " + std::to_string(j) + " outside [0, " +
                              std::to_string(p) + ")");
      entries.emplace_back(row++, j, 1.0);
    }
  }
  return make_csr(row, p, entries);
}

/// Graph difference matrix: row e has +1 at edge.first and -1 at edge.second.
inline SparseMatrix build_graph_difference(const std::vector<std::pair<Index, Index>>& edges, Index p) {
  std::vector<Triplet> entries;
  entries.reserve(2 * edges.size());
  Index row = 0;
  for (const auto& [i, j] : edges) {
    if (i < 0 || i >= p || j < 0 || j >= p)
      throw IndexOutOfRange("build_graph_difference: edge (" + std::to_string(i) + ", " + std::to_string(j) +
                            ") outside [0, " + std::to_string(p) + ")");
    if (i == j) throw SelfLoop("build_graph_difference: self loop at " + std::to_string(i));
    entries.emplace_back(row, i, 1.0);
    entries.emplace_back(row, j, -1.0);
    ++row;
  }
  return make_csr(row, p, entries);
}

/// First-difference matrix of the path 0-1-...-(p-1).
inline SparseMatrix chain_difference(Index p) {
  std::vector<std::pair<Index, Index>> edges;
  for (Index i = 0; i + 1 < p; ++i) edges.emplace_back(i, i + 1);
  return build_graph_difference(edges, p);
}

// Triplet text format: optional '%' comment lines, a "rows cols nnz" header,
// then nnz lines of 1-based "i j value".

inline SparseMatrix read_triplets(std::istream& in) {
  std::string line;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '%') continue;
      return true;
    }
    return false;
  };
  if (!next_line()) throw FormatError("read_triplets: missing header");
  long long rows = 0, cols = 0, nnz = 0;
  {
    std::istringstream hs(line);
    if (!(hs >> rows >> cols >> nnz) || rows < 0 || cols < 0 || nnz < 0)
      throw FormatError("read_triplets: bad header '" + line + "'");
  }
  std::vector<Triplet> entries;
  entries.reserve(static_cast<std::size_t>(nnz));
  for (long long e = 0; e < nnz; ++e) {
    if (!next_line()) throw FormatError("read_triplets: expected " + std::to_string(nnz) + " entries");
    std::istringstream ls(line);
    long long i = 0, j = 0;
    double value = 0.0;
    if (!(ls >> i >> j >> value)) throw FormatError("read_triplets: bad entry '" + line + "'");
    entries.emplace_back(static_cast<Index>(i - 1), static_cast<Index>(j - 1), value);
  }
  return make_csr(static_cast<Index>(rows), static_cast<Index>(cols), entries);
}

inline void write_triplets(std::ostream& out, const SparseMatrix& m) {
  out << m.rows() << ' ' << m.cols() << ' ' << m.nonZeros() << '\n';
  out << std::setprecision(17);
  for (Index r = 0; r < m.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(m, r); it; ++it)
      out << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
}

inline SparseMatrix read_triplets_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  return read_triplets(in);
}

inline void write_triplets_file(const std::string& path, const SparseMatrix& m) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  write_triplets(out, m);
}

}  // namespace pdfb
