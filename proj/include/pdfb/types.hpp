#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace pdfb {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// Compressed sparse row storage.
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<double>;

/// Primal-dual pair z = (x, y).
struct PrimalDual {
  Vector x;
  Vector y;

  bool all_finite() const { return x.allFinite() && y.allFinite(); }
};

inline double squared_distance(const PrimalDual& a, const PrimalDual& b) {
  return (a.x - b.x).squaredNorm() + (a.y - b.y).squaredNorm();
}

}  // namespace pdfb
