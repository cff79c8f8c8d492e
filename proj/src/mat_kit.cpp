#include "msoma/mat_kit.hpp"

#include <cmath>
#include <utility>

namespace msoma::mat_kit {

PermutationOp::PermutationOp(Kind kind, Eigen::Index rows_in, Eigen::Index cols_in,
                             std::vector<Eigen::Index> source)
    : kind_(kind),
      dim_m_(rows_in),
      dim_n_(cols_in),
      input_size_(rows_in * cols_in),
      source_(std::move(source)) {
  for (auto s : source_)
    if (s < 0 || s >= input_size_) throw ConfigError("PermutationOp: index out of range");
}

Mat PermutationOp::to_dense() const {
  Mat out = Mat::Zero(rows(), cols());
  for (Eigen::Index i = 0; i < rows(); ++i) out(i, source_[i]) = 1.0;
  return out;
}

PermutationOp commutation_matrix(Eigen::Index m, Eigen::Index n) {
  if (m < 1 || n < 1) throw ConfigError("commutation_matrix: dimensions must be >= 1");
  // vec(A^T)[i + j n] = A^T(i, j) = A(j, i) = vec(A)[j + i m]
  std::vector<Eigen::Index> source(static_cast<std::size_t>(m * n));
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < n; ++i) source[static_cast<std::size_t>(i + j * n)] = j + i * m;
  return {PermutationOp::Kind::Commutation, m, n, std::move(source)};
}

PermutationOp diag_selector(Eigen::Index m) {
  if (m < 1) throw ConfigError("diag_selector: dimension must be >= 1");
  std::vector<Eigen::Index> source(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) source[static_cast<std::size_t>(i)] = i * m + i;
  return {PermutationOp::Kind::DiagSelector, m, m, std::move(source)};
}

Mat nullspace_basis(const Mat& g, double rank_tol) {
  const Eigen::Index m = g.rows();
  const Eigen::Index p = g.cols();
  if (m > p) throw NumericalError("nullspace_basis: more constraints than unknowns");
  if (m == 0) return Mat::Identity(p, p);

  // G^T = Q R; the trailing p - m columns of Q span null(G).
  Eigen::HouseholderQR<Mat> qr(g.transpose());
  const Mat r = qr.matrixQR().topRows(m).triangularView<Eigen::Upper>();
  const double scale = r.diagonal().cwiseAbs().maxCoeff();
  if (!(scale > 0.0)) throw NumericalError("nullspace_basis: constraint matrix is zero");
  for (Eigen::Index i = 0; i < m; ++i) {
    if (std::abs(r(i, i)) <= rank_tol * scale)
      throw NumericalError("nullspace_basis: constraints are rank deficient (inconsistent)");
  }
  const Mat q = qr.householderQ() * Mat::Identity(p, p);
  return q.rightCols(p - m);
}

}  // namespace msoma::mat_kit
