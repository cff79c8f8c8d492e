#pragma once

// Matrix-calculus helpers: column-major vectorization, Kronecker products,
// permutation operators stored as index maps, and orthonormal null-space bases.

#include <cstddef>
#include <vector>

#include "msoma/types.hpp"

namespace msoma::mat_kit {

/// Column-major stacking: element (i, j) lands at index j * rows + i.
template <typename Derived>
auto vec(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(m.size());
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) out(j * m.rows() + i) = m(i, j);
  return out;
}

/// Inverse of vec for a rows x cols target.
template <typename Derived>
auto unvec(const Eigen::MatrixBase<Derived>& v, Eigen::Index rows, Eigen::Index cols) {
  using Scalar = typename Derived::Scalar;
  if (v.size() != rows * cols) throw ConfigError("unvec: size mismatch");
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = v(j * rows + i);
  return out;
}

/// Dense Kronecker product; block (i, j) equals a(i, j) * b.
template <typename DA, typename DB>
auto kron(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  using Scalar = typename Eigen::ScalarBinaryOpTraits<typename DA::Scalar,
                                                      typename DB::Scalar>::ReturnType;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(a.rows() * b.rows(),
                                                            a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// A 0/1 matrix with exactly one unit entry per row, held as an index map:
/// (P x)[i] = x[source[i]].
class PermutationOp {
 public:
  enum class Kind { Commutation, DiagSelector };

  PermutationOp(Kind kind, Eigen::Index rows_in, Eigen::Index cols_in,
                std::vector<Eigen::Index> source);

  Kind kind() const { return kind_; }
  Eigen::Index rows() const { return static_cast<Eigen::Index>(source_.size()); }
  Eigen::Index cols() const { return input_size_; }
  /// Dimensions of the matrix the operator was built for (m, n).
  Eigen::Index dim_m() const { return dim_m_; }
  Eigen::Index dim_n() const { return dim_n_; }
  const std::vector<Eigen::Index>& source() const { return source_; }

  template <typename Derived>
  auto apply(const Eigen::MatrixBase<Derived>& x) const {
    using Scalar = typename Derived::Scalar;
    if (x.size() != input_size_) throw ConfigError("PermutationOp::apply: size mismatch");
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(rows());
    for (Eigen::Index i = 0; i < rows(); ++i) out(i) = x(source_[i]);
    return out;
  }

  /// P^T y: scatter back into the source positions.
  template <typename Derived>
  auto apply_transpose(const Eigen::MatrixBase<Derived>& y) const {
    using Scalar = typename Derived::Scalar;
    if (y.size() != rows()) throw ConfigError("PermutationOp::apply_transpose: size mismatch");
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out =
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(input_size_);
    for (Eigen::Index i = 0; i < rows(); ++i) out(source_[i]) += y(i);
    return out;
  }

  /// Dense materialization, for tests and small oracles only.
  Mat to_dense() const;

 private:
  Kind kind_;
  Eigen::Index dim_m_;
  Eigen::Index dim_n_;
  Eigen::Index input_size_;
  std::vector<Eigen::Index> source_;
};

/// K_mn with vec(A^T) = K_mn vec(A) for every m x n matrix A.
PermutationOp commutation_matrix(Eigen::Index m, Eigen::Index n);

/// R_m with diag(A) = R_m vec(A) for every m x m matrix A.
PermutationOp diag_selector(Eigen::Index m);

/// Orthonormal basis U (p x (p - m)) of the null space of a full-row-rank
/// m x p matrix G. Throws NumericalError when G is rank deficient relative to
/// `rank_tol` (scaled by the largest |R_ii|).
Mat nullspace_basis(const Mat& g, double rank_tol = 1e-10);

}  // namespace msoma::mat_kit
