#pragma once

// Posterior covariance at the MPV through the complete-data decomposition:
// per-line Q-function derivatives, the expectation term, sparse global
// assembly over setups and inversion on the tangent space of the
// unit-norm mode-shape constraints.

#include <optional>
#include <vector>

#include <Eigen/Sparse>

#include "msoma/likelihood.hpp"
#include "msoma/model.hpp"
#include "msoma/spectra.hpp"
#include "msoma/types.hpp"

namespace msoma {

/// Local parameter order: [x (m+1)^2 ; vec(Phi_r) m n_r].
/// Phi_r entry (u, i) sits at (m+1)^2 + i n_r + u.
inline int local_size(int m, int n_r) { return (m + 1) * (m + 1) + m * n_r; }

/// Gradient of one line's Q-function with moments held fixed.
Vec q_gradient(const SetupParams& x, const Mat& phi_r, const CVec& F, double f_k, int q,
               const LatentMoments& mo);

/// Hessian of one line's Q-function with moments held fixed.
Mat q_hessian(const SetupParams& x, const Mat& phi_r, const CVec& F, double f_k, int q,
              const LatentMoments& mo);

/// -E[g g^T] for g the complete-data gradient at eta ~ CN(w, Sigma).
Mat expectation_term(const SetupParams& x, const Mat& phi_r, const CVec& F, double f_k, int q,
                     const LatentMoments& mo);

/// Mean and covariance of the complete-data gradient under the moments.
struct GradientMoments {
  Vec mean;
  Mat cov;
};
GradientMoments complete_gradient_moments(const SetupParams& x, const Mat& phi_r, const CVec& F,
                                          double f_k, int q, const LatentMoments& mo);

struct LocalHessian {
  Mat H_x;     // (m+1)^2 square
  Mat H_xPhi;  // (m+1)^2 x m n_r
  Mat H_Phi;   // m n_r square

  Mat dense() const;
  static LocalHessian from_dense(const Mat& h, int m);
};

struct LocalHessianParts {
  Mat gradient_outer;  // sum_k g_k g_k^T
  Mat q_hessian;       // sum_k Q_k Hessian
  Mat expectation;     // -sum_k E[g g^T]
  Mat total() const { return gradient_outer + q_hessian + expectation; }
};

/// Per-setup Hessian of the exact NLLF (moments computed at x, phi_r).
/// When S is nearly singular (condition number above 1e5) the complete-data
/// route loses accuracy; the gradient is then taken through E directly and the
/// Hessian is its central-difference Jacobian.
LocalHessian local_hessian(const SetupParams& x, const Mat& phi_r, const SetupBand& band);
LocalHessianParts local_hessian_parts(const SetupParams& x, const Mat& phi_r,
                                      const SetupBand& band);

/// Per-setup gradient of the exact NLLF over the local parameters.
Vec local_gradient(const SetupParams& x, const Mat& phi_r, const SetupBand& band);

/// Gradient of the exact NLLF over the flat encoding.
Vec nllf_gradient(const ThetaVector& theta, const std::vector<SetupBand>& bands);

struct GlobalHessian {
  Eigen::SparseMatrix<double> H;
  int n_setups = 0;
  int modes = 0;
  int n_dofs = 0;

  Mat dense() const { return Mat(H); }
};

/// Scatter the local blocks into the global parameter order.
GlobalHessian assemble(const std::vector<LocalHessian>& locals,
                       const std::vector<SelectionMap>& maps);

/// Jacobian of g_i = (phi_i^T phi_i - 1) / 2 over the flat encoding (m x n_theta).
Mat constraint_gradient(const ThetaVector& theta);

/// Hessian pseudo-inverse on the tangent space of the constraints, built from
/// per-mode Householder complements of the shape columns.
Mat constrained_inverse(const Mat& H, const ThetaVector& theta);
Mat constrained_inverse(const GlobalHessian& H, const ThetaVector& theta);

struct PcmOptions {
  bool keep_full = false;
  std::optional<Mat> reference_shapes;  // n x m, for MAC
};

struct PosteriorResult {
  std::vector<std::string> labels;
  Vec mpv;                // flat encoding
  Vec std_dev;            // sqrt(diag C) over the flat encoding
  Vec cov_of_variation;   // std / |mpv| for the per-setup scalars, NaN for zero MPV
  Mat shape_cov;          // mn x mn
  std::vector<Mat> shape_cov_per_mode;
  Vec shape_uncertainty;  // sqrt(trace) of each per-mode block
  Vec mac;                // empty without reference shapes
  std::optional<Mat> cov;
};

/// Derived statistics from a full constrained covariance.
PosteriorResult summarize(const Mat& cov, const ThetaVector& theta, const PcmOptions& opts);

/// local Hessians -> assembly -> constrained inverse -> statistics.
PosteriorResult pcm(const ThetaVector& theta_hat, const std::vector<SetupBand>& bands,
                    const PcmOptions& opts = {});

/// Modal assurance criterion.
double mac(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& b);

}  // namespace msoma
