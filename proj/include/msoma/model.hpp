#pragma once

// Modal parameter structures, selection maps, frequency response and the
// spectral covariance of scaled FFT lines, plus the flat real encoding of the
// full parameter set.

#include <string>
#include <vector>

#include "msoma/types.hpp"

namespace msoma {

/// Maps each local channel of a setup to the global DoF it measures.
/// Indices are 0-based internally; configuration files use 1-based DoFs.
struct SelectionMap {
  std::vector<int> tau;
  int n_global = 0;

  int channels() const { return static_cast<int>(tau.size()); }
  /// Throws ConfigError on out-of-range or repeated entries.
  void validate() const;
};

/// Throws ConfigError unless the union of the maps covers every global DoF.
void check_coverage(const std::vector<SelectionMap>& maps);

/// Per-setup scalar parameters x^(r).
struct SetupParams {
  Vec f;      // natural frequencies (Hz)
  Vec zeta;   // damping ratios
  CMat S;     // modal force PSD, Hermitian PSD
  double Se = 1.0;  // prediction-error PSD

  int modes() const { return static_cast<int>(f.size()); }
  /// (m + 1)^2
  int n_params() const { return (modes() + 1) * (modes() + 1); }
  void validate() const;
};

/// Full parameter set: per-setup scalars plus the global mode shape (n x m).
struct ThetaVector {
  std::vector<SetupParams> setups;
  Mat Phi;

  int modes() const { return static_cast<int>(Phi.cols()); }
  int n_dofs() const { return static_cast<int>(Phi.rows()); }
  int n_setups() const { return static_cast<int>(setups.size()); }
  int n_params() const;
};

/// n_s (m + 1)^2 + m n
int theta_size(int n_setups, int modes, int n_dofs);

/// Real chart for a Hermitian m x m matrix: m diagonal entries, then the real
/// parts of the strict upper triangle (column-major), then the imaginary parts
/// in the same order.
namespace s_chart {

struct Entry {
  int row;
  int col;
  cplx coeff;
};

/// S = sum_p s_p B_p; the nonzero entries of B_p.
std::vector<Entry> basis(int m, int p);
Vec pack(const CMat& s);
CMat unpack(const Eigen::Ref<const Vec>& v, int m);
/// Real derivative along each chart direction given the formal matrix
/// derivative G = dg/dS (g real-valued): d g / d s_p = Re sum_ij G_ij B_p(i,j).
Vec contract(const CMat& grad);
/// Human-readable label of chart coordinate p (e.g. "S12_re").
std::string label(int m, int p);

}  // namespace s_chart

/// Flat layout of x^(r) inside its (m + 1)^2 block.
struct XLayout {
  int m;
  int f(int i) const { return i; }
  int zeta(int i) const { return m + i; }
  int s(int p) const { return 2 * m + p; }
  int se() const { return 2 * m + m * m; }
  int size() const { return (m + 1) * (m + 1); }
};

Vec encode_setup(const SetupParams& x);
SetupParams decode_setup(const Eigen::Ref<const Vec>& v, int m);

/// [x^(1); ...; x^(n_s); vec(Phi)]
Vec encode(const ThetaVector& theta);
ThetaVector decode(const Eigen::Ref<const Vec>& v, int n_setups, int modes, int n_dofs);

/// Parameter names matching the flat encoding: "s2:f1", "s1:S12_im", "phi:dof17:mode2".
std::vector<std::string> parameter_labels(int n_setups, int modes, int n_dofs);

/// Frequency response (i 2 pi f_k)^-q / ((1 - b^2) - 2 i zeta b), b = f_i / f_k.
cplx frf(double f_i, double zeta_i, double f_k, int q);

/// Per-line quantities built from x^(r) and the local shape.
struct DerivativeWorkspace {
  CVec h;   // diagonal FRF values
  Vec D;    // |h|^2
  CMat H;   // h S h^*
  CMat E;   // Phi_r H Phi_r^T + Se I
};

DerivativeWorkspace spectral_cov(const SetupParams& x, const Mat& phi_r, double f_k, int q);

/// Row u of the result is row tau_u of Phi.
Mat local_shape(const Mat& phi, const SelectionMap& map);

}  // namespace msoma
