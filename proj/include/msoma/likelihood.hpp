#pragma once

// Exact negative log-likelihood of the FFT data, its complete-data
// counterpart with modal responses as latent variables, the conditional
// latent moments and the Q-function.

#include <vector>

#include "msoma/model.hpp"
#include "msoma/spectra.hpp"
#include "msoma/types.hpp"

namespace msoma {

/// Conditional moments of the modal response at one FFT line.
struct LatentMoments {
  CVec w;      // mean
  CMat Sigma;  // covariance
  CMat W;      // w w^H + Sigma
};

/// Thin QR of the local shape, reused across all lines of a setup.
struct ShapeFactor {
  Mat Q;  // n_r x p, orthonormal columns, p = min(n_r, m)
  Mat R;  // p x m
};

ShapeFactor factor_shape(const Mat& phi_r);

/// One line of the exact NLLF. Throws NumericalError naming (setup, line)
/// when the covariance factorization fails.
double nllf_line(const SetupParams& x, const ShapeFactor& qr, const CVec& F, double f_k, int q,
                 int setup = 0, int line = 0);

/// Sum over all lines of one setup.
double nllf_setup(const SetupParams& x, const Mat& phi_r, const SetupBand& band);

/// Sum over setups (ascending) and lines (ascending).
double nllf(const ThetaVector& theta, const std::vector<SetupBand>& bands);

/// Mean and covariance of eta_k given the data. Valid for singular S.
LatentMoments latent_moments(const SetupParams& x, const Mat& phi_r, const CVec& F, double f_k,
                             int q);
std::vector<LatentMoments> latent_moments(const SetupParams& x, const Mat& phi_r,
                                          const SetupBand& band);
LatentMoments latent_moments(const ThetaVector& theta, const SetupBand& band, int k);

/// Inverse and log-determinant of the modal response PSD h S h^* restricted
/// to the range of S (eigenvalues below 1e-12 trace(S)/m are dropped).
struct ModalPsdInverse {
  CMat inv;
  double logdet = 0.0;
};
ModalPsdInverse modal_psd_inverse(const SetupParams& x, double f_k, int q);

/// Complete-data NLLF summed over the lines of one setup.
double complete_nllf(const SetupParams& x, const Mat& phi_r, const SetupBand& band,
                     const std::vector<CVec>& eta);

/// Expected complete-data NLLF under the supplied moments.
double q_value(const SetupParams& x, const Mat& phi_r, const SetupBand& band,
               const std::vector<LatentMoments>& moments);

}  // namespace msoma
