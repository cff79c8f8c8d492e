#include "msoma/likelihood.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace msoma {
namespace {

const double kLnPi = std::log(std::numbers::pi);

void check_band(const SetupParams& x, const Mat& phi_r, const SetupBand& band) {
  if (phi_r.rows() != band.channels())
    throw ConfigError("setup " + std::to_string(band.setup + 1) + ": local shape has " +
                      std::to_string(phi_r.rows()) + " rows but data has " +
                      std::to_string(band.channels()) + " channels");
  if (phi_r.cols() != x.modes()) throw ConfigError("local shape and setup parameters disagree on m");
}

}  // namespace

ShapeFactor factor_shape(const Mat& phi_r) {
  const Eigen::Index p = std::min(phi_r.rows(), phi_r.cols());
  Eigen::HouseholderQR<Mat> qr(phi_r);
  ShapeFactor out;
  out.Q = qr.householderQ() * Mat::Identity(phi_r.rows(), p);
  out.R = qr.matrixQR().topRows(p).triangularView<Eigen::Upper>();
  return out;
}

double nllf_line(const SetupParams& x, const ShapeFactor& qr, const CVec& F, double f_k, int q,
                 int setup, int line) {
  const int m = x.modes();
  const long n_r = F.size();
  const long p = qr.Q.cols();
  CVec h(m);
  for (int i = 0; i < m; ++i) h(i) = frf(x.f(i), x.zeta(i), f_k, q);
  const CMat H = h.asDiagonal() * x.S * h.conjugate().asDiagonal();
  const CMat Rc = qr.R.cast<cplx>();
  CMat K = Rc * H * Rc.transpose();
  K = 0.5 * (K + K.adjoint()).eval();
  K.diagonal().array() += x.Se;

  const CVec y = qr.Q.transpose().cast<cplx>() * F;
  const double resid = (F - qr.Q.cast<cplx>() * y).squaredNorm();

  Eigen::LLT<CMat> llt(K);
  if (llt.info() != Eigen::Success)
    throw NumericalError("spectral covariance not positive definite at setup " +
                         std::to_string(setup + 1) + ", line " + std::to_string(line + 1));
  const CVec z = llt.matrixL().solve(y);
  double logdet = static_cast<double>(n_r - p) * std::log(x.Se);
  for (long i = 0; i < p; ++i) logdet += 2.0 * std::log(llt.matrixLLT()(i, i).real());
  const double value = static_cast<double>(n_r) * kLnPi + resid / x.Se + z.squaredNorm() + logdet;
  if (!std::isfinite(value))
    throw NumericalError("non-finite likelihood at setup " + std::to_string(setup + 1) + ", line " +
                         std::to_string(line + 1));
  return value;
}

double nllf_setup(const SetupParams& x, const Mat& phi_r, const SetupBand& band) {
  check_band(x, phi_r, band);
  const ShapeFactor qr = factor_shape(phi_r);
  double total = 0.0;
  for (int k = 0; k < band.n_lines(); ++k)
    total += nllf_line(x, qr, band.F.col(k), band.freqs(k), band.q, band.setup, k);
  return total;
}

double nllf(const ThetaVector& theta, const std::vector<SetupBand>& bands) {
  if (bands.empty()) throw ConfigError("nllf: no setups");
  if (bands.size() != theta.setups.size()) throw ConfigError("nllf: setup count mismatch");
  double total = 0.0;
  for (std::size_t r = 0; r < bands.size(); ++r)
    total += nllf_setup(theta.setups[r], local_shape(theta.Phi, bands[r].layout), bands[r]);
  return total;
}

LatentMoments latent_moments(const SetupParams& x, const Mat& phi_r, const CVec& F, double f_k,
                             int q) {
  const int m = x.modes();
  CVec h(m);
  for (int i = 0; i < m; ++i) h(i) = frf(x.f(i), x.zeta(i), f_k, q);
  CMat H = h.asDiagonal() * x.S * h.conjugate().asDiagonal();
  H = 0.5 * (H + H.adjoint()).eval();
  const CMat gram = (phi_r.transpose() * phi_r).cast<cplx>();
  // P^-1 = (Se H^-1 + Phi^T Phi)^-1 = (Se I + H Phi^T Phi)^-1 H, defined for singular H
  CMat a = H * gram;
  a.diagonal().array() += x.Se;
  const CMat pinv = Eigen::PartialPivLU<CMat>(a).solve(H);
  LatentMoments out;
  out.w = pinv * (phi_r.transpose().cast<cplx>() * F);
  out.Sigma = x.Se * pinv;
  out.Sigma = 0.5 * (out.Sigma + out.Sigma.adjoint()).eval();
  out.W = out.w * out.w.adjoint() + out.Sigma;
  if (!out.W.allFinite()) throw NumericalError("latent moments: singular system");
  return out;
}

std::vector<LatentMoments> latent_moments(const SetupParams& x, const Mat& phi_r,
                                          const SetupBand& band) {
  check_band(x, phi_r, band);
  std::vector<LatentMoments> out;
  out.reserve(static_cast<std::size_t>(band.n_lines()));
  for (int k = 0; k < band.n_lines(); ++k)
    out.push_back(latent_moments(x, phi_r, band.F.col(k), band.freqs(k), band.q));
  return out;
}

LatentMoments latent_moments(const ThetaVector& theta, const SetupBand& band, int k) {
  if (k < 0 || k >= band.n_lines()) throw ConfigError("latent_moments: line index out of range");
  const auto& x = theta.setups.at(static_cast<std::size_t>(band.setup));
  return latent_moments(x, local_shape(theta.Phi, band.layout), band.F.col(k), band.freqs(k), band.q);
}

ModalPsdInverse modal_psd_inverse(const SetupParams& x, double f_k, int q) {
  const int m = x.modes();
  Eigen::SelfAdjointEigenSolver<CMat> es(x.S);
  const double floor = 1e-12 * x.S.trace().real() / m;
  CMat s_pinv = CMat::Zero(m, m);
  ModalPsdInverse out;
  for (int i = 0; i < m; ++i) {
    const double lam = es.eigenvalues()(i);
    if (lam <= floor) continue;
    s_pinv += es.eigenvectors().col(i) * es.eigenvectors().col(i).adjoint() / lam;
    out.logdet += std::log(lam);
  }
  CVec hinv(m);
  for (int i = 0; i < m; ++i) {
    const cplx h = frf(x.f(i), x.zeta(i), f_k, q);
    hinv(i) = 1.0 / h;
    out.logdet += std::log(std::norm(h));
  }
  out.inv = hinv.conjugate().asDiagonal() * s_pinv * hinv.asDiagonal();
  return out;
}

double complete_nllf(const SetupParams& x, const Mat& phi_r, const SetupBand& band,
                     const std::vector<CVec>& eta) {
  check_band(x, phi_r, band);
  if (static_cast<int>(eta.size()) != band.n_lines())
    throw ConfigError("complete_nllf: one latent vector per line required");
  const int m = x.modes();
  const double n_r = band.channels();
  const CMat phi_c = phi_r.cast<cplx>();
  double total = 0.0;
  for (int k = 0; k < band.n_lines(); ++k) {
    const auto inv = modal_psd_inverse(x, band.freqs(k), band.q);
    const CVec& e = eta[static_cast<std::size_t>(k)];
    total += (m + n_r) * kLnPi + n_r * std::log(x.Se) +
             (band.F.col(k) - phi_c * e).squaredNorm() / x.Se +
             (e.adjoint() * inv.inv * e)(0).real() + inv.logdet;
  }
  return total;
}

double q_value(const SetupParams& x, const Mat& phi_r, const SetupBand& band,
               const std::vector<LatentMoments>& moments) {
  check_band(x, phi_r, band);
  if (static_cast<int>(moments.size()) != band.n_lines())
    throw ConfigError("q_value: one moment set per line required");
  const int m = x.modes();
  const double n_r = band.channels();
  const CMat phi_c = phi_r.cast<cplx>();
  const Mat gram = phi_r.transpose() * phi_r;
  double total = 0.0;
  for (int k = 0; k < band.n_lines(); ++k) {
    const auto inv = modal_psd_inverse(x, band.freqs(k), band.q);
    const auto& mo = moments[static_cast<std::size_t>(k)];
    const CVec F = band.F.col(k);
    total += (m + n_r) * kLnPi + n_r * std::log(x.Se) + F.squaredNorm() / x.Se +
             (inv.inv.cwiseProduct(mo.W.transpose())).sum().real() + inv.logdet -
             2.0 / x.Se * (F.adjoint() * phi_c * mo.w)(0).real() +
             (gram.cwiseProduct(mo.W.real())).sum() / x.Se;
  }
  return total;
}

}  // namespace msoma
