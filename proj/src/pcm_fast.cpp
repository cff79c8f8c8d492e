#include "msoma/pcm_fast.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "msoma/fdm_oracle.hpp"
#include "msoma/mat_kit.hpp"

namespace msoma {
namespace {

// Everything a line needs for first and second derivatives. With
// g = 1 / h = c u, c = (i 2 pi f_k)^q and u_i = 1 - b_i^2 - 2 i zeta_i b_i.
struct LineTerms {
  int m = 0;
  int n_r = 0;
  cplx c;
  double c_abs2 = 0.0;
  CVec u, g;
  CVec du_f, du_z;
  double d2u_ff = 0.0;
  cplx d2u_fz;
  CMat Sinv;
  CMat A;  // G W G^H
  CMat C;  // Sinv A Sinv
  CMat M;  // Sinv^T .* W
  CVec v;  // M conj(g)
  double resid = 0.0;  // F^H F - 2 Re(F^H Phi w) + tr(W Phi^T Phi)
  Mat grad_phi;        // n_r x m
};

LineTerms line_terms(const SetupParams& x, const Mat& phi_r, const CVec& F, double f_k, int q,
                     const LatentMoments& mo) {
  LineTerms t;
  t.m = x.modes();
  t.n_r = static_cast<int>(phi_r.rows());
  const int m = t.m;
  t.c = q == 0 ? cplx(1.0, 0.0) : std::pow(cplx(0.0, 2.0 * std::numbers::pi * f_k), q);
  t.c_abs2 = std::norm(t.c);
  t.u.resize(m);
  t.du_f.resize(m);
  t.du_z.resize(m);
  for (int i = 0; i < m; ++i) {
    const double b = x.f(i) / f_k;
    t.u(i) = cplx(1.0 - b * b, -2.0 * x.zeta(i) * b);
    t.du_f(i) = -cplx(2.0 * x.f(i) / (f_k * f_k), 2.0 * x.zeta(i) / f_k);
    t.du_z(i) = cplx(0.0, -2.0 * b);
  }
  t.d2u_ff = -2.0 / (f_k * f_k);
  t.d2u_fz = cplx(0.0, -2.0 / f_k);
  t.g = t.c * t.u;

  // S need only be invertible: near a rank-deficient truth the MPV may sit
  // slightly outside the PSD cone while E stays positive definite.
  const Eigen::SelfAdjointEigenSolver<CMat> es(x.S);
  const Vec lam_abs = es.eigenvalues().cwiseAbs();
  if (!(lam_abs.minCoeff() > 1e-13 * lam_abs.maxCoeff()))
    throw NumericalError("modal force PSD matrix is singular; derivatives need S invertible");
  t.Sinv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
           es.eigenvectors().adjoint();
  t.Sinv = 0.5 * (t.Sinv + t.Sinv.adjoint()).eval();

  t.A = t.g.asDiagonal() * mo.W * t.g.conjugate().asDiagonal();
  t.C = t.Sinv * t.A * t.Sinv;
  t.M = t.Sinv.transpose().cwiseProduct(mo.W);
  t.v = t.M * t.g.conjugate();

  const Mat gram = phi_r.transpose() * phi_r;
  const Mat reW = mo.W.real();
  t.resid = F.squaredNorm() - 2.0 * (F.adjoint() * phi_r.cast<cplx>() * mo.w)(0).real() +
            gram.cwiseProduct(reW).sum();
  t.grad_phi = (-2.0 * (F.conjugate() * mo.w.transpose()).real() + 2.0 * phi_r * reW) / x.Se;
  return t;
}

// Re tr(X B_p) = Re sum over entries of B_p of coeff * X(col, row).
double chart_trace(const CMat& X, const std::vector<s_chart::Entry>& b) {
  cplx acc = 0.0;
  for (const auto& e : b) acc += e.coeff * X(e.col, e.row);
  return acc.real();
}

// Re tr(B_p X B_q Y).
double chart_trace2(const std::vector<s_chart::Entry>& bp, const CMat& X,
                    const std::vector<s_chart::Entry>& bq, const CMat& Y) {
  cplx acc = 0.0;
  for (const auto& e1 : bp)
    for (const auto& e2 : bq) acc += e1.coeff * e2.coeff * X(e1.col, e2.row) * Y(e2.col, e1.row);
  return acc.real();
}

std::vector<std::vector<s_chart::Entry>> chart_bases(int m) {
  std::vector<std::vector<s_chart::Entry>> out;
  for (int p = 0; p < m * m; ++p) out.push_back(s_chart::basis(m, p));
  return out;
}

CMat chart_matrix(const std::vector<s_chart::Entry>& b, int m) {
  CMat out = CMat::Zero(m, m);
  for (const auto& e : b) out(e.row, e.col) += e.coeff;
  return out;
}

Vec gradient_from_terms(const LineTerms& t, const SetupParams& x) {
  const int m = t.m;
  const XLayout lay{m};
  Vec grad(local_size(m, t.n_r));
  for (int i = 0; i < m; ++i) {
    grad(lay.f(i)) = 2.0 * (t.c * t.du_f(i) * t.v(i)).real() - 2.0 * (t.du_f(i) / t.u(i)).real();
    grad(lay.zeta(i)) = 2.0 * (t.c * t.du_z(i) * t.v(i)).real() - 2.0 * (t.du_z(i) / t.u(i)).real();
  }
  const CMat formal = (t.Sinv - t.C).transpose();
  grad.segment(lay.s(0), m * m) = s_chart::contract(formal);
  grad(lay.se()) = t.n_r / x.Se - t.resid / (x.Se * x.Se);
  grad.tail(m * t.n_r) = mat_kit::vec(t.grad_phi);
  return grad;
}

Mat hessian_from_terms(const LineTerms& t, const SetupParams& x, const LatentMoments& mo) {
  const int m = t.m;
  const int n_r = t.n_r;
  const XLayout lay{m};
  const int nx = lay.size();
  const int P = local_size(m, n_r);
  Mat hess = Mat::Zero(P, P);

  // (f, zeta) block
  auto du = [&](int kind, int i) { return kind == 0 ? t.du_f(i) : t.du_z(i); };
  auto d2u = [&](int a, int b) -> cplx {
    if (a == 0 && b == 0) return t.d2u_ff;
    if (a == 1 && b == 1) return 0.0;
    return t.d2u_fz;
  };
  auto idx = [&](int kind, int i) { return kind == 0 ? lay.f(i) : lay.zeta(i); };
  for (int a = 0; a < 2; ++a)
    for (int i = 0; i < m; ++i)
      for (int b = 0; b < 2; ++b)
        for (int l = 0; l < m; ++l) {
          double val = 2.0 * (t.c_abs2 * du(a, i) * t.M(i, l) * std::conj(du(b, l))).real();
          if (i == l) {
            const cplx ui = t.u(i);
            val += 2.0 * (t.c * d2u(a, b) * t.v(i)).real();
            val -= 2.0 * (d2u(a, b) / ui - du(a, i) * du(b, i) / (ui * ui)).real();
          }
          hess(idx(a, i), idx(b, l)) = val;
        }

  // (f, zeta) x S
  const auto bases = chart_bases(m);
  const CMat GW = t.g.asDiagonal() * mo.W;
  const CMat WGh = mo.W * t.g.conjugate().asDiagonal();
  for (int a = 0; a < 2; ++a)
    for (int i = 0; i < m; ++i) {
      const cplx dg = t.c * du(a, i);
      CMat dA = CMat::Zero(m, m);
      dA.row(i) += dg * WGh.row(i);
      dA.col(i) += std::conj(dg) * GW.col(i);
      const CMat X = -t.Sinv * dA * t.Sinv;
      for (int p = 0; p < m * m; ++p) {
        const double val = chart_trace(X, bases[static_cast<std::size_t>(p)]);
        hess(idx(a, i), lay.s(p)) = val;
        hess(lay.s(p), idx(a, i)) = val;
      }
    }

  // S x S
  for (int p = 0; p < m * m; ++p)
    for (int r = p; r < m * m; ++r) {
      const auto& bp = bases[static_cast<std::size_t>(p)];
      const auto& br = bases[static_cast<std::size_t>(r)];
      const double val = chart_trace2(bp, t.Sinv, br, t.C) + chart_trace2(bp, t.C, br, t.Sinv) -
                         chart_trace2(bp, t.Sinv, br, t.Sinv);
      hess(lay.s(p), lay.s(r)) = val;
      hess(lay.s(r), lay.s(p)) = val;
    }

  // Se
  const double se = x.Se;
  hess(lay.se(), lay.se()) = -n_r / (se * se) + 2.0 * t.resid / (se * se * se);
  const Vec gphi = mat_kit::vec(t.grad_phi);
  hess.block(nx, lay.se(), m * n_r, 1) = -gphi / se;
  hess.block(lay.se(), nx, 1, m * n_r) = -gphi.transpose() / se;

  // Phi x Phi: 2 Re(W) kron I_{n_r} / Se
  const Mat reW = mo.W.real();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      hess.block(nx + i * n_r, nx + j * n_r, n_r, n_r).diagonal().setConstant(2.0 * reW(i, j) / se);
  return hess;
}

GradientMoments gradient_moments_from_terms(const LineTerms& t, const SetupParams& x,
                                            const Mat& phi_r, const CVec& F,
                                            const LatentMoments& mo) {
  const int m = t.m;
  const int n_r = t.n_r;
  const XLayout lay{m};
  const int nx = lay.size();
  const int P = local_size(m, n_r);
  const double se = x.Se;

  // Each complete-data gradient entry is kappa + 2 Re(a^H eta) + eta^H Gamma eta.
  Vec kappa = Vec::Zero(P);
  CMat a = CMat::Zero(m, P);
  std::vector<CMat> gamma(static_cast<std::size_t>(P), CMat::Zero(m, m));

  const CMat SinvG = t.Sinv * t.g.asDiagonal();
  const CMat GhSinv = t.g.conjugate().asDiagonal() * t.Sinv;
  for (int kind = 0; kind < 2; ++kind)
    for (int i = 0; i < m; ++i) {
      const cplx du = kind == 0 ? t.du_f(i) : t.du_z(i);
      const cplx dg = t.c * du;
      const int p = kind == 0 ? lay.f(i) : lay.zeta(i);
      CMat& G = gamma[static_cast<std::size_t>(p)];
      G.row(i) += std::conj(dg) * SinvG.row(i);
      G.col(i) += dg * GhSinv.col(i);
      kappa(p) = -2.0 * (du / t.u(i)).real();
    }
  const auto bases = chart_bases(m);
  for (int p = 0; p < m * m; ++p) {
    const CMat B = chart_matrix(bases[static_cast<std::size_t>(p)], m);
    gamma[static_cast<std::size_t>(lay.s(p))] = -GhSinv * B * SinvG;
    kappa(lay.s(p)) = (t.Sinv * B).trace().real();
  }
  const CVec phiF = phi_r.transpose().cast<cplx>() * F;
  kappa(lay.se()) = n_r / se - F.squaredNorm() / (se * se);
  a.col(lay.se()) = phiF / (se * se);
  gamma[static_cast<std::size_t>(lay.se())] = -(phi_r.transpose() * phi_r).cast<cplx>() / (se * se);
  for (int i = 0; i < m; ++i)
    for (int u = 0; u < n_r; ++u) {
      const int p = nx + i * n_r + u;
      a(i, p) = -F(u) / se;
      CMat& G = gamma[static_cast<std::size_t>(p)];
      G.col(i) += phi_r.row(u).transpose().cast<cplx>() / se;
      G.row(i) += phi_r.row(u).cast<cplx>() / se;
    }

  GradientMoments out;
  out.mean.resize(P);
  CMat b(m, P);
  CMat Z(m * m, P), Zt(m * m, P);
  for (int p = 0; p < P; ++p) {
    const CMat& G = gamma[static_cast<std::size_t>(p)];
    const CVec Gw = G * mo.w;
    out.mean(p) = kappa(p) + 2.0 * (a.col(p).adjoint() * mo.w)(0).real() +
                  G.cwiseProduct(mo.W.transpose()).sum().real();
    b.col(p) = a.col(p) + Gw;
    const CMat GS = G * mo.Sigma;
    Z.col(p) = mat_kit::vec(GS);
    Zt.col(p) = mat_kit::vec(GS.transpose());
  }
  out.cov = 2.0 * (b.adjoint() * mo.Sigma * b).real() + (Zt.transpose() * Z).real();
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

void check_local(const SetupParams& x, const Mat& phi_r, const SetupBand& band) {
  if (phi_r.rows() != band.channels() || phi_r.cols() != x.modes())
    throw ConfigError("setup " + std::to_string(band.setup + 1) +
                      ": local shape dimensions do not match data or parameters");
}

// The complete-data terms are built on S^-1 and cancel badly once S is close
// to singular, which is common when the true S is rank deficient. Past this
// condition number the local derivatives are taken through E instead.
constexpr double kSConditionLimit = 1e5;

bool s_ill_conditioned(const CMat& S) {
  const Eigen::SelfAdjointEigenSolver<CMat> es(S, Eigen::EigenvaluesOnly);
  const Vec a = es.eigenvalues().cwiseAbs();
  return !(a.minCoeff() * kSConditionLimit > a.maxCoeff());
}

// dL = sum_k tr(A_k dE_k) with A = E^-1 - E^-1 F F^H E^-1; no S^-1 involved.
Vec direct_gradient(const SetupParams& x, const Mat& phi_r, const SetupBand& band) {
  const int m = x.modes();
  const int n_r = band.channels();
  const XLayout lay{m};
  const CMat phi_c = phi_r.cast<cplx>();
  const CMat I = CMat::Identity(n_r, n_r);
  Vec grad = Vec::Zero(local_size(m, n_r));
  Mat g_phi = Mat::Zero(n_r, m);
  CMat g_s = CMat::Zero(m, m);
  for (int k = 0; k < band.n_lines(); ++k) {
    const double fk = band.freqs(k);
    const auto ws = spectral_cov(x, phi_r, fk, band.q);
    const Eigen::LLT<CMat> llt(ws.E);
    if (llt.info() != Eigen::Success) throw NumericalError("spectral covariance is not positive definite");
    const CVec a = llt.solve(band.F.col(k));
    const CMat A = llt.solve(I) - a * a.adjoint();
    grad(lay.se()) += A.trace().real();
    g_phi += 2.0 * (A * phi_c * ws.H).real();
    const CMat B = phi_c.transpose() * A * phi_c;
    g_s += (ws.h.conjugate().asDiagonal() * B * ws.h.asDiagonal()).transpose();
    const CVec sb = (x.S * ws.h.conjugate().asDiagonal() * B).diagonal();
    for (int i = 0; i < m; ++i) {
      const double b = x.f(i) / fk;
      const cplx u(1.0 - b * b, -2.0 * x.zeta(i) * b);
      const cplx dh_f = -ws.h(i) * cplx(-2.0 * b / fk, -2.0 * x.zeta(i) / fk) / u;
      const cplx dh_z = -ws.h(i) * cplx(0.0, -2.0 * b) / u;
      grad(lay.f(i)) += 2.0 * (dh_f * sb(i)).real();
      grad(lay.zeta(i)) += 2.0 * (dh_z * sb(i)).real();
    }
  }
  grad.segment(lay.s(0), m * m) = s_chart::contract(g_s);
  grad.tail(m * n_r) = mat_kit::vec(g_phi);
  return grad;
}

Mat direct_hessian(const SetupParams& x, const Mat& phi_r, const SetupBand& band) {
  const int m = x.modes();
  const int nx = XLayout{m}.size();
  ThetaVector local;
  local.setups = {x};
  local.Phi = phi_r;
  const Vec z0 = encode(local);
  const auto grad = [&](const Vec& z) {
    const Mat phi = mat_kit::unvec(z.tail(z.size() - nx), phi_r.rows(), m);
    return direct_gradient(decode_setup(z.head(nx), m), phi, band);
  };
  const Mat J = fd_jacobian(grad, z0, fd_steps(local));
  return 0.5 * (J + J.transpose());
}

}  // namespace

Vec q_gradient(const SetupParams& x, const Mat& phi_r, const CVec& F, double f_k, int q,
               const LatentMoments& mo) {
  return gradient_from_terms(line_terms(x, phi_r, F, f_k, q, mo), x);
}

Mat q_hessian(const SetupParams& x, const Mat& phi_r, const CVec& F, double f_k, int q,
              const LatentMoments& mo) {
  return hessian_from_terms(line_terms(x, phi_r, F, f_k, q, mo), x, mo);
}

GradientMoments complete_gradient_moments(const SetupParams& x, const Mat& phi_r, const CVec& F,
                                          double f_k, int q, const LatentMoments& mo) {
  return gradient_moments_from_terms(line_terms(x, phi_r, F, f_k, q, mo), x, phi_r, F, mo);
}

Mat expectation_term(const SetupParams& x, const Mat& phi_r, const CVec& F, double f_k, int q,
                     const LatentMoments& mo) {
  const auto gm = complete_gradient_moments(x, phi_r, F, f_k, q, mo);
  return -(gm.mean * gm.mean.transpose() + gm.cov);
}

Mat LocalHessian::dense() const {
  const Eigen::Index nx = H_x.rows();
  const Eigen::Index np = H_Phi.rows();
  Mat out(nx + np, nx + np);
  out.topLeftCorner(nx, nx) = H_x;
  out.topRightCorner(nx, np) = H_xPhi;
  out.bottomLeftCorner(np, nx) = H_xPhi.transpose();
  out.bottomRightCorner(np, np) = H_Phi;
  return out;
}

LocalHessian LocalHessian::from_dense(const Mat& h, int m) {
  const int nx = (m + 1) * (m + 1);
  const Eigen::Index np = h.rows() - nx;
  if (h.rows() != h.cols() || np < 0 || np % m != 0)
    throw ConfigError("LocalHessian: dimensions inconsistent with m");
  LocalHessian out;
  out.H_x = h.topLeftCorner(nx, nx);
  out.H_xPhi = h.topRightCorner(nx, np);
  out.H_Phi = h.bottomRightCorner(np, np);
  return out;
}

LocalHessianParts local_hessian_parts(const SetupParams& x, const Mat& phi_r,
                                      const SetupBand& band) {
  check_local(x, phi_r, band);
  const int P = local_size(x.modes(), band.channels());
  LocalHessianParts parts;
  parts.gradient_outer = Mat::Zero(P, P);
  parts.q_hessian = Mat::Zero(P, P);
  parts.expectation = Mat::Zero(P, P);
  for (int k = 0; k < band.n_lines(); ++k) {
    const CVec F = band.F.col(k);
    const auto mo = latent_moments(x, phi_r, F, band.freqs(k), band.q);
    const auto t = line_terms(x, phi_r, F, band.freqs(k), band.q, mo);
    const Vec g = gradient_from_terms(t, x);
    const auto gm = gradient_moments_from_terms(t, x, phi_r, F, mo);
    parts.gradient_outer.noalias() += g * g.transpose();
    parts.q_hessian += hessian_from_terms(t, x, mo);
    parts.expectation.noalias() -= gm.mean * gm.mean.transpose();
    parts.expectation -= gm.cov;
  }
  return parts;
}

LocalHessian local_hessian(const SetupParams& x, const Mat& phi_r, const SetupBand& band) {
  check_local(x, phi_r, band);
  if (s_ill_conditioned(x.S)) return LocalHessian::from_dense(direct_hessian(x, phi_r, band), x.modes());
  const int P = local_size(x.modes(), band.channels());
  Mat total = Mat::Zero(P, P);
  for (int k = 0; k < band.n_lines(); ++k) {
    const CVec F = band.F.col(k);
    const auto mo = latent_moments(x, phi_r, F, band.freqs(k), band.q);
    const auto t = line_terms(x, phi_r, F, band.freqs(k), band.q, mo);
    const Vec g = gradient_from_terms(t, x);
    const auto gm = gradient_moments_from_terms(t, x, phi_r, F, mo);
    // g g^T - E[gc gc^T] with E[gc] = g reduces to -Cov[gc]
    total += hessian_from_terms(t, x, mo);
    total.noalias() += g * g.transpose() - gm.mean * gm.mean.transpose();
    total -= gm.cov;
  }
  total = 0.5 * (total + total.transpose()).eval();
  return LocalHessian::from_dense(total, x.modes());
}

Vec local_gradient(const SetupParams& x, const Mat& phi_r, const SetupBand& band) {
  check_local(x, phi_r, band);
  if (s_ill_conditioned(x.S)) return direct_gradient(x, phi_r, band);
  Vec grad = Vec::Zero(local_size(x.modes(), band.channels()));
  for (int k = 0; k < band.n_lines(); ++k) {
    const CVec F = band.F.col(k);
    const auto mo = latent_moments(x, phi_r, F, band.freqs(k), band.q);
    grad += q_gradient(x, phi_r, F, band.freqs(k), band.q, mo);
  }
  return grad;
}

Vec nllf_gradient(const ThetaVector& theta, const std::vector<SetupBand>& bands) {
  if (bands.size() != theta.setups.size()) throw ConfigError("nllf_gradient: setup count mismatch");
  const int m = theta.modes();
  const int n = theta.n_dofs();
  const int nx = (m + 1) * (m + 1);
  const int phi_off = theta.n_setups() * nx;
  Vec grad = Vec::Zero(theta.n_params());
  for (std::size_t r = 0; r < bands.size(); ++r) {
    const auto& map = bands[r].layout;
    const Vec g = local_gradient(theta.setups[r], local_shape(theta.Phi, map), bands[r]);
    const int n_r = map.channels();
    grad.segment(static_cast<Eigen::Index>(r) * nx, nx) += g.head(nx);
    for (int i = 0; i < m; ++i)
      for (int u = 0; u < n_r; ++u)
        grad(phi_off + i * n + map.tau[static_cast<std::size_t>(u)]) += g(nx + i * n_r + u);
  }
  return grad;
}

GlobalHessian assemble(const std::vector<LocalHessian>& locals,
                       const std::vector<SelectionMap>& maps) {
  if (locals.empty() || locals.size() != maps.size())
    throw ConfigError("assemble: need one local Hessian per selection map");
  const int nx = static_cast<int>(locals.front().H_x.rows());
  const int m = static_cast<int>(std::lround(std::sqrt(static_cast<double>(nx)))) - 1;
  const int n = maps.front().n_global;
  const int ns = static_cast<int>(locals.size());
  const int phi_off = ns * nx;
  std::vector<Eigen::Triplet<double>> trip;
  for (int r = 0; r < ns; ++r) {
    const auto& L = locals[static_cast<std::size_t>(r)];
    const auto& map = maps[static_cast<std::size_t>(r)];
    map.validate();
    if (map.n_global != n) throw ConfigError("assemble: selection maps disagree on n");
    const int n_r = map.channels();
    if (L.H_x.rows() != nx || L.H_Phi.rows() != m * n_r || L.H_xPhi.cols() != m * n_r)
      throw ConfigError("assemble: local Hessian of setup " + std::to_string(r + 1) +
                        " does not match its selection map");
    const int x_off = r * nx;
    for (int a = 0; a < nx; ++a)
      for (int b = 0; b < nx; ++b) trip.emplace_back(x_off + a, x_off + b, L.H_x(a, b));
    std::vector<int> global(static_cast<std::size_t>(m * n_r));
    for (int i = 0; i < m; ++i)
      for (int u = 0; u < n_r; ++u)
        global[static_cast<std::size_t>(i * n_r + u)] = phi_off + i * n + map.tau[static_cast<std::size_t>(u)];
    for (int a = 0; a < nx; ++a)
      for (int c = 0; c < m * n_r; ++c) {
        const int gc = global[static_cast<std::size_t>(c)];
        trip.emplace_back(x_off + a, gc, L.H_xPhi(a, c));
        trip.emplace_back(gc, x_off + a, L.H_xPhi(a, c));
      }
    for (int c = 0; c < m * n_r; ++c)
      for (int d = 0; d < m * n_r; ++d)
        trip.emplace_back(global[static_cast<std::size_t>(c)], global[static_cast<std::size_t>(d)],
                          L.H_Phi(c, d));
  }
  GlobalHessian out;
  out.n_setups = ns;
  out.modes = m;
  out.n_dofs = n;
  const int total = phi_off + m * n;
  out.H.resize(total, total);
  out.H.setFromTriplets(trip.begin(), trip.end());
  out.H.makeCompressed();
  return out;
}

Mat constraint_gradient(const ThetaVector& theta) {
  const int m = theta.modes();
  const int n = theta.n_dofs();
  const int phi_off = theta.n_setups() * (m + 1) * (m + 1);
  Mat g = Mat::Zero(m, theta.n_params());
  for (int i = 0; i < m; ++i) g.block(i, phi_off + i * n, 1, n) = theta.Phi.col(i).transpose();
  return g;
}

Mat constrained_inverse(const Mat& H, const ThetaVector& theta) {
  const int m = theta.modes();
  const int n = theta.n_dofs();
  const int total = theta.n_params();
  if (H.rows() != total || H.cols() != total)
    throw ConfigError("constrained_inverse: Hessian size does not match the parameter set");
  const int phi_off = theta.n_setups() * (m + 1) * (m + 1);

  // Reflector per mode mapping phi_i onto the first axis of its segment.
  std::vector<Vec> refl(static_cast<std::size_t>(m));
  std::vector<double> beta(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double nrm = theta.Phi.col(i).norm();
    if (!(nrm > 0.0)) throw NumericalError("constrained_inverse: zero mode shape column");
    Vec v = theta.Phi.col(i) / nrm;
    v(0) += v(0) >= 0.0 ? 1.0 : -1.0;
    refl[static_cast<std::size_t>(i)] = v;
    beta[static_cast<std::size_t>(i)] = 2.0 / v.squaredNorm();
  }
  auto reflect_both = [&](Mat& a) {
    for (int i = 0; i < m; ++i) {
      const Vec& v = refl[static_cast<std::size_t>(i)];
      const double b = beta[static_cast<std::size_t>(i)];
      const int s = phi_off + i * n;
      const Vec av = a.middleCols(s, n) * v;
      a.middleCols(s, n).noalias() -= b * av * v.transpose();
      const Vec va = a.middleRows(s, n).transpose() * v;
      a.middleRows(s, n).noalias() -= b * v * va.transpose();
    }
  };

  Mat ph = H;
  reflect_both(ph);
  std::vector<int> keep;
  keep.reserve(static_cast<std::size_t>(total - m));
  for (int j = 0; j < total; ++j) {
    const bool dropped = j >= phi_off && (j - phi_off) % n == 0;
    if (!dropped) keep.push_back(j);
  }
  const int nk = static_cast<int>(keep.size());
  Mat X(nk, nk);
  for (int a = 0; a < nk; ++a)
    for (int b = 0; b < nk; ++b) X(a, b) = ph(keep[static_cast<std::size_t>(a)], keep[static_cast<std::size_t>(b)]);
  X = 0.5 * (X + X.transpose()).eval();
  Eigen::LLT<Mat> llt(X);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Mat> es(X, Eigen::EigenvaluesOnly);
    throw NumericalError("projected Hessian is not positive definite (most negative eigenvalue " +
                         std::to_string(es.eigenvalues()(0)) +
                         "); the MPV may not be converged or the band may be mis-selected");
  }
  const Mat Xinv = llt.solve(Mat::Identity(nk, nk));
  Mat c = Mat::Zero(total, total);
  for (int a = 0; a < nk; ++a)
    for (int b = 0; b < nk; ++b) c(keep[static_cast<std::size_t>(a)], keep[static_cast<std::size_t>(b)]) = Xinv(a, b);
  reflect_both(c);
  return 0.5 * (c + c.transpose());
}

Mat constrained_inverse(const GlobalHessian& H, const ThetaVector& theta) {
  return constrained_inverse(H.dense(), theta);
}

double mac(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& b) {
  const double den = a.squaredNorm() * b.squaredNorm();
  if (!(den > 0.0)) throw NumericalError("mac: zero vector");
  const double dot = a.dot(b);
  return dot * dot / den;
}

PosteriorResult summarize(const Mat& cov, const ThetaVector& theta, const PcmOptions& opts) {
  const int m = theta.modes();
  const int n = theta.n_dofs();
  const int nxs = theta.n_setups() * (m + 1) * (m + 1);
  PosteriorResult out;
  out.labels = parameter_labels(theta.n_setups(), m, n);
  out.mpv = encode(theta);
  out.std_dev = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.cov_of_variation.resize(nxs);
  for (int j = 0; j < nxs; ++j)
    out.cov_of_variation(j) = out.mpv(j) != 0.0 ? out.std_dev(j) / std::abs(out.mpv(j))
                                                 : std::numeric_limits<double>::quiet_NaN();
  out.shape_cov = cov.bottomRightCorner(m * n, m * n);
  out.shape_uncertainty.resize(m);
  for (int i = 0; i < m; ++i) {
    out.shape_cov_per_mode.push_back(out.shape_cov.block(i * n, i * n, n, n));
    out.shape_uncertainty(i) = std::sqrt(std::max(0.0, out.shape_cov_per_mode.back().trace()));
  }
  if (opts.reference_shapes) {
    const Mat& ref = *opts.reference_shapes;
    if (ref.rows() != n || ref.cols() != m)
      throw ConfigError("reference shapes must be n x m");
    out.mac.resize(m);
    for (int i = 0; i < m; ++i) out.mac(i) = mac(theta.Phi.col(i), ref.col(i));
  }
  if (opts.keep_full) out.cov = cov;
  return out;
}

PosteriorResult pcm(const ThetaVector& theta_hat, const std::vector<SetupBand>& bands,
                    const PcmOptions& opts) {
  if (bands.size() != theta_hat.setups.size()) throw ConfigError("pcm: setup count mismatch");
  std::vector<LocalHessian> locals;
  std::vector<SelectionMap> maps;
  for (std::size_t r = 0; r < bands.size(); ++r) {
    try {
      locals.push_back(local_hessian(theta_hat.setups[r], local_shape(theta_hat.Phi, bands[r].layout),
                                     bands[r]));
    } catch (const NumericalError& e) {
      throw NumericalError("local Hessian, setup " + std::to_string(r + 1) + ": " + e.what());
    }
    maps.push_back(bands[r].layout);
  }
  const GlobalHessian global = assemble(locals, maps);
  Mat cov;
  try {
    cov = constrained_inverse(global, theta_hat);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("constrained inverse: ") + e.what());
  }
  return summarize(cov, theta_hat, opts);
}

}  // namespace msoma
