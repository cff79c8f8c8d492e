#include "msoma/em_mpv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>

#include "msoma/mat_kit.hpp"
#include "msoma/pcm_fast.hpp"

namespace msoma {
namespace {

// Q-terms that depend on (f, zeta) for one setup with S held fixed:
// sum_k Re(g^T M_k conj(g)) - sum_i ln|g_i|^2, g = c_k u_k.
struct FzLine {
  double f_k;
  cplx c;
  CMat M;
};

struct FzEval {
  double value = 0.0;
  Vec grad;
  Mat hess;
};

FzEval fz_objective(const Vec& f, const Vec& zeta, const std::vector<FzLine>& lines, bool derivs) {
  const int m = static_cast<int>(f.size());
  FzEval out;
  if (derivs) {
    out.grad = Vec::Zero(2 * m);
    out.hess = Mat::Zero(2 * m, 2 * m);
  }
  CVec u(m), g(m), du[2] = {CVec(m), CVec(m)};
  for (const auto& ln : lines) {
    const double fk = ln.f_k;
    for (int i = 0; i < m; ++i) {
      const double b = f(i) / fk;
      u(i) = cplx(1.0 - b * b, -2.0 * zeta(i) * b);
      du[0](i) = -cplx(2.0 * f(i) / (fk * fk), 2.0 * zeta(i) / fk);
      du[1](i) = cplx(0.0, -2.0 * b);
    }
    g = ln.c * u;
    const CVec v = ln.M * g.conjugate();
    out.value += (g.transpose() * v)(0).real();
    for (int i = 0; i < m; ++i) out.value -= std::log(std::norm(g(i)));
    if (!derivs) continue;
    const double c2 = std::norm(ln.c);
    const cplx d2[2][2] = {{-2.0 / (fk * fk), cplx(0.0, -2.0 / fk)}, {cplx(0.0, -2.0 / fk), 0.0}};
    for (int a = 0; a < 2; ++a)
      for (int i = 0; i < m; ++i) {
        const int p = a * m + i;
        out.grad(p) += 2.0 * (ln.c * du[a](i) * v(i)).real() - 2.0 * (du[a](i) / u(i)).real();
        for (int b = 0; b < 2; ++b)
          for (int l = 0; l < m; ++l) {
            double val = 2.0 * (c2 * du[a](i) * ln.M(i, l) * std::conj(du[b](l))).real();
            if (i == l)
              val += 2.0 * (ln.c * d2[a][b] * v(i)).real() -
                     2.0 * (d2[a][b] / u(i) - du[a](i) * du[b](i) / (u(i) * u(i))).real();
            out.hess(p, b * m + l) += val;
          }
      }
  }
  if (derivs) out.hess = 0.5 * (out.hess + out.hess.transpose()).eval();
  return out;
}

struct Bounds {
  double f_lo, f_hi, z_lo, z_hi;
};

Bounds setup_bounds(const SetupBand& band, const EmSettings& s) {
  return {(1.0 - s.freq_margin) * band.freqs(0), (1.0 + s.freq_margin) * band.freqs(band.n_lines() - 1),
          s.zeta_min, s.zeta_max};
}

void newton_fz(SetupParams& x, const std::vector<FzLine>& lines, const Bounds& bd, int max_iter) {
  const int m = x.modes();
  auto project = [&](Vec& f, Vec& z) {
    f = f.cwiseMax(bd.f_lo).cwiseMin(bd.f_hi);
    z = z.cwiseMax(bd.z_lo).cwiseMin(bd.z_hi);
  };
  Vec f = x.f, z = x.zeta;
  project(f, z);
  FzEval cur = fz_objective(f, z, lines, true);
  // Projection of the incoming point may itself raise the objective; keep
  // the original in that case.
  {
    const FzEval orig = fz_objective(x.f, x.zeta, lines, false);
    if (cur.value > orig.value) {
      f = x.f;
      z = x.zeta;
      cur = fz_objective(f, z, lines, true);
    }
  }
  for (int it = 0; it < max_iter; ++it) {
    bool moved = false;
    double lambda = 0.0;
    const Vec scale = cur.hess.diagonal().cwiseAbs().cwiseMax(1e-12);
    for (int attempt = 0; attempt < 8 && !moved; ++attempt) {
      Mat h = cur.hess;
      h.diagonal() += lambda * scale;
      Eigen::LLT<Mat> llt(h);
      if (llt.info() != Eigen::Success) {
        lambda = lambda == 0.0 ? 1e-6 : lambda * 10.0;
        continue;
      }
      const Vec step = -llt.solve(cur.grad);
      double alpha = 1.0;
      for (int bt = 0; bt < 30; ++bt, alpha *= 0.5) {
        Vec ft = f + alpha * step.head(m);
        Vec zt = z + alpha * step.tail(m);
        project(ft, zt);
        const FzEval trial = fz_objective(ft, zt, lines, false);
        if (std::isfinite(trial.value) && trial.value < cur.value) {
          const double change = std::max(((ft - f).array() / f.array()).abs().maxCoeff(),
                                         ((zt - z).array() / z.array()).abs().maxCoeff());
          const double gain = cur.value - trial.value;
          f = ft;
          z = zt;
          cur = fz_objective(f, z, lines, true);
          moved = true;
          if (change < 1e-13 || gain < 1e-15 * std::max(1.0, std::abs(cur.value))) it = max_iter;
          break;
        }
      }
      if (!moved) lambda = lambda == 0.0 ? 1e-6 : lambda * 10.0;
    }
    if (!moved) break;
  }
  x.f = f;
  x.zeta = z;
}

bool within_bounds(const ThetaVector& theta, const std::vector<SetupBand>& bands,
                   const EmSettings& s) {
  for (std::size_t r = 0; r < theta.setups.size(); ++r) {
    const auto& x = theta.setups[r];
    const Bounds bd = setup_bounds(bands[r], s);
    if (!(x.Se > 0.0) || !std::isfinite(x.Se)) return false;
    if ((x.f.array() < bd.f_lo).any() || (x.f.array() > bd.f_hi).any()) return false;
    if ((x.zeta.array() < bd.z_lo).any() || (x.zeta.array() > bd.z_hi).any()) return false;
    if (!x.S.allFinite()) return false;
  }
  for (int i = 0; i < theta.modes(); ++i)
    if (!(theta.Phi.col(i).norm() > 0.0)) return false;
  return theta.Phi.allFinite();
}

bool s_positive_definite(const ThetaVector& theta) {
  for (const auto& x : theta.setups) {
    Eigen::LLT<CMat> llt(x.S);
    if (llt.info() != Eigen::Success) return false;
  }
  return true;
}

bool params_valid(const ThetaVector& theta, const std::vector<SetupBand>& bands,
                  const EmSettings& s) {
  return within_bounds(theta, bands, s) && s_positive_definite(theta);
}

double safe_nllf(const ThetaVector& theta, const std::vector<SetupBand>& bands) {
  try {
    return nllf(theta, bands);
  } catch (const NumericalError&) {
    return std::numeric_limits<double>::infinity();
  }
}

struct Step {
  ThetaVector theta;
  double nllf;
};

// Newton step on the tangent space of the unit-norm constraints. Eigenvalues
// of the projected Hessian enter by magnitude so saddle directions still
// descend; the step is halved until the nllf drops.
std::optional<Step> newton_step(const ThetaVector& theta, double L,
                                const std::vector<SetupBand>& bands, const EmSettings& s) {
  Vec g;
  Mat H;
  try {
    g = nllf_gradient(theta, bands);
    std::vector<LocalHessian> locals;
    std::vector<SelectionMap> maps;
    for (std::size_t r = 0; r < bands.size(); ++r) {
      locals.push_back(local_hessian(theta.setups[r], local_shape(theta.Phi, bands[r].layout), bands[r]));
      maps.push_back(bands[r].layout);
    }
    H = assemble(locals, maps).dense();
  } catch (const NumericalError&) {
    return std::nullopt;
  }
  const Mat U = mat_kit::nullspace_basis(constraint_gradient(theta));
  Mat Hr = U.transpose() * H * U;
  Hr = 0.5 * (Hr + Hr.transpose()).eval();
  const Eigen::SelfAdjointEigenSolver<Mat> es(Hr);
  Vec lam = es.eigenvalues().cwiseAbs();
  lam = lam.cwiseMax(1e-10 * lam.maxCoeff());
  const Vec coeff = es.eigenvectors().transpose() * (U.transpose() * g);
  const Vec step = -U * (es.eigenvectors() * coeff.cwiseQuotient(lam));
  if (!step.allFinite()) return std::nullopt;

  const Vec base = encode(theta);
  double alpha = 1.0;
  for (int i = 0; i < 30; ++i, alpha *= 0.5) {
    ThetaVector cand = decode(base + alpha * step, theta.n_setups(), theta.modes(), theta.n_dofs());
    if (!within_bounds(cand, bands, s)) continue;
    cand = renormalize(cand);
    const double Lc = safe_nllf(cand, bands);
    if (Lc < L) return Step{std::move(cand), Lc};
  }
  return std::nullopt;
}

void check_inputs(const std::vector<SetupBand>& bands) {
  if (bands.empty()) throw ConfigError("no setups");
  std::vector<SelectionMap> maps;
  for (const auto& b : bands) {
    if (b.n_lines() < 1) throw ConfigError("setup " + std::to_string(b.setup + 1) + ": empty band");
    maps.push_back(b.layout);
  }
  check_coverage(maps);
}

}  // namespace

void EmSettings::validate() const {
  if (max_iter < 1) throw ConfigError("em.max_iter must be >= 1");
  if (!(tol_rel_nllf > 0.0) || !(tol_param > 0.0)) throw ConfigError("em tolerances must be > 0");
  if (newton_max_iter < 1) throw ConfigError("em.newton_max_iter must be >= 1");
  if (!(zeta_min > 0.0 && zeta_min < zeta_max && zeta_max < 1.0))
    throw ConfigError("em damping bounds must satisfy 0 < zeta_min < zeta_max < 1");
  if (!(freq_margin >= 0.0 && freq_margin < 1.0)) throw ConfigError("em.freq_margin must lie in [0, 1)");
  if (!(polish_switch > 0.0)) throw ConfigError("em.polish_switch must be > 0");
}

ThetaVector initialize(const std::vector<SetupBand>& bands, const Vec& f0) {
  check_inputs(bands);
  const int m = static_cast<int>(f0.size());
  if (m < 1) throw ConfigError("initialize: at least one initial frequency required");
  for (int i = 0; i < m; ++i) {
    if (!(f0(i) > 0.0)) throw ConfigError("initialize: initial frequencies must be > 0");
    if (i > 0 && !(f0(i) > f0(i - 1)))
      throw ConfigError("initialize: initial frequencies must be strictly increasing");
  }
  for (const auto& b : bands) {
    if (b.channels() < m)
      throw ConfigError("setup " + std::to_string(b.setup + 1) + " has " + std::to_string(b.channels()) +
                        " channels, fewer than the " + std::to_string(m) + " modes requested");
    if (f0(0) < b.freqs(0) || f0(m - 1) > b.freqs(b.n_lines() - 1))
      throw ConfigError("setup " + std::to_string(b.setup + 1) + ": initial frequencies outside the band");
  }
  const int ns = static_cast<int>(bands.size());
  const int n = bands.front().layout.n_global;

  // Leading left singular vectors of [Re F, Im F] per setup.
  std::vector<Mat> basis(static_cast<std::size_t>(ns));
  for (int r = 0; r < ns; ++r) {
    const auto& F = bands[static_cast<std::size_t>(r)].F;
    const Mat gram = (F * F.adjoint()).real();
    Eigen::SelfAdjointEigenSolver<Mat> es(gram);
    basis[static_cast<std::size_t>(r)] = es.eigenvectors().rightCols(m).rowwise().reverse();
  }

  // Stitch local bases through DoFs shared with setups already placed.
  Mat acc = Mat::Zero(n, m);
  Vec count = Vec::Zero(n);
  std::vector<bool> placed(static_cast<std::size_t>(ns), false);
  for (int done = 0; done < ns; ++done) {
    int best = -1;
    int best_shared = -1;
    for (int r = 0; r < ns; ++r) {
      if (placed[static_cast<std::size_t>(r)]) continue;
      int shared = 0;
      for (int d : bands[static_cast<std::size_t>(r)].layout.tau) shared += count(d) > 0 ? 1 : 0;
      if (shared > best_shared) {
        best_shared = shared;
        best = r;
      }
    }
    const auto& tau = bands[static_cast<std::size_t>(best)].layout.tau;
    const Mat& U = basis[static_cast<std::size_t>(best)];
    Mat T = Mat::Identity(m, m);
    if (done > 0 && best_shared >= m) {
      Mat a(best_shared, m), b(best_shared, m);
      int row = 0;
      for (std::size_t u = 0; u < tau.size(); ++u) {
        if (count(tau[u]) == 0) continue;
        a.row(row) = U.row(static_cast<Eigen::Index>(u));
        b.row(row) = acc.row(tau[u]) / count(tau[u]);
        ++row;
      }
      T = a.colPivHouseholderQr().solve(b);
    }
    const Mat aligned = U * T;
    for (std::size_t u = 0; u < tau.size(); ++u) {
      acc.row(tau[u]) += aligned.row(static_cast<Eigen::Index>(u));
      count(tau[u]) += 1.0;
    }
    placed[static_cast<std::size_t>(best)] = true;
  }
  ThetaVector theta;
  theta.Phi = acc.array().colwise() / count.array();
  for (int i = 0; i < m; ++i) {
    const double nrm = theta.Phi.col(i).norm();
    if (!(nrm > 0.0)) throw NumericalError("initialize: degenerate mode shape estimate");
    theta.Phi.col(i) /= nrm;
  }

  for (int r = 0; r < ns; ++r) {
    const auto& band = bands[static_cast<std::size_t>(r)];
    const Mat& U = basis[static_cast<std::size_t>(r)];
    const int n_r = band.channels();
    SetupParams x;
    x.f = f0;
    x.zeta = Vec::Constant(m, 0.01);

    // Noise level: per-line energy outside the signal subspace.
    std::vector<double> resid(static_cast<std::size_t>(band.n_lines()));
    double mean_energy = 0.0;
    for (int k = 0; k < band.n_lines(); ++k) {
      const CVec Fk = band.F.col(k);
      const double total = Fk.squaredNorm();
      mean_energy += total / (n_r * band.n_lines());
      resid[static_cast<std::size_t>(k)] = n_r > m ? (total - (U.transpose() * Fk).squaredNorm()) / (n_r - m) : 0.0;
    }
    std::nth_element(resid.begin(), resid.begin() + static_cast<long>(resid.size() / 2), resid.end());
    double se = resid[resid.size() / 2];
    if (!(se > 1e-6 * mean_energy)) se = 1e-3 * mean_energy;
    x.Se = se;

    const Mat phi_r = local_shape(theta.Phi, band.layout);
    x.S = CMat::Zero(m, m);
    for (int i = 0; i < m; ++i) {
      int k0 = 0;
      for (int k = 1; k < band.n_lines(); ++k)
        if (std::abs(band.freqs(k) - f0(i)) < std::abs(band.freqs(k0) - f0(i))) k0 = k;
      double energy = 0.0;
      int cnt = 0;
      for (int k = std::max(0, k0 - 2); k <= std::min(band.n_lines() - 1, k0 + 2); ++k, ++cnt)
        energy += (U.transpose() * band.F.col(k)).squaredNorm();
      energy /= cnt;
      const double sig = std::max(energy - m * se, 0.1 * energy);
      const double local2 = std::max(phi_r.col(i).squaredNorm(), 1e-3);
      const double h2 = std::norm(frf(f0(i), 0.01, band.freqs(k0), band.q));
      x.S(i, i) = sig / (h2 * local2 * m);
    }
    theta.setups.push_back(x);
  }
  return theta;
}

MomentTable e_step(const ThetaVector& theta, const std::vector<SetupBand>& bands) {
  MomentTable out;
  out.reserve(bands.size());
  for (std::size_t r = 0; r < bands.size(); ++r)
    out.push_back(latent_moments(theta.setups[r], local_shape(theta.Phi, bands[r].layout), bands[r]));
  return out;
}

ThetaVector m_step(const MomentTable& moments, const std::vector<SetupBand>& bands,
                   const ThetaVector& theta_prev, const EmSettings& settings) {
  const int ns = static_cast<int>(bands.size());
  const int m = theta_prev.modes();
  const int n = theta_prev.n_dofs();
  if (static_cast<int>(moments.size()) != ns || theta_prev.n_setups() != ns)
    throw ConfigError("m_step: setup count mismatch");
  ThetaVector next = theta_prev;

  // Sufficient statistics per setup.
  std::vector<Mat> re_w(static_cast<std::size_t>(ns));   // sum_k Re W_k
  std::vector<Mat> cross(static_cast<std::size_t>(ns));  // sum_k Re(conj(F_k) w_k^T), n_r x m
  std::vector<double> energy(static_cast<std::size_t>(ns));
  for (int r = 0; r < ns; ++r) {
    const auto& band = bands[static_cast<std::size_t>(r)];
    const auto& mo = moments[static_cast<std::size_t>(r)];
    if (static_cast<int>(mo.size()) != band.n_lines()) throw ConfigError("m_step: moment count mismatch");
    Mat w_sum = Mat::Zero(m, m);
    Mat c_sum = Mat::Zero(band.channels(), m);
    double e = 0.0;
    for (int k = 0; k < band.n_lines(); ++k) {
      const CVec Fk = band.F.col(k);
      w_sum += mo[static_cast<std::size_t>(k)].W.real();
      c_sum += (Fk.conjugate() * mo[static_cast<std::size_t>(k)].w.transpose()).real();
      e += Fk.squaredNorm();
    }
    re_w[static_cast<std::size_t>(r)] = 0.5 * (w_sum + w_sum.transpose());
    cross[static_cast<std::size_t>(r)] = c_sum;
    energy[static_cast<std::size_t>(r)] = e;
  }

  // Global mode shape: one m x m system per DoF.
  std::vector<Mat> lhs(static_cast<std::size_t>(n), Mat::Zero(m, m));
  Mat rhs = Mat::Zero(n, m);
  for (int r = 0; r < ns; ++r) {
    const auto& tau = bands[static_cast<std::size_t>(r)].layout.tau;
    const double se = theta_prev.setups[static_cast<std::size_t>(r)].Se;
    for (std::size_t u = 0; u < tau.size(); ++u) {
      lhs[static_cast<std::size_t>(tau[u])] += re_w[static_cast<std::size_t>(r)] / se;
      rhs.row(tau[u]) += cross[static_cast<std::size_t>(r)].row(static_cast<Eigen::Index>(u)) / se;
    }
  }
  for (int d = 0; d < n; ++d) {
    Eigen::LLT<Mat> llt(lhs[static_cast<std::size_t>(d)]);
    if (llt.info() != Eigen::Success)
      throw NumericalError("mode shape update singular at DoF " + std::to_string(d + 1) +
                           "; check sensor coverage and mode identifiability");
    next.Phi.row(d) = llt.solve(rhs.row(d).transpose()).transpose();
  }

  for (int r = 0; r < ns; ++r) {
    const auto& band = bands[static_cast<std::size_t>(r)];
    const auto& mo = moments[static_cast<std::size_t>(r)];
    auto& x = next.setups[static_cast<std::size_t>(r)];
    const Mat phi_r = local_shape(next.Phi, band.layout);
    const double nf = band.n_lines();

    const double resid = energy[static_cast<std::size_t>(r)] -
                         2.0 * phi_r.cwiseProduct(cross[static_cast<std::size_t>(r)]).sum() +
                         (phi_r.transpose() * phi_r).cwiseProduct(re_w[static_cast<std::size_t>(r)]).sum();
    x.Se = resid / (band.channels() * nf);
    if (!(x.Se > 0.0)) throw NumericalError("prediction-error update is not positive");

    std::vector<cplx> cs(static_cast<std::size_t>(band.n_lines()));
    CMat s_new = CMat::Zero(m, m);
    for (int k = 0; k < band.n_lines(); ++k) {
      const double fk = band.freqs(k);
      cs[static_cast<std::size_t>(k)] =
          band.q == 0 ? cplx(1.0, 0.0) : std::pow(cplx(0.0, 2.0 * std::numbers::pi * fk), band.q);
      CVec g(m);
      for (int i = 0; i < m; ++i) g(i) = 1.0 / frf(x.f(i), x.zeta(i), fk, band.q);
      s_new += g.asDiagonal() * mo[static_cast<std::size_t>(k)].W * g.conjugate().asDiagonal();
    }
    s_new /= nf;
    x.S = 0.5 * (s_new + s_new.adjoint());

    const Eigen::SelfAdjointEigenSolver<CMat> es(x.S);
    const Vec lam_abs = es.eigenvalues().cwiseAbs();
    if (!(lam_abs.minCoeff() > 1e-13 * lam_abs.maxCoeff()))
      throw NumericalError("modal force PSD update is singular");
    const CMat sinv_t = (es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
                         es.eigenvectors().adjoint())
                            .transpose();
    std::vector<FzLine> lines;
    lines.reserve(static_cast<std::size_t>(band.n_lines()));
    for (int k = 0; k < band.n_lines(); ++k)
      lines.push_back({band.freqs(k), cs[static_cast<std::size_t>(k)],
                       sinv_t.cwiseProduct(mo[static_cast<std::size_t>(k)].W)});
    newton_fz(x, lines, setup_bounds(band, settings), settings.newton_max_iter);
  }
  return next;
}

ThetaVector renormalize(const ThetaVector& theta) {
  ThetaVector out = theta;
  for (int i = 0; i < theta.modes(); ++i) {
    const double d = theta.Phi.col(i).norm();
    if (!(d > 0.0) || !std::isfinite(d))
      throw NumericalError("renormalize: mode shape column " + std::to_string(i + 1) + " is zero");
    out.Phi.col(i) /= d;
    for (auto& x : out.setups) {
      x.S.row(i) *= d;
      x.S.col(i) *= d;
    }
  }
  return out;
}

ThetaVector sort_modes(const ThetaVector& theta) {
  const int m = theta.modes();
  Vec mean_f = Vec::Zero(m);
  for (const auto& x : theta.setups) mean_f += x.f;
  std::vector<int> order(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return mean_f(a) < mean_f(b); });
  ThetaVector out = theta;
  for (int i = 0; i < m; ++i) {
    const int src = order[static_cast<std::size_t>(i)];
    out.Phi.col(i) = theta.Phi.col(src);
    for (std::size_t r = 0; r < theta.setups.size(); ++r) {
      const auto& x = theta.setups[r];
      auto& y = out.setups[r];
      y.f(i) = x.f(src);
      y.zeta(i) = x.zeta(src);
      for (int j = 0; j < m; ++j) y.S(i, j) = x.S(src, order[static_cast<std::size_t>(j)]);
    }
  }
  return out;
}

double max_param_change(const ThetaVector& a, const ThetaVector& b) {
  double out = 0.0;
  for (std::size_t r = 0; r < a.setups.size(); ++r) {
    const auto& x = a.setups[r];
    const auto& y = b.setups[r];
    out = std::max(out, ((x.f - y.f).array() / x.f.array()).abs().maxCoeff());
    out = std::max(out, ((x.zeta - y.zeta).array() / x.zeta.array()).abs().maxCoeff());
    out = std::max(out, (x.S - y.S).cwiseAbs().maxCoeff() / x.S.cwiseAbs().maxCoeff());
    out = std::max(out, std::abs(x.Se - y.Se) / x.Se);
  }
  out = std::max(out, (a.Phi - b.Phi).cwiseAbs().maxCoeff());
  return out;
}

MpvResult run_em(const std::vector<SetupBand>& bands, const Vec& f0, const EmSettings& settings) {
  return run_em(bands, initialize(bands, f0), settings);
}

MpvResult run_em(const std::vector<SetupBand>& bands, const ThetaVector& start,
                 const EmSettings& settings) {
  settings.validate();
  check_inputs(bands);
  if (start.n_setups() != static_cast<int>(bands.size()))
    throw ConfigError("run_em: starting point has the wrong number of setups");
  const int ns = start.n_setups();
  const int m = start.modes();
  const int n = start.n_dofs();

  MpvResult res;
  ThetaVector theta = renormalize(start);
  double L = nllf(theta, bands);
  res.nllf_trace.push_back(L);
  res.trace.push_back({0, L, 0.0, false});

  Vec older, old;  // flat encodings of the two previous iterates
  old = encode(theta);
  bool polish = settings.newton_polish && !s_positive_definite(theta);
  for (int it = 1; it <= settings.max_iter; ++it) {
    ThetaVector next;
    double L_next = L;
    bool accelerated = false;
    bool newton = false;

    if (polish) {
      if (auto step = newton_step(theta, L, bands, settings)) {
        next = std::move(step->theta);
        L_next = step->nllf;
        newton = true;
      } else {
        polish = false;
      }
    }

    if (!newton) {
      try {
        const auto moments = e_step(theta, bands);
        next = renormalize(m_step(moments, bands, theta, settings));
        L_next = safe_nllf(next, bands);
      } catch (const NumericalError&) {
        L_next = std::numeric_limits<double>::infinity();
      }
      // Outside the PSD cone of S the EM step loses its monotonicity; if it
      // fails to descend there is nothing left to gain from either route.
      if (!(L_next <= L)) {
        next = theta;
        L_next = L;
      }

      if (settings.acceleration == Acceleration::Parabolic && it % 3 == 0 && older.size() > 0) {
        const Vec t0 = older, t1 = old, t2 = encode(next);
        double best_L = L_next;
        ThetaVector best;
        for (int i = 0; i < 12; ++i) {
          const double t = 1.0 + std::pow(1.5, i);
          const Vec p = (1.0 - t) * (1.0 - t) * t0 + 2.0 * t * (1.0 - t) * t1 + t * t * t2;
          ThetaVector cand = decode(p, ns, m, n);
          if (!params_valid(cand, bands, settings)) break;
          cand = renormalize(cand);
          const double Lc = safe_nllf(cand, bands);
          if (!(Lc < best_L)) break;
          best_L = Lc;
          best = std::move(cand);
          accelerated = true;
        }
        if (accelerated) {
          next = std::move(best);
          L_next = best_L;
        }
      }
    }

    const double delta = max_param_change(theta, next);
    const double rel = std::abs(L - L_next) / std::max(1.0, std::abs(L));
    res.nllf_trace.push_back(L_next);
    res.trace.push_back({it, L_next, delta, accelerated, newton});
    res.iterations = it;
    older = old;
    old = encode(next);
    theta = std::move(next);
    L = L_next;
    if (rel < settings.tol_rel_nllf && delta < settings.tol_param) {
      res.converged = true;
      break;
    }
    if (!newton && settings.newton_polish && rel < settings.polish_switch) polish = true;
  }
  res.theta_hat = sort_modes(theta);
  res.nllf = L;
  try {
    res.grad_norm = nllf_gradient(res.theta_hat, bands).cwiseAbs().maxCoeff();
  } catch (const NumericalError&) {
    res.grad_norm = std::numeric_limits<double>::quiet_NaN();
  }
  return res;
}

}  // namespace msoma
