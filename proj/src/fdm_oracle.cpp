#include "msoma/fdm_oracle.hpp"

#include <cmath>
#include <string>

#include "msoma/likelihood.hpp"
#include "msoma/mat_kit.hpp"

namespace msoma {

void FdSettings::validate() const {
  if (!(rel_step > 0.0) || !(abs_step_floor > 0.0) || !(hessian_rel_step > 0.0))
    throw ConfigError("fd steps must be > 0");
}

double FdSettings::step(double value) const { return std::max(rel_step * std::abs(value), abs_step_floor); }

namespace {

double eval_checked(const ScalarFunction& fun, const Vec& x, Eigen::Index coord) {
  const double v = fun(x);
  if (!std::isfinite(v))
    throw NumericalError("finite difference: non-finite value when perturbing coordinate " +
                         std::to_string(coord + 1));
  return v;
}

Vec default_steps(const Vec& theta0, const FdSettings& s, double rel) {
  s.validate();
  Vec h(theta0.size());
  for (Eigen::Index i = 0; i < theta0.size(); ++i) h(i) = std::max(rel * std::abs(theta0(i)), s.abs_step_floor);
  return h;
}

void check_steps(const Vec& theta0, const Vec& h) {
  if (h.size() != theta0.size()) throw ConfigError("finite difference: one step per coordinate required");
  if (!((h.array() > 0.0).all() && h.allFinite())) throw ConfigError("finite difference: steps must be > 0");
}

}  // namespace

Vec fd_gradient(const ScalarFunction& fun, const Vec& theta0, const FdSettings& s) {
  return fd_gradient(fun, theta0, default_steps(theta0, s, s.rel_step));
}

Mat fd_hessian(const ScalarFunction& fun, const Vec& theta0, const FdSettings& s) {
  return fd_hessian(fun, theta0, default_steps(theta0, s, s.hessian_rel_step));
}

Mat fd_jacobian(const VectorFunction& fun, const Vec& theta0, const FdSettings& s) {
  return fd_jacobian(fun, theta0, default_steps(theta0, s, s.rel_step));
}

Vec fd_gradient(const ScalarFunction& fun, const Vec& theta0, const Vec& h) {
  check_steps(theta0, h);
  Vec grad(theta0.size());
  Vec x = theta0;
  for (Eigen::Index i = 0; i < theta0.size(); ++i) {
    x(i) = theta0(i) + h(i);
    const double fp = eval_checked(fun, x, i);
    x(i) = theta0(i) - h(i);
    const double fm = eval_checked(fun, x, i);
    x(i) = theta0(i);
    grad(i) = (fp - fm) / (2.0 * h(i));
  }
  return grad;
}

Mat fd_hessian(const ScalarFunction& fun, const Vec& theta0, const Vec& h) {
  check_steps(theta0, h);
  const Eigen::Index p = theta0.size();
  Mat hess(p, p);
  Vec x = theta0;
  const double f0 = eval_checked(fun, x, 0);
  for (Eigen::Index i = 0; i < p; ++i) {
    x(i) = theta0(i) + h(i);
    const double fp = eval_checked(fun, x, i);
    x(i) = theta0(i) - h(i);
    const double fm = eval_checked(fun, x, i);
    x(i) = theta0(i);
    hess(i, i) = (fp - 2.0 * f0 + fm) / (h(i) * h(i));
    for (Eigen::Index j = i + 1; j < p; ++j) {
      double acc = 0.0;
      for (int si = -1; si <= 1; si += 2)
        for (int sj = -1; sj <= 1; sj += 2) {
          x(i) = theta0(i) + si * h(i);
          x(j) = theta0(j) + sj * h(j);
          acc += si * sj * eval_checked(fun, x, j);
        }
      x(i) = theta0(i);
      x(j) = theta0(j);
      hess(i, j) = hess(j, i) = acc / (4.0 * h(i) * h(j));
    }
  }
  return 0.5 * (hess + hess.transpose());
}

Mat fd_jacobian(const VectorFunction& fun, const Vec& theta0, const Vec& h) {
  check_steps(theta0, h);
  Vec x = theta0;
  Mat jac;
  for (Eigen::Index i = 0; i < theta0.size(); ++i) {
    x(i) = theta0(i) + h(i);
    const Vec fp = fun(x);
    x(i) = theta0(i) - h(i);
    const Vec fm = fun(x);
    x(i) = theta0(i);
    if (jac.size() == 0) jac.resize(fp.size(), theta0.size());
    jac.col(i) = (fp - fm) / (2.0 * h(i));
  }
  return jac;
}

Vec fd_steps(const ThetaVector& theta, const FdSettings& s) {
  s.validate();
  const int m = theta.modes();
  const int n = theta.n_dofs();
  const XLayout lay{m};
  Vec scale(theta.n_params());
  for (int r = 0; r < theta.n_setups(); ++r) {
    const auto& x = theta.setups[static_cast<std::size_t>(r)];
    const int off = r * lay.size();
    for (int i = 0; i < m; ++i) {
      scale(off + lay.f(i)) = std::abs(x.f(i));
      scale(off + lay.zeta(i)) = std::abs(x.zeta(i));
    }
    for (int p = 0; p < m * m; ++p) {
      const auto e = s_chart::basis(m, p).front();
      scale(off + lay.s(p)) = std::sqrt(std::abs(x.S(e.row, e.row).real() * x.S(e.col, e.col).real()));
    }
    scale(off + lay.se()) = std::abs(x.Se);
  }
  const int phi_off = theta.n_setups() * lay.size();
  for (int i = 0; i < m; ++i) {
    const double rms = theta.Phi.col(i).norm() / std::sqrt(static_cast<double>(n));
    for (int d = 0; d < n; ++d) scale(phi_off + i * n + d) = std::max(std::abs(theta.Phi(d, i)), rms);
  }
  Vec h(scale.size());
  for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = std::max(s.rel_step * scale(i), s.abs_step_floor);
  return h;
}

ScalarFunction nllf_function(const std::vector<SetupBand>& bands, int modes, int n_dofs) {
  const int ns = static_cast<int>(bands.size());
  return [&bands, ns, modes, n_dofs](const Vec& v) {
    return nllf(decode(v, ns, modes, n_dofs), bands);
  };
}

namespace {

Mat separable_fd_hessian(const ThetaVector& theta, const std::vector<SetupBand>& bands,
                         const Vec& all_steps) {
  const int ns = theta.n_setups();
  const int m = theta.modes();
  const int n = theta.n_dofs();
  const int nx = (m + 1) * (m + 1);
  const int phi_off = ns * nx;
  const Vec v0 = encode(theta);
  Mat hess = Mat::Zero(v0.size(), v0.size());
  for (int r = 0; r < ns; ++r) {
    const auto& band = bands[static_cast<std::size_t>(r)];
    std::vector<Eigen::Index> coords;
    for (int a = 0; a < nx; ++a) coords.push_back(r * nx + a);
    for (int i = 0; i < m; ++i)
      for (int d : band.layout.tau) coords.push_back(phi_off + i * n + d);
    const Eigen::Index p = static_cast<Eigen::Index>(coords.size());
    Vec sub0(p), steps(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      sub0(j) = v0(coords[static_cast<std::size_t>(j)]);
      steps(j) = all_steps(coords[static_cast<std::size_t>(j)]);
    }
    ScalarFunction term = [&, r](const Vec& sub) {
      Vec v = v0;
      for (Eigen::Index j = 0; j < sub.size(); ++j) v(coords[static_cast<std::size_t>(j)]) = sub(j);
      const ThetaVector t = decode(v, ns, m, n);
      return nllf_setup(t.setups[static_cast<std::size_t>(r)], local_shape(t.Phi, band.layout), band);
    };
    const Mat h = fd_hessian(term, sub0, steps);
    for (Eigen::Index a = 0; a < p; ++a)
      for (Eigen::Index b = 0; b < p; ++b)
        hess(coords[static_cast<std::size_t>(a)], coords[static_cast<std::size_t>(b)]) += h(a, b);
  }
  return hess;
}

}  // namespace

Mat nllf_fd_hessian(const ThetaVector& theta, const std::vector<SetupBand>& bands,
                    const FdSettings& s) {
  FdSettings hs = s;
  hs.rel_step = s.hessian_rel_step;
  const Vec steps = fd_steps(theta, hs);
  const Mat coarse = separable_fd_hessian(theta, bands, steps);
  if (!s.richardson) return coarse;
  const Mat fine = separable_fd_hessian(theta, bands, 0.5 * steps);
  return (4.0 * fine - coarse) / 3.0;
}

Mat pcm_fdm(const Mat& H, const Mat& Ggrad, ConstraintRoute route) {
  if (H.rows() != H.cols() || H.cols() != Ggrad.cols())
    throw ConfigError("pcm_fdm: Hessian and constraint gradient sizes disagree");
  const Mat U = mat_kit::nullspace_basis(Ggrad);
  Mat X = U.transpose() * H * U;
  X = 0.5 * (X + X.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Mat> es(X);
  const Vec ev = es.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  if (ev(0) < -1e-10 * top)
    throw NumericalError("projected Hessian is indefinite (most negative eigenvalue " +
                         std::to_string(ev(0)) + ")");
  Mat inner;
  if (route == ConstraintRoute::Nullspace) {
    Eigen::LLT<Mat> llt(X);
    if (llt.info() != Eigen::Success) throw NumericalError("projected Hessian is singular");
    inner = llt.solve(Mat::Identity(X.rows(), X.cols()));
  } else {
    Eigen::JacobiSVD<Mat> svd(X, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec sv = svd.singularValues();
    Vec inv_sv = Vec::Zero(sv.size());
    for (Eigen::Index i = 0; i < sv.size(); ++i)
      if (sv(i) > 1e-10 * sv(0)) inv_sv(i) = 1.0 / sv(i);
    inner = svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose();
  }
  const Mat c = U * inner * U.transpose();
  return 0.5 * (c + c.transpose());
}

}  // namespace msoma
