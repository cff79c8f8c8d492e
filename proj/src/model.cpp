#include "msoma/model.hpp"

#include <cmath>
#include <numbers>
#include <set>

#include "msoma/mat_kit.hpp"

namespace msoma {

void SelectionMap::validate() const {
  if (n_global < 1) throw ConfigError("selection map: number of global DoFs must be >= 1");
  if (tau.empty()) throw ConfigError("selection map: no channels");
  std::set<int> seen;
  for (std::size_t u = 0; u < tau.size(); ++u) {
    const int d = tau[u];
    if (d < 0 || d >= n_global)
      throw ConfigError("selection map: channel " + std::to_string(u + 1) + " maps to DoF " +
                        std::to_string(d + 1) + " outside 1.." + std::to_string(n_global));
    if (!seen.insert(d).second)
      throw ConfigError("selection map: DoF " + std::to_string(d + 1) +
                        " measured twice within one setup");
  }
}

void check_coverage(const std::vector<SelectionMap>& maps) {
  if (maps.empty()) throw ConfigError("no setups");
  const int n = maps.front().n_global;
  std::vector<bool> covered(static_cast<std::size_t>(n), false);
  for (const auto& map : maps) {
    if (map.n_global != n) throw ConfigError("selection maps disagree on the number of DoFs");
    map.validate();
    for (int d : map.tau) covered[static_cast<std::size_t>(d)] = true;
  }
  for (int d = 0; d < n; ++d)
    if (!covered[static_cast<std::size_t>(d)])
      throw ConfigError("global DoF " + std::to_string(d + 1) + " is not measured by any setup");
}

void SetupParams::validate() const {
  const int m = modes();
  if (m < 1) throw ConfigError("setup parameters: at least one mode required");
  if (zeta.size() != m || S.rows() != m || S.cols() != m)
    throw ConfigError("setup parameters: inconsistent mode count");
  for (int i = 0; i < m; ++i) {
    if (!(f(i) > 0.0)) throw ConfigError("setup parameters: natural frequency must be > 0");
    if (!(zeta(i) > 0.0 && zeta(i) < 1.0))
      throw ConfigError("setup parameters: damping ratio must lie in (0, 1)");
  }
  if (!(Se > 0.0)) throw ConfigError("setup parameters: prediction-error PSD must be > 0");
  const double scale = std::max(S.cwiseAbs().maxCoeff(), 1e-300);
  if ((S - S.adjoint()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw ConfigError("setup parameters: S is not Hermitian");
  Eigen::SelfAdjointEigenSolver<CMat> es(S, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10 * scale)
    throw ConfigError("setup parameters: S is not positive semidefinite");
}

int ThetaVector::n_params() const { return theta_size(n_setups(), modes(), n_dofs()); }

int theta_size(int n_setups, int modes, int n_dofs) {
  return n_setups * (modes + 1) * (modes + 1) + modes * n_dofs;
}

namespace s_chart {
namespace {

// Strict-upper pair number t in column-major order.
std::pair<int, int> upper_pair(int t) {
  int j = 1;
  while (t >= j) {
    t -= j;
    ++j;
  }
  return {t, j};
}

}  // namespace

std::vector<Entry> basis(int m, int p) {
  const int nu = m * (m - 1) / 2;
  if (p < 0 || p >= m * m) throw ConfigError("s_chart: coordinate out of range");
  if (p < m) return {{p, p, cplx(1.0, 0.0)}};
  if (p < m + nu) {
    auto [i, j] = upper_pair(p - m);
    return {{i, j, cplx(1.0, 0.0)}, {j, i, cplx(1.0, 0.0)}};
  }
  auto [i, j] = upper_pair(p - m - nu);
  return {{i, j, cplx(0.0, 1.0)}, {j, i, cplx(0.0, -1.0)}};
}

Vec pack(const CMat& s) {
  const int m = static_cast<int>(s.rows());
  const int nu = m * (m - 1) / 2;
  Vec v(m * m);
  for (int i = 0; i < m; ++i) v(i) = s(i, i).real();
  for (int t = 0; t < nu; ++t) {
    auto [i, j] = upper_pair(t);
    v(m + t) = s(i, j).real();
    v(m + nu + t) = s(i, j).imag();
  }
  return v;
}

CMat unpack(const Eigen::Ref<const Vec>& v, int m) {
  if (v.size() != m * m) throw ConfigError("s_chart: expected m^2 reals");
  const int nu = m * (m - 1) / 2;
  CMat s = CMat::Zero(m, m);
  for (int i = 0; i < m; ++i) s(i, i) = v(i);
  for (int t = 0; t < nu; ++t) {
    auto [i, j] = upper_pair(t);
    s(i, j) = cplx(v(m + t), v(m + nu + t));
    s(j, i) = std::conj(s(i, j));
  }
  return s;
}

Vec contract(const CMat& grad) {
  const int m = static_cast<int>(grad.rows());
  Vec out(m * m);
  for (int p = 0; p < m * m; ++p) {
    cplx acc = 0.0;
    for (const auto& e : basis(m, p)) acc += e.coeff * grad(e.row, e.col);
    out(p) = acc.real();
  }
  return out;
}

std::string label(int m, int p) {
  const int nu = m * (m - 1) / 2;
  if (p < m) return "S" + std::to_string(p + 1) + std::to_string(p + 1);
  const bool real_part = p < m + nu;
  auto [i, j] = upper_pair(real_part ? p - m : p - m - nu);
  return "S" + std::to_string(i + 1) + std::to_string(j + 1) + (real_part ? "_re" : "_im");
}

}  // namespace s_chart

Vec encode_setup(const SetupParams& x) {
  const int m = x.modes();
  const XLayout lay{m};
  Vec v(lay.size());
  v.segment(0, m) = x.f;
  v.segment(m, m) = x.zeta;
  v.segment(2 * m, m * m) = s_chart::pack(x.S);
  v(lay.se()) = x.Se;
  return v;
}

SetupParams decode_setup(const Eigen::Ref<const Vec>& v, int m) {
  const XLayout lay{m};
  if (v.size() != lay.size()) throw ConfigError("decode_setup: expected (m+1)^2 reals");
  SetupParams x;
  x.f = v.segment(0, m);
  x.zeta = v.segment(m, m);
  x.S = s_chart::unpack(v.segment(2 * m, m * m), m);
  x.Se = v(lay.se());
  return x;
}

Vec encode(const ThetaVector& theta) {
  const int m = theta.modes();
  const int nx = (m + 1) * (m + 1);
  Vec v(theta.n_params());
  for (int r = 0; r < theta.n_setups(); ++r) {
    if (theta.setups[static_cast<std::size_t>(r)].modes() != m)
      throw ConfigError("encode: setup mode count differs from the mode shape");
    v.segment(r * nx, nx) = encode_setup(theta.setups[static_cast<std::size_t>(r)]);
  }
  v.tail(theta.Phi.size()) = mat_kit::vec(theta.Phi);
  return v;
}

ThetaVector decode(const Eigen::Ref<const Vec>& v, int n_setups, int modes, int n_dofs) {
  if (v.size() != theta_size(n_setups, modes, n_dofs))
    throw ConfigError("decode: vector length does not match n_s (m+1)^2 + m n");
  const int nx = (modes + 1) * (modes + 1);
  ThetaVector theta;
  theta.setups.reserve(static_cast<std::size_t>(n_setups));
  for (int r = 0; r < n_setups; ++r) theta.setups.push_back(decode_setup(v.segment(r * nx, nx), modes));
  theta.Phi = mat_kit::unvec(v.tail(modes * n_dofs), n_dofs, modes);
  return theta;
}

std::vector<std::string> parameter_labels(int n_setups, int modes, int n_dofs) {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(theta_size(n_setups, modes, n_dofs)));
  for (int r = 0; r < n_setups; ++r) {
    const std::string pre = "s" + std::to_string(r + 1) + ":";
    for (int i = 0; i < modes; ++i) out.push_back(pre + "f" + std::to_string(i + 1));
    for (int i = 0; i < modes; ++i) out.push_back(pre + "zeta" + std::to_string(i + 1));
    for (int p = 0; p < modes * modes; ++p) out.push_back(pre + s_chart::label(modes, p));
    out.push_back(pre + "Se");
  }
  for (int i = 0; i < modes; ++i)
    for (int d = 0; d < n_dofs; ++d)
      out.push_back("phi:dof" + std::to_string(d + 1) + ":mode" + std::to_string(i + 1));
  return out;
}

cplx frf(double f_i, double zeta_i, double f_k, int q) {
  const double beta = f_i / f_k;
  const cplx denom(1.0 - beta * beta, -2.0 * zeta_i * beta);
  if (q == 0) return 1.0 / denom;
  const cplx iw(0.0, 2.0 * std::numbers::pi * f_k);
  return std::pow(iw, -q) / denom;
}

DerivativeWorkspace spectral_cov(const SetupParams& x, const Mat& phi_r, double f_k, int q) {
  const int m = x.modes();
  if (phi_r.cols() != m) throw ConfigError("spectral_cov: local shape has wrong mode count");
  DerivativeWorkspace ws;
  ws.h.resize(m);
  ws.D.resize(m);
  for (int i = 0; i < m; ++i) {
    ws.h(i) = frf(x.f(i), x.zeta(i), f_k, q);
    ws.D(i) = std::norm(ws.h(i));
  }
  ws.H = ws.h.asDiagonal() * x.S * ws.h.conjugate().asDiagonal();
  ws.H = 0.5 * (ws.H + ws.H.adjoint()).eval();
  const CMat phi_c = phi_r.cast<cplx>();
  ws.E = phi_c * ws.H * phi_c.transpose();
  ws.E.diagonal().array() += x.Se;
  ws.E = 0.5 * (ws.E + ws.E.adjoint()).eval();
  return ws;
}

Mat local_shape(const Mat& phi, const SelectionMap& map) {
  Mat out(map.channels(), phi.cols());
  for (int u = 0; u < map.channels(); ++u) {
    const int d = map.tau[static_cast<std::size_t>(u)];
    if (d < 0 || d >= phi.rows())
      throw ConfigError("local_shape: channel " + std::to_string(u + 1) + " maps outside the mode shape");
    out.row(u) = phi.row(d);
  }
  return out;
}

}  // namespace msoma
