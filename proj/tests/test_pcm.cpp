#include "doctest.h"

#include <random>

#include "msoma/fdm_oracle.hpp"
#include "msoma/mat_kit.hpp"
#include "msoma/pcm_fast.hpp"
#include "support.hpp"

using namespace msoma;
using msoma::testing::rel_diff;

namespace {

struct LocalPoint {
  SetupParams x;
  Mat phi;
  SetupBand band;
};

LocalPoint local_point(std::uint64_t seed, int m, int lines) {
  auto c = msoma::testing::small_case(30 + seed, m);
  std::mt19937_64 rng(seed);
  const auto p = msoma::testing::perturb(c.truth, rng, 0.05);
  const auto& b = c.bands[0];
  return {p.setups[0], local_shape(p.Phi, b.layout), band_slice(b, b.freqs(80), b.freqs(80 + lines - 1))};
}

Vec pack_local(const SetupParams& x, const Mat& phi) {
  Vec v(local_size(x.modes(), static_cast<int>(phi.rows())));
  v << encode_setup(x), mat_kit::vec(phi);
  return v;
}

std::pair<SetupParams, Mat> unpack_local(const Vec& v, int m, int nr) {
  const int nx = (m + 1) * (m + 1);
  return {decode_setup(v.head(nx), m), mat_kit::unvec(v.tail(m * nr), nr, m)};
}

LatentMoments point_mass(const CVec& eta) { return {eta, CMat::Zero(eta.size(), eta.size()), eta * eta.adjoint()}; }

// Dense literal assembly: sum_r T_r^T H_r T_r with T_r = blkdiag(E_r, I_m kron C_r).
Mat dense_assembly(const std::vector<LocalHessian>& locals, const std::vector<SelectionMap>& maps, int m) {
  const int ns = static_cast<int>(locals.size());
  const int nx = (m + 1) * (m + 1);
  const int n = maps.front().n_global;
  const int total = ns * nx + m * n;
  Mat out = Mat::Zero(total, total);
  for (int r = 0; r < ns; ++r) {
    const auto& map = maps[static_cast<std::size_t>(r)];
    Mat C = Mat::Zero(map.channels(), n);
    for (int u = 0; u < map.channels(); ++u) C(u, map.tau[static_cast<std::size_t>(u)]) = 1.0;
    Mat T = Mat::Zero(nx + m * map.channels(), total);
    T.block(0, r * nx, nx, nx).setIdentity();
    T.block(nx, ns * nx, m * map.channels(), m * n) = mat_kit::kron(Mat::Identity(m, m), C);
    out += T.transpose() * locals[static_cast<std::size_t>(r)].dense() * T;
  }
  return out;
}

}  // namespace

TEST_SUITE("pcm_fast") {

TEST_CASE("q gradient is the gradient of Q with moments fixed") {
  for (int m = 1; m <= 2; ++m) {
    auto p = local_point(1, m, 1);
    const int nr = static_cast<int>(p.phi.rows());
    const CVec F = p.band.F.col(0);
    const double fk = p.band.freqs(0);
    const auto mo = latent_moments(p.x, p.phi, F, fk, 0);
    const SetupBand& band = p.band;
    const ScalarFunction q = [&](const Vec& v) {
      auto [x, phi] = unpack_local(v, m, nr);
      return q_value(x, phi, band, std::vector<LatentMoments>{mo});
    };
    const Vec v0 = pack_local(p.x, p.phi);
    const Vec fd = fd_gradient(q, v0);
    const Vec an = q_gradient(p.x, p.phi, F, fk, 0, mo);
    CHECK(rel_diff(an, fd) < 1e-6);

    // Fisher identity on the same line
    const ScalarFunction L = [&](const Vec& v) {
      auto [x, phi] = unpack_local(v, m, nr);
      return nllf_setup(x, phi, band);
    };
    CHECK(rel_diff(an, fd_gradient(L, v0)) < 1e-6);
    CHECK(rel_diff(local_gradient(p.x, p.phi, band), an) < 1e-12);
  }
}

TEST_CASE("q hessian is the Jacobian of q gradient") {
  auto p = local_point(2, 2, 1);
  const int nr = static_cast<int>(p.phi.rows());
  const CVec F = p.band.F.col(0);
  const double fk = p.band.freqs(0);
  const auto mo = latent_moments(p.x, p.phi, F, fk, 0);
  const VectorFunction g = [&](const Vec& v) {
    auto [x, phi] = unpack_local(v, 2, nr);
    return q_gradient(x, phi, F, fk, 0, mo);
  };
  const Mat h = q_hessian(p.x, p.phi, F, fk, 0, mo);
  CHECK(rel_diff(h, fd_jacobian(g, pack_local(p.x, p.phi))) < 1e-5);
  CHECK((h - h.transpose()).norm() <= 1e-10 * h.norm());

  // cells that vanish identically
  const XLayout lay{2};
  const int nx = lay.size();
  for (int i = 0; i < 2; ++i) {
    CHECK(h(lay.zeta(i), lay.se()) == 0.0);
    for (int c = 0; c < 2 * nr; ++c) {
      CHECK(h(lay.f(i), nx + c) == 0.0);
      CHECK(h(lay.zeta(i), nx + c) == 0.0);
    }
  }
  for (int s = 0; s < 4; ++s) {
    CHECK(h(lay.s(s), lay.se()) == 0.0);
    for (int c = 0; c < 2 * nr; ++c) CHECK(h(lay.s(s), nx + c) == 0.0);
  }
}

TEST_CASE("shape block with W = I and Se = 2") {
  SetupParams x{Vec::LinSpaced(2, 2.0, 2.1), Vec::Constant(2, 0.01), CMat::Identity(2, 2), 2.0};
  const Mat phi = Mat::Random(3, 2);
  LatentMoments mo{CVec::Zero(2), CMat::Identity(2, 2), CMat::Identity(2, 2)};
  const Mat h = q_hessian(x, phi, CVec::Ones(3), 2.05, 0, mo);
  CHECK((h.bottomRightCorner(6, 6) - Mat::Identity(6, 6)).norm() < 1e-14);
}

TEST_CASE("expectation term") {
  auto p = local_point(3, 2, 1);
  const CVec F = p.band.F.col(0);
  const double fk = p.band.freqs(0);
  const auto mo = latent_moments(p.x, p.phi, F, fk, 0);
  const auto pm = point_mass(mo.w);
  const Vec g = q_gradient(p.x, p.phi, F, fk, 0, pm);
  const Mat e3 = expectation_term(p.x, p.phi, F, fk, 0, pm);
  CHECK(rel_diff(e3, -g * g.transpose()) < 1e-12);

  const auto gm = complete_gradient_moments(p.x, p.phi, F, fk, 0, mo);
  CHECK(rel_diff(gm.mean, q_gradient(p.x, p.phi, F, fk, 0, mo)) < 1e-10);
  CHECK(rel_diff(expectation_term(p.x, p.phi, F, fk, 0, mo), -(gm.cov + gm.mean * gm.mean.transpose())) < 1e-12);
}

TEST_CASE("local hessian matches finite differences of the nllf") {
  auto p = local_point(4, 2, 30);
  const int nr = static_cast<int>(p.phi.rows());
  const SetupBand& band = p.band;
  const ScalarFunction L = [&](const Vec& v) {
    auto [x, phi] = unpack_local(v, 2, nr);
    return nllf_setup(x, phi, band);
  };
  const Vec v0 = pack_local(p.x, p.phi);
  const Mat h = local_hessian(p.x, p.phi, band).dense();
  CHECK(rel_diff(h, fd_hessian(L, v0)) < 1e-4);
  CHECK((h - h.transpose()).norm() <= 1e-10 * h.norm());

  const auto parts = local_hessian_parts(p.x, p.phi, band);
  CHECK(rel_diff(parts.total(), h) < 1e-12);
  CHECK(parts.gradient_outer.norm() > 0.0);
  CHECK((parts.gradient_outer + parts.expectation).trace() < 0.0);
}

TEST_CASE("local derivatives stay accurate when S is nearly singular") {
  auto p = local_point(5, 2, 30);
  const Eigen::SelfAdjointEigenSolver<CMat> es(p.x.S);
  Vec lam = es.eigenvalues();
  lam(0) = 1e-7 * lam(1);
  p.x.S = es.eigenvectors() * lam.cast<cplx>().asDiagonal() * es.eigenvectors().adjoint();
  const int nr = static_cast<int>(p.phi.rows());
  const ScalarFunction L = [&](const Vec& v) {
    auto [x, phi] = unpack_local(v, 2, nr);
    return nllf_setup(x, phi, p.band);
  };
  const Vec v0 = pack_local(p.x, p.phi);
  ThetaVector local;
  local.setups = {p.x};
  local.Phi = p.phi;
  const Vec steps = fd_steps(local);
  const Vec g_fd = (4.0 * fd_gradient(L, v0, Vec(0.5 * steps)) - fd_gradient(L, v0, steps)) / 3.0;
  const Vec g = local_gradient(p.x, p.phi, p.band);
  CHECK((g - g_fd).cwiseAbs().maxCoeff() < 1e-6 * g_fd.cwiseAbs().maxCoeff());
  const Mat h = local_hessian(p.x, p.phi, p.band).dense();
  SetupBand own = p.band;
  own.layout = SelectionMap{{0, 1, 2, 3}, nr};
  CHECK(rel_diff(h, nllf_fd_hessian(local, {own})) < 1e-4);
}

TEST_CASE("assembly") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  const int m = 2;
  auto random_local = [&](int nr) {
    const int k = local_size(m, nr);
    Mat a(k, k);
    for (auto& v : a.reshaped()) v = nd(rng);
    return LocalHessian::from_dense(a + a.transpose(), m);
  };

  // single setup with identity map: padded local block
  const auto one = random_local(3);
  const auto g1 = assemble({one}, {SelectionMap{{0, 1, 2}, 3}});
  CHECK(g1.dense() == one.dense());

  // two setups sharing DoF 1
  const std::vector<SelectionMap> maps = {SelectionMap{{0, 1}, 3}, SelectionMap{{2, 0}, 3}};
  const std::vector<LocalHessian> locals = {random_local(2), random_local(2)};
  const auto g2 = assemble(locals, maps);
  const Mat oracle = dense_assembly(locals, maps, m);
  CHECK((g2.dense() - oracle).cwiseAbs().maxCoeff() < 1e-12);
  const int off = 2 * 9;
  CHECK(g2.dense()(off, off) == doctest::Approx(locals[0].H_Phi(0, 0) + locals[1].H_Phi(1, 1)));
  CHECK(g2.dense().block(0, 9, 9, 9).isZero());

  CHECK_THROWS_AS(assemble(locals, {SelectionMap{{0, 5}, 3}, maps[1]}), ConfigError);
}

TEST_CASE("constraint gradient") {
  ThetaVector t;
  t.setups.push_back(SetupParams{Vec::Constant(1, 2.0), Vec::Constant(1, 0.01), CMat::Identity(1, 1), 1.0});
  t.Phi = Mat(2, 1);
  t.Phi << 1.0, 0.0;
  const Mat g = constraint_gradient(t);
  CHECK(g == (Mat(1, 6) << 0, 0, 0, 0, 1, 0).finished());

  // H = I: C = I - e e^T with e the constraint direction
  const Mat c = constrained_inverse(Mat::Identity(6, 6), t);
  Mat expect = Mat::Identity(6, 6);
  expect(4, 4) = 0.0;
  CHECK((c - expect).norm() < 1e-14);

  auto sc = msoma::testing::small_case(13);
  const Mat gg = constraint_gradient(sc.truth);
  CHECK(std::abs(gg.row(0).dot(gg.row(1))) < 1e-15);
  const int m = sc.truth.modes(), n = sc.truth.n_dofs();
  const VectorFunction cons = [&](const Vec& v) {
    const auto th = decode(v, 2, m, n);
    Vec out(m);
    for (int i = 0; i < m; ++i) out(i) = 0.5 * (th.Phi.col(i).squaredNorm() - 1.0);
    return out;
  };
  CHECK(rel_diff(fd_jacobian(cons, encode(sc.truth)), gg) < 1e-8);
}

TEST_CASE("constrained inverse agrees with the oracle routes") {
  auto c = msoma::testing::small_case(14);
  std::mt19937_64 rng(14);
  std::normal_distribution<double> nd;
  const int k = c.truth.n_params();
  Mat a(k, k);
  for (auto& v : a.reshaped()) v = nd(rng);
  const Mat h = a * a.transpose() + k * Mat::Identity(k, k);
  const Mat ci = constrained_inverse(h, c.truth);
  const Mat g = constraint_gradient(c.truth);
  CHECK(rel_diff(ci, pcm_fdm(h, g, ConstraintRoute::Pseudoinverse)) < 1e-8);
  CHECK(rel_diff(ci, pcm_fdm(h, g, ConstraintRoute::Nullspace)) < 1e-8);
  CHECK((g * ci).norm() < 1e-8 * ci.norm());
  const Mat u = mat_kit::nullspace_basis(g);
  Vec y(u.cols());
  for (auto& v : y) v = nd(rng);
  const Vec t = u * y;
  CHECK((ci * h * t - t).norm() < 1e-8 * t.norm());

  Mat neg = -Mat::Identity(k, k);
  CHECK_THROWS_WITH_AS(constrained_inverse(neg, c.truth), doctest::Contains("most negative eigenvalue"),
                       NumericalError);
}

TEST_CASE("pcm pipeline statistics") {
  auto c = msoma::testing::small_case(15);
  const auto mpv = run_em(c.bands, c.model.f);
  REQUIRE(mpv.converged);
  PcmOptions opts;
  opts.keep_full = true;
  opts.reference_shapes = c.model.Phi;
  const auto res = pcm(mpv.theta_hat, c.bands, opts);
  REQUIRE(res.cov);
  const Mat& cov = *res.cov;
  CHECK((constraint_gradient(mpv.theta_hat) * cov).norm() < 1e-8 * cov.norm());
  CHECK(res.labels.size() == static_cast<std::size_t>(mpv.theta_hat.n_params()));
  CHECK(res.std_dev(0) == doctest::Approx(std::sqrt(cov(0, 0))));
  CHECK(res.cov_of_variation(0) == doctest::Approx(res.std_dev(0) / res.mpv(0)));
  for (int i = 0; i < 2; ++i) {
    CHECK(res.shape_uncertainty(i) == doctest::Approx(std::sqrt(res.shape_cov_per_mode[i].trace())));
    CHECK(res.mac(i) > 0.99);
  }
  PcmOptions bad;
  bad.reference_shapes = Mat::Ones(3, 2);
  CHECK_THROWS_AS(pcm(mpv.theta_hat, c.bands, bad), ConfigError);
}

TEST_CASE("mac") {
  Vec a(3), b(3);
  a << 1, 0, 0;
  b << 1, 1, 0;
  CHECK(mac(a, b) == doctest::Approx(0.5));
  CHECK(mac(a, -2.0 * a) == doctest::Approx(1.0));
}

}
