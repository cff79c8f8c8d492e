#include "doctest.h"

#include <random>

#include "msoma/em_mpv.hpp"
#include "msoma/pcm_fast.hpp"
#include "support.hpp"

using namespace msoma;
using msoma::testing::small_case;

namespace {

double q_total(const ThetaVector& t, const std::vector<SetupBand>& bands, const MomentTable& mo) {
  double q = 0.0;
  for (std::size_t r = 0; r < bands.size(); ++r)
    q += q_value(t.setups[r], local_shape(t.Phi, bands[r].layout), bands[r], mo[r]);
  return q;
}

}  // namespace

TEST_SUITE("em_mpv") {

TEST_CASE("initialize") {
  auto c = small_case(5, 1);
  Vec f0 = c.model.f * 1.01;
  const auto t = initialize(c.bands, f0);
  CHECK(t.modes() == 1);
  CHECK(t.n_dofs() == 6);
  for (const auto& x : t.setups) {
    CHECK(std::abs(x.f(0) / c.model.f(0) - 1.0) < 0.02);
    CHECK(x.zeta(0) == 0.01);
    CHECK(x.Se > 0.0);
  }
  CHECK(t.Phi.col(0).norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mac(t.Phi.col(0), c.model.Phi.col(0)) > 0.95);
  CHECK_THROWS_AS(initialize(c.bands, Vec::LinSpaced(5, 1.9, 2.1)), ConfigError);
}

TEST_CASE("renormalize") {
  auto c = small_case(6);
  auto t = c.truth;
  t.Phi *= 2.0;
  const auto r = renormalize(t);
  CHECK((r.Phi - c.truth.Phi).norm() < 1e-14);
  for (int s = 0; s < 2; ++s) CHECK((r.setups[s].S - 4.0 * t.setups[s].S).norm() < 1e-13);
  const auto same = renormalize(c.truth);
  CHECK((same.Phi - c.truth.Phi).norm() < 1e-15);
  CHECK((same.setups[0].S - c.truth.setups[0].S).norm() < 1e-14);

  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = msoma::testing::perturb(c.truth, rng, 0.3);
    CHECK(nllf(renormalize(p), c.bands) == doctest::Approx(nllf(p, c.bands)).epsilon(1e-10));
  }
  auto z = c.truth;
  z.Phi.col(1).setZero();
  CHECK_THROWS(renormalize(z));
}

TEST_CASE("m step updates Se from the data when the shape is zero") {
  auto c = small_case(7);
  auto t = c.truth;
  t.Phi.setZero();
  const auto mo = e_step(t, c.bands);
  const auto next = m_step(mo, c.bands, t);
  for (int r = 0; r < 2; ++r) {
    const auto& b = c.bands[r];
    const double expect = b.F.squaredNorm() / (b.n_lines() * b.channels());
    CHECK(next.setups[r].Se == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("m step does not increase Q and an EM step lowers the nllf") {
  auto c = small_case(8);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = msoma::testing::perturb(c.truth, rng, 0.1);
    const auto mo = e_step(p, c.bands);
    const auto next = m_step(mo, c.bands, p);
    CHECK(q_total(next, c.bands, mo) <= q_total(p, c.bands, mo) + 1e-9 * std::abs(q_total(p, c.bands, mo)));
    CHECK(nllf(next, c.bands) < nllf(p, c.bands));
  }
}

TEST_CASE("single mode, high SNR") {
  auto c = small_case(9, 1);
  const auto res = run_em(c.bands, c.model.f);
  CHECK(res.converged);
  CHECK(mac(res.theta_hat.Phi.col(0), c.model.Phi.col(0)) > 0.99);
  CHECK(res.theta_hat.Phi.col(0).norm() == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t i = 1; i < res.nllf_trace.size(); ++i)
    CHECK(res.nllf_trace[i] <= res.nllf_trace[i - 1] * (1.0 + 1e-12) + 1e-12);
}

TEST_CASE("restart from the MPV and acceleration routes") {
  auto c = small_case(10);
  EmSettings plain;
  plain.acceleration = Acceleration::Off;
  const auto a = run_em(c.bands, c.model.f, plain);
  const auto b = run_em(c.bands, c.model.f);
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  CHECK(a.nllf == doctest::Approx(b.nllf).epsilon(1e-8));
  CHECK(b.grad_norm <= 1e-4 * std::max(1.0, std::abs(b.nllf)));

  const auto again = run_em(c.bands, b.theta_hat);
  CHECK(again.converged);
  CHECK(again.iterations <= 3);
  CHECK(again.nllf <= b.nllf * (1.0 + 1e-12));
}

TEST_CASE("sort modes keeps the nllf") {
  auto c = small_case(11);
  ThetaVector t = c.truth;
  for (auto& x : t.setups) {
    std::swap(x.f(0), x.f(1));
    std::swap(x.zeta(0), x.zeta(1));
    x.S = x.S.reverse().eval();
  }
  t.Phi = t.Phi.rowwise().reverse().eval();
  const auto s = sort_modes(t);
  CHECK(s.setups[0].f(0) < s.setups[0].f(1));
  CHECK((s.Phi - c.truth.Phi).norm() < 1e-15);
  CHECK(nllf(s, c.bands) == doctest::Approx(nllf(t, c.bands)).epsilon(1e-13));
}

TEST_CASE("settings validation") {
  EmSettings s;
  s.max_iter = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.zeta_min = 0.5;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("max_iter exhaustion is flagged, not thrown") {
  auto c = small_case(12);
  EmSettings s;
  s.max_iter = 2;
  const auto r = run_em(c.bands, c.model.f * 1.01, s);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 2);
}

}
