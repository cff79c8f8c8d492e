#include "doctest.h"

#include <numbers>

#include "msoma/pcm_fast.hpp"
#include "msoma/synth.hpp"
#include "support.hpp"

using namespace msoma;

TEST_SUITE("synth") {

TEST_CASE("shear-frame preset") {
  const auto m = shear_frame_preset(1);
  CHECK(m.n_dofs() == 68);
  CHECK(m.modes() == 3);
  CHECK(m.f(0) == 4.20);
  CHECK(m.f(1) == 4.25);
  CHECK(m.f(2) == 4.40);
  Eigen::SelfAdjointEigenSolver<CMat> es(m.S);
  CHECK(es.eigenvalues()(0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(es.eigenvalues()(1) == doctest::Approx(1.0));
  CHECK(es.eigenvalues()(2) == doctest::Approx(2.0));
  for (int i = 0; i < 3; ++i) CHECK(m.Phi.col(i).norm() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(m.dof_labels[9] == "P05Y");

  const auto plan = shear_frame_plan(4, 300.0);
  CHECK(plan.setups.size() == 4);
  for (const auto& s : plan.setups) {
    CHECK(s.map.channels() == 20);
    CHECK(s.map.tau[0] == 0);
    CHECK(s.map.tau[3] == 9);
  }
  CHECK_NOTHROW(plan.validate(m));
  CHECK_THROWS_AS(shear_frame_plan(0, 300.0), ConfigError);

  const auto rov = roving_plan(8, 4, 900.0);
  CHECK(rov.setups.size() == 8);
  CHECK(rov.n_dofs() == 68);
  CHECK(rov.setups[0].map.channels() == 12);
  CHECK_THROWS_AS(roving_plan(9, 4, 900.0), ConfigError);
}

TEST_CASE("determinism and slicing") {
  auto m = shear_frame_preset(7);
  const auto a = generate(m, 20.0);
  const auto b = generate(m, 20.0);
  CHECK(a.samples == b.samples);
  m.seed = 8;
  CHECK(generate(m, 20.0).samples != a.samples);
  m.seed = 7;

  auto plan = shear_frame_plan(2, 10.0);
  const auto sliced = slice(a, plan);
  const auto direct = generate_setups(m, plan);
  REQUIRE(sliced.size() == 2);
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(sliced[r].samples == direct[r].samples);
    CHECK(sliced[r].labels == direct[r].labels);
    CHECK(sliced[r].labels[0] == "P01X");
  }
  CHECK(sliced[0].n_samples() + sliced[1].n_samples() == a.n_samples());

  TestPlan ident;
  for (int d = 0; d < 68; ++d) ident.dofs.push_back(d);
  SetupPlan s;
  s.map.n_global = 68;
  s.map.tau = ident.dofs;
  s.duration = 20.0;
  ident.setups = {s};
  ident.total_duration = 20.0;
  CHECK(slice(a, ident)[0].samples == a.samples);

  plan.setups[1].duration = 30.0;
  CHECK_THROWS_AS(slice(a, plan), ConfigError);
  CHECK_THROWS_AS(generate(m, 0.0), ConfigError);
}

TEST_CASE("noise-free rank-one data lie on one line") {
  TrueModel tm;
  tm.f = Vec::Constant(1, 2.0);
  tm.zeta = Vec::Constant(1, 0.02);
  tm.Phi = Vec::LinSpaced(4, 1.0, 2.0).normalized();
  tm.S = CMat::Identity(1, 1);
  tm.Se = 1e-300;
  tm.fs = 20.0;
  const auto y = generate(tm, 50.0);
  TimeHistory t = y;
  const auto fft = scaled_fft(t);
  for (long k = 1; k < fft.n_lines() - 1; ++k) {
    const CVec col = fft.coeffs.col(k);
    const CVec proj = tm.Phi.cast<cplx>() * (tm.Phi.cast<cplx>().transpose() * col);
    CHECK((col - proj).norm() <= 1e-9 * col.norm() + 1e-300);
  }
}

TEST_CASE("band-averaged sample covariance matches the model over four hours") {
  TrueModel tm = msoma::testing::small_case(1).model;
  tm.seed = 99;
  const auto fft = scaled_fft(generate(tm, 4 * 3600.0));
  const auto band = band_slice(fft, 1.7525, 2.25, 0, SelectionMap{{0, 1, 2, 3, 4, 5}, 6});
  const SetupParams x{tm.f, tm.zeta, tm.S, tm.Se};
  CMat sample = CMat::Zero(6, 6), model = CMat::Zero(6, 6);
  for (int k = 0; k < band.n_lines(); ++k) {
    sample += band.F.col(k) * band.F.col(k).adjoint();
    model += spectral_cov(x, tm.Phi, band.freqs(k), 0).E;
  }
  CHECK((sample - model).norm() / model.norm() < 0.05);
}

TEST_CASE("counter normal") {
  CHECK(counter_normal(1, 2, 3) == counter_normal(1, 2, 3));
  CHECK(counter_normal(1, 2, 3) != counter_normal(1, 2, 4));
  double s2 = 0.0;
  cplx mean = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const cplx z = counter_normal(5, 0, static_cast<std::uint64_t>(i));
    s2 += std::norm(z);
    mean += z;
  }
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.01));
  CHECK(std::abs(mean / static_cast<double>(n)) < 0.01);
}

}
