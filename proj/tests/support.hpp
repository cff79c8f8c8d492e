#pragma once

// Shared fixtures: a small two-setup case built through synth, random
// parameter points around its truth and a few numeric helpers.

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <vector>

#include "msoma/em_mpv.hpp"
#include "msoma/likelihood.hpp"
#include "msoma/model.hpp"
#include "msoma/spectra.hpp"
#include "msoma/synth.hpp"

namespace msoma::testing {

struct SmallCase {
  TrueModel model;
  TestPlan plan;
  std::vector<SetupBand> bands;
  ThetaVector truth;
};

// m modes (1 or 2), 6 DoFs, 2 setups of 4 channels sharing DoFs 1-2,
// 200 lines per setup in [1.7525, 2.25] Hz.
inline SmallCase small_case(std::uint64_t seed, int m = 2) {
  SmallCase c;
  TrueModel& tm = c.model;
  Vec f(2), z(2);
  f << 1.95, 2.05;
  z << 0.010, 0.012;
  tm.f = f.head(m);
  tm.zeta = z.head(m);
  Mat phi(6, 2);
  phi << 1.0, 0.6, 0.8, -0.5, 0.6, 1.0, 0.4, 0.3, 0.9, -0.8, 0.2, 0.7;
  tm.Phi = phi.leftCols(m);
  for (int i = 0; i < m; ++i) tm.Phi.col(i).normalize();
  CMat s(2, 2);
  s << cplx(1.0, 0.0), cplx(0.3, 0.2), cplx(0.3, -0.2), cplx(0.8, 0.0);
  tm.S = s.topLeftCorner(m, m);
  tm.Se = 0.5;
  tm.fs = 20.0;
  tm.seed = seed;

  TestPlan& plan = c.plan;
  plan.dofs = {0, 1, 2, 3, 4, 5};
  SetupPlan a, b;
  a.map = SelectionMap{{0, 1, 2, 3}, 6};
  b.map = SelectionMap{{0, 1, 4, 5}, 6};
  a.start = 0.0;
  b.start = 400.0;
  a.duration = b.duration = 400.0;
  plan.setups = {a, b};
  plan.total_duration = 800.0;

  const auto hist = generate_setups(tm, plan);
  for (std::size_t r = 0; r < hist.size(); ++r)
    c.bands.push_back(band_slice(scaled_fft(hist[r]), 1.7525, 2.25, static_cast<int>(r),
                                 plan.setups[r].map, 0));
  for (int r = 0; r < 2; ++r) c.truth.setups.push_back(SetupParams{tm.f, tm.zeta, tm.S, tm.Se});
  c.truth.Phi = tm.Phi;
  return c;
}

inline CMat random_hermitian_pd(std::mt19937_64& rng, int m, double jitter = 0.2) {
  std::normal_distribution<double> nd;
  CMat a(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) a(i, j) = cplx(nd(rng), nd(rng));
  CMat s = a * a.adjoint() / static_cast<double>(m);
  s.diagonal().array() += jitter;
  return s;
}

// Random point near the truth: frequencies and dampings moved by a few
// percent, S redrawn, Se scaled, shapes perturbed (not renormalized).
inline ThetaVector perturb(const ThetaVector& truth, std::mt19937_64& rng, double size = 0.05) {
  std::normal_distribution<double> nd;
  ThetaVector t = truth;
  const int m = t.modes();
  for (auto& x : t.setups) {
    for (int i = 0; i < m; ++i) {
      x.f(i) *= 1.0 + 0.1 * size * nd(rng);
      x.zeta(i) *= 1.0 + size * nd(rng);
    }
    x.S = random_hermitian_pd(rng, m);
    x.Se *= std::exp(size * nd(rng));
  }
  for (int j = 0; j < t.Phi.cols(); ++j)
    for (int i = 0; i < t.Phi.rows(); ++i) t.Phi(i, j) += size * nd(rng);
  return t;
}

inline double rel_diff(const Mat& a, const Mat& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale > 0.0 ? (a - b).norm() / scale : 0.0;
}

}  // namespace msoma::testing
