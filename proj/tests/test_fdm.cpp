#include "doctest.h"

#include <random>

#include "msoma/fdm_oracle.hpp"
#include "msoma/mat_kit.hpp"
#include "msoma/pcm_fast.hpp"
#include "support.hpp"

using namespace msoma;
using msoma::testing::rel_diff;

TEST_SUITE("fdm_oracle") {

TEST_CASE("quadratic and linear functions") {
  Vec t0(3);
  t0 << 1.0, -2.0, 0.5;
  const ScalarFunction sq = [](const Vec& v) { return v.squaredNorm(); };
  CHECK((fd_gradient(sq, t0) - 2.0 * t0).norm() < 1e-8);
  Vec a(3);
  a << 0.3, 7.0, -1.0;
  const ScalarFunction lin = [&](const Vec& v) { return a.dot(v) + 2.0; };
  CHECK((fd_gradient(lin, t0) - a).norm() < 1e-9);

  Mat A(3, 3);
  A << 4, 1, 0.5, 1, 3, -1, 0.5, -1, 2;
  const ScalarFunction quad = [&](const Vec& v) { return 0.5 * v.dot(A * v) + a.dot(v); };
  const Mat h = fd_hessian(quad, t0);
  CHECK(rel_diff(h, A) < 1e-6);
  CHECK(h == h.transpose());
}

TEST_CASE("non-finite evaluations name the coordinate") {
  const ScalarFunction f = [](const Vec& v) { return v(1) > 1.0 ? std::nan("") : v.sum(); };
  Vec t0 = Vec::Ones(3);
  CHECK_THROWS_WITH_AS(fd_gradient(f, t0), doctest::Contains("coordinate 2"), NumericalError);
}

TEST_CASE("nllf gradient on a random small case") {
  auto c = msoma::testing::small_case(40);
  std::mt19937_64 rng(40);
  const auto p = msoma::testing::perturb(c.truth, rng);
  const auto fun = nllf_function(c.bands, 2, 6);
  const Vec fd = fd_gradient(fun, encode(p), fd_steps(p));
  CHECK(rel_diff(nllf_gradient(p, c.bands), fd) < 1e-6);
}

TEST_CASE("separable fd hessian equals the full one") {
  auto c = msoma::testing::small_case(41);
  std::mt19937_64 rng(41);
  const auto p = msoma::testing::perturb(c.truth, rng);
  FdSettings s;
  s.richardson = false;
  const Mat sep = nllf_fd_hessian(p, c.bands, s);
  Vec steps = fd_steps(p, FdSettings{s.hessian_rel_step, s.abs_step_floor, s.hessian_rel_step, false});
  const Mat full = fd_hessian(nllf_function(c.bands, 2, 6), encode(p), steps);
  CHECK(rel_diff(sep, full) < 1e-6);  // same stencil, different summation order
}

TEST_CASE("constraint routes") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  Mat g(2, 7);
  for (auto& v : g.reshaped()) v = nd(rng);
  const Mat u = mat_kit::nullspace_basis(g);
  const Mat eye = pcm_fdm(Mat::Identity(7, 7), g, ConstraintRoute::Nullspace);
  CHECK((eye - u * u.transpose()).norm() < 1e-12);
  CHECK((pcm_fdm(Mat::Identity(7, 7), g, ConstraintRoute::Pseudoinverse) - eye).norm() < 1e-12);

  Mat a(7, 7);
  for (auto& v : a.reshaped()) v = nd(rng);
  const Mat h = a * a.transpose() + Mat::Identity(7, 7);
  CHECK(rel_diff(pcm_fdm(h, g, ConstraintRoute::Nullspace), pcm_fdm(h, g, ConstraintRoute::Pseudoinverse)) < 1e-10);
  CHECK_THROWS_AS(pcm_fdm(-h, g, ConstraintRoute::Nullspace), NumericalError);
}

TEST_CASE("settings validation") {
  FdSettings s;
  s.rel_step = 0.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

}
