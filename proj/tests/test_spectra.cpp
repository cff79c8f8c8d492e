#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "msoma/spectra.hpp"
#include "msoma/synth.hpp"

using namespace msoma;

namespace {

TimeHistory single(const Vec& y, double dt) {
  TimeHistory t;
  t.samples = y.transpose();
  t.dt = dt;
  return t;
}

SelectionMap identity_map(int n) {
  SelectionMap s;
  s.n_global = n;
  for (int i = 0; i < n; ++i) s.tau.push_back(i);
  return s;
}

}  // namespace

TEST_SUITE("spectra") {

TEST_CASE("scaled fft of a constant") {
  const auto f = scaled_fft(single(Vec::Constant(8, 3.0), 0.01));
  CHECK(f.n_lines() == 5);
  CHECK(std::abs(f.coeffs(0, 0) - cplx(3.0 * std::sqrt(0.08), 0.0)) < 1e-14);
  for (int k = 1; k < 5; ++k) CHECK(std::abs(f.coeffs(0, k)) < 1e-14);
}

TEST_CASE("scaled fft of a cosine") {
  const int n = 64, k0 = 5;
  const double dt = 0.02;
  Vec y(n);
  for (int j = 0; j < n; ++j) y(j) = std::cos(2.0 * std::numbers::pi * j * k0 / n);
  const auto f = scaled_fft(single(y, dt));
  CHECK(std::abs(f.coeffs(0, k0)) == doctest::Approx(std::sqrt(dt / n) * n / 2).epsilon(1e-12));
  const Mat psd = auto_psd(f);
  Eigen::Index arg;
  psd.row(0).maxCoeff(&arg);
  CHECK(arg == k0);
}

TEST_CASE("channels transform independently") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  TimeHistory two;
  two.dt = 0.05;
  two.samples.resize(2, 33);
  for (auto& x : two.samples.reshaped()) x = nd(rng);
  const auto both = scaled_fft(two);
  for (int c = 0; c < 2; ++c) {
    const auto one = scaled_fft(single(two.samples.row(c).transpose(), 0.05));
    CHECK((both.coeffs.row(c) - one.coeffs.row(0)).norm() < 1e-14);
  }
}

TEST_CASE("scaled fft rejects bad input") {
  Vec y = Vec::Ones(8);
  y(3) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(scaled_fft(single(y, 0.01)), InputError);
  CHECK_THROWS_AS(scaled_fft(single(Vec::Ones(8), 0.0)), InputError);
}

TEST_CASE("auto psd of zero and of white noise") {
  CHECK(auto_psd(scaled_fft(single(Vec::Zero(16), 0.1))).isZero());
  // Discrete white noise of variance s2 has two-sided PSD s2 * dt under this scaling.
  const int n = 1 << 14;
  const double dt = 0.01, s2 = 4.0;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, std::sqrt(s2));
  Vec y(n);
  for (auto& v : y) v = nd(rng);
  const Mat psd = auto_psd(scaled_fft(single(y, dt)));
  const auto lines = psd.row(0).segment(1, n / 2 - 1);
  const double mean = lines.mean();
  const double se = s2 * dt / std::sqrt(static_cast<double>(lines.size()));
  CHECK(std::abs(mean - s2 * dt) < 3.0 * se);
}

TEST_CASE("sv spectrum") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  ScaledFft f;
  f.dt = 0.01;
  f.n_samples = 200;
  f.coeffs.resize(3, 101);
  const Vec phi = Vec::LinSpaced(3, 1.0, 2.0);
  for (int k = 0; k < 101; ++k) f.coeffs.col(k) = phi.cast<cplx>() * cplx(nd(rng), nd(rng));

  const auto sv = sv_spectrum(f, 2);
  CHECK(sv.values.rows() == 3);
  CHECK(sv.values.cols() == 101 - 4);
  CHECK(sv.freqs(0) == doctest::Approx(f.freq(2)));
  for (int j = 0; j < sv.values.cols(); ++j) CHECK(sv.values(1, j) < 1e-12 * sv.values(0, j));

  const auto sv0 = sv_spectrum(f, 0);
  CHECK(sv0.values.rows() == 1);
  for (int k = 0; k < 101; ++k)
    CHECK(sv0.values(0, k) == doctest::Approx(f.coeffs.col(k).squaredNorm()).epsilon(1e-12));

  // white noise of PSD se: eigenvalues cluster near se
  const double se = 2.5;
  for (int k = 0; k < 101; ++k)
    for (int c = 0; c < 3; ++c) f.coeffs(c, k) = std::sqrt(se / 2.0) * cplx(nd(rng), nd(rng));
  const auto svn = sv_spectrum(f, 50);
  CHECK(svn.values.cols() == 1);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(svn.values(i, 0) / se - 1.0) < 0.5);

  CHECK(sv_spectrum(f, 60).values.cols() == 0);
  CHECK_THROWS_AS(sv_spectrum(f, -1), ConfigError);
}

TEST_CASE("band slice line counts") {
  ScaledFft f;
  f.dt = 0.01;
  f.n_samples = 30000;  // df = 1/300
  f.coeffs = CMat::Zero(1, f.n_samples / 2 + 1);
  const auto map = identity_map(1);
  CHECK(band_slice(f, 4.0, 4.6, 0, map).n_lines() == 181);
  const double df = f.df();
  const auto one = band_slice(f, 1234 * df - 0.5 * df, 1234 * df + 0.5 * df, 0, map);
  CHECK(one.n_lines() == 1);
  CHECK(one.freqs(0) == doctest::Approx(1234 * df));
  CHECK(band_slice(f, 1e-9, 49.999999, 0, map).n_lines() == f.n_samples / 2 - 1);
  CHECK_THROWS_AS(band_slice(f, 4.0001, 4.0002, 0, map), ConfigError);
  CHECK_THROWS_AS(band_slice(f, 4.6, 4.0, 0, map), ConfigError);
  CHECK_THROWS_AS(band_slice(f, 1.0, 2.0, 0, identity_map(2)), ConfigError);

  const auto wide = band_slice(f, 3.0, 5.0, 0, map);
  const auto again = band_slice(wide, 4.0, 4.6);
  CHECK(again.n_lines() == 181);
  CHECK(band_slice(again, 4.0, 4.6).freqs == again.freqs);
}

TEST_CASE("time history csv round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "msoma_spectra_test";
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  TimeHistory y;
  y.dt = 0.01;
  y.samples.resize(2, 50);
  for (auto& x : y.samples.reshaped()) x = nd(rng);
  y.labels = {"P01X", "P01Y"};
  write_time_history_csv(y, dir / "a.csv");
  const auto back = read_time_history_csv(dir / "a.csv");
  CHECK(back.samples == y.samples);
  CHECK(back.labels == y.labels);
  CHECK(back.dt == doctest::Approx(0.01).epsilon(1e-12));

  {
    std::ofstream bad(dir / "bad.csv");
    bad << "time,a\n0,1\n0.01,x\n";
  }
  CHECK_THROWS_WITH_AS(read_time_history_csv(dir / "bad.csv"), doctest::Contains(":3"), InputError);
  {
    std::ofstream bad(dir / "gap.csv");
    bad << "time,a\n0,1\n0.01,2\n0.03,3\n";
  }
  CHECK_THROWS_AS(read_time_history_csv(dir / "gap.csv"), InputError);
  {
    std::ofstream raw(dir / "raw.csv");
    raw << "1,2\n3,4\n5,6\n";
    std::ofstream meta(dir / "raw.json");
    meta << R"({"dt": 0.5, "labels": ["u", "v"]})";
  }
  const auto side = read_time_history_csv(dir / "raw.csv", dir / "raw.json");
  CHECK(side.dt == 0.5);
  CHECK(side.samples(1, 2) == 6.0);
  CHECK(side.labels[1] == "v");
  std::filesystem::remove_all(dir);
}

}
