#include "msoma/synth.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "fftw_lock.hpp"

namespace msoma {
namespace {

constexpr int kFloors = 8;
constexpr int kPoints = 34;
constexpr std::uint64_t kModalStream = 1;
constexpr std::uint64_t kNoiseStream = 2;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double to_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

struct Point {
  int floor;  // 1 = lowest
  double x, y;
};

// Plan view: corners at (+-1, +-0.5); top floor adds the two mid-side points.
std::vector<Point> frame_points() {
  const double a = 1.0, b = 0.5;
  std::vector<Point> pts;
  pts.push_back({8, -a, b});   // 1 NW
  pts.push_back({8, 0.0, b});  // 2 N mid
  pts.push_back({8, a, b});    // 3 NE
  pts.push_back({8, 0.0, -b}); // 4 S mid
  pts.push_back({8, a, -b});   // 5 SE
  pts.push_back({8, -a, -b});  // 6 SW
  for (int fl = kFloors - 1; fl >= 1; --fl) {
    pts.push_back({fl, -a, b});
    pts.push_back({fl, a, b});
    pts.push_back({fl, a, -b});
    pts.push_back({fl, -a, -b});
  }
  return pts;
}

// Non-reference points in roving order: top floor first, then downwards.
std::vector<int> rover_points() {
  std::vector<int> out;
  for (int p = 0; p < kPoints; ++p)
    if (p != 0 && p != 4) out.push_back(p);
  return out;
}

std::string two_digit(int v) { return (v < 10 ? "0" : "") + std::to_string(v); }

// Modal part h_k p_k for lines k = 0 .. N/2 (column k), zero at k = 0.
CMat modal_lines(const TrueModel& model, long n_samples) {
  const int m = model.modes();
  const long n_out = n_samples / 2 + 1;
  const double df = model.fs / static_cast<double>(n_samples);
  Eigen::SelfAdjointEigenSolver<CMat> es(model.S);
  const double floor = 1e-12 * std::max(model.S.trace().real(), 0.0);
  Vec sd(m);
  for (int i = 0; i < m; ++i) sd(i) = es.eigenvalues()(i) > floor ? std::sqrt(es.eigenvalues()(i)) : 0.0;
  const CMat factor = es.eigenvectors() * sd.asDiagonal();
  CMat out = CMat::Zero(m, n_out);
  CVec z(m);
  for (long k = 1; k < n_out; ++k) {
    for (int j = 0; j < m; ++j)
      z(j) = counter_normal(model.seed, kModalStream, static_cast<std::uint64_t>(k * m + j));
    const CVec p = factor * z;
    const double fk = static_cast<double>(k) * df;
    for (int i = 0; i < m; ++i) out(i, k) = frf(model.f(i), model.zeta(i), fk, model.q) * p(i);
  }
  return out;
}

// Time history of one model DoF over the full record.
class ChannelSynth {
 public:
  ChannelSynth(const TrueModel& model, long n_samples)
      : model_(model), n_(n_samples), modal_(modal_lines(model, n_samples)) {
    spec_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * static_cast<std::size_t>(n_ / 2 + 1)));
    out_.resize(static_cast<std::size_t>(n_));
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    plan_ = fftw_plan_dft_c2r_1d(static_cast<int>(n_), spec_, out_.data(), FFTW_ESTIMATE);
  }
  ~ChannelSynth() {
    {
      std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(spec_);
  }
  ChannelSynth(const ChannelSynth&) = delete;
  ChannelSynth& operator=(const ChannelSynth&) = delete;

  const std::vector<double>& run(int dof) {
    const long n_out = n_ / 2 + 1;
    const double dt = 1.0 / model_.fs;
    const double unscale = std::sqrt(static_cast<double>(n_) / dt);
    const double noise_sd = std::sqrt(model_.Se);
    const Eigen::RowVectorXcd phi = model_.Phi.row(dof).cast<cplx>();
    spec_[0][0] = 0.0;
    spec_[0][1] = 0.0;
    for (long k = 1; k < n_out; ++k) {
      cplx v = (phi * modal_.col(k))(0) +
               noise_sd * counter_normal(model_.seed, kNoiseStream + static_cast<std::uint64_t>(dof),
                                         static_cast<std::uint64_t>(k));
      if (n_ % 2 == 0 && k == n_out - 1) v = cplx(v.real(), 0.0);
      v *= unscale;
      spec_[k][0] = v.real();
      spec_[k][1] = v.imag();
    }
    fftw_execute(plan_);
    const double inv_n = 1.0 / static_cast<double>(n_);
    for (auto& y : out_) y *= inv_n;
    return out_;
  }

 private:
  const TrueModel& model_;
  long n_;
  CMat modal_;
  fftw_complex* spec_ = nullptr;
  std::vector<double> out_;
  fftw_plan plan_ = nullptr;
};

long sample_count(double duration, double fs, const std::string& what) {
  const double raw = duration * fs;
  const long n = std::lround(raw);
  if (!(duration > 0.0) || std::abs(raw - static_cast<double>(n)) > 1e-6 * std::max(1.0, raw) || n < 2)
    throw ConfigError(what + ": duration x fs must be an integer >= 2");
  return n;
}

}  // namespace

cplx counter_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  const std::uint64_t base = splitmix64(seed ^ splitmix64(stream ^ splitmix64(index)));
  const double u1 = to_unit(splitmix64(base));
  const double u2 = to_unit(splitmix64(base ^ 0xD1B54A32D192ED03ULL));
  const double rad = std::sqrt(-2.0 * std::log(u1));
  const double ang = 2.0 * std::numbers::pi * u2;
  return cplx(rad * std::cos(ang), rad * std::sin(ang)) / std::numbers::sqrt2;
}

void TrueModel::validate() const {
  const int m = modes();
  if (m < 1 || zeta.size() != m || Phi.cols() != m || S.rows() != m || S.cols() != m)
    throw ConfigError("true model: inconsistent mode count");
  SetupParams x{f, zeta, S, Se};
  x.validate();
  for (int i = 0; i < m; ++i)
    if (std::abs(Phi.col(i).norm() - 1.0) > 1e-10) throw ConfigError("true model: shape columns must be unit norm");
  if (!(fs > 0.0)) throw ConfigError("true model: sampling rate must be > 0");
  if (q < 0 || q > 2) throw ConfigError("true model: q must be 0, 1 or 2");
  if (!dof_labels.empty() && static_cast<int>(dof_labels.size()) != n_dofs())
    throw ConfigError("true model: label count does not match DoF count");
}

void TestPlan::validate(const TrueModel& model) const {
  if (setups.empty()) throw ConfigError("test plan: no setups");
  if (dofs.empty()) throw ConfigError("test plan: no DoFs");
  for (int d : dofs)
    if (d < 0 || d >= model.n_dofs()) throw ConfigError("test plan: DoF outside the model");
  std::vector<SelectionMap> maps;
  for (std::size_t r = 0; r < setups.size(); ++r) {
    const auto& s = setups[r];
    if (s.map.n_global != n_dofs()) throw ConfigError("test plan: selection map size mismatch");
    if (s.start < 0.0 || !(s.duration > 0.0) || s.start + s.duration > total_duration * (1.0 + 1e-12))
      throw ConfigError("test plan: setup " + std::to_string(r + 1) + " segment overruns the record");
    maps.push_back(s.map);
  }
  check_coverage(maps);
}

TrueModel shear_frame_preset(std::uint64_t seed) {
  TrueModel model;
  model.f = Vec(3);
  model.f << 4.20, 4.25, 4.40;
  model.zeta = Vec(3);
  model.zeta << 0.010, 0.015, 0.020;
  model.S = CMat::Zero(3, 3);
  model.S(0, 0) = model.S(1, 1) = model.S(2, 2) = 1.0;
  model.S(0, 1) = std::polar(1.0, std::numbers::pi / 4.0);
  model.S(1, 0) = std::conj(model.S(0, 1));
  model.Se = 10.0;
  model.q = 0;
  model.fs = 100.0;
  model.seed = seed;

  const auto pts = frame_points();
  model.Phi = Mat::Zero(2 * kPoints, 3);
  for (int p = 0; p < kPoints; ++p) {
    const auto& pt = pts[static_cast<std::size_t>(p)];
    const double amp = static_cast<double>(pt.floor) / kFloors;
    model.Phi(2 * p, 0) = amp;               // TX
    model.Phi(2 * p + 1, 1) = amp;           // TY
    model.Phi(2 * p, 2) = -pt.y * amp;       // R
    model.Phi(2 * p + 1, 2) = pt.x * amp;
    model.dof_labels.push_back("P" + two_digit(p + 1) + "X");
    model.dof_labels.push_back("P" + two_digit(p + 1) + "Y");
  }
  for (int i = 0; i < 3; ++i) model.Phi.col(i).normalize();
  return model;
}

TestPlan shear_frame_plan(int n_setups, double setup_duration_s) {
  const auto rovers = rover_points();
  const int n_rov = static_cast<int>(rovers.size());
  if (n_setups < 1 || n_setups > n_rov) throw ConfigError("shear-frame plan: setups must lie in 1..32");
  if (!(setup_duration_s > 0.0)) throw ConfigError("shear-frame plan: setup duration must be > 0");
  TestPlan plan;
  for (int d = 0; d < 2 * kPoints; ++d) plan.dofs.push_back(d);
  int next = 0;
  for (int r = 0; r < n_setups; ++r) {
    const int count = n_rov / n_setups + (r < n_rov % n_setups ? 1 : 0);
    SetupPlan s;
    s.map.n_global = 2 * kPoints;
    std::vector<int> points = {0, 4};
    for (int j = 0; j < count; ++j) points.push_back(rovers[static_cast<std::size_t>(next++)]);
    for (int p : points) {
      s.map.tau.push_back(2 * p);
      s.map.tau.push_back(2 * p + 1);
    }
    s.start = r * setup_duration_s;
    s.duration = setup_duration_s;
    plan.setups.push_back(std::move(s));
  }
  plan.total_duration = n_setups * setup_duration_s;
  return plan;
}

TestPlan roving_plan(int n_setups, int rovers_per_setup, double setup_duration_s) {
  const auto rovers = rover_points();
  if (rovers_per_setup < 1 || n_setups < 1 ||
      n_setups * rovers_per_setup > static_cast<int>(rovers.size()))
    throw ConfigError("roving plan: not enough rover points for the requested setups");
  if (!(setup_duration_s > 0.0)) throw ConfigError("roving plan: setup duration must be > 0");
  std::vector<int> points = {0, 4};
  for (int j = 0; j < n_setups * rovers_per_setup; ++j) points.push_back(rovers[static_cast<std::size_t>(j)]);
  std::sort(points.begin(), points.end());
  std::vector<int> plan_index(kPoints, -1);
  TestPlan plan;
  for (std::size_t j = 0; j < points.size(); ++j) {
    plan_index[static_cast<std::size_t>(points[j])] = static_cast<int>(j);
    plan.dofs.push_back(2 * points[j]);
    plan.dofs.push_back(2 * points[j] + 1);
  }
  for (int r = 0; r < n_setups; ++r) {
    SetupPlan s;
    s.map.n_global = plan.n_dofs();
    std::vector<int> pts = {0, 4};
    for (int j = 0; j < rovers_per_setup; ++j)
      pts.push_back(rovers[static_cast<std::size_t>(r * rovers_per_setup + j)]);
    for (int p : pts) {
      const int idx = plan_index[static_cast<std::size_t>(p)];
      s.map.tau.push_back(2 * idx);
      s.map.tau.push_back(2 * idx + 1);
    }
    s.start = r * setup_duration_s;
    s.duration = setup_duration_s;
    plan.setups.push_back(std::move(s));
  }
  plan.total_duration = n_setups * setup_duration_s;
  return plan;
}

Mat plan_shapes(const TrueModel& model, const TestPlan& plan) {
  Mat out(plan.n_dofs(), model.modes());
  for (int d = 0; d < plan.n_dofs(); ++d) out.row(d) = model.Phi.row(plan.dofs[static_cast<std::size_t>(d)]);
  for (int i = 0; i < model.modes(); ++i) out.col(i).normalize();
  return out;
}

TimeHistory generate(const TrueModel& model, double duration) {
  model.validate();
  const long n = sample_count(duration, model.fs, "generate");
  TimeHistory out;
  out.dt = 1.0 / model.fs;
  out.samples.resize(model.n_dofs(), n);
  out.labels = model.dof_labels;
  ChannelSynth synth(model, n);
  for (int d = 0; d < model.n_dofs(); ++d) {
    const auto& y = synth.run(d);
    for (long j = 0; j < n; ++j) out.samples(d, j) = y[static_cast<std::size_t>(j)];
  }
  return out;
}

std::vector<TimeHistory> slice(const TimeHistory& history, const TestPlan& plan) {
  const double fs = 1.0 / history.dt;
  std::vector<TimeHistory> out;
  for (std::size_t r = 0; r < plan.setups.size(); ++r) {
    const auto& s = plan.setups[r];
    const long first = std::lround(s.start * fs);
    const long count = sample_count(s.duration, fs, "slice");
    if (first < 0 || first + count > history.n_samples())
      throw ConfigError("slice: setup " + std::to_string(r + 1) + " segment overruns the record");
    TimeHistory t;
    t.dt = history.dt;
    t.samples.resize(s.map.channels(), count);
    for (int u = 0; u < s.map.channels(); ++u) {
      const int d = plan.dofs.at(static_cast<std::size_t>(s.map.tau[static_cast<std::size_t>(u)]));
      if (d >= history.channels()) throw ConfigError("slice: record lacks DoF " + std::to_string(d + 1));
      t.samples.row(u) = history.samples.row(d).segment(first, count);
      if (!history.labels.empty()) t.labels.push_back(history.labels[static_cast<std::size_t>(d)]);
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<TimeHistory> generate_setups(const TrueModel& model, const TestPlan& plan) {
  model.validate();
  plan.validate(model);
  const long n = sample_count(plan.total_duration, model.fs, "generate_setups");
  const double dt = 1.0 / model.fs;
  std::vector<TimeHistory> out(plan.setups.size());
  std::vector<long> first(plan.setups.size());
  for (std::size_t r = 0; r < plan.setups.size(); ++r) {
    const auto& s = plan.setups[r];
    first[r] = std::lround(s.start * model.fs);
    const long count = sample_count(s.duration, model.fs, "generate_setups");
    if (first[r] + count > n) throw ConfigError("generate_setups: setup segment overruns the record");
    out[r].dt = dt;
    out[r].samples.resize(s.map.channels(), count);
    out[r].labels.resize(static_cast<std::size_t>(s.map.channels()));
  }
  ChannelSynth synth(model, n);
  for (int pd = 0; pd < plan.n_dofs(); ++pd) {
    const int d = plan.dofs[static_cast<std::size_t>(pd)];
    bool needed = false;
    for (const auto& s : plan.setups)
      for (int t : s.map.tau) needed = needed || t == pd;
    if (!needed) continue;
    const auto& y = synth.run(d);
    for (std::size_t r = 0; r < plan.setups.size(); ++r) {
      const auto& tau = plan.setups[r].map.tau;
      for (std::size_t u = 0; u < tau.size(); ++u) {
        if (tau[u] != pd) continue;
        auto row = out[r].samples.row(static_cast<Eigen::Index>(u));
        for (long j = 0; j < row.size(); ++j) row(j) = y[static_cast<std::size_t>(first[r] + j)];
        out[r].labels[u] = model.dof_labels.empty() ? "dof" + std::to_string(d + 1)
                                                    : model.dof_labels[static_cast<std::size_t>(d)];
      }
    }
  }
  return out;
}

}  // namespace msoma
