#include "msoma/spectra.hpp"

#include "fftw_lock.hpp"

#include <fftw3.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace msoma {
namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(std::string_view s, const std::string& where) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw InputError(where + ": cannot parse number '" + std::string(s) + "'");
  return v;
}

std::vector<std::vector<double>> read_rows(std::istream& in, const std::string& name, int& line_no) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv(line);
    if (width == 0) width = cells.size();
    if (cells.size() != width)
      throw InputError(name + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                       " columns, found " + std::to_string(cells.size()));
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(parse_double(c, name + ":" + std::to_string(line_no)));
    rows.push_back(std::move(row));
  }
  return rows;
}

void put_double(std::string& out, double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.16e", v);
  out.append(buf, static_cast<std::size_t>(n));
}

}  // namespace

void TimeHistory::validate() const {
  if (n_samples() < 2) throw InputError("time history: at least two samples required");
  if (channels() < 1) throw InputError("time history: no channels");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InputError("time history: sampling interval must be > 0");
  if (!samples.allFinite()) throw InputError("time history: non-finite samples");
  if (!labels.empty() && static_cast<int>(labels.size()) != channels())
    throw InputError("time history: label count does not match channel count");
}

ScaledFft scaled_fft(const TimeHistory& y) {
  y.validate();
  const long n = y.n_samples();
  const long n_out = n / 2 + 1;
  ScaledFft out;
  out.dt = y.dt;
  out.n_samples = n;
  out.coeffs.resize(y.channels(), n_out);

  std::vector<double> in(static_cast<std::size_t>(n));
  auto* spec = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * static_cast<std::size_t>(n_out)));
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(), spec, FFTW_ESTIMATE);
  }
  const double scale = std::sqrt(y.dt / static_cast<double>(n));
  for (int c = 0; c < y.channels(); ++c) {
    for (long j = 0; j < n; ++j) in[static_cast<std::size_t>(j)] = y.samples(c, j);
    fftw_execute(plan);
    for (long k = 0; k < n_out; ++k) out.coeffs(c, k) = scale * cplx(spec[k][0], spec[k][1]);
  }
  {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(spec);
  return out;
}

Mat auto_psd(const ScaledFft& fft) { return fft.coeffs.cwiseAbs2(); }

SvSpectrum sv_spectrum(const ScaledFft& fft, int half_window) {
  if (half_window < 0) throw ConfigError("sv_spectrum: half window must be >= 0");
  const long n_lines = fft.n_lines();
  const int n_r = static_cast<int>(fft.coeffs.rows());
  const int width = 2 * half_window + 1;
  const int keep = std::min(n_r, width);
  SvSpectrum out;
  const long first = half_window;
  const long last = n_lines - 1 - half_window;
  if (last < first) {
    out.freqs.resize(0);
    out.values.resize(keep, 0);
    return out;
  }
  out.freqs.resize(last - first + 1);
  out.values.resize(keep, last - first + 1);
  CMat psd(n_r, n_r);
  for (long k = first; k <= last; ++k) {
    psd.setZero();
    for (long j = k - half_window; j <= k + half_window; ++j)
      psd.noalias() += fft.coeffs.col(j) * fft.coeffs.col(j).adjoint();
    psd /= static_cast<double>(width);
    Eigen::SelfAdjointEigenSolver<CMat> es(psd, Eigen::EigenvaluesOnly);
    const Vec ev = es.eigenvalues().reverse();
    out.freqs(k - first) = fft.freq(k);
    out.values.col(k - first) = ev.head(keep).cwiseMax(0.0);
  }
  return out;
}

SetupBand band_slice(const ScaledFft& fft, double f_l, double f_u, int setup,
                     const SelectionMap& layout, int q) {
  const double df = fft.df();
  const double nyquist = 0.5 / fft.dt;
  if (!(f_l > 0.0 && f_l < f_u && f_u < nyquist))
    throw ConfigError("band_slice: require 0 < f_l < f_u < Nyquist (" + std::to_string(nyquist) + " Hz)");
  if (layout.channels() != fft.coeffs.rows())
    throw ConfigError("band_slice: selection map has " + std::to_string(layout.channels()) +
                      " channels but data has " + std::to_string(fft.coeffs.rows()));
  const long last_interior = fft.n_lines() - 2;
  const long k_lo = std::max(1L, static_cast<long>(std::ceil(f_l / df - 1e-9)));
  const long k_hi = std::min(last_interior, static_cast<long>(std::floor(f_u / df + 1e-9)));
  if (k_hi < k_lo)
    throw ConfigError("band_slice: band [" + std::to_string(f_l) + ", " + std::to_string(f_u) +
                      "] Hz contains no FFT lines");
  SetupBand band;
  band.setup = setup;
  band.layout = layout;
  band.q = q;
  band.freqs.resize(k_hi - k_lo + 1);
  for (long k = k_lo; k <= k_hi; ++k) band.freqs(k - k_lo) = fft.freq(k);
  band.F = fft.coeffs.middleCols(k_lo, k_hi - k_lo + 1);
  return band;
}

SetupBand band_slice(const SetupBand& band, double f_l, double f_u) {
  if (!(f_l <= f_u)) throw ConfigError("band_slice: require f_l <= f_u");
  // line frequencies are k * df in floating point; allow for the rounding
  const double tol = 1e-9 * std::max(std::abs(f_l), std::abs(f_u));
  std::vector<int> keep;
  for (int k = 0; k < band.n_lines(); ++k)
    if (band.freqs(k) >= f_l - tol && band.freqs(k) <= f_u + tol) keep.push_back(k);
  if (keep.empty()) throw ConfigError("band_slice: band contains no FFT lines");
  SetupBand out;
  out.setup = band.setup;
  out.layout = band.layout;
  out.q = band.q;
  out.freqs.resize(static_cast<Eigen::Index>(keep.size()));
  out.F.resize(band.F.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    out.freqs(static_cast<Eigen::Index>(j)) = band.freqs(keep[j]);
    out.F.col(static_cast<Eigen::Index>(j)) = band.F.col(keep[j]);
  }
  return out;
}

TimeHistory read_time_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw InputError(path.string() + ": empty file");
  auto names = split_csv(header);
  for (auto& s : names)
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  if (names.size() < 2 || names.front() != "time")
    throw InputError(path.string() + ":1: header must be `time,<label1>,...`");
  int line_no = 1;
  auto rows = read_rows(in, path.string(), line_no);
  if (rows.size() < 2) throw InputError(path.string() + ": at least two samples required");
  if (rows.front().size() != names.size())
    throw InputError(path.string() + ": header and data column counts differ");

  const std::size_t n = rows.size();
  const double dt = (rows.back()[0] - rows.front()[0]) / static_cast<double>(n - 1);
  if (!(dt > 0.0)) throw InputError(path.string() + ": time column must be increasing");
  for (std::size_t j = 1; j < n; ++j) {
    const double step = rows[j][0] - rows[j - 1][0];
    if (std::abs(step - dt) > 1e-6 * dt)
      throw InputError(path.string() + ":" + std::to_string(j + 2) + ": non-uniform sampling interval");
  }
  TimeHistory y;
  y.dt = dt;
  y.labels.assign(names.begin() + 1, names.end());
  y.samples.resize(static_cast<Eigen::Index>(names.size() - 1), static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 1; c < names.size(); ++c)
      y.samples(static_cast<Eigen::Index>(c - 1), static_cast<Eigen::Index>(j)) = rows[j][c];
  y.validate();
  return y;
}

TimeHistory read_time_history_csv(const std::filesystem::path& csv,
                                  const std::filesystem::path& sidecar) {
  std::ifstream meta_in(sidecar);
  if (!meta_in) throw InputError("cannot open " + sidecar.string());
  nlohmann::json meta;
  try {
    meta_in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(sidecar.string() + ": " + e.what());
  }
  if (!meta.contains("dt") || !meta["dt"].is_number())
    throw InputError(sidecar.string() + ": field 'dt' (number) is required");
  std::ifstream in(csv);
  if (!in) throw InputError("cannot open " + csv.string());
  int line_no = 0;
  auto rows = read_rows(in, csv.string(), line_no);
  if (rows.empty()) throw InputError(csv.string() + ": no data");
  TimeHistory y;
  y.dt = meta["dt"].get<double>();
  const std::size_t nc = rows.front().size();
  y.samples.resize(static_cast<Eigen::Index>(nc), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t c = 0; c < nc; ++c)
      y.samples(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) = rows[j][c];
  if (meta.contains("labels")) {
    y.labels = meta["labels"].get<std::vector<std::string>>();
  } else {
    for (std::size_t c = 0; c < nc; ++c) y.labels.push_back("ch" + std::to_string(c + 1));
  }
  y.validate();
  return y;
}

void write_time_history_csv(const TimeHistory& y, const std::filesystem::path& path) {
  y.validate();
  std::string out = "time";
  for (int c = 0; c < y.channels(); ++c) {
    out += ',';
    out += y.labels.empty() ? "ch" + std::to_string(c + 1) : y.labels[static_cast<std::size_t>(c)];
  }
  out += '\n';
  out.reserve(out.size() + static_cast<std::size_t>(y.n_samples()) *
                               static_cast<std::size_t>(y.channels() + 1) * 24);
  for (long j = 0; j < y.n_samples(); ++j) {
    put_double(out, static_cast<double>(j) * y.dt);
    for (int c = 0; c < y.channels(); ++c) {
      out += ',';
      put_double(out, y.samples(c, j));
    }
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace msoma
