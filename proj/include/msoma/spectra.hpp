#pragma once

// Time-history ingestion, scaled FFT, spectral diagnostics and band slicing.

#include <filesystem>
#include <string>
#include <vector>

#include "msoma/model.hpp"
#include "msoma/types.hpp"

namespace msoma {

/// Multi-channel record: samples is n_channels x n_samples.
struct TimeHistory {
  Mat samples;
  double dt = 0.0;
  std::vector<std::string> labels;

  int channels() const { return static_cast<int>(samples.rows()); }
  long n_samples() const { return static_cast<long>(samples.cols()); }
  void validate() const;
};

/// One-sided scaled FFT: column k holds line f_k = k / (N dt), k = 0 .. N/2.
struct ScaledFft {
  CMat coeffs;
  double dt = 0.0;
  long n_samples = 0;

  double df() const { return 1.0 / (static_cast<double>(n_samples) * dt); }
  double freq(long k) const { return static_cast<double>(k) * df(); }
  long n_lines() const { return static_cast<long>(coeffs.cols()); }
};

/// FFT lines of one setup restricted to [f_l, f_u]; F is n_r x N_f.
struct SetupBand {
  Vec freqs;
  CMat F;
  int setup = 0;
  SelectionMap layout;
  int q = 0;  // 0 acceleration, 1 velocity, 2 displacement

  int channels() const { return static_cast<int>(F.rows()); }
  int n_lines() const { return static_cast<int>(F.cols()); }
};

/// sqrt(dt / N) sum_j y_j exp(-i 2 pi j k / N), k = 0 .. int(N/2).
ScaledFft scaled_fft(const TimeHistory& y);

/// Per-channel |F_k|^2 (channels x lines).
Mat auto_psd(const ScaledFft& fft);

struct SvSpectrum {
  Vec freqs;
  Mat values;  // min(n_r, 2w+1) x n_freqs, descending per column
};

/// Eigenvalues of the windowed PSD-matrix estimate (1/(2w+1)) sum F F^H.
/// Lines whose window would leave the stored range are skipped.
SvSpectrum sv_spectrum(const ScaledFft& fft, int half_window = 10);

/// Lines with f_l <= f_k <= f_u, excluding k = 0 and the Nyquist line.
SetupBand band_slice(const ScaledFft& fft, double f_l, double f_u, int setup,
                     const SelectionMap& layout, int q = 0);

/// Restrict an existing band; used for idempotence and sub-band studies.
SetupBand band_slice(const SetupBand& band, double f_l, double f_u);

// CSV ingestion: header `time,<label>,...`, one row per sample.
TimeHistory read_time_history_csv(const std::filesystem::path& path);
// Headerless numeric CSV plus a JSON sidecar with "dt" and "labels".
TimeHistory read_time_history_csv(const std::filesystem::path& csv,
                                  const std::filesystem::path& sidecar);
void write_time_history_csv(const TimeHistory& y, const std::filesystem::path& path);

}  // namespace msoma
