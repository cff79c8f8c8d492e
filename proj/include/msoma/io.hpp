#pragma once

// Analysis configuration, result serialization and CSV/JSON helpers.

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "msoma/em_mpv.hpp"
#include "msoma/fdm_oracle.hpp"
#include "msoma/model.hpp"
#include "msoma/pcm_fast.hpp"
#include "msoma/spectra.hpp"
#include "msoma/synth.hpp"

namespace msoma::io {

using json = nlohmann::json;

struct SetupConfig {
  std::filesystem::path data;
  std::optional<std::filesystem::path> sidecar;
  SelectionMap map;
  std::optional<std::pair<double, double>> band;
};

struct AnalysisConfig {
  std::filesystem::path base_dir;
  int modes = 0;
  int q = 0;
  Vec f0;
  std::pair<double, double> band{0.0, 0.0};
  int n_dofs = 0;
  std::vector<std::string> dof_labels;
  std::vector<SetupConfig> setups;
  EmSettings em;
  FdSettings fd;
  std::optional<std::filesystem::path> reference_shapes;
};

/// Throws ConfigError naming the offending field (e.g. "setups[2].tau[5]").
AnalysisConfig parse_config(const json& j, const std::filesystem::path& base_dir);
AnalysisConfig load_config(const std::filesystem::path& path);
json config_to_json(const AnalysisConfig& cfg);

/// Read every setup record, FFT it and cut the band.
std::vector<SetupBand> load_bands(const AnalysisConfig& cfg);
std::optional<Mat> load_reference_shapes(const AnalysisConfig& cfg);

json read_json(const std::filesystem::path& path);

json theta_to_json(const ThetaVector& theta);
ThetaVector theta_from_json(const json& j);

json mpv_to_json(const MpvResult& res);
struct MpvFile {
  ThetaVector theta;
  bool converged = false;
  double nllf = 0.0;
};
MpvFile read_mpv(const std::filesystem::path& path);

json model_to_json(const TrueModel& model);
json plan_to_json(const TestPlan& plan);
TrueModel model_from_json(const json& j, const std::filesystem::path& base_dir);
TestPlan plan_from_json(const json& j);

/// Full-precision scientific notation.
std::string fmt(double v);

/// Comma-separated table with a header row and LF line endings.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}
  void add(std::vector<std::string> row);
  std::string str() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Dense matrix with row and column labels.
void write_matrix_csv(const std::filesystem::path& path, const Mat& a,
                      const std::vector<std::string>& row_labels,
                      const std::vector<std::string>& col_labels);
/// Numeric CSV, optional header row (detected) and optional label column.
Mat read_matrix_csv(const std::filesystem::path& path);

void write_trace_csv(const std::filesystem::path& path, const MpvResult& res);
json posterior_to_json(const PosteriorResult& post, int n_setups, int modes);

/// Write to a temporary sibling, then rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const json& j);

}  // namespace msoma::io
