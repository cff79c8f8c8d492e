#include "msoma/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace msoma::io {
namespace {

[[noreturn]] void field_error(const std::string& path, const std::string& msg) {
  throw ConfigError("config field '" + path + "': " + msg);
}

const json& require(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) field_error(path + key, "required");
  return j.at(key);
}

double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) field_error(path, "expected a number");
  return j.get<double>();
}

int as_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) field_error(path, "expected an integer");
  return j.get<int>();
}

std::vector<double> as_numbers(const json& j, const std::string& path) {
  if (!j.is_array()) field_error(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(as_number(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

std::pair<double, double> as_band(const json& j, const std::string& path) {
  const auto v = as_numbers(j, path);
  if (v.size() != 2) field_error(path, "expected [f_lower, f_upper]");
  if (!(v[0] > 0.0 && v[0] < v[1])) field_error(path, "require 0 < f_lower < f_upper");
  return {v[0], v[1]};
}

Mat rows_to_mat(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) field_error(path, "expected a non-empty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  Mat out(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto row = as_numbers(j[r], path + "[" + std::to_string(r) + "]");
    if (row.size() != cols) field_error(path, "ragged rows");
    for (std::size_t c = 0; c < cols; ++c) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
  }
  return out;
}

json mat_to_rows(const Mat& a) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < a.cols(); ++c) row.push_back(a(r, c));
    rows.push_back(row);
  }
  return rows;
}

json vec_to_json(const Vec& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Vec json_to_vec(const json& j, const std::string& path) {
  const auto v = as_numbers(j, path);
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<int> as_index_list(const json& j, const std::string& path, int upper) {
  if (!j.is_array() || j.empty()) field_error(path, "expected a non-empty array of 1-based indices");
  std::vector<int> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    const int d = as_int(j[i], p);
    if (d < 1 || d > upper) field_error(p, "index " + std::to_string(d) + " outside 1.." + std::to_string(upper));
    out.push_back(d - 1);
  }
  return out;
}

bool parse_cell(std::string_view s, double& v) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.remove_suffix(1);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

AnalysisConfig parse_config(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  AnalysisConfig cfg;
  cfg.base_dir = base_dir;
  cfg.modes = as_int(require(j, "modes", ""), "modes");
  if (cfg.modes < 1) field_error("modes", "must be >= 1");
  if (j.contains("q")) {
    cfg.q = as_int(j["q"], "q");
    if (cfg.q < 0 || cfg.q > 2) field_error("q", "must be 0 (acceleration), 1 (velocity) or 2 (displacement)");
  }
  cfg.f0 = json_to_vec(require(j, "f0", ""), "f0");
  if (cfg.f0.size() != cfg.modes) field_error("f0", "needs one initial frequency per mode");
  for (int i = 1; i < cfg.modes; ++i)
    if (!(cfg.f0(i) > cfg.f0(i - 1))) field_error("f0", "must be strictly increasing");
  cfg.band = as_band(require(j, "band", ""), "band");
  cfg.n_dofs = as_int(require(j, "n_dofs", ""), "n_dofs");
  if (cfg.n_dofs < 1) field_error("n_dofs", "must be >= 1");
  if (j.contains("dof_labels")) {
    if (!j["dof_labels"].is_array() || static_cast<int>(j["dof_labels"].size()) != cfg.n_dofs)
      field_error("dof_labels", "expected n_dofs strings");
    for (const auto& s : j["dof_labels"]) {
      if (!s.is_string()) field_error("dof_labels", "expected strings");
      cfg.dof_labels.push_back(s.get<std::string>());
    }
  }
  const json& setups = require(j, "setups", "");
  if (!setups.is_array() || setups.empty()) field_error("setups", "expected a non-empty array");
  for (std::size_t r = 0; r < setups.size(); ++r) {
    const std::string p = "setups[" + std::to_string(r) + "].";
    const json& s = setups[r];
    SetupConfig sc;
    const json& data = require(s, "data", p);
    if (!data.is_string()) field_error(p + "data", "expected a path string");
    sc.data = data.get<std::string>();
    if (s.contains("sidecar")) {
      if (!s["sidecar"].is_string()) field_error(p + "sidecar", "expected a path string");
      sc.sidecar = std::filesystem::path(s["sidecar"].get<std::string>());
    }
    sc.map.n_global = cfg.n_dofs;
    sc.map.tau = as_index_list(require(s, "tau", p), p + "tau", cfg.n_dofs);
    try {
      sc.map.validate();
    } catch (const ConfigError& e) {
      field_error(p + "tau", e.what());
    }
    if (sc.map.channels() < cfg.modes)
      field_error(p + "tau", "fewer channels than modes");
    if (s.contains("band")) sc.band = as_band(s["band"], p + "band");
    cfg.setups.push_back(std::move(sc));
  }
  std::vector<SelectionMap> maps;
  for (const auto& s : cfg.setups) maps.push_back(s.map);
  try {
    check_coverage(maps);
  } catch (const ConfigError& e) {
    field_error("setups", e.what());
  }
  if (j.contains("em")) {
    const json& e = j["em"];
    if (!e.is_object()) field_error("em", "expected an object");
    if (e.contains("max_iter")) cfg.em.max_iter = as_int(e["max_iter"], "em.max_iter");
    if (e.contains("tol_rel_nllf")) cfg.em.tol_rel_nllf = as_number(e["tol_rel_nllf"], "em.tol_rel_nllf");
    if (e.contains("tol_param")) cfg.em.tol_param = as_number(e["tol_param"], "em.tol_param");
    if (e.contains("newton_max_iter")) cfg.em.newton_max_iter = as_int(e["newton_max_iter"], "em.newton_max_iter");
    if (e.contains("zeta_min")) cfg.em.zeta_min = as_number(e["zeta_min"], "em.zeta_min");
    if (e.contains("zeta_max")) cfg.em.zeta_max = as_number(e["zeta_max"], "em.zeta_max");
    if (e.contains("freq_margin")) cfg.em.freq_margin = as_number(e["freq_margin"], "em.freq_margin");
    if (e.contains("polish_switch")) cfg.em.polish_switch = as_number(e["polish_switch"], "em.polish_switch");
    if (e.contains("newton_polish")) {
      if (!e["newton_polish"].is_boolean()) field_error("em.newton_polish", "expected true or false");
      cfg.em.newton_polish = e["newton_polish"].get<bool>();
    }
    if (e.contains("acceleration")) {
      const json& a = e["acceleration"];
      if (a == "off") cfg.em.acceleration = Acceleration::Off;
      else if (a == "parabolic") cfg.em.acceleration = Acceleration::Parabolic;
      else field_error("em.acceleration", "expected \"off\" or \"parabolic\"");
    }
    try {
      cfg.em.validate();
    } catch (const ConfigError& err) {
      field_error("em", err.what());
    }
  }
  if (j.contains("fd")) {
    const json& f = j["fd"];
    if (f.contains("rel_step")) cfg.fd.rel_step = as_number(f["rel_step"], "fd.rel_step");
    if (f.contains("abs_step_floor")) cfg.fd.abs_step_floor = as_number(f["abs_step_floor"], "fd.abs_step_floor");
    if (f.contains("hessian_rel_step"))
      cfg.fd.hessian_rel_step = as_number(f["hessian_rel_step"], "fd.hessian_rel_step");
    if (f.contains("richardson")) {
      if (!f["richardson"].is_boolean()) field_error("fd.richardson", "expected true or false");
      cfg.fd.richardson = f["richardson"].get<bool>();
    }
    try {
      cfg.fd.validate();
    } catch (const ConfigError& err) {
      field_error("fd", err.what());
    }
  }
  if (j.contains("reference_shapes")) {
    if (!j["reference_shapes"].is_string()) field_error("reference_shapes", "expected a path string");
    cfg.reference_shapes = std::filesystem::path(j["reference_shapes"].get<std::string>());
  }
  return cfg;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

AnalysisConfig load_config(const std::filesystem::path& path) {
  const json j = read_json(path);
  try {
    return parse_config(j, path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

json config_to_json(const AnalysisConfig& cfg) {
  json j;
  j["modes"] = cfg.modes;
  j["q"] = cfg.q;
  j["f0"] = vec_to_json(cfg.f0);
  j["band"] = {cfg.band.first, cfg.band.second};
  j["n_dofs"] = cfg.n_dofs;
  if (!cfg.dof_labels.empty()) j["dof_labels"] = cfg.dof_labels;
  j["setups"] = json::array();
  for (const auto& s : cfg.setups) {
    json js;
    js["data"] = s.data.generic_string();
    if (s.sidecar) js["sidecar"] = s.sidecar->generic_string();
    json tau = json::array();
    for (int d : s.map.tau) tau.push_back(d + 1);
    js["tau"] = tau;
    if (s.band) js["band"] = {s.band->first, s.band->second};
    j["setups"].push_back(js);
  }
  j["em"] = {{"max_iter", cfg.em.max_iter},
             {"tol_rel_nllf", cfg.em.tol_rel_nllf},
             {"tol_param", cfg.em.tol_param},
             {"acceleration", cfg.em.acceleration == Acceleration::Off ? "off" : "parabolic"},
             {"newton_polish", cfg.em.newton_polish}};
  j["fd"] = {{"rel_step", cfg.fd.rel_step},
             {"abs_step_floor", cfg.fd.abs_step_floor},
             {"hessian_rel_step", cfg.fd.hessian_rel_step},
             {"richardson", cfg.fd.richardson}};
  if (cfg.reference_shapes) j["reference_shapes"] = cfg.reference_shapes->generic_string();
  return j;
}

std::vector<SetupBand> load_bands(const AnalysisConfig& cfg) {
  std::vector<SetupBand> bands;
  for (std::size_t r = 0; r < cfg.setups.size(); ++r) {
    const auto& s = cfg.setups[r];
    const auto data = cfg.base_dir / s.data;
    const TimeHistory y = s.sidecar ? read_time_history_csv(data, cfg.base_dir / *s.sidecar)
                                    : read_time_history_csv(data);
    if (y.channels() != s.map.channels())
      throw ConfigError("setup " + std::to_string(r + 1) + ": " + data.string() + " has " +
                        std::to_string(y.channels()) + " channels but tau lists " +
                        std::to_string(s.map.channels()));
    const auto band = s.band.value_or(cfg.band);
    bands.push_back(band_slice(scaled_fft(y), band.first, band.second, static_cast<int>(r), s.map, cfg.q));
  }
  return bands;
}

std::optional<Mat> load_reference_shapes(const AnalysisConfig& cfg) {
  if (!cfg.reference_shapes) return std::nullopt;
  Mat ref = read_matrix_csv(cfg.base_dir / *cfg.reference_shapes);
  if (ref.rows() != cfg.n_dofs || ref.cols() != cfg.modes)
    throw ConfigError("reference_shapes: expected " + std::to_string(cfg.n_dofs) + " x " +
                      std::to_string(cfg.modes) + " values");
  return ref;
}

json theta_to_json(const ThetaVector& theta) {
  json j;
  j["modes"] = theta.modes();
  j["n_dofs"] = theta.n_dofs();
  j["setups"] = json::array();
  for (const auto& x : theta.setups) {
    j["setups"].push_back({{"f", vec_to_json(x.f)},
                           {"zeta", vec_to_json(x.zeta)},
                           {"S_re", mat_to_rows(x.S.real())},
                           {"S_im", mat_to_rows(x.S.imag())},
                           {"Se", x.Se}});
  }
  j["Phi"] = mat_to_rows(theta.Phi);
  return j;
}

ThetaVector theta_from_json(const json& j) {
  ThetaVector theta;
  const int m = as_int(require(j, "modes", ""), "modes");
  const json& setups = require(j, "setups", "");
  if (!setups.is_array()) field_error("setups", "expected an array");
  for (std::size_t r = 0; r < setups.size(); ++r) {
    const std::string p = "setups[" + std::to_string(r) + "].";
    const json& s = setups[r];
    SetupParams x;
    x.f = json_to_vec(require(s, "f", p), p + "f");
    x.zeta = json_to_vec(require(s, "zeta", p), p + "zeta");
    const Mat re = rows_to_mat(require(s, "S_re", p), p + "S_re");
    const Mat im = rows_to_mat(require(s, "S_im", p), p + "S_im");
    if (re.rows() != m || re.cols() != m || im.rows() != m || im.cols() != m)
      field_error(p + "S_re", "S must be modes x modes");
    x.S = re.cast<cplx>() + cplx(0.0, 1.0) * im.cast<cplx>();
    x.Se = as_number(require(s, "Se", p), p + "Se");
    if (x.f.size() != m || x.zeta.size() != m) field_error(p + "f", "one value per mode required");
    theta.setups.push_back(x);
  }
  theta.Phi = rows_to_mat(require(j, "Phi", ""), "Phi");
  if (theta.Phi.cols() != m) field_error("Phi", "expected n_dofs rows of modes values");
  return theta;
}

json mpv_to_json(const MpvResult& res) {
  json j = theta_to_json(res.theta_hat);
  j["converged"] = res.converged;
  j["iterations"] = res.iterations;
  j["nllf"] = res.nllf;
  j["grad_norm"] = res.grad_norm;
  return j;
}

MpvFile read_mpv(const std::filesystem::path& path) {
  const json j = read_json(path);
  MpvFile out;
  try {
    out.theta = theta_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  out.converged = j.value("converged", false);
  out.nllf = j.value("nllf", std::nan(""));
  return out;
}

json model_to_json(const TrueModel& model) {
  json j;
  j["f"] = vec_to_json(model.f);
  j["zeta"] = vec_to_json(model.zeta);
  j["S_re"] = mat_to_rows(model.S.real());
  j["S_im"] = mat_to_rows(model.S.imag());
  j["Se"] = model.Se;
  j["q"] = model.q;
  j["fs"] = model.fs;
  j["seed"] = model.seed;
  if (!model.dof_labels.empty()) j["dof_labels"] = model.dof_labels;
  j["Phi"] = mat_to_rows(model.Phi);
  return j;
}

TrueModel model_from_json(const json& j, const std::filesystem::path& base_dir) {
  TrueModel model;
  const std::string p = "model.";
  model.f = json_to_vec(require(j, "f", p), p + "f");
  model.zeta = json_to_vec(require(j, "zeta", p), p + "zeta");
  const int m = static_cast<int>(model.f.size());
  const Mat re = rows_to_mat(require(j, "S_re", p), p + "S_re");
  const Mat im = j.contains("S_im") ? rows_to_mat(j["S_im"], p + "S_im") : Mat::Zero(m, m);
  if (re.rows() != m || re.cols() != m || im.rows() != m || im.cols() != m)
    field_error(p + "S_re", "S must be modes x modes");
  model.S = re.cast<cplx>() + cplx(0.0, 1.0) * im.cast<cplx>();
  model.Se = as_number(require(j, "Se", p), p + "Se");
  if (j.contains("q")) model.q = as_int(j["q"], p + "q");
  if (j.contains("fs")) model.fs = as_number(j["fs"], p + "fs");
  if (j.contains("Phi")) {
    model.Phi = rows_to_mat(j["Phi"], p + "Phi");
  } else {
    const json& shapes = require(j, "shapes", p);
    if (!shapes.is_string()) field_error(p + "shapes", "expected a CSV path");
    model.Phi = read_matrix_csv(base_dir / shapes.get<std::string>());
  }
  if (model.Phi.cols() != m) field_error(p + "Phi", "one column per mode required");
  for (int i = 0; i < m; ++i) {
    const double nrm = model.Phi.col(i).norm();
    if (!(nrm > 0.0)) field_error(p + "Phi", "zero shape column");
    model.Phi.col(i) /= nrm;
  }
  if (j.contains("dof_labels")) model.dof_labels = j["dof_labels"].get<std::vector<std::string>>();
  try {
    model.validate();
  } catch (const ConfigError& e) {
    field_error("model", e.what());
  }
  return model;
}

json plan_to_json(const TestPlan& plan) {
  json j;
  json dofs = json::array();
  for (int d : plan.dofs) dofs.push_back(d + 1);
  j["dofs"] = dofs;
  j["total_duration"] = plan.total_duration;
  j["setups"] = json::array();
  for (const auto& s : plan.setups) {
    json tau = json::array();
    for (int d : s.map.tau) tau.push_back(d + 1);
    j["setups"].push_back({{"tau", tau}, {"start", s.start}, {"duration", s.duration}});
  }
  return j;
}

TestPlan plan_from_json(const json& j) {
  TestPlan plan;
  const std::string p = "plan.";
  const json& dofs = require(j, "dofs", p);
  if (!dofs.is_array() || dofs.empty()) field_error(p + "dofs", "expected a non-empty array");
  for (std::size_t i = 0; i < dofs.size(); ++i) {
    const int d = as_int(dofs[i], p + "dofs[" + std::to_string(i) + "]");
    if (d < 1) field_error(p + "dofs[" + std::to_string(i) + "]", "must be >= 1");
    plan.dofs.push_back(d - 1);
  }
  plan.total_duration = as_number(require(j, "total_duration", p), p + "total_duration");
  const json& setups = require(j, "setups", p);
  if (!setups.is_array() || setups.empty()) field_error(p + "setups", "expected a non-empty array");
  for (std::size_t r = 0; r < setups.size(); ++r) {
    const std::string q = p + "setups[" + std::to_string(r) + "].";
    SetupPlan s;
    s.map.n_global = plan.n_dofs();
    s.map.tau = as_index_list(require(setups[r], "tau", q), q + "tau", plan.n_dofs());
    s.start = as_number(require(setups[r], "start", q), q + "start");
    s.duration = as_number(require(setups[r], "duration", q), q + "duration");
    plan.setups.push_back(std::move(s));
  }
  return plan;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.16e", v);
  return buf;
}

void CsvTable::add(std::vector<std::string> row) {
  if (row.size() != header_.size()) throw ConfigError("CsvTable: row width does not match header");
  rows_.push_back(std::move(row));
}

std::string CsvTable::str() const {
  std::string out;
  auto put = [&out](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += row[i];
    }
    out += '\n';
  };
  put(header_);
  for (const auto& r : rows_) put(r);
  return out;
}

void CsvTable::write(const std::filesystem::path& path) const { write_text_atomic(path, str()); }

void write_matrix_csv(const std::filesystem::path& path, const Mat& a,
                      const std::vector<std::string>& row_labels,
                      const std::vector<std::string>& col_labels) {
  if (static_cast<Eigen::Index>(row_labels.size()) != a.rows() ||
      static_cast<Eigen::Index>(col_labels.size()) != a.cols())
    throw ConfigError("write_matrix_csv: label count mismatch");
  std::vector<std::string> header = {"label"};
  header.insert(header.end(), col_labels.begin(), col_labels.end());
  CsvTable t(header);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    std::vector<std::string> row = {row_labels[static_cast<std::size_t>(r)]};
    for (Eigen::Index c = 0; c < a.cols(); ++c) row.push_back(fmt(a(r, c)));
    t.add(std::move(row));
  }
  t.write(path);
}

Mat read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split(line);
    std::vector<double> vals;
    bool numeric = true;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v;
      if (parse_cell(cells[c], v)) {
        vals.push_back(v);
      } else if (c == 0) {
        continue;  // row label
      } else {
        numeric = false;
        break;
      }
    }
    if (!numeric || vals.empty()) {
      if (rows.empty()) continue;  // header
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": non-numeric value");
    }
    if (!rows.empty() && vals.size() != rows.front().size())
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": ragged row");
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw InputError(path.string() + ": no numeric rows");
  Mat out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return out;
}

void write_trace_csv(const std::filesystem::path& path, const MpvResult& res) {
  CsvTable t({"iter", "nllf", "max_param_delta", "step"});
  for (const auto& r : res.trace)
    t.add({std::to_string(r.iter), fmt(r.nllf), fmt(r.max_param_delta),
           r.iter == 0 ? "start" : r.newton ? "newton" : r.accelerated ? "parabolic" : "em"});
  t.write(path);
}

json posterior_to_json(const PosteriorResult& post, int n_setups, int modes) {
  json j;
  const int nxs = n_setups * (modes + 1) * (modes + 1);
  j["parameters"] = json::array();
  for (int p = 0; p < nxs; ++p) {
    json e = {{"label", post.labels[static_cast<std::size_t>(p)]},
              {"mpv", post.mpv(p)},
              {"std", post.std_dev(p)}};
    if (std::isfinite(post.cov_of_variation(p))) e["cov"] = post.cov_of_variation(p);
    else e["cov"] = nullptr;
    j["parameters"].push_back(e);
  }
  j["shape_uncertainty"] = vec_to_json(post.shape_uncertainty);
  if (post.mac.size() > 0) j["mac"] = vec_to_json(post.mac);
  return j;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw InputError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_json(const std::filesystem::path& path, const json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

}  // namespace msoma::io
