// msoma: synth / identify / pcm / report.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "msoma/em_mpv.hpp"
#include "msoma/fdm_oracle.hpp"
#include "msoma/io.hpp"
#include "msoma/pcm_fast.hpp"
#include "msoma/spectra.hpp"
#include "msoma/synth.hpp"

namespace fs = std::filesystem;
using namespace msoma;
using io::json;

namespace {

constexpr const char* kVersion = "1.0.0";
constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitNotConverged = 2;

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

struct Manifest {
  std::string command;
  fs::path out;
  json parameters = json::object();
  json inputs = json::object();
  std::vector<std::pair<std::string, double>> timings;
  bool deterministic = false;

  void write() const {
    json j;
    j["tool"] = "msoma";
    j["version"] = kVersion;
    j["command"] = command;
    j["output_dir"] = out.generic_string();
    j["parameters"] = parameters;
    j["inputs"] = inputs;
    j["deterministic"] = deterministic;
    if (!deterministic) {
      json t = json::object();
      for (const auto& [k, v] : timings) t[k] = v;
      j["timings_s"] = t;
    }
    io::write_json(out / "manifest.json", j);
  }
};

fs::path absolute_or_empty(const std::string& p) {
  return p.empty() ? fs::path() : fs::absolute(p).lexically_normal();
}

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) throw ConfigError("--out is required");
  fs::create_directories(dir);
}

// ---------- synth

struct SynthArgs {
  std::string preset;
  std::string config;
  int setups = 4;
  double duration_min = 5.0;
  std::uint64_t seed = 0;
  std::string out;
  bool deterministic = false;
};

int cmd_synth(const SynthArgs& a) {
  Stopwatch sw;
  Manifest man;
  man.command = "synth";
  man.out = absolute_or_empty(a.out);
  man.deterministic = a.deterministic;
  if (a.preset.empty() == a.config.empty())
    throw ConfigError("synth: give exactly one of --preset or --config");
  if (!(a.duration_min > 0.0)) throw ConfigError("--duration-min must be > 0");
  if (a.setups < 1) throw ConfigError("--setups must be >= 1");

  TrueModel model;
  TestPlan plan;
  std::pair<double, double> band{3.9, 4.7};
  Vec f0;
  if (!a.preset.empty()) {
    if (a.preset != "shear-frame") throw ConfigError("--preset: unknown preset '" + a.preset + "'");
    model = shear_frame_preset(a.seed);
    plan = shear_frame_plan(a.setups, 60.0 * a.duration_min);
    f0 = model.f;
  } else {
    const fs::path cfg_path = fs::absolute(a.config);
    const json j = io::read_json(cfg_path);
    if (!j.contains("model")) throw ConfigError("config field 'model': required");
    model = io::model_from_json(j["model"], cfg_path.parent_path());
    model.seed = a.seed;
    if (j.contains("plan")) {
      plan = io::plan_from_json(j["plan"]);
    } else {
      TestPlan p;
      for (int d = 0; d < model.n_dofs(); ++d) p.dofs.push_back(d);
      SetupPlan s;
      s.map.n_global = model.n_dofs();
      s.map.tau = p.dofs;
      s.duration = 60.0 * a.duration_min;
      p.setups.push_back(s);
      p.total_duration = s.duration;
      plan = p;
    }
    if (j.contains("band")) {
      const auto b = j["band"].get<std::vector<double>>();
      if (b.size() != 2) throw ConfigError("config field 'band': expected [f_lower, f_upper]");
      band = {b[0], b[1]};
    } else {
      const double lo = model.f.minCoeff(), hi = model.f.maxCoeff();
      band = {0.9 * lo, 1.1 * hi};
    }
    f0 = j.contains("f0") ? Vec(Eigen::Map<const Vec>(j["f0"].get<std::vector<double>>().data(),
                                                     static_cast<Eigen::Index>(j["f0"].size())))
                          : model.f;
    man.inputs["config"] = cfg_path.generic_string();
  }
  plan.validate(model);
  ensure_dir(man.out);
  man.parameters = {{"preset", a.preset},       {"setups", a.setups},
                    {"duration_min", a.duration_min}, {"seed", a.seed}};

  const auto records = generate_setups(model, plan);
  man.timings.push_back({"generate", sw.lap()});

  std::vector<std::string> plan_labels;
  for (int d : plan.dofs)
    plan_labels.push_back(model.dof_labels.empty() ? "dof" + std::to_string(d + 1)
                                                   : model.dof_labels[static_cast<std::size_t>(d)]);

  io::AnalysisConfig cfg;
  cfg.modes = model.modes();
  cfg.q = model.q;
  cfg.f0 = f0;
  cfg.band = band;
  cfg.n_dofs = plan.n_dofs();
  cfg.dof_labels = plan_labels;
  cfg.reference_shapes = "truth_shapes.csv";
  for (std::size_t r = 0; r < records.size(); ++r) {
    auto y = records[r];
    y.labels.clear();
    for (int d : plan.setups[r].map.tau) y.labels.push_back(plan_labels[static_cast<std::size_t>(d)]);
    const std::string name = "setup" + std::to_string(r + 1) + ".csv";
    write_time_history_csv(y, man.out / name);
    io::SetupConfig sc;
    sc.data = name;
    sc.map = plan.setups[r].map;
    cfg.setups.push_back(sc);
  }
  std::vector<std::string> mode_labels;
  for (int i = 0; i < model.modes(); ++i) mode_labels.push_back("mode" + std::to_string(i + 1));
  io::write_matrix_csv(man.out / "truth_shapes.csv", plan_shapes(model, plan), plan_labels, mode_labels);
  io::write_json(man.out / "truth.json", io::model_to_json(model));
  io::write_json(man.out / "plan.json", io::plan_to_json(plan));
  io::write_json(man.out / "config.json", io::config_to_json(cfg));
  man.timings.push_back({"write", sw.lap()});
  man.write();
  std::cout << "wrote " << records.size() << " setups to " << man.out.string() << "\n";
  return kExitOk;
}

// ---------- identify

struct IdentifyArgs {
  std::string config;
  std::string out;
  std::string init;
  bool deterministic = false;
};

int cmd_identify(const IdentifyArgs& a) {
  Stopwatch sw;
  Manifest man;
  man.command = "identify";
  man.out = absolute_or_empty(a.out);
  man.deterministic = a.deterministic;
  const fs::path cfg_path = fs::absolute(a.config);
  const auto cfg = io::load_config(cfg_path);
  man.inputs["config"] = cfg_path.generic_string();
  const auto bands = io::load_bands(cfg);
  man.timings.push_back({"load", sw.lap()});
  ensure_dir(man.out);

  MpvResult res;
  if (!a.init.empty()) {
    const fs::path init_path = fs::absolute(a.init);
    man.inputs["init"] = init_path.generic_string();
    const auto start = io::read_mpv(init_path).theta;
    if (start.n_setups() != static_cast<int>(bands.size()) || start.modes() != cfg.modes ||
        start.n_dofs() != cfg.n_dofs)
      throw ConfigError("--init: parameter dimensions do not match the configuration");
    res = run_em(bands, start, cfg.em);
  } else {
    res = run_em(bands, cfg.f0, cfg.em);
  }
  man.timings.push_back({"em", sw.lap()});
  io::write_json(man.out / "mpv.json", io::mpv_to_json(res));
  io::write_trace_csv(man.out / "trace.csv", res);
  man.parameters = {{"iterations", res.iterations}, {"converged", res.converged}};
  man.write();
  std::cout << (res.converged ? "converged" : "NOT converged") << " after " << res.iterations
            << " iterations, nllf " << io::fmt(res.nllf) << ", |grad|inf " << io::fmt(res.grad_norm)
            << "\n";
  return res.converged ? kExitOk : kExitNotConverged;
}

// ---------- pcm

struct PcmArgs {
  std::string config;
  std::string mpv;
  std::string out;
  std::string oracle;
  bool force = false;
  bool full_cov = false;
  bool deterministic = false;
};

int cmd_pcm(const PcmArgs& a) {
  Stopwatch sw;
  Manifest man;
  man.command = "pcm";
  man.out = absolute_or_empty(a.out);
  man.deterministic = a.deterministic;
  if (!a.oracle.empty() && a.oracle != "fdm") throw ConfigError("--oracle: only 'fdm' is supported");
  const fs::path cfg_path = fs::absolute(a.config);
  const fs::path mpv_path = fs::absolute(a.mpv);
  if (!fs::exists(mpv_path)) throw InputError("MPV file not found: " + mpv_path.string());
  const auto cfg = io::load_config(cfg_path);
  const auto mpv = io::read_mpv(mpv_path);
  man.inputs = {{"config", cfg_path.generic_string()}, {"mpv", mpv_path.generic_string()}};
  man.parameters = {{"oracle", a.oracle}, {"force", a.force}, {"full_cov", a.full_cov}};
  if (!mpv.converged && !a.force)
    throw ConfigError("MPV did not converge; rerun identify or pass --force");
  const auto bands = io::load_bands(cfg);
  const auto& theta = mpv.theta;
  if (theta.n_setups() != static_cast<int>(bands.size()) || theta.modes() != cfg.modes ||
      theta.n_dofs() != cfg.n_dofs)
    throw ConfigError("MPV dimensions do not match the configuration");
  ensure_dir(man.out);
  man.timings.push_back({"load", sw.lap()});

  PcmOptions opts;
  opts.keep_full = a.full_cov || !a.oracle.empty();
  opts.reference_shapes = io::load_reference_shapes(cfg);
  const auto post = pcm(theta, bands, opts);
  const double t_fast = sw.lap();
  man.timings.push_back({"pcm_em_route", t_fast});

  const int m = theta.modes(), n = theta.n_dofs(), ns = theta.n_setups();
  long n_lines = 0;
  for (const auto& b : bands) n_lines += b.n_lines();
  json pj = io::posterior_to_json(post, ns, m);
  pj["n_setups"] = ns;
  pj["n_lines"] = n_lines;
  pj["n_dofs"] = n;
  pj["modes"] = m;

  io::CsvTable params({"label", "mpv", "std", "cov"});
  for (std::size_t p = 0; p < post.labels.size(); ++p) {
    const auto i = static_cast<Eigen::Index>(p);
    const bool scalar = i < post.cov_of_variation.size();
    params.add({post.labels[p], io::fmt(post.mpv(i)), io::fmt(post.std_dev(i)),
                scalar ? io::fmt(post.cov_of_variation(i)) : ""});
  }
  params.write(man.out / "pcm_params.csv");

  std::vector<std::string> shape_labels;
  for (int i = 0; i < m; ++i)
    for (int d = 0; d < n; ++d)
      shape_labels.push_back((cfg.dof_labels.empty() ? "dof" + std::to_string(d + 1)
                                                     : cfg.dof_labels[static_cast<std::size_t>(d)]) +
                             ":mode" + std::to_string(i + 1));
  io::write_matrix_csv(man.out / "shape_cov.csv", post.shape_cov, shape_labels, shape_labels);

  io::CsvTable mac_t({"mode", "mac", "shape_uncertainty"});
  for (int i = 0; i < m; ++i)
    mac_t.add({std::to_string(i + 1), post.mac.size() ? io::fmt(post.mac(i)) : "",
               io::fmt(post.shape_uncertainty(i))});
  mac_t.write(man.out / "mac.csv");

  if (a.full_cov) {
    const auto& labels = post.labels;
    io::write_matrix_csv(man.out / "full_cov.csv", *post.cov, labels, labels);
  }

  if (!a.oracle.empty()) {
    const Mat H = nllf_fd_hessian(theta, bands, cfg.fd);
    const Mat C = pcm_fdm(H, constraint_gradient(theta), ConstraintRoute::Nullspace);
    const double t_fdm = sw.lap();
    man.timings.push_back({"pcm_fdm_route", t_fdm});
    const Mat& Cf = *post.cov;
    io::CsvTable cmp({"label", "std_em", "std_fdm", "rel_diff_std", "cov_em", "cov_fdm"});
    for (std::size_t p = 0; p < post.labels.size(); ++p) {
      const auto i = static_cast<Eigen::Index>(p);
      const double s_fdm = std::sqrt(std::max(C(i, i), 0.0));
      const double rel = std::abs(post.std_dev(i) - s_fdm) / std::max(s_fdm, 1e-300);
      const double mv = std::abs(post.mpv(i));
      const bool scalar = i < post.cov_of_variation.size() && mv > 0.0;
      cmp.add({post.labels[p], io::fmt(post.std_dev(i)), io::fmt(s_fdm), io::fmt(rel),
               scalar ? io::fmt(post.std_dev(i) / mv) : "", scalar ? io::fmt(s_fdm / mv) : ""});
    }
    cmp.write(man.out / "fdm_comparison.csv");
    // Dominant entries: correlation magnitude at least 0.1 under the oracle.
    double max_rel = 0.0;
    long dominant = 0;
    for (Eigen::Index i = 0; i < C.rows(); ++i)
      for (Eigen::Index j = 0; j < C.cols(); ++j) {
        const double scale = std::sqrt(std::max(C(i, i), 0.0) * std::max(C(j, j), 0.0));
        if (!(scale > 0.0) || std::abs(C(i, j)) < 0.1 * scale) continue;
        ++dominant;
        max_rel = std::max(max_rel, std::abs(Cf(i, j) - C(i, j)) / std::abs(C(i, j)));
      }
    pj["oracle"] = {{"method", "fdm"}, {"dominant_entries", dominant},
                    {"max_rel_diff_dominant", max_rel}};
    if (!a.deterministic) {
      pj["timing_s"] = {{"em_route", t_fast}, {"fdm_route", t_fdm}};
      io::CsvTable timing({"method", "seconds", "n_setups", "n_lines"});
      timing.add({"em_route", io::fmt(t_fast), std::to_string(ns), std::to_string(n_lines)});
      timing.add({"fdm", io::fmt(t_fdm), std::to_string(ns), std::to_string(n_lines)});
      timing.write(man.out / "timing.csv");
    }
    std::cout << "oracle: max relative difference on " << dominant << " dominant entries "
              << io::fmt(max_rel) << "\n";
  } else if (!a.deterministic) {
    pj["timing_s"] = {{"em_route", t_fast}};
  }
  io::write_json(man.out / "pcm.json", pj);
  man.write();
  std::cout << "posterior covariance written to " << man.out.string() << "\n";
  return kExitOk;
}

// ---------- report

struct ReportArgs {
  std::vector<std::string> results;
  std::string out;
  int sv_half_window = 10;
  bool deterministic = false;
};

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

int cmd_report(const ReportArgs& a) {
  Stopwatch sw;
  Manifest man;
  man.command = "report";
  man.out = absolute_or_empty(a.out);
  man.deterministic = a.deterministic;
  if (a.results.empty()) throw ConfigError("--results: at least one results directory required");
  ensure_dir(man.out);

  io::CsvTable bars({"run", "setup", "parameter", "mpv", "std", "lower_3sigma", "upper_3sigma", "truth"});
  io::CsvTable macs({"run", "mode", "mac", "shape_uncertainty"});
  io::CsvTable scatter({"run", "label", "cov_em", "cov_fdm"});
  io::CsvTable timing_setups({"run", "n_setups", "n_lines", "em_route_s", "fdm_s"});
  json runs = json::array();
  int run_no = 0;
  std::map<std::string, int> sv_names;
  for (const auto& dir_s : a.results) {
    const fs::path dir = fs::absolute(dir_s);
    if (!fs::is_directory(dir)) throw InputError("results directory not found: " + dir.string());
    const bool has_pcm = fs::exists(dir / "pcm.json");
    const bool has_mpv = fs::exists(dir / "mpv.json");
    if (!has_pcm && !has_mpv)
      throw InputError(dir.string() + ": no results (expected mpv.json or pcm.json)");
    ++run_no;
    const std::string run = dir.filename().string().empty() ? std::to_string(run_no) : dir.filename().string();
    runs.push_back(dir.generic_string());

    // Config location: recorded in the manifest of the run.
    std::optional<io::AnalysisConfig> cfg;
    if (fs::exists(dir / "manifest.json")) {
      const json m = io::read_json(dir / "manifest.json");
      if (m.contains("inputs") && m["inputs"].contains("config"))
        cfg = io::load_config(m["inputs"]["config"].get<std::string>());
    }
    std::optional<json> truth;
    if (cfg && fs::exists(cfg->base_dir / "truth.json")) truth = io::read_json(cfg->base_dir / "truth.json");

    if (cfg) {
      for (std::size_t r = 0; r < cfg->setups.size(); ++r) {
        const auto& s = cfg->setups[r];
        const auto y = s.sidecar ? read_time_history_csv(cfg->base_dir / s.data, cfg->base_dir / *s.sidecar)
                                 : read_time_history_csv(cfg->base_dir / s.data);
        const auto sv = sv_spectrum(scaled_fft(y), a.sv_half_window);
        std::vector<std::string> header = {"freq_hz"};
        for (Eigen::Index i = 0; i < sv.values.rows(); ++i) header.push_back("sv" + std::to_string(i + 1));
        io::CsvTable t(header);
        for (Eigen::Index k = 0; k < sv.freqs.size(); ++k) {
          std::vector<std::string> row = {io::fmt(sv.freqs(k))};
          for (Eigen::Index i = 0; i < sv.values.rows(); ++i) row.push_back(io::fmt(sv.values(i, k)));
          t.add(std::move(row));
        }
        std::string name = "sv_spectrum_setup" + std::to_string(r + 1) + ".csv";
        if (a.results.size() > 1) name = "sv_spectrum_" + run + "_setup" + std::to_string(r + 1) + ".csv";
        if (sv_names[name]++) continue;
        t.write(man.out / name);
      }
    }

    if (has_pcm) {
      const json pj = io::read_json(dir / "pcm.json");
      for (const auto& p : pj.at("parameters")) {
        const std::string label = p.at("label").get<std::string>();
        const auto colon = label.find(':');
        const std::string setup = label.substr(1, colon - 1);
        const std::string name = label.substr(colon + 1);
        const double mv = p.at("mpv").get<double>(), sd = p.at("std").get<double>();
        std::string tv;
        if (truth) {
          const int m = static_cast<int>((*truth)["f"].size());
          if (name[0] == 'f' && name.rfind("f", 0) == 0 && name.size() > 1 && std::isdigit(name[1]))
            tv = io::fmt((*truth)["f"][std::stoul(name.substr(1)) - 1].get<double>());
          else if (name.rfind("zeta", 0) == 0)
            tv = io::fmt((*truth)["zeta"][std::stoul(name.substr(4)) - 1].get<double>());
          else if (name == "Se")
            tv = io::fmt((*truth)["Se"].get<double>());
          (void)m;
        }
        bars.add({run, setup, name, io::fmt(mv), io::fmt(sd), io::fmt(mv - 3 * sd), io::fmt(mv + 3 * sd), tv});
      }
      if (fs::exists(dir / "mac.csv")) {
        const auto rows = read_csv_rows(dir / "mac.csv");
        for (std::size_t i = 1; i < rows.size(); ++i)
          if (rows[i].size() >= 3) macs.add({run, rows[i][0], rows[i][1], rows[i][2]});
      }
      if (fs::exists(dir / "fdm_comparison.csv")) {
        const auto rows = read_csv_rows(dir / "fdm_comparison.csv");
        for (std::size_t i = 1; i < rows.size(); ++i)
          if (rows[i].size() >= 6 && !rows[i][4].empty()) scatter.add({run, rows[i][0], rows[i][4], rows[i][5]});
      }
      if (pj.contains("timing_s")) {
        const auto& t = pj["timing_s"];
        timing_setups.add({run, std::to_string(pj.value("n_setups", 0)), std::to_string(pj.value("n_lines", 0L)),
                           io::fmt(t.value("em_route", std::nan(""))),
                           t.contains("fdm_route") ? io::fmt(t["fdm_route"].get<double>()) : ""});
      }
    }
  }
  bars.write(man.out / "error_bars.csv");
  macs.write(man.out / "mac.csv");
  scatter.write(man.out / "cov_scatter.csv");
  timing_setups.write(man.out / "timing.csv");
  man.inputs["results"] = runs;
  man.timings.push_back({"report", sw.lap()});
  man.write();
  std::cout << "report for " << run_no << " run(s) written to " << man.out.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-setup Bayesian FFT modal identification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate synthetic multi-setup records");
  synth->add_option("--preset", sa.preset, "Built-in model (shear-frame)");
  synth->add_option("--config", sa.config, "Custom model/plan JSON");
  synth->add_option("--setups", sa.setups, "Number of setups (preset)");
  synth->add_option("--duration-min", sa.duration_min, "Duration per setup in minutes");
  synth->add_option("--seed", sa.seed, "RNG seed");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_flag("--deterministic", sa.deterministic, "Omit timings from the manifest");

  IdentifyArgs ia;
  auto* identify = app.add_subcommand("identify", "Most probable value by EM");
  identify->add_option("--config", ia.config, "Analysis config JSON")->required();
  identify->add_option("--out", ia.out, "Output directory")->required();
  identify->add_option("--init", ia.init, "Start from an earlier mpv.json");
  identify->add_flag("--deterministic", ia.deterministic, "Omit timings from the manifest");

  PcmArgs pa;
  auto* pcm_cmd = app.add_subcommand("pcm", "Posterior covariance at the MPV");
  pcm_cmd->add_option("--config", pa.config, "Analysis config JSON")->required();
  pcm_cmd->add_option("--mpv", pa.mpv, "mpv.json from identify")->required();
  pcm_cmd->add_option("--out", pa.out, "Output directory")->required();
  pcm_cmd->add_option("--oracle", pa.oracle, "Also run the finite-difference oracle (fdm)");
  pcm_cmd->add_flag("--force", pa.force, "Accept a non-converged MPV");
  pcm_cmd->add_flag("--full-cov", pa.full_cov, "Write the full covariance matrix");
  pcm_cmd->add_flag("--deterministic", pa.deterministic, "Omit timings from outputs");

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "Plot-ready data tables");
  report->add_option("--results", ra.results, "Result directories")->required();
  report->add_option("--out", ra.out, "Output directory")->required();
  report->add_option("--sv-half-window", ra.sv_half_window, "Lines on each side in the SV spectrum");
  report->add_flag("--deterministic", ra.deterministic, "Omit timings from the manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitError;
  }
  try {
    if (*synth) return cmd_synth(sa);
    if (*identify) return cmd_identify(ia);
    if (*pcm_cmd) return cmd_pcm(pa);
    if (*report) return cmd_report(ra);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
