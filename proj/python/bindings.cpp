#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "msoma/em_mpv.hpp"
#include "msoma/io.hpp"
#include "msoma/pcm_fast.hpp"
#include "msoma/spectra.hpp"
#include "msoma/synth.hpp"

namespace py = pybind11;
using namespace msoma;

namespace {

// Results cross the boundary as JSON text; the Python side parses it.
std::string identify_json(const std::filesystem::path& config, bool accelerate) {
  auto cfg = io::load_config(config);
  if (!accelerate) cfg.em.acceleration = Acceleration::Off;
  const auto bands = io::load_bands(cfg);
  return io::mpv_to_json(run_em(bands, cfg.f0, cfg.em)).dump();
}

std::string pcm_json(const std::filesystem::path& config, const std::filesystem::path& mpv) {
  const auto cfg = io::load_config(config);
  const auto bands = io::load_bands(cfg);
  const auto file = io::read_mpv(mpv);
  PcmOptions opts;
  opts.reference_shapes = io::load_reference_shapes(cfg);
  const auto post = pcm(file.theta, bands, opts);
  return io::posterior_to_json(post, file.theta.n_setups(), file.theta.modes()).dump();
}

py::dict preset(std::uint64_t seed) {
  const auto m = shear_frame_preset(seed);
  py::dict d;
  d["f"] = m.f;
  d["zeta"] = m.zeta;
  d["Phi"] = m.Phi;
  d["S"] = m.S;
  d["Se"] = m.Se;
  d["fs"] = m.fs;
  d["dof_labels"] = m.dof_labels;
  return d;
}

// tau is 1-based over the model DoFs, matching the config format.
py::list preset_records(std::uint64_t seed, int setups, double duration_min) {
  const auto plan = shear_frame_plan(setups, 60.0 * duration_min);
  const auto hist = generate_setups(shear_frame_preset(seed), plan);
  py::list out;
  for (std::size_t r = 0; r < hist.size(); ++r) {
    std::vector<int> tau;
    for (int d : plan.setups[r].map.tau) tau.push_back(plan.dofs[static_cast<std::size_t>(d)] + 1);
    py::dict d;
    d["samples"] = hist[r].samples;
    d["dt"] = hist[r].dt;
    d["tau"] = tau;
    d["labels"] = hist[r].labels;
    out.append(d);
  }
  return out;
}

CMat fft(const Mat& samples, double dt) {
  TimeHistory y;
  y.samples = samples;
  y.dt = dt;
  return scaled_fft(y).coeffs;
}

}  // namespace

PYBIND11_MODULE(_msoma, m) {
  m.doc() = "Multi-setup Bayesian FFT modal identification";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("frf", &frf, py::arg("f_i"), py::arg("zeta_i"), py::arg("f_k"), py::arg("q") = 0);
  m.def("theta_size", &theta_size, py::arg("n_setups"), py::arg("modes"), py::arg("n_dofs"));
  m.def("mac", [](const Vec& a, const Vec& b) { return mac(a, b); });
  m.def("scaled_fft", &fft, py::arg("samples"), py::arg("dt"),
        "Scaled one-sided FFT of a channels x samples array.");
  m.def("shear_frame_preset", &preset, py::arg("seed") = 0);
  m.def("shear_frame_records", &preset_records, py::arg("seed"), py::arg("setups") = 4,
        py::arg("duration_min") = 5.0, "Per-setup records (channels x samples) of the preset test.");
  m.def("identify_json", &identify_json, py::arg("config"), py::arg("accelerate") = true);
  m.def("pcm_json", &pcm_json, py::arg("config"), py::arg("mpv"));
}
