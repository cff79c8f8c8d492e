#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "msoma_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(MSOMA_CLI) + " " + args + " > " + (kWork / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Workspace {
  Workspace() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("synth, identify, pcm and report") {
  Workspace ws;
  const auto a = kWork / "a", b = kWork / "b";
  REQUIRE(run("synth --preset shear-frame --setups 4 --duration-min 5 --seed 7 --deterministic --out " + a.string()) == 0);
  REQUIRE(run("synth --preset shear-frame --setups 4 --duration-min 5 --seed 7 --deterministic --out " + b.string()) == 0);
  for (const char* f : {"setup1.csv", "setup4.csv", "truth.json", "config.json", "truth_shapes.csv"})
    CHECK(slurp(a / f) == slurp(b / f));
  {
    std::ifstream in(a / "setup1.csv");
    std::string header;
    std::getline(in, header);
    CHECK(std::count(header.begin(), header.end(), ',') == 20);
  }
  CHECK(run("synth --preset shear-frame --duration-min 0 --out " + (kWork / "z").string()) != 0);

  const auto id = kWork / "id";
  REQUIRE(run("identify --config " + (a / "config.json").string() + " --deterministic --out " + id.string()) == 0);
  const auto mpv = nlohmann::json::parse(slurp(id / "mpv.json"));
  CHECK(mpv["converged"].get<bool>());
  CHECK(fs::exists(id / "trace.csv"));

  const auto id2 = kWork / "id2";
  REQUIRE(run("identify --config " + (a / "config.json").string() + " --init " + (id / "mpv.json").string() +
              " --out " + id2.string()) == 0);
  const auto mpv2 = nlohmann::json::parse(slurp(id2 / "mpv.json"));
  CHECK(mpv2["iterations"].get<int>() <= 3);

  const auto pc = kWork / "pcm";
  REQUIRE(run("pcm --config " + (a / "config.json").string() + " --mpv " + (id / "mpv.json").string() +
              " --out " + pc.string()) == 0);
  for (const char* f : {"pcm_params.csv", "shape_cov.csv", "mac.csv", "pcm.json", "manifest.json"})
    CHECK(fs::exists(pc / f));
  CHECK(run("pcm --config " + (a / "config.json").string() + " --mpv " + (kWork / "none.json").string() +
            " --out " + (kWork / "p2").string()) != 0);

  const auto rep = kWork / "rep";
  REQUIRE(run("report --results " + pc.string() + " --out " + rep.string()) == 0);
  CHECK(fs::exists(rep / "error_bars.csv"));
  CHECK(fs::exists(rep / "sv_spectrum_setup1.csv"));
  fs::create_directories(kWork / "empty");
  CHECK(run("report --results " + (kWork / "empty").string() + " --out " + (kWork / "r2").string()) != 0);
}

TEST_CASE("bad config and empty band") {
  Workspace ws;
  const auto a = kWork / "a";
  REQUIRE(run("synth --preset shear-frame --setups 2 --duration-min 1 --seed 3 --out " + a.string()) == 0);
  auto cfg = nlohmann::json::parse(slurp(a / "config.json"));
  cfg["band"] = {4.00001, 4.00002};
  std::ofstream(a / "band.json") << cfg.dump();
  CHECK(run("identify --config " + (a / "band.json").string() + " --out " + (kWork / "o").string()) == 1);
  CHECK(slurp(kWork / "last.log").find("no FFT lines") != std::string::npos);

  cfg = nlohmann::json::parse(slurp(a / "config.json"));
  cfg["setups"][0]["tau"][0] = 999;
  std::ofstream(a / "tau.json") << cfg.dump();
  CHECK(run("identify --config " + (a / "tau.json").string() + " --out " + (kWork / "o").string()) == 1);
  CHECK(slurp(kWork / "last.log").find("setups[0].tau[0]") != std::string::npos);
  fs::remove_all(kWork);
}

}
