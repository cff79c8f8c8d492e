#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "msoma/io.hpp"
#include "support.hpp"

using namespace msoma;
using io::json;

namespace {

json base_config() {
  return json::parse(R"({
    "modes": 2, "q": 0, "f0": [1.9, 2.1], "band": [1.7525, 2.25], "n_dofs": 6,
    "setups": [
      {"data": "s1.csv", "tau": [1, 2, 3, 4]},
      {"data": "s2.csv", "tau": [1, 2, 5, 6]}
    ]
  })");
}

std::string error_of(const json& j) {
  try {
    io::parse_config(j, ".");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("config parses and round trips") {
  const auto cfg = io::parse_config(base_config(), "/data");
  CHECK(cfg.modes == 2);
  CHECK(cfg.setups[1].map.tau == std::vector<int>{0, 1, 4, 5});
  CHECK(cfg.base_dir / cfg.setups[0].data == std::filesystem::path("/data/s1.csv"));
  CHECK(cfg.em.acceleration == Acceleration::Parabolic);
  const auto again = io::parse_config(io::config_to_json(cfg), "/data");
  CHECK(again.setups[1].map.tau == cfg.setups[1].map.tau);
  CHECK(again.f0 == cfg.f0);
}

TEST_CASE("config errors name the field") {
  auto j = base_config();
  j.erase("modes");
  CHECK(error_of(j).find("'modes'") != std::string::npos);

  j = base_config();
  j["setups"][1]["tau"][2] = 9;
  CHECK(error_of(j).find("'setups[1].tau[2]'") != std::string::npos);

  j = base_config();
  j["setups"][1]["tau"] = json::array({1, 2, 3, 4});
  CHECK(error_of(j).find("DoF 5") != std::string::npos);

  j = base_config();
  j["setups"][0]["tau"] = json::array({1, 1, 3});
  CHECK(error_of(j).find("setups[0].tau") != std::string::npos);

  j = base_config();
  j["band"] = json::array({2.0, 1.0});
  CHECK(error_of(j).find("'band'") != std::string::npos);

  j = base_config();
  j["f0"] = json::array({2.1, 1.9});
  CHECK(error_of(j).find("'f0'") != std::string::npos);

  j = base_config();
  j["em"] = {{"acceleration", "fast"}};
  CHECK(error_of(j).find("'em.acceleration'") != std::string::npos);

  j = base_config();
  j["setups"][0]["tau"] = json::array({1});
  CHECK(error_of(j).find("fewer channels than modes") != std::string::npos);
}

TEST_CASE("theta json round trip is exact") {
  auto c = msoma::testing::small_case(50);
  std::mt19937_64 rng(50);
  const auto p = msoma::testing::perturb(c.truth, rng);
  const auto back = io::theta_from_json(json::parse(io::theta_to_json(p).dump()));
  CHECK(encode(back) == encode(p));
}

TEST_CASE("matrix csv") {
  const auto dir = std::filesystem::temp_directory_path() / "msoma_io_test";
  std::filesystem::create_directories(dir);
  Mat a(2, 3);
  a << 1.5, -2, 3e-7, 4, 5, 6.25;
  io::write_matrix_csv(dir / "a.csv", a, {"r1", "r2"}, {"c1", "c2", "c3"});
  CHECK(io::read_matrix_csv(dir / "a.csv") == a);
  {
    std::ofstream f(dir / "plain.csv");
    f << "1,2\n3,4\n";
  }
  CHECK(io::read_matrix_csv(dir / "plain.csv") == (Mat(2, 2) << 1, 2, 3, 4).finished());
  std::filesystem::remove_all(dir);
}

}
