#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "snspd/errors.hpp"
#include "snspd/scenario.hpp"

using namespace snspd;
using namespace snspd::scenario;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("snspd_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("unknown and mistyped keys are rejected by name") {
  try {
    parse_scenario(R"({"seed": 1, "trails_per_state": 10})");
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("trails_per_state") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_scenario(R"({"seed": -1})"), ValidationError);
  CHECK_THROWS_AS(parse_scenario(R"({"seed": 1.5})"), ValidationError);
  CHECK_THROWS_AS(parse_scenario(R"({"gamma_b_per_ms": "fast"})"), ValidationError);
  CHECK_THROWS_AS(parse_scenario(R"({"transition_mode": "sometimes"})"), ValidationError);
  CHECK_THROWS_AS(parse_scenario(R"([1, 2])"), ValidationError);
  CHECK_THROWS_AS(parse_scenario(R"({"seed": )"), ValidationError);
  CHECK_THROWS_AS(parse_scenario(R"({"g2_exclusion_lo_ns": -2})"), ValidationError);
  const auto bad = parse_scenario(R"({"analyses": ["readout", "plots"]})");
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("effective config round trip") {
  auto s = parse_scenario(R"({"seed": 99, "gamma_dp_per_ms": 0.021, "rf_z_left_imag_ohm": 3.5,
                              "g2_exclusion_lo_ns": -2, "g2_exclusion_hi_ns": 2,
                              "transition_mode": "bin_boundary", "threshold_curve_us": [50, 125]})");
  const auto text = effective_config(s);
  const auto again = parse_scenario(text);
  CHECK(effective_config(again) == text);
  CHECK(again.seed == 99);
  CHECK(again.network.Z_left_ohm.imag() == 3.5);
  REQUIRE(again.g2_exclusion.has_value());
  CHECK(again.g2_exclusion->hi_ns == 2.0);
  CHECK(again.readout.mode == sim::TransitionMode::BinBoundary);
  CHECK(effective_config(parse_scenario(effective_config(paper_scenario()))) == effective_config(paper_scenario()));
}

TEST_CASE("missing input files name the key") {
  const auto dir = scratch("missing");
  auto s = parse_scenario(R"({"analyses": ["rfmodel"], "rf_curve_off_csv": "nope.csv"})", dir);
  try {
    s.validate();
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("rf_curve_off_csv") != std::string::npos);
    CHECK(std::string(e.what()).find("nope.csv") != std::string::npos);
  }
}

TEST_CASE("run_scenario is reproducible and writes the summary") {
  const auto dir = scratch("run");
  const auto s = parse_scenario(R"({"seed": 5, "analyses": ["readout", "calibrate", "heating", "optics"],
                                    "trials_per_state": 1500, "write_trajectories": true,
                                    "write_results": true, "bayes_level_count": 4,
                                    "sweep_lateral_step_um": 40})");
  const auto a = run_scenario(s, dir / "a");
  auto s2 = s;
  s2.threads = 2;
  const auto b = run_scenario(s2, dir / "b");
  REQUIRE(a.files.size() == b.files.size());
  for (const char* f : {"trajectories.csv", "threshold_curve.csv", "bayes_levels.csv", "results.csv",
                        "calibration.csv", "optics_curve.csv", "summary.json"}) {
    CHECK_MESSAGE(slurp(dir / "a" / f) == slurp(dir / "b" / f), f);
    CHECK(fs::file_size(dir / "a" / f) > 0);
  }
  const auto summary = slurp(dir / "a" / "summary.json");
  for (const char* key : {"\"threshold\"", "\"bayes\"", "\"calibration\"", "\"field_noise_ratio\"",
                          "\"collection_fraction\"", "\"herald\""}) {
    CHECK_MESSAGE(summary.find(key) != std::string::npos, key);
  }
  // The emitted config reproduces the run.
  const auto re = load_scenario(dir / "a" / "effective_config.json");
  run_scenario(re, dir / "c");
  CHECK(slurp(dir / "a" / "summary.json") == slurp(dir / "c" / "summary.json"));
}

TEST_CASE("rf analysis with ingested curves") {
  const auto dir = scratch("rf");
  {
    std::ofstream off(dir / "off.csv");
    off << "bias_uA,counts\n";
    for (int i = 0; i <= 178; ++i) off << 0.05 * i << "," << 100.0 / (1.0 + std::exp(-(0.05 * i - 3.5) / 0.5)) << "\n";
    std::ofstream on(dir / "on.csv");
    on << "bias_uA,counts\n";
    for (int i = 0; i <= 100; ++i) on << 0.05 * i << "," << 80.0 / (1.0 + std::exp(-(0.05 * i - 3.0) / 0.6)) << "\n";
  }
  const auto s = parse_scenario(R"({"analyses": ["rfmodel"], "rf_curve_off_csv": "off.csv",
                                    "rf_curve_on_csv": "on.csv"})", dir);
  const auto rep = run_scenario(s, dir / "out");
  CHECK(fs::exists(dir / "out" / "fit_report.csv"));
  CHECK(fs::exists(dir / "out" / "rf_prediction.csv"));
  CHECK(slurp(dir / "out" / "summary.json").find("sde_no_rf") != std::string::npos);
}
