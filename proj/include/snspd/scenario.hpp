#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "snspd/analytics.hpp"
#include "snspd/optics.hpp"
#include "snspd/photon_sim.hpp"
#include "snspd/rfcircuit.hpp"
#include "snspd/timing.hpp"

namespace snspd::scenario {

/// Everything one batch run needs. The on-disk form is a flat JSON object;
/// key names carry units. Unset keys keep the defaults below.
struct Scenario {
  std::string name{"unnamed"};
  std::uint64_t seed{1};
  unsigned threads{0};  // 0: hardware concurrency; results do not depend on it
  std::string output_dir{"out"};
  /// Any of: readout, calibrate, rfmodel, optics, g2, heating.
  std::vector<std::string> analyses{"readout"};

  sim::RateParams rates{sim::RateParams::measured()};
  sim::ReadoutConfig readout;
  std::size_t trials_per_state{1000};
  double threshold_duration_us{125.0};
  std::vector<double> threshold_curve_us;  // empty: 5 us steps over the record
  double bayes_level_min{0.9};
  double bayes_level_max{0.9999};
  std::size_t bayes_level_count{13};
  bool write_trajectories{false};
  bool write_results{false};

  rf::NanowireNetwork network;
  std::string rf_curve_off_csv;  // optional inputs
  std::string rf_curve_on_csv;
  double rf_fit_delta_Im_uA{3.6};
  double rf_margin_uA{0.8};
  double sde_rf_on{0.48};
  double sde_cap{0.72};

  optics::DetectorScene scene;
  std::string ap_surface{"synthetic"};  // synthetic | constant | path to CSV
  double ap_constant{1.0};
  double lifetime_ns{8.850};
  double ide{1.0};
  double saturated_rate_per_s{5.42e5};
  double sweep_lateral_start_um{0.0};
  double sweep_lateral_stop_um{160.0};
  double sweep_lateral_step_um{8.0};

  sim::EmitterStreamConfig emitter{emitter_defaults()};
  std::string g2_timetags_csv;  // optional input; otherwise simulated
  std::int64_t g2_bin_ns{1};
  std::int64_t g2_max_delay_ns{100};
  std::optional<timing::DelayInterval> g2_exclusion;

  analytics::HeatingPoint heating_a{63.0, 2.0, 39.0};
  analytics::HeatingPoint heating_b{113.0, 5.3, 35.0};
  double heating_alpha{1.7};
  double heating_distance_exponent{4.0};
  double kick_quanta_per_count{0.009};
  double kick_count_rate_per_s{1000.0};

  /// Directory that relative input paths are resolved against.
  std::filesystem::path base_dir{"."};

  static sim::EmitterStreamConfig emitter_defaults();
  void validate() const;
  std::filesystem::path input_path(const std::string& p) const;
};

/// Strict parse: unknown keys and wrongly typed values are ValidationErrors
/// naming the key.
Scenario parse_scenario(const std::string& json_text, const std::filesystem::path& base_dir = ".");
Scenario load_scenario(const std::filesystem::path& path);
/// Every key with its effective value; parse_scenario of this text gives
/// back the same scenario.
std::string effective_config(const Scenario& s);

/// Built-in scenario matching the measured device and readout.
Scenario paper_scenario();

struct RunReport {
  std::filesystem::path output_dir;
  std::vector<std::filesystem::path> files;
};

/// Runs every requested analysis, writing CSVs, effective_config.json and
/// summary.json under output_dir (or `output_override` when given).
RunReport run_scenario(const Scenario& s, const std::optional<std::filesystem::path>& output_override = {});

}  // namespace snspd::scenario
