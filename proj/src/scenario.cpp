#include "snspd/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"
#include "snspd/errors.hpp"
#include "snspd/io.hpp"
#include "snspd/readout.hpp"
#include "snspd/rng.hpp"

namespace snspd::scenario {

namespace {

using json = nlohmann::ordered_json;

constexpr std::uint64_t kG2Stream = 0x67325f73747265ULL;

const std::vector<std::string> kAnalyses{"readout", "calibrate", "rfmodel", "optics", "g2", "heating"};

struct Key {
  std::string name;
  std::function<json(const Scenario&)> get;
  std::function<void(Scenario&, const json&)> set;
};

[[noreturn]] void bad_type(const std::string& key, const char* want) {
  throw ValidationError(fmt::format("config key '{}': expected {}", key, want));
}

template <class T>
T read_value(const std::string& key, const json& v) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) bad_type(key, "true or false");
    return v.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) bad_type(key, "a string");
    return v.get<std::string>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) bad_type(key, "a number");
    return v.get<T>();
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!v.is_number_unsigned()) {
      bad_type(key, "a non-negative integer");
    }
    return static_cast<T>(v.get<std::uint64_t>());
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) bad_type(key, "an integer");
    return static_cast<T>(v.get<std::int64_t>());
  } else if constexpr (std::is_same_v<T, std::vector<double>>) {
    if (!v.is_array()) bad_type(key, "an array of numbers");
    T out;
    for (const auto& x : v) {
      if (!x.is_number()) bad_type(key, "an array of numbers");
      out.push_back(x.get<double>());
    }
    return out;
  } else {
    static_assert(std::is_same_v<T, std::vector<std::string>>);
    if (!v.is_array()) bad_type(key, "an array of strings");
    T out;
    for (const auto& x : v) {
      if (!x.is_string()) bad_type(key, "an array of strings");
      out.push_back(x.get<std::string>());
    }
    return out;
  }
}

/// A key bound to a member reached through `ref`.
template <class T, class Ref>
Key field(std::string name, Ref ref) {
  Key k;
  k.name = name;
  k.get = [ref](const Scenario& s) { return json(ref(const_cast<Scenario&>(s))); };
  k.set = [ref, name](Scenario& s, const json& v) { ref(s) = read_value<T>(name, v); };
  return k;
}

#define SNSPD_KEY(type, key, expr) field<type>(key, [](Scenario& s) -> type& { return expr; })

const std::vector<Key>& registry() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k{
        SNSPD_KEY(std::string, "name", s.name),
        SNSPD_KEY(std::uint64_t, "seed", s.seed),
        SNSPD_KEY(unsigned, "threads", s.threads),
        SNSPD_KEY(std::string, "output_dir", s.output_dir),
        SNSPD_KEY(std::vector<std::string>, "analyses", s.analyses),

        SNSPD_KEY(double, "gamma_b_per_ms", s.rates.gamma_b),
        SNSPD_KEY(double, "gamma_d_per_ms", s.rates.gamma_d),
        SNSPD_KEY(double, "gamma_dp_per_ms", s.rates.gamma_dp),
        SNSPD_KEY(double, "gamma_rp_per_ms", s.rates.gamma_rp),
        SNSPD_KEY(double, "bin_width_us", s.readout.bin_width_us),
        SNSPD_KEY(std::size_t, "n_bins", s.readout.n_bins),
        SNSPD_KEY(double, "herald_us", s.readout.herald_us),
        SNSPD_KEY(int, "herald_bright_min", s.readout.herald_bright_min),
        SNSPD_KEY(std::size_t, "trials_per_state", s.trials_per_state),
        SNSPD_KEY(double, "threshold_duration_us", s.threshold_duration_us),
        SNSPD_KEY(std::vector<double>, "threshold_curve_us", s.threshold_curve_us),
        SNSPD_KEY(double, "bayes_level_min", s.bayes_level_min),
        SNSPD_KEY(double, "bayes_level_max", s.bayes_level_max),
        SNSPD_KEY(std::size_t, "bayes_level_count", s.bayes_level_count),
        SNSPD_KEY(bool, "write_trajectories", s.write_trajectories),
        SNSPD_KEY(bool, "write_results", s.write_results),

        SNSPD_KEY(int, "rf_segments", s.network.K),
        SNSPD_KEY(double, "rf_segment_inductance_H", s.network.L_N_H),
        SNSPD_KEY(double, "rf_c_ng_F", s.network.C_NG_F),
        SNSPD_KEY(double, "rf_c_rn_F", s.network.C_RN_F),
        SNSPD_KEY(double, "rf_c_rl_F", s.network.C_RL_F),
        SNSPD_KEY(double, "rf_lead_inductance_H", s.network.L_L_H),
        SNSPD_KEY(double, "rf_lead_resistance_ohm", s.network.R_L_ohm),
        SNSPD_KEY(double, "rf_omega_rad_per_s", s.network.omega_rad_per_s),
        SNSPD_KEY(double, "rf_amplitude_V", s.network.V_rf),
        SNSPD_KEY(std::string, "rf_curve_off_csv", s.rf_curve_off_csv),
        SNSPD_KEY(std::string, "rf_curve_on_csv", s.rf_curve_on_csv),
        SNSPD_KEY(double, "rf_fit_delta_Im_uA", s.rf_fit_delta_Im_uA),
        SNSPD_KEY(double, "rf_margin_uA", s.rf_margin_uA),
        SNSPD_KEY(double, "sde_rf_on", s.sde_rf_on),
        SNSPD_KEY(double, "sde_cap", s.sde_cap),

        SNSPD_KEY(double, "detector_w_um", s.scene.detector_w_um),
        SNSPD_KEY(double, "detector_h_um", s.scene.detector_h_um),
        SNSPD_KEY(double, "recess_um", s.scene.recess_um),
        SNSPD_KEY(double, "ion_height_um", s.scene.ion_height_um),
        SNSPD_KEY(double, "lateral_um", s.scene.lateral_um),
        SNSPD_KEY(double, "quant_axis_deg", s.scene.quant_axis_deg),
        SNSPD_KEY(double, "nanowire_axis_deg", s.scene.nanowire_axis_deg),
        SNSPD_KEY(double, "grid_pitch_um", s.scene.grid_pitch_um),
        SNSPD_KEY(double, "opening_margin_x_um", s.scene.opening_margin_x_um),
        SNSPD_KEY(double, "opening_margin_y_um", s.scene.opening_margin_y_um),
        SNSPD_KEY(std::string, "ap_surface", s.ap_surface),
        SNSPD_KEY(double, "ap_constant", s.ap_constant),
        SNSPD_KEY(double, "lifetime_ns", s.lifetime_ns),
        SNSPD_KEY(double, "ide", s.ide),
        SNSPD_KEY(double, "saturated_rate_per_s", s.saturated_rate_per_s),
        SNSPD_KEY(double, "sweep_lateral_start_um", s.sweep_lateral_start_um),
        SNSPD_KEY(double, "sweep_lateral_stop_um", s.sweep_lateral_stop_um),
        SNSPD_KEY(double, "sweep_lateral_step_um", s.sweep_lateral_step_um),

        SNSPD_KEY(double, "g2_emission_rate_per_s", s.emitter.emission_rate_per_s),
        SNSPD_KEY(double, "g2_dead_time_s", s.emitter.dead_time_s),
        SNSPD_KEY(double, "g2_route_prob_a", s.emitter.route_prob_a),
        SNSPD_KEY(double, "g2_route_prob_b", s.emitter.route_prob_b),
        SNSPD_KEY(double, "g2_background_a_per_s", s.emitter.background_rate_a_per_s),
        SNSPD_KEY(double, "g2_background_b_per_s", s.emitter.background_rate_b_per_s),
        SNSPD_KEY(double, "g2_channel_b_offset_s", s.emitter.channel_b_delay_offset_s),
        SNSPD_KEY(double, "g2_duration_s", s.emitter.duration_s),
        SNSPD_KEY(std::string, "g2_timetags_csv", s.g2_timetags_csv),
        SNSPD_KEY(std::int64_t, "g2_bin_ns", s.g2_bin_ns),
        SNSPD_KEY(std::int64_t, "g2_max_delay_ns", s.g2_max_delay_ns),

        SNSPD_KEY(double, "heating_a_rate_per_s", s.heating_a.rate_quanta_per_s),
        SNSPD_KEY(double, "heating_a_MHz", s.heating_a.frequency_MHz),
        SNSPD_KEY(double, "heating_a_distance_um", s.heating_a.distance_um),
        SNSPD_KEY(double, "heating_b_rate_per_s", s.heating_b.rate_quanta_per_s),
        SNSPD_KEY(double, "heating_b_MHz", s.heating_b.frequency_MHz),
        SNSPD_KEY(double, "heating_b_distance_um", s.heating_b.distance_um),
        SNSPD_KEY(double, "heating_alpha", s.heating_alpha),
        SNSPD_KEY(double, "heating_distance_exponent", s.heating_distance_exponent),
        SNSPD_KEY(double, "kick_quanta_per_count", s.kick_quanta_per_count),
        SNSPD_KEY(double, "kick_count_rate_per_s", s.kick_count_rate_per_s),
    };

    // Keys that need more than a plain member binding.
    k.push_back({"transition_mode",
                 [](const Scenario& s) { return json(sim::to_string(s.readout.mode)); },
                 [](Scenario& s, const json& v) {
                   s.readout.mode = sim::transition_mode_from_string(read_value<std::string>("transition_mode", v));
                 }});
    auto complex_key = [&k](const char* name, bool left, bool imag) {
      k.push_back({name,
                   [=](const Scenario& s) {
                     const auto z = left ? s.network.Z_left_ohm : s.network.Z_right_ohm;
                     return json(imag ? z.imag() : z.real());
                   },
                   [=](Scenario& s, const json& v) {
                     auto& z = left ? s.network.Z_left_ohm : s.network.Z_right_ohm;
                     const double x = read_value<double>(name, v);
                     z = imag ? rf::cplx{z.real(), x} : rf::cplx{x, z.imag()};
                   }});
    };
    complex_key("rf_z_left_ohm", true, false);
    complex_key("rf_z_left_imag_ohm", true, true);
    complex_key("rf_z_right_ohm", false, false);
    complex_key("rf_z_right_imag_ohm", false, true);
    auto exclusion_key = [&k](const char* name, bool lo) {
      k.push_back({name,
                   [=](const Scenario& s) {
                     if (!s.g2_exclusion) return json(nullptr);
                     return json(lo ? s.g2_exclusion->lo_ns : s.g2_exclusion->hi_ns);
                   },
                   [=](Scenario& s, const json& v) {
                     if (v.is_null()) {
                       s.g2_exclusion.reset();
                       return;
                     }
                     const double x = read_value<double>(name, v);
                     if (!s.g2_exclusion) s.g2_exclusion = timing::DelayInterval{x, x};
                     (lo ? s.g2_exclusion->lo_ns : s.g2_exclusion->hi_ns) = x;
                   }});
    };
    exclusion_key("g2_exclusion_lo_ns", true);
    exclusion_key("g2_exclusion_hi_ns", false);
    return k;
  }();
  return keys;
}

#undef SNSPD_KEY

bool wants(const Scenario& s, const std::string& a) {
  return std::find(s.analyses.begin(), s.analyses.end(), a) != s.analyses.end();
}

json interval(const readout::Interval& i) { return json::array({i.low, i.high}); }

json stats_json(const readout::ErrorStats& st) {
  return {{"eps_b", st.eps_b},
          {"eps_d", st.eps_d},
          {"mean_error", st.mean_error()},
          {"fidelity", st.fidelity},
          {"eps_b_ci68", interval(st.eps_b_ci)},
          {"eps_d_ci68", interval(st.eps_d_ci)},
          {"fidelity_ci68", interval(st.fidelity_ci)},
          {"n_bright", st.n_bright},
          {"n_dark", st.n_dark},
          {"mean_duration_us", st.mean_duration_us},
          {"mean_duration_bright_us", st.mean_duration_bright_us},
          {"mean_duration_dark_us", st.mean_duration_dark_us}};
}

json estimate_json(const readout::RateEstimate& e, double truth) {
  return {{"value", e.value}, {"std_error", e.std_error}, {"ci68", interval(e.ci68)}, {"generating", truth}};
}

optics::APSurface load_ap(const Scenario& s) {
  if (s.ap_surface == "synthetic") return optics::APSurface::synthetic();
  if (s.ap_surface == "constant") return optics::APSurface::constant(s.ap_constant);
  auto f = io::open_input(s.input_path(s.ap_surface), "config key 'ap_surface'");
  return io::read_ap_surface(f, s.ap_surface);
}

rf::BiasCountCurve load_curve(const Scenario& s, const std::string& p, const char* key) {
  auto f = io::open_input(s.input_path(p), fmt::format("config key '{}'", key));
  return io::read_bias_curve(f, p);
}

class Writer {
 public:
  explicit Writer(std::filesystem::path dir) : dir_(std::move(dir)) {}

  template <class F>
  void csv(const std::string& name, F&& body) {
    auto f = io::open_output(dir_ / name);
    body(f);
    files_.push_back(dir_ / name);
  }
  void text(const std::string& name, const std::string& content) {
    csv(name, [&](std::ostream& os) { os << content; });
  }
  std::vector<std::filesystem::path> files() const { return files_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::filesystem::path> files_;
};

}  // namespace

sim::EmitterStreamConfig Scenario::emitter_defaults() {
  sim::EmitterStreamConfig e;
  e.emission_rate_per_s = 1.0e8;
  e.dead_time_s = 1e-9;
  e.route_prob_a = 0.005;
  e.route_prob_b = 0.005;
  e.channel_b_delay_offset_s = 28e-9;
  e.duration_s = 0.2;
  return e;
}

std::filesystem::path Scenario::input_path(const std::string& p) const {
  const std::filesystem::path q(p);
  return q.is_absolute() ? q : base_dir / q;
}

void Scenario::validate() const {
  for (const auto& a : analyses) {
    if (std::find(kAnalyses.begin(), kAnalyses.end(), a) == kAnalyses.end()) {
      throw ValidationError(fmt::format("config key 'analyses': unknown analysis '{}'", a));
    }
  }
  const bool sim_needed = wants(*this, "readout") || wants(*this, "calibrate");
  if (sim_needed) {
    rates.validate(true);
    readout.validate(rates);
    if (trials_per_state == 0) throw ValidationError("config key 'trials_per_state': must be > 0");
    if (!(bayes_level_min > 0.5 && bayes_level_max < 1.0 && bayes_level_min <= bayes_level_max)) {
      throw ValidationError("config keys 'bayes_level_min'/'bayes_level_max': need 0.5 < min <= max < 1");
    }
    if (bayes_level_count == 0) throw ValidationError("config key 'bayes_level_count': must be > 0");
  }
  if (wants(*this, "rfmodel")) network.validate();
  if (wants(*this, "optics")) {
    scene.validate();
    if (!(lifetime_ns > 0.0)) throw ValidationError("config key 'lifetime_ns': must be > 0");
    if (!(sweep_lateral_step_um > 0.0) || sweep_lateral_stop_um < sweep_lateral_start_um) {
      throw ValidationError("config keys 'sweep_lateral_*': need step > 0 and stop >= start");
    }
    if (ap_surface != "synthetic" && ap_surface != "constant" &&
        !std::filesystem::exists(input_path(ap_surface))) {
      throw ValidationError(fmt::format("config key 'ap_surface': file '{}' not found",
                                        input_path(ap_surface).string()));
    }
  }
  if (wants(*this, "g2")) {
    if (g2_timetags_csv.empty()) emitter.validate();
    if (g2_exclusion && g2_exclusion->hi_ns < g2_exclusion->lo_ns) {
      throw ValidationError("config keys 'g2_exclusion_*': hi must be >= lo");
    }
  }
  if (wants(*this, "heating")) {
    heating_a.validate();
    heating_b.validate();
  }
  for (auto [key, p] : {std::pair{"rf_curve_off_csv", &rf_curve_off_csv},
                        std::pair{"rf_curve_on_csv", &rf_curve_on_csv},
                        std::pair{"g2_timetags_csv", &g2_timetags_csv}}) {
    if (!p->empty() && !std::filesystem::exists(input_path(*p))) {
      throw ValidationError(fmt::format("config key '{}': file '{}' not found", key, input_path(*p).string()));
    }
  }
  if (!rf_curve_on_csv.empty() && rf_curve_off_csv.empty()) {
    throw ValidationError("config key 'rf_curve_on_csv' needs 'rf_curve_off_csv'");
  }
}

Scenario parse_scenario(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  std::map<std::string, const Key*> by_name;
  for (const auto& k : registry()) by_name[k.name] = &k;
  Scenario s;
  s.base_dir = base_dir;
  for (const auto& [key, value] : j.items()) {
    auto it = by_name.find(key);
    if (it == by_name.end()) throw ValidationError(fmt::format("unknown config key '{}'", key));
    it->second->set(s, value);
  }
  if (s.g2_exclusion && (!j.contains("g2_exclusion_lo_ns") || !j.contains("g2_exclusion_hi_ns"))) {
    throw ValidationError("config keys 'g2_exclusion_lo_ns' and 'g2_exclusion_hi_ns' go together");
  }
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  auto f = io::open_input(path, "scenario");
  std::stringstream ss;
  ss << f.rdbuf();
  auto dir = path.parent_path();
  return parse_scenario(ss.str(), dir.empty() ? std::filesystem::path(".") : dir);
}

std::string effective_config(const Scenario& s) {
  json j = json::object();
  for (const auto& k : registry()) j[k.name] = k.get(s);
  return j.dump(2) + "\n";
}

Scenario paper_scenario() {
  Scenario s;
  s.name = "paper";
  s.seed = 20240601;
  s.output_dir = "out/paper";
  s.analyses = kAnalyses;
  s.trials_per_state = 100000;
  return s;
}

RunReport run_scenario(const Scenario& s, const std::optional<std::filesystem::path>& output_override) {
  s.validate();
  const std::filesystem::path dir = output_override ? *output_override : std::filesystem::path(s.output_dir);
  Writer w(dir);
  json summary = {{"name", s.name}, {"seed", s.seed}};
  const double t0 = s.readout.bin_width_us;

  if (wants(s, "readout") || wants(s, "calibrate")) {
    const auto raw = sim::simulate_dataset(s.rates, s.readout, s.trials_per_state, s.seed, s.threads);
    if (s.write_trajectories) w.csv("trajectories.csv", [&](std::ostream& os) { io::write_trajectories(os, raw); });
    const auto h = sim::apply_herald(raw, s.readout);
    json herald = {{"simulated_bright", h.simulated_bright}, {"simulated_dark", h.simulated_dark},
                   {"discarded_bright", h.discarded_bright}, {"discarded_dark", h.discarded_dark},
                   {"relabelled", h.relabelled},             {"retained", h.trials.size()}};
    summary["herald"] = herald;
    std::vector<std::string> warnings = s.readout.warnings(s.rates);
    if (!warnings.empty()) summary["warnings"] = warnings;

    if (wants(s, "readout")) {
      const auto best = readout::optimize_threshold(h.trials, s.threshold_duration_us, t0);
      summary["threshold"] = {{"duration_us", best.duration_us}, {"threshold", best.threshold},
                              {"stats", stats_json(best.stats)}};

      std::vector<double> durations = s.threshold_curve_us;
      const double record = t0 * static_cast<double>(s.readout.n_bins - s.readout.herald_bins());
      if (durations.empty()) {
        for (int i = 1; 5.0 * i <= record + 1e-9; ++i) durations.push_back(5.0 * i);
      }
      const auto curve = readout::threshold_error_curve(h.trials, durations, t0);
      w.csv("threshold_curve.csv", [&](std::ostream& os) {
        os << "duration_us,threshold,eps_b,eps_d,mean_error,fidelity_ci_low,fidelity_ci_high\n";
        for (const auto& c : curve) {
          os << fmt::format("{},{},{},{},{},{},{}\n", c.duration_us, c.threshold, c.stats.eps_b, c.stats.eps_d,
                            c.stats.mean_error(), c.stats.fidelity_ci.low, c.stats.fidelity_ci.high);
        }
      });

      const auto levels = readout::log_spaced_levels(s.bayes_level_min, s.bayes_level_max, s.bayes_level_count);
      const auto sweep = readout::bayes_level_sweep(h.trials, s.rates, t0, levels);
      // Threshold error at the Bayesian mean duration, rounded to whole bins.
      std::vector<double> matched;
      for (const auto& r : sweep) {
        matched.push_back(t0 * std::max(1.0, std::round(r.stats.mean_duration_us / t0)));
      }
      const auto matched_curve = readout::threshold_error_curve(h.trials, matched, t0);
      std::size_t best_level = 0;
      for (std::size_t i = 1; i < sweep.size(); ++i) {
        if (sweep[i].stats.mean_error() < sweep[best_level].stats.mean_error()) best_level = i;
      }
      json levels_json = json::array();
      w.csv("bayes_levels.csv", [&](std::ostream& os) {
        os << "level,mean_duration_us,mean_duration_bright_us,mean_duration_dark_us,eps_b,eps_d,mean_error,"
              "non_converged,threshold_duration_us,threshold_error\n";
        for (std::size_t i = 0; i < sweep.size(); ++i) {
          const auto& r = sweep[i];
          os << fmt::format("{},{},{},{},{},{},{},{},{},{}\n", r.level, r.stats.mean_duration_us,
                            r.stats.mean_duration_bright_us, r.stats.mean_duration_dark_us, r.stats.eps_b,
                            r.stats.eps_d, r.stats.mean_error(), r.non_converged, matched[i],
                            matched_curve[i].stats.mean_error());
          levels_json.push_back({{"level", r.level},
                                 {"mean_error", r.stats.mean_error()},
                                 {"mean_duration_us", r.stats.mean_duration_us},
                                 {"threshold_error_matched", matched_curve[i].stats.mean_error()}});
        }
      });
      summary["bayes"] = {{"levels", levels_json},
                          {"best_level", sweep[best_level].level},
                          {"best_stats", stats_json(sweep[best_level].stats)},
                          {"best_non_converged", sweep[best_level].non_converged}};

      if (s.write_results) {
        const auto res = readout::classify_all(h.trials, s.rates, t0, sweep[best_level].level);
        std::vector<io::ResultRow> rows;
        for (std::size_t i = 0; i < res.size(); ++i) rows.push_back({h.trials[i].trial_id, h.trials[i].prepared, res[i]});
        w.csv("results.csv", [&](std::ostream& os) { io::write_results(os, rows); });
      }
    }

    if (wants(s, "calibrate")) {
      const auto cal = readout::calibrate_rates(h.trials, t0);
      w.csv("calibration.csv", [&](std::ostream& os) {
        os << "parameter,value,std_error,ci_low,ci_high,generating\n";
        const std::pair<const char*, std::pair<const readout::RateEstimate*, double>> rows[] = {
            {"gamma_b_per_ms", {&cal.gamma_b, s.rates.gamma_b}},
            {"gamma_d_per_ms", {&cal.gamma_d, s.rates.gamma_d}},
            {"gamma_dp_per_ms", {&cal.gamma_dp, s.rates.gamma_dp}},
            {"gamma_rp_per_ms", {&cal.gamma_rp, s.rates.gamma_rp}}};
        for (const auto& [name, r] : rows) {
          os << fmt::format("{},{},{},{},{},{}\n", name, r.first->value, r.first->std_error, r.first->ci68.low,
                            r.first->ci68.high, r.second);
        }
      });
      summary["calibration"] = {{"gamma_b_per_ms", estimate_json(cal.gamma_b, s.rates.gamma_b)},
                                {"gamma_d_per_ms", estimate_json(cal.gamma_d, s.rates.gamma_d)},
                                {"gamma_dp_per_ms", estimate_json(cal.gamma_dp, s.rates.gamma_dp)},
                                {"gamma_rp_per_ms", estimate_json(cal.gamma_rp, s.rates.gamma_rp)}};
    }
  }

  if (wants(s, "rfmodel")) {
    const auto sol = rf::solve_network(s.network);
    const auto d = rf::decompose(sol);
    const auto m = rf::to_pickup_model(d, s.network.K);
    w.csv("rf_currents.csv", [&](std::ostream& os) {
      os << "k,re_A,im_A,abs_A,phase_deg\n";
      for (std::size_t k = 0; k < sol.current_A.size(); ++k) {
        const auto c = sol.current_A[k];
        os << fmt::format("{},{},{},{},{}\n", k, c.real(), c.imag(), std::abs(c),
                          std::arg(c) * 180.0 / 3.14159265358979323846);
      }
    });
    json rf = {{"I0_uA", m.I0_uA},
               {"I1_uA", m.I1_uA},
               {"max_induced_uA", rf::max_induced(m)},
               {"r_squared", d.r_squared},
               {"uniform_phase_deg", d.uniform_phase_deg},
               {"slope_phase_deg", d.slope_phase_deg},
               {"antisymmetry_residual", d.antisymmetry_residual},
               {"relative_residual", sol.relative_residual}};
    if (!s.rf_curve_off_csv.empty()) {
      const auto off = load_curve(s, s.rf_curve_off_csv, "rf_curve_off_csv");
      w.csv("rf_prediction.csv", [&](std::ostream& os) {
        os << "bias_uA,counts\n";
        for (double b : off.bias_uA()) {
          if (b + rf::max_induced(m) > off.max_bias()) break;
          os << fmt::format("{},{}\n", b, rf::predict_counts(m, off, b));
        }
      });
      if (!s.rf_curve_on_csv.empty()) {
        const auto on = load_curve(s, s.rf_curve_on_csv, "rf_curve_on_csv");
        const auto fit = rf::fit_pickup(on, off, s.rf_fit_delta_Im_uA, s.network.K);
        w.csv("fit_report.csv", [&](std::ostream& os) { io::write_fit_report(os, fit); });
        rf["fit"] = {{"I0_uA", fit.model.I0_uA}, {"I1_uA", fit.model.I1_uA}, {"I0_err_uA", fit.I0_err_uA},
                     {"I1_err_uA", fit.I1_err_uA}, {"residual_norm", fit.residual_norm}};
        rf["sde_no_rf"] = optics::extrapolate_sde_no_rf(s.sde_rf_on, off, on, on.max_bias(), s.rf_margin_uA, s.sde_cap);
      }
    }
    summary["rfmodel"] = rf;
  }

  if (wants(s, "optics")) {
    const auto ap = load_ap(s);
    optics::CalibrationInputs cal;
    cal.gamma_per_s = 1.0 / (s.lifetime_ns * 1e-9);
    cal.ide = s.ide;
    cal.measured_saturated_rate_per_s = s.saturated_rate_per_s;
    std::vector<double> xs;
    for (int i = 0;; ++i) {
      const double x = s.sweep_lateral_start_um + i * s.sweep_lateral_step_um;
      if (x > s.sweep_lateral_stop_um + 1e-9) break;
      xs.push_back(x);
    }
    const auto curve = optics::rate_vs_position(s.scene, ap, cal, xs);
    w.csv("optics_curve.csv", [&](std::ostream& os) {
      os << "lateral_um,rate_per_s,normalized,normalized_constant_ap\n";
      for (std::size_t i = 0; i < xs.size(); ++i) {
        os << fmt::format("{},{},{},{}\n", xs[i], curve.rate_per_s[i], curve.normalized[i],
                          curve.normalized_constant[i]);
      }
    });
    const double frac = optics::collection_fraction(s.scene);
    summary["optics"] = {{"collection_fraction", frac},
                         {"half_gamma_per_s", cal.half_gamma()},
                         {"expected_rate_per_s", optics::expected_rate(s.scene, ap, cal)},
                         {"sde", optics::sde_calibrate(s.saturated_rate_per_s, s.scene, cal)},
                         {"obscured_cells", optics::obscured_cells(s.scene)}};
  }

  if (wants(s, "g2")) {
    timing::TimeTagStream a, b;
    if (!s.g2_timetags_csv.empty()) {
      auto f = io::open_input(s.input_path(s.g2_timetags_csv), "config key 'g2_timetags_csv'");
      auto streams = io::read_timetags(f, s.g2_timetags_csv);
      if (streams.size() != 2) {
        throw ValidationError(fmt::format("config key 'g2_timetags_csv': need exactly two channels, found {}",
                                          streams.size()));
      }
      a = streams.begin()->second;
      b = std::next(streams.begin())->second;
    } else {
      std::tie(a, b) = sim::simulate_timetag_streams(s.emitter, derive_seed(s.seed, kG2Stream, 0));
    }
    timing::G2Options o;
    o.bin_width_ns = s.g2_bin_ns;
    o.max_delay_ns = s.g2_max_delay_ns;
    o.exclusion = s.g2_exclusion;
    const auto est = timing::g2_estimate(a, b, o);
    w.csv("g2.csv", [&](std::ostream& os) { io::write_g2(os, est); });
    const auto dip = timing::find_dip(est);
    summary["g2"] = {{"tags_a", a.tags_ns.size()},
                     {"tags_b", b.tags_ns.size()},
                     {"dip_delay_ns", dip.delay_ns},
                     {"dip_value", dip.value}};
  }

  if (wants(s, "heating")) {
    summary["heating"] = {
        {"a_scaled_to_b_frequency", analytics::scale_heating(s.heating_a, s.heating_b.frequency_MHz, s.heating_alpha)},
        {"field_noise_ratio",
         analytics::field_noise_ratio(s.heating_a, s.heating_b, s.heating_alpha, s.heating_distance_exponent)},
        {"kick_heating_rate_per_s", analytics::kick_heating_rate(s.kick_quanta_per_count, s.kick_count_rate_per_s)}};
  }

  w.text("effective_config.json", effective_config(s));
  w.text("summary.json", summary.dump(2) + "\n");
  return {dir, w.files()};
}

}  // namespace snspd::scenario
