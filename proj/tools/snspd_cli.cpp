// Command-line front end. Exit codes: 0 success, 1 invalid input, 2 numerical
// or runtime failure.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "snspd/analytics.hpp"
#include "snspd/errors.hpp"
#include "snspd/io.hpp"
#include "snspd/optics.hpp"
#include "snspd/photon_sim.hpp"
#include "snspd/readout.hpp"
#include "snspd/rfcircuit.hpp"
#include "snspd/scenario.hpp"
#include "snspd/timing.hpp"

using namespace snspd;

namespace {

/// "28ns", "1.5 us", "2ms", "0.1s" or a bare number of nanoseconds.
double parse_duration_ns(const std::string& text) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &pos);
  } catch (const std::exception&) {
    throw ValidationError(fmt::format("bad duration '{}'", text));
  }
  std::string unit = text.substr(pos);
  unit.erase(0, unit.find_first_not_of(' '));
  if (unit.empty() || unit == "ns") return v;
  if (unit == "us") return v * 1e3;
  if (unit == "ms") return v * 1e6;
  if (unit == "s") return v * 1e9;
  throw ValidationError(fmt::format("bad duration unit in '{}'", text));
}

std::int64_t whole_ns(const std::string& text) {
  const double v = parse_duration_ns(text);
  if (std::abs(v - std::round(v)) > 1e-9) throw ValidationError(fmt::format("'{}' is not a whole number of ns", text));
  return static_cast<std::int64_t>(std::llround(v));
}

/// "a:b:c" inclusive sweep.
std::vector<double> parse_sweep(const std::string& text) {
  std::vector<std::string> f;
  std::size_t start = 0;
  while (true) {
    const auto c = text.find(':', start);
    f.push_back(text.substr(start, c == std::string::npos ? std::string::npos : c - start));
    if (c == std::string::npos) break;
    start = c + 1;
  }
  if (f.size() != 3) throw ValidationError(fmt::format("sweep '{}' must be start:stop:step", text));
  const double a = io::parse_double(f[0], "sweep"), b = io::parse_double(f[1], "sweep"),
               s = io::parse_double(f[2], "sweep");
  if (!(s > 0.0) || b < a) throw ValidationError(fmt::format("sweep '{}' needs step > 0 and stop >= start", text));
  std::vector<double> out;
  for (int i = 0; a + i * s <= b + 1e-9; ++i) out.push_back(a + i * s);
  return out;
}

struct RateFlags {
  sim::RateParams rates{sim::RateParams::measured()};
  void add(CLI::App* app) {
    app->add_option("--gamma-b", rates.gamma_b, "bright count rate (1/ms)")->capture_default_str();
    app->add_option("--gamma-d", rates.gamma_d, "dark count rate (1/ms)")->capture_default_str();
    app->add_option("--gamma-dp", rates.gamma_dp, "depumping rate (1/ms)")->capture_default_str();
    app->add_option("--gamma-rp", rates.gamma_rp, "repumping rate (1/ms)")->capture_default_str();
  }
};

struct ReadoutFlags {
  sim::ReadoutConfig cfg;
  std::string mode{"exact"};
  void add(CLI::App* app, bool with_bins) {
    app->add_option("--bin-width-us", cfg.bin_width_us, "bin width t0 (us)")->capture_default_str();
    app->add_option("--herald-us", cfg.herald_us, "herald window (us), 0 disables")->capture_default_str();
    app->add_option("--herald-bright-min", cfg.herald_bright_min, "herald counts for bright")->capture_default_str();
    if (with_bins) {
      app->add_option("--n-bins", cfg.n_bins, "bins per trial")->capture_default_str();
      app->add_option("--mode", mode, "exact | bin_boundary")->capture_default_str();
    }
  }
  sim::ReadoutConfig get() {
    cfg.mode = sim::transition_mode_from_string(mode);
    return cfg;
  }
};

std::ostream& output(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file = io::open_output(path);
  return file;
}

std::vector<sim::Trajectory> load_heralded(const std::string& in, sim::ReadoutConfig cfg) {
  auto f = io::open_input(in, "--in");
  auto raw = io::read_trajectories(f, in);
  if (raw.empty()) throw ValidationError(fmt::format("{}: no trials", in));
  cfg.n_bins = raw.front().bins.size();
  for (const auto& t : raw) {
    if (t.bins.size() != cfg.n_bins) throw ValidationError(fmt::format("{}: trials differ in length", in));
  }
  return sim::apply_herald(raw, cfg).trials;
}

int run(int argc, char** argv) {
  CLI::App app{"SNSPD ion-trap readout toolkit"};
  app.require_subcommand(1);

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "simulate readout trajectories or photon time tags");
  RateFlags sim_rates;
  ReadoutFlags sim_ro;
  std::size_t sim_trials = 1000;
  std::uint64_t sim_seed = 1;
  unsigned sim_threads = 0;
  std::string sim_out, sim_timetags;
  sim::EmitterStreamConfig em = scenario::Scenario::emitter_defaults();
  sim_rates.add(sim_cmd);
  sim_ro.add(sim_cmd, true);
  sim_cmd->add_option("--trials-per-state", sim_trials, "trials per prepared state")->capture_default_str();
  sim_cmd->add_option("--seed", sim_seed, "master seed")->capture_default_str();
  sim_cmd->add_option("--threads", sim_threads, "worker threads (0: all)")->capture_default_str();
  sim_cmd->add_option("--out", sim_out, "trajectory CSV (default stdout)");
  sim_cmd->add_option("--timetags", sim_timetags, "write emitter time tags to this CSV instead");
  sim_cmd->add_option("--emission-rate", em.emission_rate_per_s, "emitter rate (1/s)")->capture_default_str();
  sim_cmd->add_option("--dead-time-s", em.dead_time_s, "emitter dead time (s)")->capture_default_str();
  sim_cmd->add_option("--route-a", em.route_prob_a, "probability an emission reaches channel a")->capture_default_str();
  sim_cmd->add_option("--route-b", em.route_prob_b, "probability an emission reaches channel b")->capture_default_str();
  sim_cmd->add_option("--background-a", em.background_rate_a_per_s, "channel a background (1/s)")->capture_default_str();
  sim_cmd->add_option("--background-b", em.background_rate_b_per_s, "channel b background (1/s)")->capture_default_str();
  sim_cmd->add_option("--offset-s", em.channel_b_delay_offset_s, "channel b cable delay (s)")->capture_default_str();
  sim_cmd->add_option("--duration-s", em.duration_s, "time-tag record length (s)")->capture_default_str();

  // classify
  auto* cls = app.add_subcommand("classify", "threshold and adaptive Bayesian state discrimination");
  RateFlags cls_rates;
  ReadoutFlags cls_ro;
  std::string cls_in, cls_out, cls_results;
  bool cls_threshold = false, cls_bayes = false;
  std::vector<double> cls_durations{125.0};
  double level_min = 0.9, level_max = 0.9999;
  std::size_t level_count = 13;
  cls_rates.add(cls);
  cls_ro.add(cls, false);
  cls->add_option("--in", cls_in, "trajectory CSV")->required();
  cls->add_flag("--threshold", cls_threshold, "optimal-threshold readout");
  cls->add_flag("--bayes", cls_bayes, "adaptive Bayesian readout");
  cls->add_option("--duration-us", cls_durations, "threshold readout durations (us)")->capture_default_str();
  cls->add_option("--level-min", level_min, "lowest confidence level")->capture_default_str();
  cls->add_option("--level-max", level_max, "highest confidence level")->capture_default_str();
  cls->add_option("--levels", level_count, "number of log-spaced levels")->capture_default_str();
  cls->add_option("--out", cls_out, "summary table CSV (default stdout)");
  cls->add_option("--results", cls_results, "per-trial results CSV at the best Bayesian level");

  // calibrate
  auto* calc = app.add_subcommand("calibrate", "recover the four rates from a trajectory CSV");
  ReadoutFlags cal_ro;
  std::string cal_in, cal_out, cal_est{"windowed"};
  cal_ro.add(calc, false);
  calc->add_option("--in", cal_in, "trajectory CSV")->required();
  calc->add_option("--estimator", cal_est, "pump-rate estimator: windowed | ensemble")->capture_default_str();
  calc->add_option("--out", cal_out, "CSV (default stdout)");

  // rfmodel
  auto* rfc = app.add_subcommand("rfmodel", "induced rf currents and the pickup model");
  rf::NanowireNetwork net;
  double zl = 50.0, zr = 0.0, delta_im = 3.6;
  std::string rf_off, rf_on, rf_out, rf_fit_out, rf_pred_out;
  rfc->add_option("--segments", net.K, "K")->capture_default_str();
  rfc->add_option("--segment-inductance-H", net.L_N_H)->capture_default_str();
  rfc->add_option("--c-ng-F", net.C_NG_F)->capture_default_str();
  rfc->add_option("--c-rn-F", net.C_RN_F)->capture_default_str();
  rfc->add_option("--c-rl-F", net.C_RL_F)->capture_default_str();
  rfc->add_option("--lead-inductance-H", net.L_L_H)->capture_default_str();
  rfc->add_option("--lead-resistance-ohm", net.R_L_ohm)->capture_default_str();
  rfc->add_option("--z-left-ohm", zl)->capture_default_str();
  rfc->add_option("--z-right-ohm", zr)->capture_default_str();
  rfc->add_option("--omega-rad-per-s", net.omega_rad_per_s)->capture_default_str();
  rfc->add_option("--amplitude-V", net.V_rf)->capture_default_str();
  rfc->add_option("--curve-off", rf_off, "rf-off bias curve CSV");
  rfc->add_option("--curve-on", rf_on, "rf-on bias curve CSV, fitted when given");
  rfc->add_option("--delta-Im-uA", delta_im, "reduction of I_m by the rf")->capture_default_str();
  rfc->add_option("--out", rf_out, "segment currents CSV (default stdout)");
  rfc->add_option("--fit-out", rf_fit_out, "fit report CSV");
  rfc->add_option("--predict-out", rf_pred_out, "predicted rf-on curve CSV");

  // optics
  auto* opt = app.add_subcommand("optics", "collection fraction, expected count rate and SDE");
  optics::DetectorScene scene;
  std::string scene_name{"paper"}, ap_spec{"synthetic"}, sweep, opt_out;
  double lifetime_ns = 8.850, ide = 1.0;
  std::optional<double> sat_rate;
  opt->add_option("--scene", scene_name, "scene preset")->check(CLI::IsMember({"paper"}))->capture_default_str();
  opt->add_option("--lateral-um", scene.lateral_um)->capture_default_str();
  opt->add_option("--ion-height-um", scene.ion_height_um)->capture_default_str();
  opt->add_option("--grid-pitch-um", scene.grid_pitch_um)->capture_default_str();
  opt->add_option("--ap", ap_spec, "synthetic | constant:<value> | <CSV path>")->capture_default_str();
  opt->add_option("--lifetime-ns", lifetime_ns)->capture_default_str();
  opt->add_option("--ide", ide)->capture_default_str();
  opt->add_option("--saturated-rate", sat_rate, "measured saturated rate (1/s), gives the SDE");
  opt->add_option("--sweep-lateral", sweep, "start:stop:step in um; writes the normalized curve");
  opt->add_option("--out", opt_out, "curve CSV (default stdout)");

  // g2
  auto* g2c = app.add_subcommand("g2", "second-order correlation of two time-tag channels");
  std::string g2_in, g2_out, g2_bin{"1ns"}, g2_max{"100ns"}, g2_excl, g2_dur;
  std::string ch_a, ch_b;
  g2c->add_option("--in", g2_in, "time-tag CSV")->required();
  g2c->add_option("--channel-a", ch_a, "first channel (default: first in sort order)");
  g2c->add_option("--channel-b", ch_b, "second channel (default: second in sort order)");
  g2c->add_option("--bin", g2_bin, "bin width, e.g. 1ns")->capture_default_str();
  g2c->add_option("--max-delay", g2_max, "largest |delay|")->capture_default_str();
  g2c->add_option("--exclude", g2_excl, "lo:hi delay range (ns) to mask");
  g2c->add_option("--duration", g2_dur, "observation length (default: one past the last tag)");
  g2c->add_option("--out", g2_out, "CSV (default stdout)");

  // heating
  auto* heat = app.add_subcommand("heating", "heating-rate scaling and field-noise comparison");
  analytics::HeatingPoint ha{63.0, 2.0, 39.0}, hb{113.0, 5.3, 35.0};
  double alpha = 1.7, dexp = 4.0, qpc = 0.009, crate = 1000.0;
  heat->add_option("--a-rate", ha.rate_quanta_per_s)->capture_default_str();
  heat->add_option("--a-MHz", ha.frequency_MHz)->capture_default_str();
  heat->add_option("--a-distance-um", ha.distance_um)->capture_default_str();
  heat->add_option("--b-rate", hb.rate_quanta_per_s)->capture_default_str();
  heat->add_option("--b-MHz", hb.frequency_MHz)->capture_default_str();
  heat->add_option("--b-distance-um", hb.distance_um)->capture_default_str();
  heat->add_option("--alpha", alpha, "frequency exponent")->capture_default_str();
  heat->add_option("--distance-exponent", dexp)->capture_default_str();
  heat->add_option("--quanta-per-count", qpc)->capture_default_str();
  heat->add_option("--count-rate", crate, "detector counts per second")->capture_default_str();

  // run
  auto* runc = app.add_subcommand("run", "run a scenario file");
  std::string run_cfg, run_out;
  bool print_cfg = false;
  runc->add_option("config", run_cfg, "scenario JSON, or 'paper' for the built-in scenario")->required();
  runc->add_option("--out", run_out, "output directory (overrides output_dir)");
  runc->add_flag("--print-config", print_cfg, "print the effective config and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  std::ofstream file;
  if (*sim_cmd) {
    if (!sim_timetags.empty()) {
      if (!sim_out.empty()) throw ValidationError("--out and --timetags are exclusive");
      const auto [a, b] = sim::simulate_timetag_streams(em, sim_seed);
      auto f = io::open_output(sim_timetags);
      io::write_timetags(f, {a, b});
      return 0;
    }
    const auto cfg = sim_ro.get();
    const auto data = sim::simulate_dataset(sim_rates.rates, cfg, sim_trials, sim_seed, sim_threads);
    for (const auto& w : cfg.warnings(sim_rates.rates)) std::cerr << "warning: " << w << "\n";
    io::write_trajectories(output(sim_out, file), data);
    return 0;
  }

  if (*cls) {
    if (!cls_threshold && !cls_bayes) cls_threshold = cls_bayes = true;
    auto cfg = cls_ro.get();
    const auto trials = load_heralded(cls_in, cfg);
    const double t0 = cfg.bin_width_us;
    auto& os = output(cls_out, file);
    if (cls_threshold && !cls_bayes) {
      const auto curve = readout::threshold_error_curve(trials, cls_durations, t0);
      os << "duration_us,threshold,eps_b,eps_d,mean_error\n";
      for (const auto& c : curve) {
        os << fmt::format("{},{},{},{},{}\n", c.duration_us, c.threshold, c.stats.eps_b, c.stats.eps_d,
                          c.stats.mean_error());
      }
      return 0;
    }
    const auto levels = readout::log_spaced_levels(level_min, level_max, level_count);
    const auto sweep_res = readout::bayes_level_sweep(trials, cls_rates.rates, t0, levels);
    std::vector<double> matched;
    for (const auto& r : sweep_res) matched.push_back(t0 * std::max(1.0, std::round(r.stats.mean_duration_us / t0)));
    std::vector<readout::ThresholdResult> thr;
    if (cls_threshold) thr = readout::threshold_error_curve(trials, matched, t0);
    os << "level,mean_duration_us,bayes_error,eps_b,eps_d,non_converged";
    os << (cls_threshold ? ",threshold,threshold_error\n" : "\n");
    std::size_t best = 0;
    for (std::size_t i = 0; i < sweep_res.size(); ++i) {
      const auto& r = sweep_res[i];
      if (r.stats.mean_error() < sweep_res[best].stats.mean_error()) best = i;
      os << fmt::format("{},{},{},{},{},{}", r.level, r.stats.mean_duration_us, r.stats.mean_error(),
                        r.stats.eps_b, r.stats.eps_d, r.non_converged);
      if (cls_threshold) os << fmt::format(",{},{}", thr[i].threshold, thr[i].stats.mean_error());
      os << "\n";
    }
    if (!cls_results.empty()) {
      const auto res = readout::classify_all(trials, cls_rates.rates, t0, sweep_res[best].level);
      std::vector<io::ResultRow> rows;
      for (std::size_t i = 0; i < res.size(); ++i) rows.push_back({trials[i].trial_id, trials[i].prepared, res[i]});
      auto f = io::open_output(cls_results);
      io::write_results(f, rows);
    }
    return 0;
  }

  if (*calc) {
    readout::CalibrationOptions o;
    if (cal_est == "windowed") {
      o.pump_estimator = readout::PumpRateEstimator::WindowedState;
    } else if (cal_est == "ensemble") {
      o.pump_estimator = readout::PumpRateEstimator::EnsembleMean;
    } else {
      throw ValidationError(fmt::format("unknown estimator '{}'", cal_est));
    }
    auto cfg = cal_ro.get();
    const auto trials = load_heralded(cal_in, cfg);
    const auto c = readout::calibrate_rates(trials, cfg.bin_width_us, o);
    auto& os = output(cal_out, file);
    os << "parameter,value,std_error,ci_low,ci_high\n";
    for (auto [name, e] : {std::pair{"gamma_b_per_ms", &c.gamma_b}, std::pair{"gamma_d_per_ms", &c.gamma_d},
                           std::pair{"gamma_dp_per_ms", &c.gamma_dp}, std::pair{"gamma_rp_per_ms", &c.gamma_rp}}) {
      os << fmt::format("{},{},{},{},{}\n", name, e->value, e->std_error, e->ci68.low, e->ci68.high);
    }
    return 0;
  }

  if (*rfc) {
    net.Z_left_ohm = zl;
    net.Z_right_ohm = zr;
    const auto sol = rf::solve_network(net);
    const auto d = rf::decompose(sol);
    const auto m = rf::to_pickup_model(d, net.K);
    auto& os = output(rf_out, file);
    os << "k,re_A,im_A,abs_A\n";
    for (std::size_t k = 0; k < sol.current_A.size(); ++k) {
      const auto c = sol.current_A[k];
      os << fmt::format("{},{},{},{}\n", k, c.real(), c.imag(), std::abs(c));
    }
    std::cerr << fmt::format("I0 = {:.4f} uA, I1 = {:.4f} uA, max induced = {:.4f} uA, R^2 = {:.6f}, "
                             "slope phase = {:.2f} deg\n",
                             m.I0_uA, m.I1_uA, rf::max_induced(m), d.r_squared, d.slope_phase_deg);
    if (!rf_on.empty() && rf_off.empty()) throw ValidationError("--curve-on needs --curve-off");
    if (!rf_off.empty()) {
      auto fo = io::open_input(rf_off, "--curve-off");
      const auto off = io::read_bias_curve(fo, rf_off);
      if (!rf_pred_out.empty()) {
        auto f = io::open_output(rf_pred_out);
        f << "bias_uA,counts\n";
        for (double b : off.bias_uA()) {
          if (b + rf::max_induced(m) > off.max_bias()) break;
          f << fmt::format("{},{}\n", b, rf::predict_counts(m, off, b));
        }
      }
      if (!rf_on.empty()) {
        auto fi = io::open_input(rf_on, "--curve-on");
        const auto on = io::read_bias_curve(fi, rf_on);
        const auto fit = rf::fit_pickup(on, off, delta_im, net.K);
        if (rf_fit_out.empty()) {
          io::write_fit_report(std::cerr, fit);
        } else {
          auto f = io::open_output(rf_fit_out);
          io::write_fit_report(f, fit);
        }
      }
    }
    return 0;
  }

  if (*opt) {
    optics::APSurface ap = optics::APSurface::synthetic();
    if (ap_spec.rfind("constant:", 0) == 0) {
      ap = optics::APSurface::constant(io::parse_double(ap_spec.substr(9), "--ap"));
    } else if (ap_spec != "synthetic") {
      auto f = io::open_input(ap_spec, "--ap");
      ap = io::read_ap_surface(f, ap_spec);
    }
    optics::CalibrationInputs cal;
    cal.gamma_per_s = 1.0 / (lifetime_ns * 1e-9);
    cal.ide = ide;
    if (!sweep.empty()) {
      const auto xs = parse_sweep(sweep);
      const auto c = optics::rate_vs_position(scene, ap, cal, xs);
      auto& os = output(opt_out, file);
      os << "lateral_um,rate_per_s,normalized,normalized_constant_ap\n";
      for (std::size_t i = 0; i < xs.size(); ++i) {
        os << fmt::format("{},{},{},{}\n", xs[i], c.rate_per_s[i], c.normalized[i], c.normalized_constant[i]);
      }
      return 0;
    }
    auto& os = output(opt_out, file);
    os << "quantity,value\n";
    os << fmt::format("collection_fraction,{}\n", optics::collection_fraction(scene));
    os << fmt::format("expected_rate_per_s,{}\n", optics::expected_rate(scene, ap, cal));
    if (sat_rate) os << fmt::format("sde,{}\n", optics::sde_calibrate(*sat_rate, scene, cal));
    return 0;
  }

  if (*g2c) {
    auto f = io::open_input(g2_in, "--in");
    const auto streams = io::read_timetags(f, g2_in, g2_dur.empty() ? 0 : whole_ns(g2_dur));
    if (streams.size() < 2) throw ValidationError(fmt::format("{}: need two channels", g2_in));
    if (ch_a.empty()) ch_a = streams.begin()->first;
    if (ch_b.empty()) ch_b = std::next(streams.begin())->first;
    if (!streams.count(ch_a) || !streams.count(ch_b)) throw ValidationError("unknown channel name");
    timing::G2Options o;
    o.bin_width_ns = whole_ns(g2_bin);
    o.max_delay_ns = whole_ns(g2_max);
    if (!g2_excl.empty()) {
      const auto c = g2_excl.find(':');
      if (c == std::string::npos) throw ValidationError("--exclude must be lo:hi");
      o.exclusion = timing::DelayInterval{parse_duration_ns(g2_excl.substr(0, c)), parse_duration_ns(g2_excl.substr(c + 1))};
    }
    const auto est = timing::g2_estimate(streams.at(ch_a), streams.at(ch_b), o);
    io::write_g2(output(g2_out, file), est);
    const auto dip = timing::find_dip(est);
    std::cerr << fmt::format("dip at {} ns, g2 = {}\n", dip.delay_ns, dip.value);
    return 0;
  }

  if (*heat) {
    std::cout << "quantity,value\n";
    std::cout << fmt::format("a_scaled_to_b_frequency,{}\n", analytics::scale_heating(ha, hb.frequency_MHz, alpha));
    std::cout << fmt::format("field_noise_ratio,{}\n", analytics::field_noise_ratio(ha, hb, alpha, dexp));
    std::cout << fmt::format("kick_heating_rate_per_s,{}\n", analytics::kick_heating_rate(qpc, crate));
    return 0;
  }

  if (*runc) {
    const auto s = run_cfg == "paper" && !std::filesystem::exists(run_cfg) ? scenario::paper_scenario()
                                                                           : scenario::load_scenario(run_cfg);
    if (print_cfg) {
      std::cout << scenario::effective_config(s);
      return 0;
    }
    std::optional<std::filesystem::path> out;
    if (!run_out.empty()) out = run_out;
    const auto rep = scenario::run_scenario(s, out);
    for (const auto& p : rep.files) std::cerr << "wrote " << p.string() << "\n";
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
