#include "snspd/photon_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include <fmt/format.h>

#include "snspd/errors.hpp"
#include "snspd/rng.hpp"

namespace snspd::sim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Sub-seed streams, so trajectories and time tags never share a sequence.
constexpr std::uint64_t kTrialStream = 0x7472616a;  // "traj"
constexpr std::uint64_t kTagStream = 0x74616773;    // "tags"

bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0.0; }

}  // namespace

const char* to_string(State s) { return s == State::Bright ? "bright" : "dark"; }

State state_from_string(const std::string& s) {
  if (s == "bright") return State::Bright;
  if (s == "dark") return State::Dark;
  throw ValidationError(fmt::format("unknown state label '{}'", s));
}

const char* to_string(TransitionMode m) {
  return m == TransitionMode::Exact ? "exact" : "bin_boundary";
}

TransitionMode transition_mode_from_string(const std::string& s) {
  if (s == "exact") return TransitionMode::Exact;
  if (s == "bin_boundary") return TransitionMode::BinBoundary;
  throw ValidationError(fmt::format("unknown transition mode '{}'", s));
}

void RateParams::validate(bool require_ordered) const {
  if (!finite_nonneg(gamma_b) || !finite_nonneg(gamma_d) || !finite_nonneg(gamma_dp) ||
      !finite_nonneg(gamma_rp)) {
    throw ValidationError("rates must be finite and >= 0");
  }
  if (require_ordered && !(gamma_b > gamma_d)) {
    throw ValidationError(
        fmt::format("gamma_b ({}) must exceed gamma_d ({})", gamma_b, gamma_d));
  }
}

RateParams RateParams::measured() { return {162.50, 5.095, 0.020, 0.0120}; }

std::size_t ReadoutConfig::herald_bins() const {
  return static_cast<std::size_t>(std::llround(herald_us / bin_width_us));
}

void ReadoutConfig::validate(const RateParams& rates) const {
  rates.validate();
  if (!(std::isfinite(bin_width_us) && bin_width_us > 0.0)) {
    throw ValidationError("bin width must be > 0");
  }
  if (n_bins == 0) throw ValidationError("n_bins must be >= 1");
  if (!(std::isfinite(herald_us) && herald_us >= 0.0)) {
    throw ValidationError("herald duration must be >= 0");
  }
  const double ratio = herald_us / bin_width_us;
  if (std::abs(ratio - std::round(ratio)) > 1e-9) {
    throw ValidationError("herald duration must be a whole number of bins");
  }
  if (herald_bins() > n_bins) {
    throw ValidationError(fmt::format("herald window ({} us) longer than trajectory ({} us)",
                                      herald_us, duration_us()));
  }
  if (herald_bright_min < 1) throw ValidationError("herald_bright_min must be >= 1");
  // Poisson means per bin are stored in 16-bit counts.
  if (rates.gamma_b * bin_width_us * 1e-3 > 2000.0 ||
      rates.gamma_d * bin_width_us * 1e-3 > 2000.0) {
    throw ValidationError("mean counts per bin too large for 16-bit bins");
  }
  if (mode == TransitionMode::BinBoundary &&
      std::max(rates.gamma_dp, rates.gamma_rp) * bin_width_us * 1e-3 > 1.0) {
    throw ValidationError("bin-boundary mode needs gamma * t0 <= 1");
  }
}

std::vector<std::string> ReadoutConfig::warnings(const RateParams& rates) const {
  std::vector<std::string> out;
  const double pump = std::max(rates.gamma_dp, rates.gamma_rp) * bin_width_us * 1e-3;
  if (pump > 0.01) {
    out.push_back(fmt::format(
        "t0 * max(gamma_dp, gamma_rp) = {:.4g}; the bin-boundary approximation assumes << 1",
        pump));
  }
  return out;
}

std::uint64_t Trajectory::total_counts(std::size_t first_bin, std::size_t n) const {
  const std::size_t end = std::min(bins.size(), first_bin + n);
  std::uint64_t sum = 0;
  for (std::size_t i = first_bin; i < end; ++i) sum += bins[i];
  return sum;
}

Trajectory simulate_trial(const RateParams& rates, const ReadoutConfig& cfg, State prepared,
                          std::uint64_t seed, bool record_states) {
  cfg.validate(rates);
  Engine eng = make_engine(seed);

  // Work in microseconds; rates are per ms.
  const double t0 = cfg.bin_width_us;
  const double lam_b = rates.gamma_b * 1e-3;
  const double lam_d = rates.gamma_d * 1e-3;
  const double out_b = rates.gamma_dp * 1e-3;  // leave bright
  const double out_d = rates.gamma_rp * 1e-3;  // leave dark
  const bool exact = cfg.mode == TransitionMode::Exact;

  auto emission = [&](State s) { return s == State::Bright ? lam_b : lam_d; };
  auto leave_rate = [&](State s) { return s == State::Bright ? out_b : out_d; };
  auto next_jump_after = [&](double t, State s) {
    const double r = leave_rate(s);
    return (exact && r > 0.0) ? t + exp1(eng) / r : kInf;
  };
  auto flip = [](State s) { return s == State::Bright ? State::Dark : State::Bright; };

  Trajectory traj;
  traj.prepared = prepared;
  traj.bins.assign(cfg.n_bins, 0);
  if (record_states) traj.true_states.resize(cfg.n_bins);

  State s = prepared;
  double t = 0.0;
  double next_jump = next_jump_after(t, s);
  // Photons are the points of a Poisson process with piecewise-constant
  // intensity; `need` is the integrated intensity left before the next one.
  double need = exp1(eng);

  for (std::size_t i = 0; i < cfg.n_bins; ++i) {
    if (!exact && i > 0) {
      const double p = leave_rate(s) * t0;
      if (p > 0.0 && std::generate_canonical<double, 53>(eng) < p) s = flip(s);
    }
    if (record_states) traj.true_states[i] = s;

    const double bin_end = t0 * static_cast<double>(i + 1);
    std::uint32_t count = 0;
    while (t < bin_end) {
      const double seg_end = std::min(bin_end, next_jump);
      const double lam = emission(s);
      const double avail = lam * std::max(0.0, seg_end - t);
      if (avail >= need) {
        t += need / lam;
        ++count;
        need = exp1(eng);
        continue;
      }
      need -= avail;
      t = seg_end;
      if (seg_end == next_jump) {
        s = flip(s);
        next_jump = next_jump_after(t, s);
      }
    }
    t = bin_end;
    traj.bins[i] = static_cast<std::uint16_t>(std::min<std::uint32_t>(count, 0xffff));
  }
  return traj;
}

std::vector<Trajectory> simulate_dataset(const RateParams& rates, const ReadoutConfig& cfg,
                                         std::size_t n_trials_per_state, std::uint64_t seed,
                                         unsigned n_threads, bool record_states) {
  if (n_trials_per_state < 1) throw ValidationError("need at least one trial per state");
  cfg.validate(rates);

  const std::size_t total = 2 * n_trials_per_state;
  std::vector<Trajectory> out(total);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const State prep = i < n_trials_per_state ? State::Bright : State::Dark;
      out[i] = simulate_trial(rates, cfg, prep, derive_seed(seed, kTrialStream, i), record_states);
      out[i].trial_id = i;
    }
  };

  unsigned threads = n_threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : n_threads;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, total));
  if (threads <= 1) {
    work(0, total);
    return out;
  }
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (total + threads - 1) / threads;
    for (unsigned k = 0; k < threads; ++k) {
      const std::size_t begin = k * chunk;
      const std::size_t end = std::min(total, begin + chunk);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
  }
  return out;
}

HeraldResult apply_herald(const Trajectory& traj, const ReadoutConfig& cfg) {
  const std::size_t hb = cfg.herald_bins();
  if (hb > traj.bins.size()) {
    throw ValidationError(fmt::format("herald window of {} bins exceeds trajectory of {} bins",
                                      hb, traj.bins.size()));
  }
  HeraldResult res;
  res.post.trial_id = traj.trial_id;
  res.post.prepared = traj.prepared;
  res.post.bins.assign(traj.bins.begin() + static_cast<std::ptrdiff_t>(hb), traj.bins.end());
  if (!traj.true_states.empty()) {
    res.post.true_states.assign(traj.true_states.begin() + static_cast<std::ptrdiff_t>(hb),
                                traj.true_states.end());
  }

  if (hb == 0) {
    res.outcome = traj.prepared == State::Bright ? HeraldOutcome::RetainedBright
                                                 : HeraldOutcome::RetainedDark;
    return res;
  }
  const std::uint64_t n = traj.total_counts(0, hb);
  if (n == 0) {
    res.outcome = HeraldOutcome::RetainedDark;
    res.post.prepared = State::Dark;
  } else if (n >= static_cast<std::uint64_t>(cfg.herald_bright_min)) {
    res.outcome = HeraldOutcome::RetainedBright;
    res.post.prepared = State::Bright;
  } else {
    res.outcome = HeraldOutcome::Discarded;
  }
  return res;
}

HeraldedDataset apply_herald(const std::vector<Trajectory>& dataset, const ReadoutConfig& cfg) {
  HeraldedDataset out;
  out.trials.reserve(dataset.size());
  for (const auto& traj : dataset) {
    const bool bright = traj.prepared == State::Bright;
    (bright ? out.simulated_bright : out.simulated_dark) += 1;
    auto res = apply_herald(traj, cfg);
    if (res.outcome == HeraldOutcome::Discarded) {
      (bright ? out.discarded_bright : out.discarded_dark) += 1;
      continue;
    }
    if (res.post.prepared != traj.prepared) ++out.relabelled;
    out.trials.push_back(std::move(res.post));
  }
  return out;
}

void EmitterStreamConfig::validate() const {
  if (!finite_nonneg(emission_rate_per_s) || !finite_nonneg(dead_time_s) ||
      !finite_nonneg(background_rate_a_per_s) || !finite_nonneg(background_rate_b_per_s)) {
    throw ValidationError("emitter rates and dead time must be finite and >= 0");
  }
  if (!finite_nonneg(route_prob_a) || !finite_nonneg(route_prob_b) ||
      route_prob_a + route_prob_b > 1.0) {
    throw ValidationError("routing probabilities must be >= 0 and sum to at most 1");
  }
  if (!(std::isfinite(duration_s) && duration_s > 0.0)) {
    throw ValidationError("stream duration must be > 0");
  }
  if (!std::isfinite(channel_b_delay_offset_s)) throw ValidationError("offset must be finite");
}

std::pair<timing::TimeTagStream, timing::TimeTagStream> simulate_timetag_streams(
    const EmitterStreamConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Engine eng = make_engine(derive_seed(seed, kTagStream, 0));

  const double duration_ns = cfg.duration_s * 1e9;
  const double offset_ns = cfg.channel_b_delay_offset_s * 1e9;
  const auto limit = static_cast<std::int64_t>(std::floor(duration_ns));

  timing::TimeTagStream a{"a", {}, limit};
  timing::TimeTagStream b{"b", {}, limit};
  auto push = [limit](timing::TimeTagStream& st, double t_ns) {
    const auto tick = static_cast<std::int64_t>(std::floor(t_ns));
    if (tick >= 0 && tick < limit) st.tags_ns.push_back(tick);
  };

  // Unrouted emissions only matter through their timing, so jump straight to
  // the next routed one: the number of intervals is geometric and their sum
  // is n * dead_time + Gamma(n, 1/rate).
  const double p_routed = cfg.route_prob_a + cfg.route_prob_b;
  if (cfg.emission_rate_per_s > 0.0 && p_routed > 0.0) {
    std::geometric_distribution<std::int64_t> n_skip(p_routed);
    const double p_a = cfg.route_prob_a / p_routed;
    double t = 0.0;  // seconds
    for (;;) {
      const std::int64_t n = n_skip(eng) + 1;
      std::gamma_distribution<double> wait(static_cast<double>(n), 1.0 / cfg.emission_rate_per_s);
      t += static_cast<double>(n) * cfg.dead_time_s + wait(eng);
      if (t >= cfg.duration_s) break;
      if (std::generate_canonical<double, 53>(eng) < p_a) {
        push(a, t * 1e9);
      } else {
        push(b, t * 1e9 + offset_ns);
      }
    }
  }

  auto add_background = [&](timing::TimeTagStream& st, double rate, double shift_ns) {
    if (rate <= 0.0) return;
    double t = 0.0;
    for (;;) {
      t += exp1(eng) / rate;
      if (t >= cfg.duration_s) break;
      push(st, t * 1e9 + shift_ns);
    }
  };
  add_background(a, cfg.background_rate_a_per_s, 0.0);
  add_background(b, cfg.background_rate_b_per_s, offset_ns);

  std::sort(a.tags_ns.begin(), a.tags_ns.end());
  std::sort(b.tags_ns.begin(), b.tags_ns.end());
  return {std::move(a), std::move(b)};
}

}  // namespace snspd::sim
