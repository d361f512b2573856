#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "snspd/timing.hpp"

namespace snspd::sim {

enum class State : std::uint8_t { Bright, Dark };

const char* to_string(State s);
State state_from_string(const std::string& s);

/// Count and pumping rates of the two-hypothesis emitter, all in 1/ms.
struct RateParams {
  double gamma_b{0.0};   // bright count rate
  double gamma_d{0.0};   // dark count rate
  double gamma_dp{0.0};  // depumping, bright -> dark
  double gamma_rp{0.0};  // repumping, dark -> bright

  /// Rates are finite and non-negative. Classification additionally needs
  /// gamma_b > gamma_d; pass require_ordered for that.
  void validate(bool require_ordered = false) const;

  /// Rates calibrated for the 9Be+ / MoSi SNSPD readout.
  static RateParams measured();
};

enum class TransitionMode : std::uint8_t {
  /// Continuous-time two-state Markov chain; counts are Poisson with the
  /// time-weighted mean of whatever states occupied the bin.
  Exact,
  /// Flips only at bin boundaries, with probability gamma * t0. This is the
  /// approximation the Bayesian classifier assumes.
  BinBoundary,
};

const char* to_string(TransitionMode m);
TransitionMode transition_mode_from_string(const std::string& s);

struct ReadoutConfig {
  double bin_width_us{1.0};
  std::size_t n_bins{500};
  double herald_us{50.0};
  int herald_bright_min{8};
  TransitionMode mode{TransitionMode::Exact};

  double duration_us() const { return bin_width_us * static_cast<double>(n_bins); }
  /// Number of leading bins covered by the herald window.
  std::size_t herald_bins() const;

  void validate(const RateParams& rates) const;
  /// Non-fatal diagnostics, e.g. t0 * gamma_dp not small.
  std::vector<std::string> warnings(const RateParams& rates) const;
};

struct Trajectory {
  std::uint64_t trial_id{0};
  State prepared{State::Bright};
  std::vector<std::uint16_t> bins;
  /// Hidden state at the start of each bin; empty unless requested.
  std::vector<State> true_states;

  std::uint64_t total_counts(std::size_t first_bin, std::size_t n) const;
};

Trajectory simulate_trial(const RateParams& rates, const ReadoutConfig& cfg, State prepared,
                          std::uint64_t seed, bool record_states = false);

/// n_trials_per_state bright trials (ids 0..n-1) followed by the same number
/// of dark trials. Trial i uses a sub-seed derived from (seed, i), so the
/// result does not depend on n_threads.
std::vector<Trajectory> simulate_dataset(const RateParams& rates, const ReadoutConfig& cfg,
                                         std::size_t n_trials_per_state, std::uint64_t seed,
                                         unsigned n_threads = 0, bool record_states = false);

enum class HeraldOutcome : std::uint8_t { RetainedBright, RetainedDark, Discarded };

struct HeraldResult {
  HeraldOutcome outcome{HeraldOutcome::Discarded};
  /// Bins after the herald window; `prepared` holds the heralded label
  /// (or the original label for discarded trials).
  Trajectory post;
};

/// 0 counts in the herald window -> dark, >= herald_bright_min -> bright,
/// anything else is discarded. A zero-length window keeps the prepared label.
HeraldResult apply_herald(const Trajectory& traj, const ReadoutConfig& cfg);

struct HeraldedDataset {
  std::vector<Trajectory> trials;  // retained, post-herald
  std::size_t simulated_bright{0};
  std::size_t simulated_dark{0};
  std::size_t discarded_bright{0};
  std::size_t discarded_dark{0};
  /// Retained trials whose herald label differs from the simulated preparation.
  std::size_t relabelled{0};
};

HeraldedDataset apply_herald(const std::vector<Trajectory>& dataset, const ReadoutConfig& cfg);

/// Source model for photon-correlation analysis: a renewal emitter whose
/// inter-emission intervals are dead_time + Exp(emission_rate). Each
/// emission goes to channel a, channel b, or neither.
struct EmitterStreamConfig {
  double emission_rate_per_s{1.0e8};
  double dead_time_s{0.0};
  double route_prob_a{0.0};
  double route_prob_b{0.0};
  double background_rate_a_per_s{0.0};
  double background_rate_b_per_s{0.0};
  double channel_b_delay_offset_s{0.0};
  double duration_s{1.0};

  void validate() const;
};

std::pair<timing::TimeTagStream, timing::TimeTagStream> simulate_timetag_streams(
    const EmitterStreamConfig& cfg, std::uint64_t seed);

}  // namespace snspd::sim
