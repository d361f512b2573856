#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "snspd/photon_sim.hpp"

namespace snspd::readout {

using sim::RateParams;
using sim::State;
using sim::Trajectory;

/// Poisson probability of n counts in a bin of t0_us at a rate of gamma_per_ms.
/// Evaluated in log space; stable for n up to well beyond 1e4.
double poisson_pmf(std::int64_t n, double gamma_per_ms, double t0_us);
double log_poisson_pmf(std::int64_t n, double gamma_per_ms, double t0_us);

struct Posterior {
  double p_bright{0.5};
  double p_dark{0.5};

  static Posterior uniform() { return {0.5, 0.5}; }
  double confidence() const { return p_bright >= p_dark ? p_bright : p_dark; }
  State leading() const { return p_bright > p_dark ? State::Bright : State::Dark; }
  void validate() const;
};

/// Precomputed per-bin constants for the two-hypothesis recursion.
/// Pumping events are taken to happen between bins with probabilities
/// gamma_dp * t0 and gamma_rp * t0.
class BayesKernel {
 public:
  BayesKernel(const RateParams& rates, double t0_us);

  Posterior step(const Posterior& prior, std::uint32_t n) const;

 private:
  double depump_;   // gamma_dp * t0
  double repump_;   // gamma_rp * t0
  double mean_b_;   // gamma_b * t0
  double mean_d_;
  double log_mean_b_;
  double log_mean_d_;
};

Posterior bayes_step(const Posterior& prior, std::uint32_t n, const RateParams& rates, double t0_us);

struct ClassifierResult {
  State decision{State::Dark};
  double duration_us{0.0};
  double confidence{0.5};
  std::size_t bins_consumed{0};
  /// False when the record ran out before the confidence level was reached;
  /// the decision then follows the final posterior.
  bool converged{false};
};

/// Starts from a uniform prior and stops at the first bin where either
/// posterior reaches confidence_level, which must lie in (0.5, 1).
ClassifierResult adaptive_classify(const Trajectory& traj, const RateParams& rates, double t0_us,
                                   double confidence_level);

/// Same as adaptive_classify for several levels in one pass over the record.
/// `levels` must be strictly increasing. Results are in the order of `levels`.
std::vector<ClassifierResult> adaptive_classify_levels(const Trajectory& traj,
                                                       const RateParams& rates, double t0_us,
                                                       std::span<const double> levels);

/// Bright iff the total count in the first duration_us of the record reaches
/// `threshold`.
State threshold_classify(const Trajectory& traj, std::uint64_t threshold, double duration_us,
                         double t0_us);

struct Interval {
  double low{0.0};
  double high{0.0};
};

struct Decision {
  State truth{State::Bright};
  State decision{State::Bright};
  double duration_us{0.0};
};

struct ErrorStats {
  double eps_b{0.0};  // bright read as dark
  double eps_d{0.0};  // dark read as bright
  double fidelity{1.0};
  Interval eps_b_ci;
  Interval eps_d_ci;
  Interval fidelity_ci;
  std::size_t n_bright{0};
  std::size_t n_dark{0};
  std::size_t errors_bright{0};
  std::size_t errors_dark{0};
  double mean_duration_bright_us{0.0};
  double mean_duration_dark_us{0.0};
  /// Unweighted average of the two per-state means.
  double mean_duration_us{0.0};

  double mean_error() const { return 1.0 - fidelity; }
};

/// Exact error fractions with 68% Clopper-Pearson intervals. A state with no
/// trials contributes eps = 0.
ErrorStats error_stats(std::span<const Decision> decisions);

/// Two-sided Clopper-Pearson interval for k successes in n trials.
Interval binomial_interval(std::size_t k, std::size_t n, double coverage = 0.6827);

struct ThresholdResult {
  std::uint64_t threshold{0};
  double duration_us{0.0};
  ErrorStats stats;
};

/// Exhaustive scan over integer thresholds; ties go to the smallest threshold.
/// Throws if the dataset lacks either label.
ThresholdResult optimize_threshold(std::span<const Trajectory> dataset, double duration_us,
                                   double t0_us);

/// optimize_threshold at each duration, sharing the running window sums.
std::vector<ThresholdResult> threshold_error_curve(std::span<const Trajectory> dataset,
                                                   std::span<const double> durations_us,
                                                   double t0_us);

/// Confidence levels whose complements 1 - level are log-spaced between
/// 1 - lo and 1 - hi, ascending.
std::vector<double> log_spaced_levels(double lo, double hi, std::size_t n);

struct BayesLevelResult {
  double level{0.0};
  ErrorStats stats;
  std::size_t non_converged{0};
};

std::vector<BayesLevelResult> bayes_level_sweep(std::span<const Trajectory> dataset,
                                                const RateParams& rates, double t0_us,
                                                std::span<const double> levels);

/// Per-trial results of adaptive classification, for CSV export.
std::vector<ClassifierResult> classify_all(std::span<const Trajectory> dataset,
                                           const RateParams& rates, double t0_us, double level);

// ---------------------------------------------------------------------------
// Calibration

enum class PumpRateEstimator : std::uint8_t {
  /// Per-bin ensemble mean of raw counts.
  EnsembleMean,
  /// Per-bin ensemble fraction of trials whose surrounding window of counts
  /// reads bright, mapped back to a count rate. Same linear model, far less
  /// shot noise.
  WindowedState,
};

struct CalibrationOptions {
  /// Readout durations for the histogram-peak fits. Empty: every 25 us from
  /// 50 us to the record length.
  std::vector<double> peak_durations_us;
  PumpRateEstimator pump_estimator{PumpRateEstimator::WindowedState};
  /// Odd window length for WindowedState.
  std::size_t state_window_bins{61};
  std::size_t min_trials_per_state{200};
  /// Groups for the delete-a-group jackknife of the pump-rate errors.
  std::size_t jackknife_groups{20};
};

struct RateEstimate {
  double value{0.0};
  double std_error{0.0};
  Interval ci68;
};

struct PeakFit {
  double duration_us{0.0};
  std::uint64_t threshold{0};
  double mean_bright{0.0};  // fitted Poisson mean of the bright peak
  double mean_dark{0.0};
  std::size_t n_bright_peak{0};
  std::size_t n_dark_peak{0};
};

struct CalibratedRates {
  RateEstimate gamma_b;
  RateEstimate gamma_d;
  RateEstimate gamma_dp;
  RateEstimate gamma_rp;
  std::vector<PeakFit> peak_fits;
  /// Linear fits of the instantaneous count rate (1/ms) vs time since
  /// readout start (ms), per heralded label.
  double bright_rate_intercept{0.0};
  double bright_rate_slope{0.0};
  double dark_rate_intercept{0.0};
  double dark_rate_slope{0.0};

  /// Point estimates, with pump rates clipped at zero.
  RateParams params() const;
};

/// Calibrate the four rates from a heralded dataset. gamma_b and gamma_d come
/// from truncated-Poisson fits to the dominant histogram peak at several
/// durations; gamma_dp and gamma_rp from weighted linear fits of the
/// instantaneous count rate against time since readout start.
CalibratedRates calibrate_rates(std::span<const Trajectory> dataset, double t0_us,
                                const CalibrationOptions& opts = {});

}  // namespace snspd::readout
