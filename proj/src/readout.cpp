#include "snspd/readout.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <fmt/format.h>

#include "snspd/errors.hpp"

namespace snspd::readout {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::size_t bins_for(double duration_us, double t0_us) {
  if (!(t0_us > 0.0)) throw ValidationError("bin width must be > 0");
  if (!(duration_us >= 0.0)) throw ValidationError("duration must be >= 0");
  return static_cast<std::size_t>(std::llround(duration_us / t0_us));
}

void require_both_labels(std::span<const Trajectory> dataset) {
  bool bright = false;
  bool dark = false;
  for (const auto& t : dataset) (t.prepared == State::Bright ? bright : dark) = true;
  if (!bright || !dark) throw ValidationError("dataset must contain both bright and dark trials");
}

// log of mean^n e^-mean without the n! term, which cancels between hypotheses.
double log_likelihood_kernel(std::uint32_t n, double mean, double log_mean) {
  if (mean == 0.0) return n == 0 ? 0.0 : kNegInf;
  return static_cast<double>(n) * log_mean - mean;
}

struct LinearFit {
  double intercept{0.0};
  double slope{0.0};
  double x_mean{0.0};
};

// Weighted least squares y = a + b x.
LinearFit weighted_line(std::span<const double> x, std::span<const double> y,
                        std::span<const double> w) {
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
  }
  if (!(sw > 0.0)) throw NumericalError("linear fit has no weight");
  const double xm = sx / sw;
  const double ym = sy / sw;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += w[i] * (x[i] - xm) * (x[i] - xm);
    sxy += w[i] * (x[i] - xm) * (y[i] - ym);
  }
  if (!(sxx > 0.0)) throw NumericalError("linear fit abscissae are degenerate");
  const double b = sxy / sxx;
  return {ym - b * xm, b, xm};
}

// Mean of a Poisson(lam) variable restricted to n >= lo.
double lower_truncated_mean(double lam, std::uint64_t lo) {
  if (lo == 0) return lam;
  using boost::math::gamma_p;
  const double tail = gamma_p(static_cast<double>(lo), lam);  // P(N >= lo)
  const double tail_m1 = lo == 1 ? 1.0 : gamma_p(static_cast<double>(lo - 1), lam);
  return lam * tail_m1 / tail;
}

// Mean of a Poisson(lam) variable restricted to n <= hi (hi >= 1).
double upper_truncated_mean(double lam, std::uint64_t hi) {
  using boost::math::gamma_q;
  const double cdf = gamma_q(static_cast<double>(hi + 1), lam);    // P(N <= hi)
  const double cdf_m1 = gamma_q(static_cast<double>(hi), lam);     // P(N <= hi - 1)
  return lam * cdf_m1 / cdf;
}

// Solve mean_fn(lam) = target for lam by bisection; mean_fn is increasing.
template <class F>
double solve_truncated(F&& mean_fn, double target, double lo, double hi) {
  while (mean_fn(hi) < target) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_fn(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

double log_poisson_pmf(std::int64_t n, double gamma_per_ms, double t0_us) {
  if (n < 0 || !(gamma_per_ms >= 0.0) || !(t0_us > 0.0) || !std::isfinite(gamma_per_ms) ||
      !std::isfinite(t0_us)) {
    throw ValidationError("poisson_pmf needs n >= 0, gamma >= 0, t0 > 0");
  }
  const double mean = gamma_per_ms * t0_us * 1e-3;
  if (mean == 0.0) return n == 0 ? 0.0 : kNegInf;
  const double dn = static_cast<double>(n);
  return dn * std::log(mean) - mean - std::lgamma(dn + 1.0);
}

double poisson_pmf(std::int64_t n, double gamma_per_ms, double t0_us) {
  return std::exp(log_poisson_pmf(n, gamma_per_ms, t0_us));
}

void Posterior::validate() const {
  if (!(p_bright >= 0.0 && p_bright <= 1.0 && p_dark >= 0.0 && p_dark <= 1.0) ||
      std::abs(p_bright + p_dark - 1.0) > 1e-12) {
    throw ValidationError(fmt::format("invalid posterior ({}, {})", p_bright, p_dark));
  }
}

BayesKernel::BayesKernel(const RateParams& rates, double t0_us) {
  rates.validate();
  if (!(t0_us > 0.0) || !std::isfinite(t0_us)) throw ValidationError("t0 must be > 0");
  depump_ = rates.gamma_dp * t0_us * 1e-3;
  repump_ = rates.gamma_rp * t0_us * 1e-3;
  if (depump_ >= 1.0 || repump_ >= 1.0) {
    throw ValidationError("gamma_dp * t0 and gamma_rp * t0 must be < 1");
  }
  mean_b_ = rates.gamma_b * t0_us * 1e-3;
  mean_d_ = rates.gamma_d * t0_us * 1e-3;
  log_mean_b_ = mean_b_ > 0.0 ? std::log(mean_b_) : kNegInf;
  log_mean_d_ = mean_d_ > 0.0 ? std::log(mean_d_) : kNegInf;
}

Posterior BayesKernel::step(const Posterior& prior, std::uint32_t n) const {
  const double prior_b = (1.0 - depump_) * prior.p_bright + repump_ * prior.p_dark;
  const double prior_d = (1.0 - repump_) * prior.p_dark + depump_ * prior.p_bright;
  const double lb = (prior_b > 0.0 ? std::log(prior_b) : kNegInf) +
                    log_likelihood_kernel(n, mean_b_, log_mean_b_);
  const double ld = (prior_d > 0.0 ? std::log(prior_d) : kNegInf) +
                    log_likelihood_kernel(n, mean_d_, log_mean_d_);
  if (lb == kNegInf && ld == kNegInf) {
    throw NumericalError(fmt::format("{} counts are impossible under both hypotheses", n));
  }
  const double m = std::max(lb, ld);
  const double eb = std::exp(lb - m);
  const double ed = std::exp(ld - m);
  const double z = eb + ed;
  return {eb / z, ed / z};
}

Posterior bayes_step(const Posterior& prior, std::uint32_t n, const RateParams& rates,
                     double t0_us) {
  prior.validate();
  return BayesKernel(rates, t0_us).step(prior, n);
}

ClassifierResult adaptive_classify(const Trajectory& traj, const RateParams& rates, double t0_us,
                                   double confidence_level) {
  const double levels[] = {confidence_level};
  return adaptive_classify_levels(traj, rates, t0_us, levels).front();
}

std::vector<ClassifierResult> adaptive_classify_levels(const Trajectory& traj,
                                                       const RateParams& rates, double t0_us,
                                                       std::span<const double> levels) {
  if (traj.bins.empty()) throw ValidationError("cannot classify an empty trajectory");
  if (levels.empty()) throw ValidationError("no confidence levels given");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] > 0.5 && levels[i] < 1.0)) {
      throw ValidationError(fmt::format("confidence level {} outside (0.5, 1)", levels[i]));
    }
    if (i > 0 && !(levels[i] > levels[i - 1])) {
      throw ValidationError("confidence levels must be strictly increasing");
    }
  }

  const BayesKernel kernel(rates, t0_us);
  std::vector<ClassifierResult> out(levels.size());
  std::size_t next = 0;  // first undecided level
  Posterior post = Posterior::uniform();
  for (std::size_t i = 0; i < traj.bins.size() && next < levels.size(); ++i) {
    post = kernel.step(post, traj.bins[i]);
    const double conf = post.confidence();
    while (next < levels.size() && conf >= levels[next]) {
      auto& r = out[next++];
      r.decision = post.leading();
      r.confidence = conf;
      r.bins_consumed = i + 1;
      r.duration_us = static_cast<double>(i + 1) * t0_us;
      r.converged = true;
    }
  }
  for (; next < levels.size(); ++next) {
    auto& r = out[next];
    r.decision = post.leading();  // an exact tie reads dark
    r.confidence = post.confidence();
    r.bins_consumed = traj.bins.size();
    r.duration_us = static_cast<double>(traj.bins.size()) * t0_us;
    r.converged = false;
  }
  return out;
}

State threshold_classify(const Trajectory& traj, std::uint64_t threshold, double duration_us,
                         double t0_us) {
  const std::size_t n = bins_for(duration_us, t0_us);
  if (n > traj.bins.size()) {
    throw ValidationError(fmt::format("window of {} bins exceeds trajectory of {} bins", n,
                                      traj.bins.size()));
  }
  return traj.total_counts(0, n) >= threshold ? State::Bright : State::Dark;
}

Interval binomial_interval(std::size_t k, std::size_t n, double coverage) {
  if (n == 0) return {0.0, 1.0};
  const double alpha = 1.0 - coverage;
  const double kd = static_cast<double>(k);
  const double nd = static_cast<double>(n);
  Interval ci;
  ci.low = k == 0 ? 0.0 : boost::math::ibeta_inv(kd, nd - kd + 1.0, alpha / 2.0);
  ci.high = k == n ? 1.0 : boost::math::ibeta_inv(kd + 1.0, nd - kd, 1.0 - alpha / 2.0);
  return ci;
}

ErrorStats error_stats(std::span<const Decision> decisions) {
  if (decisions.empty()) throw ValidationError("no decisions to score");
  ErrorStats s;
  double dur_b = 0.0, dur_d = 0.0;
  for (const auto& d : decisions) {
    if (d.truth == State::Bright) {
      ++s.n_bright;
      dur_b += d.duration_us;
      if (d.decision != State::Bright) ++s.errors_bright;
    } else {
      ++s.n_dark;
      dur_d += d.duration_us;
      if (d.decision != State::Dark) ++s.errors_dark;
    }
  }
  auto frac = [](std::size_t k, std::size_t n) {
    return n == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(n);
  };
  s.eps_b = frac(s.errors_bright, s.n_bright);
  s.eps_d = frac(s.errors_dark, s.n_dark);
  s.fidelity = 1.0 - 0.5 * (s.eps_b + s.eps_d);
  s.eps_b_ci = binomial_interval(s.errors_bright, s.n_bright);
  s.eps_d_ci = binomial_interval(s.errors_dark, s.n_dark);
  // Independent binomials; combine the one-sided CP half-widths in quadrature.
  const double lo = std::hypot(s.eps_b - s.eps_b_ci.low, s.eps_d - s.eps_d_ci.low);
  const double hi = std::hypot(s.eps_b_ci.high - s.eps_b, s.eps_d_ci.high - s.eps_d);
  s.fidelity_ci = {std::clamp(s.fidelity - 0.5 * hi, 0.0, 1.0),
                   std::clamp(s.fidelity + 0.5 * lo, 0.0, 1.0)};
  s.mean_duration_bright_us = s.n_bright ? dur_b / static_cast<double>(s.n_bright) : 0.0;
  s.mean_duration_dark_us = s.n_dark ? dur_d / static_cast<double>(s.n_dark) : 0.0;
  s.mean_duration_us = 0.5 * (s.mean_duration_bright_us + s.mean_duration_dark_us);
  return s;
}

namespace {

// Threshold scan over per-trial window totals.
ThresholdResult best_threshold(std::span<const Trajectory> dataset,
                               std::span<const std::uint64_t> totals, double duration_us) {
  const std::uint64_t max_count = *std::max_element(totals.begin(), totals.end());
  std::vector<std::size_t> hist_b(max_count + 2, 0), hist_d(max_count + 2, 0);
  std::size_t nb = 0, nd = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].prepared == State::Bright) {
      ++hist_b[totals[i]];
      ++nb;
    } else {
      ++hist_d[totals[i]];
      ++nd;
    }
  }
  // Threshold T: bright errors are totals < T, dark errors totals >= T.
  std::size_t below_b = 0;   // bright with total < T
  std::size_t at_or_above_d = nd;
  std::uint64_t best_t = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::uint64_t t = 0; t <= max_count + 1; ++t) {
    if (t > 0) {
      below_b += hist_b[t - 1];
      at_or_above_d -= hist_d[t - 1];
    }
    const double err = static_cast<double>(below_b) / static_cast<double>(nb) +
                       static_cast<double>(at_or_above_d) / static_cast<double>(nd);
    if (err < best_err) {
      best_err = err;
      best_t = t;
    }
  }
  std::vector<Decision> decisions(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    decisions[i] = {dataset[i].prepared, totals[i] >= best_t ? State::Bright : State::Dark,
                    duration_us};
  }
  return {best_t, duration_us, error_stats(decisions)};
}

}  // namespace

ThresholdResult optimize_threshold(std::span<const Trajectory> dataset, double duration_us,
                                   double t0_us) {
  const double durations[] = {duration_us};
  return threshold_error_curve(dataset, durations, t0_us).front();
}

std::vector<ThresholdResult> threshold_error_curve(std::span<const Trajectory> dataset,
                                                   std::span<const double> durations_us,
                                                   double t0_us) {
  require_both_labels(dataset);
  std::vector<std::size_t> order(durations_us.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return durations_us[a] < durations_us[b]; });

  std::vector<std::uint64_t> totals(dataset.size(), 0);
  std::size_t done_bins = 0;
  std::vector<ThresholdResult> out(durations_us.size());
  for (std::size_t idx : order) {
    const std::size_t n = bins_for(durations_us[idx], t0_us);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const auto& bins = dataset[i].bins;
      if (n > bins.size()) {
        throw ValidationError(fmt::format("window of {} bins exceeds trajectory of {} bins", n,
                                          bins.size()));
      }
      for (std::size_t k = done_bins; k < n; ++k) totals[i] += bins[k];
    }
    done_bins = std::max(done_bins, n);
    out[idx] = best_threshold(dataset, totals, durations_us[idx]);
  }
  return out;
}

std::vector<double> log_spaced_levels(double lo, double hi, std::size_t n) {
  if (!(lo > 0.5 && hi < 1.0 && lo <= hi)) throw ValidationError("levels must satisfy 0.5 < lo <= hi < 1");
  if (n == 0) throw ValidationError("need at least one level");
  if (n == 1) return {lo};
  std::vector<double> out(n);
  const double a = std::log(1.0 - lo);
  const double b = std::log(1.0 - hi);
  for (std::size_t i = 0; i < n; ++i) {
    const double f = static_cast<double>(i) / static_cast<double>(n - 1);
    out[i] = 1.0 - std::exp(a + f * (b - a));
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

std::vector<BayesLevelResult> bayes_level_sweep(std::span<const Trajectory> dataset,
                                                const RateParams& rates, double t0_us,
                                                std::span<const double> levels) {
  require_both_labels(dataset);
  rates.validate(true);
  std::vector<std::vector<Decision>> decisions(levels.size(),
                                               std::vector<Decision>(dataset.size()));
  std::vector<std::size_t> non_converged(levels.size(), 0);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto results = adaptive_classify_levels(dataset[i], rates, t0_us, levels);
    for (std::size_t l = 0; l < levels.size(); ++l) {
      decisions[l][i] = {dataset[i].prepared, results[l].decision, results[l].duration_us};
      if (!results[l].converged) ++non_converged[l];
    }
  }
  std::vector<BayesLevelResult> out(levels.size());
  for (std::size_t l = 0; l < levels.size(); ++l) {
    out[l] = {levels[l], error_stats(decisions[l]), non_converged[l]};
  }
  return out;
}

std::vector<ClassifierResult> classify_all(std::span<const Trajectory> dataset,
                                           const RateParams& rates, double t0_us, double level) {
  rates.validate(true);
  std::vector<ClassifierResult> out;
  out.reserve(dataset.size());
  for (const auto& t : dataset) out.push_back(adaptive_classify(t, rates, t0_us, level));
  return out;
}

// ---------------------------------------------------------------------------
// Calibration

RateParams CalibratedRates::params() const {
  return {gamma_b.value, gamma_d.value, std::max(0.0, gamma_dp.value),
          std::max(0.0, gamma_rp.value)};
}

namespace {

struct PeakRates {
  double gamma_b{0.0};
  double gamma_d{0.0};
  double se_b{0.0};
  double se_d{0.0};
  std::vector<PeakFit> fits;
};

PeakRates fit_peaks(std::span<const Trajectory> dataset, double t0_us,
                    std::vector<double> durations) {
  const std::size_t n_bins = dataset.front().bins.size();
  if (durations.empty()) {
    for (double d = 50.0; d <= static_cast<double>(n_bins) * t0_us + 1e-9; d += 25.0) {
      durations.push_back(d);
    }
  }
  const auto thresholds = threshold_error_curve(dataset, durations, t0_us);

  PeakRates out;
  double sxy_b = 0.0, sxx_b = 0.0, sxy_d = 0.0, sxx_d = 0.0;
  std::vector<std::uint64_t> totals(dataset.size());
  for (std::size_t k = 0; k < durations.size(); ++k) {
    const std::size_t n = bins_for(durations[k], t0_us);
    const std::uint64_t thr = thresholds[k].threshold;
    // The dark peak needs at least two count values below threshold.
    if (thr < 2) continue;

    double sum_b = 0.0, sum_d = 0.0;
    std::size_t nb = 0, nd = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const std::uint64_t c = dataset[i].total_counts(0, n);
      if (dataset[i].prepared == State::Bright && c >= thr) {
        sum_b += static_cast<double>(c);
        ++nb;
      } else if (dataset[i].prepared == State::Dark && c < thr) {
        sum_d += static_cast<double>(c);
        ++nd;
      }
    }
    if (nb == 0 || nd == 0) continue;
    const double mb = sum_b / static_cast<double>(nb);
    const double md = sum_d / static_cast<double>(nd);
    const double lam_b = solve_truncated(
        [&](double lam) { return lower_truncated_mean(lam, thr); }, mb, 1e-12, std::max(1.0, mb));
    const double lam_d =
        md <= 0.0 ? 0.0
                  : solve_truncated([&](double lam) { return upper_truncated_mean(lam, thr - 1); },
                                    md, 1e-12, std::max(1.0, md));
    out.fits.push_back({durations[k], thr, lam_b, lam_d, nb, nd});
    // Poisson-weighted regression of mean against duration through the origin.
    const double d = durations[k];
    const double wb = static_cast<double>(nb) / std::max(lam_b, 1e-12);
    const double wd = static_cast<double>(nd) / std::max(lam_d, 1e-12);
    sxy_b += wb * d * lam_b;
    sxx_b += wb * d * d;
    sxy_d += wd * d * lam_d;
    sxx_d += wd * d * d;
  }
  if (out.fits.empty()) {
    throw NumericalError("no readout duration separates the two count peaks");
  }
  // Per us -> per ms.
  out.gamma_b = 1e3 * sxy_b / sxx_b;
  out.gamma_d = 1e3 * sxy_d / sxx_d;
  // The windows are nested, so they share most of their information; quote
  // the Poisson error of the longest window alone.
  const PeakFit& last = out.fits.back();
  out.se_b = 1e3 * std::sqrt(last.mean_bright / static_cast<double>(last.n_bright_peak)) /
             last.duration_us;
  out.se_d = 1e3 * std::sqrt(std::max(last.mean_dark, 1e-12) /
                             static_cast<double>(last.n_dark_peak)) /
             last.duration_us;
  return out;
}

// Poisson threshold minimizing the summed error rates for a window with the
// given means.
std::uint64_t window_threshold(double mean_b, double mean_d) {
  using boost::math::gamma_p;
  using boost::math::gamma_q;
  std::uint64_t best = 1;
  double best_err = std::numeric_limits<double>::infinity();
  const auto top = static_cast<std::uint64_t>(mean_b + 10.0 * std::sqrt(mean_b) + 10.0);
  for (std::uint64_t t = 1; t <= top; ++t) {
    const double td = static_cast<double>(t);
    const double err_b = gamma_q(td, mean_b);                    // P(N_b <= t - 1)
    const double err_d = mean_d > 0.0 ? gamma_p(td, mean_d) : 0.0;  // P(N_d >= t)
    if (err_b + err_d < best_err) {
      best_err = err_b + err_d;
      best = t;
    }
  }
  return best;
}

struct PumpSums {
  // [group][bin] sums of the per-bin observable and trial counts per group.
  std::vector<std::vector<double>> sums;
  std::vector<std::size_t> trials;
};

struct PumpFit {
  double gamma_dp{0.0};
  double gamma_rp{0.0};
  LinearFit bright;  // fraction bright vs time (ms)
  LinearFit dark;
};

}  // namespace

CalibratedRates calibrate_rates(std::span<const Trajectory> dataset, double t0_us,
                                const CalibrationOptions& opts) {
  if (!(t0_us > 0.0)) throw ValidationError("t0 must be > 0");
  std::size_t nb = 0, nd = 0;
  for (const auto& t : dataset) (t.prepared == State::Bright ? nb : nd) += 1;
  if (nb < opts.min_trials_per_state || nd < opts.min_trials_per_state) {
    throw NumericalError(fmt::format(
        "insufficient trials for a stable calibration: {} bright, {} dark (need {} each)", nb, nd,
        opts.min_trials_per_state));
  }
  const std::size_t n_bins = dataset.front().bins.size();
  for (const auto& t : dataset) {
    if (t.bins.size() != n_bins) throw ValidationError("trajectories differ in length");
  }

  CalibratedRates out;
  const PeakRates peaks = fit_peaks(dataset, t0_us, opts.peak_durations_us);
  out.peak_fits = peaks.fits;
  out.gamma_b = {peaks.gamma_b, peaks.se_b, {peaks.gamma_b - peaks.se_b, peaks.gamma_b + peaks.se_b}};
  out.gamma_d = {peaks.gamma_d, peaks.se_d, {peaks.gamma_d - peaks.se_d, peaks.gamma_d + peaks.se_d}};
  const double contrast = peaks.gamma_b - peaks.gamma_d;  // per ms
  if (!(contrast > 0.0)) throw NumericalError("calibrated gamma_b does not exceed gamma_d");

  // Per-bin observable: either raw counts or a 0/1 windowed state call.
  const bool windowed = opts.pump_estimator == PumpRateEstimator::WindowedState;
  std::size_t half = 0;
  std::uint64_t win_thr = 0;
  if (windowed) {
    if (opts.state_window_bins % 2 == 0 || opts.state_window_bins >= n_bins) {
      throw ValidationError("state window must be odd and shorter than the record");
    }
    half = opts.state_window_bins / 2;
    const double w_ms = static_cast<double>(opts.state_window_bins) * t0_us * 1e-3;
    win_thr = window_threshold(peaks.gamma_b * w_ms, peaks.gamma_d * w_ms);
  }
  const std::size_t first = half;
  const std::size_t last = n_bins - half;  // exclusive
  const std::size_t span_bins = last - first;
  const std::size_t groups = std::max<std::size_t>(2, opts.jackknife_groups);

  PumpSums sums_b{std::vector<std::vector<double>>(groups, std::vector<double>(span_bins, 0.0)),
                  std::vector<std::size_t>(groups, 0)};
  PumpSums sums_d = sums_b;
  std::vector<std::uint64_t> prefix(n_bins + 1);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& traj = dataset[i];
    PumpSums& dst = traj.prepared == State::Bright ? sums_b : sums_d;
    const std::size_t g = i % groups;
    ++dst.trials[g];
    auto& row = dst.sums[g];
    if (windowed) {
      prefix[0] = 0;
      for (std::size_t k = 0; k < n_bins; ++k) prefix[k + 1] = prefix[k] + traj.bins[k];
      for (std::size_t k = first; k < last; ++k) {
        if (prefix[k + half + 1] - prefix[k - half] >= win_thr) row[k - first] += 1.0;
      }
    } else {
      for (std::size_t k = first; k < last; ++k) row[k - first] += traj.bins[k];
    }
  }

  std::vector<double> times_ms(span_bins);
  for (std::size_t k = 0; k < span_bins; ++k) {
    times_ms[k] = (static_cast<double>(first + k) + 0.5) * t0_us * 1e-3;
  }

  // Fraction of trials in the bright state, per bin, from a subset of groups.
  auto fractions = [&](const PumpSums& s, std::size_t skip_group, std::vector<double>& f,
                       std::vector<double>& w) {
    std::size_t n = 0;
    for (std::size_t g = 0; g < groups; ++g) {
      if (g != skip_group) n += s.trials[g];
    }
    const double nd_trials = static_cast<double>(n);
    for (std::size_t k = 0; k < span_bins; ++k) {
      double acc = 0.0;
      for (std::size_t g = 0; g < groups; ++g) {
        if (g != skip_group) acc += s.sums[g][k];
      }
      double var;
      if (windowed) {
        f[k] = acc / nd_trials;
        var = std::max(f[k] * (1.0 - f[k]), 1.0 / nd_trials) / nd_trials;
      } else {
        const double rate = acc / nd_trials / (t0_us * 1e-3);  // per ms
        f[k] = (rate - peaks.gamma_d) / contrast;
        const double mean_counts = std::max(acc / nd_trials, 1.0 / nd_trials);
        var = mean_counts / nd_trials / std::pow(contrast * t0_us * 1e-3, 2);
      }
      w[k] = 1.0 / var;
    }
  };

  auto solve_pumps = [&](std::size_t skip_group) {
    std::vector<double> f(span_bins), w(span_bins);
    PumpFit fit;
    fractions(sums_b, skip_group, f, w);
    fit.bright = weighted_line(times_ms, f, w);
    fractions(sums_d, skip_group, f, w);
    fit.dark = weighted_line(times_ms, f, w);
    // df/dt = -gamma_dp f + gamma_rp (1 - f), at each fit's weighted mean time.
    const double fb = fit.bright.intercept + fit.bright.slope * fit.bright.x_mean;
    const double fd = fit.dark.intercept + fit.dark.slope * fit.dark.x_mean;
    const double det = -fb * (1.0 - fd) + fd * (1.0 - fb);  // = fd - fb
    if (std::abs(det) < 1e-6) throw NumericalError("heralded labels do not separate the states");
    fit.gamma_dp = (fit.bright.slope * (1.0 - fd) - fit.dark.slope * (1.0 - fb)) / det;
    fit.gamma_rp = (-fb * fit.dark.slope + fd * fit.bright.slope) / det;
    return fit;
  };

  const PumpFit full = solve_pumps(groups);  // skip none
  double acc_dp = 0.0, acc_rp = 0.0, acc2_dp = 0.0, acc2_rp = 0.0;
  for (std::size_t g = 0; g < groups; ++g) {
    const PumpFit jk = solve_pumps(g);
    acc_dp += jk.gamma_dp;
    acc_rp += jk.gamma_rp;
    acc2_dp += jk.gamma_dp * jk.gamma_dp;
    acc2_rp += jk.gamma_rp * jk.gamma_rp;
  }
  const double G = static_cast<double>(groups);
  const double var_dp = (G - 1.0) / G * std::max(0.0, acc2_dp - acc_dp * acc_dp / G);
  const double var_rp = (G - 1.0) / G * std::max(0.0, acc2_rp - acc_rp * acc_rp / G);
  const double se_dp = std::sqrt(var_dp);
  const double se_rp = std::sqrt(var_rp);
  out.gamma_dp = {full.gamma_dp, se_dp, {full.gamma_dp - se_dp, full.gamma_dp + se_dp}};
  out.gamma_rp = {full.gamma_rp, se_rp, {full.gamma_rp - se_rp, full.gamma_rp + se_rp}};

  // Report the fits as instantaneous count rates.
  out.bright_rate_intercept = peaks.gamma_d + contrast * full.bright.intercept;
  out.bright_rate_slope = contrast * full.bright.slope;
  out.dark_rate_intercept = peaks.gamma_d + contrast * full.dark.intercept;
  out.dark_rate_slope = contrast * full.dark.slope;
  return out;
}

}  // namespace snspd::readout
