#include "snspd/timing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include <boost/math/special_functions/gamma.hpp>
#include <fmt/format.h>

#include "snspd/errors.hpp"

namespace snspd::timing {

void TimeTagStream::validate() const {
  if (duration_ns <= 0) {
    throw ValidationError(fmt::format("channel '{}': observation time must be > 0", channel));
  }
  for (std::size_t i = 0; i < tags_ns.size(); ++i) {
    if (tags_ns[i] < 0 || tags_ns[i] >= duration_ns) {
      throw ValidationError(fmt::format("channel '{}': tag {} ns outside [0, {})", channel,
                                        tags_ns[i], duration_ns));
    }
    if (i > 0 && tags_ns[i] < tags_ns[i - 1]) {
      throw ValidationError(fmt::format("channel '{}': tags not sorted at index {}", channel, i));
    }
  }
}

double TimeTagStream::rate_per_ns() const {
  return duration_ns > 0 ? static_cast<double>(tags_ns.size()) / static_cast<double>(duration_ns)
                         : 0.0;
}

namespace {

// Bin j collects integer delays d with sign(d) * floor(|d| / w + 1/2) == j.
std::int64_t bin_of(std::int64_t d, std::int64_t w) {
  const std::int64_t m = (2 * std::abs(d) + w) / (2 * w);
  return d < 0 ? -m : m;
}

}  // namespace

G2Estimate g2_estimate(const TimeTagStream& a, const TimeTagStream& b, const G2Options& opts) {
  a.validate();
  b.validate();
  if (a.tags_ns.empty() || b.tags_ns.empty()) throw ValidationError("g2 needs two nonempty streams");
  if (opts.bin_width_ns < 1) throw ValidationError("bin width must be >= 1 ns");
  if (opts.max_delay_ns < 0) throw ValidationError("max delay must be >= 0");
  if (!(opts.confidence > 0.0 && opts.confidence < 1.0)) {
    throw ValidationError("confidence must lie in (0, 1)");
  }
  if (opts.exclusion && !(opts.exclusion->lo_ns <= opts.exclusion->hi_ns)) {
    throw ValidationError("exclusion interval has lo > hi");
  }

  const std::int64_t w = opts.bin_width_ns;
  const std::int64_t dmax = opts.max_delay_ns;
  const std::int64_t jmax = bin_of(dmax, w);
  const std::size_t nbins = static_cast<std::size_t>(2 * jmax + 1);

  std::vector<std::int64_t> counts(nbins, 0);
  std::vector<std::int64_t> widths(nbins, 0);
  for (std::int64_t d = -dmax; d <= dmax; ++d) ++widths[static_cast<std::size_t>(bin_of(d, w) + jmax)];

  const auto& ta = a.tags_ns;
  const auto& tb = b.tags_ns;
  std::size_t lo = 0;
  for (const std::int64_t t : ta) {
    while (lo < tb.size() && tb[lo] < t - dmax) ++lo;
    for (std::size_t k = lo; k < tb.size() && tb[k] <= t + dmax; ++k) {
      ++counts[static_cast<std::size_t>(bin_of(tb[k] - t, w) + jmax)];
    }
  }

  G2Estimate est;
  est.observation_ns = static_cast<double>(std::min(a.duration_ns, b.duration_ns));
  est.rate_a_per_ns = static_cast<double>(ta.size()) / est.observation_ns;
  est.rate_b_per_ns = static_cast<double>(tb.size()) / est.observation_ns;
  const double per_ns = static_cast<double>(ta.size()) * static_cast<double>(tb.size()) /
                        est.observation_ns;
  const double alpha = 1.0 - opts.confidence;

  est.bins.resize(nbins);
  for (std::size_t i = 0; i < nbins; ++i) {
    G2Bin& bin = est.bins[i];
    const std::int64_t j = static_cast<std::int64_t>(i) - jmax;
    bin.delay_ns = static_cast<double>(j * w);
    bin.pair_count = counts[i];
    bin.width_ns = widths[i];
    const double expected = per_ns * static_cast<double>(widths[i]);
    const double k = static_cast<double>(counts[i]);
    bin.g2 = k / expected;
    bin.ci_low = counts[i] == 0 ? 0.0 : boost::math::gamma_p_inv(k, alpha / 2.0) / expected;
    bin.ci_high = boost::math::gamma_p_inv(k + 1.0, 1.0 - alpha / 2.0) / expected;
    bin.masked = opts.exclusion && bin.delay_ns >= opts.exclusion->lo_ns &&
                 bin.delay_ns <= opts.exclusion->hi_ns;
  }
  return est;
}

Dip find_dip(const G2Estimate& est) {
  const G2Bin* best = nullptr;
  for (const auto& bin : est.bins) {
    if (bin.masked) continue;
    if (best == nullptr || bin.g2 < best->g2) {
      best = &bin;
    } else if (bin.g2 == best->g2) {
      const double ab = std::abs(bin.delay_ns);
      const double ak = std::abs(best->delay_ns);
      if (ab < ak || (ab == ak && bin.delay_ns < best->delay_ns)) best = &bin;
    }
  }
  if (best == nullptr) throw ValidationError("every g2 bin is masked");
  Dip dip{best->delay_ns, best->g2, false};
  for (const auto& bin : est.bins) {
    if (bin.masked && bin.g2 < dip.value) dip.masked_bin_lower = true;
  }
  return dip;
}

}  // namespace snspd::timing
