#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace snspd::timing {

/// Photon time tags from one detector channel, in integer nanosecond ticks.
struct TimeTagStream {
  std::string channel;
  std::vector<std::int64_t> tags_ns;  // non-decreasing
  std::int64_t duration_ns{0};        // observation window is [0, duration_ns)

  /// Throws ValidationError on unsorted tags or tags outside the window.
  void validate() const;
  double rate_per_ns() const;
};

/// Closed delay interval [lo_ns, hi_ns] whose bins are reported but masked.
struct DelayInterval {
  double lo_ns{0.0};
  double hi_ns{0.0};
};

struct G2Options {
  std::int64_t bin_width_ns{1};
  std::int64_t max_delay_ns{500};
  std::optional<DelayInterval> exclusion;
  /// Two-sided coverage of the per-bin Poisson interval.
  double confidence{0.6827};
};

struct G2Bin {
  double delay_ns{0.0};        // bin center
  std::int64_t pair_count{0};
  std::int64_t width_ns{0};    // number of integer delays folded into the bin
  double g2{0.0};
  double ci_low{0.0};
  double ci_high{0.0};
  bool masked{false};
};

struct G2Estimate {
  std::vector<G2Bin> bins;  // ordered by delay
  double rate_a_per_ns{0.0};
  double rate_b_per_ns{0.0};
  double observation_ns{0.0};
};

/// Cross-correlation of delays t_b - t_a, normalized so uncorrelated streams
/// give g2 = 1: counts / (rate_a * rate_b * T * width).
G2Estimate g2_estimate(const TimeTagStream& a, const TimeTagStream& b, const G2Options& opts = {});

struct Dip {
  double delay_ns{0.0};
  double value{0.0};
  /// Some masked bin lies below the reported minimum.
  bool masked_bin_lower{false};
};

/// Minimum over unmasked bins. Ties go to the smallest |delay|, then to the
/// negative side.
Dip find_dip(const G2Estimate& est);

}  // namespace snspd::timing
