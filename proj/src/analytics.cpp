#include "snspd/analytics.hpp"

#include <cmath>

#include <fmt/format.h>

#include "snspd/errors.hpp"

namespace snspd::analytics {

namespace {

bool positive(double x) { return std::isfinite(x) && x > 0.0; }

}  // namespace

void HeatingPoint::validate() const {
  if (!positive(rate_quanta_per_s)) throw ValidationError("heating rate must be > 0");
  if (!positive(frequency_MHz)) throw ValidationError("frequency must be > 0");
  if (!positive(distance_um)) throw ValidationError("ion-electrode distance must be > 0");
}

double scale_heating(const HeatingPoint& p, double target_frequency_MHz, double alpha) {
  if (!positive(p.frequency_MHz) || !positive(target_frequency_MHz)) {
    throw ValidationError("frequencies must be > 0");
  }
  if (!std::isfinite(alpha) || !std::isfinite(p.rate_quanta_per_s)) {
    throw ValidationError("rate and alpha must be finite");
  }
  return p.rate_quanta_per_s * std::pow(target_frequency_MHz / p.frequency_MHz, -alpha);
}

double field_noise_ratio(const HeatingPoint& a, const HeatingPoint& b, double alpha,
                         double distance_exponent) {
  a.validate();
  b.validate();
  if (!std::isfinite(alpha) || !std::isfinite(distance_exponent)) {
    throw ValidationError("exponents must be finite");
  }
  const double a_at_b = scale_heating(a, b.frequency_MHz, alpha) *
                        std::pow(a.distance_um / b.distance_um, distance_exponent);
  return b.rate_quanta_per_s / a_at_b;
}

double kick_heating_rate(double quanta_per_count, double count_rate_per_s) {
  if (!(std::isfinite(quanta_per_count) && quanta_per_count >= 0.0) ||
      !(std::isfinite(count_rate_per_s) && count_rate_per_s >= 0.0)) {
    throw ValidationError(
        fmt::format("kick heating inputs must be >= 0 ({}, {})", quanta_per_count, count_rate_per_s));
  }
  return quanta_per_count * count_rate_per_s;
}

}  // namespace snspd::analytics
