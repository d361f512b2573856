#pragma once

namespace snspd::analytics {

struct HeatingPoint {
  double rate_quanta_per_s{0.0};
  double frequency_MHz{0.0};
  double distance_um{0.0};

  void validate() const;
};

/// rate (f_target / f_source)^(-alpha)
double scale_heating(const HeatingPoint& p, double target_frequency_MHz, double alpha);

/// b's rate over a's rate carried to b's frequency (exponent alpha) and b's
/// distance (exponent distance_exponent, d^-n scaling).
double field_noise_ratio(const HeatingPoint& a, const HeatingPoint& b, double alpha,
                         double distance_exponent = 4.0);

double kick_heating_rate(double quanta_per_count, double count_rate_per_s);

}  // namespace snspd::analytics
