#include <cmath>

#include "doctest.h"
#include "snspd/analytics.hpp"
#include "snspd/errors.hpp"

using namespace snspd;
using namespace snspd::analytics;

TEST_CASE("heating rate frequency scaling") {
  const HeatingPoint b{63.0, 2.0, 39.0};
  const double expect = 63.0 * std::exp(1.7 * std::log(2.0 / 5.3));
  CHECK(scale_heating(b, 5.3, 1.7) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(scale_heating(b, 5.3, 1.7) == doctest::Approx(12.0).epsilon(0.005));
  CHECK(scale_heating(b, 2.0, 1.7) == 63.0);
  CHECK(scale_heating(b, 7.0, 0.0) == 63.0);
  const double two_step = scale_heating({scale_heating(b, 3.0, 1.7), 3.0, 39.0}, 5.0, 1.7);
  CHECK(std::abs(two_step / scale_heating(b, 5.0, 1.7) - 1.0) < 1e-12);
  CHECK_THROWS_AS(scale_heating(b, 0.0, 1.7), ValidationError);
  CHECK_THROWS_AS(scale_heating({63.0, -2.0, 39.0}, 5.3, 1.7), ValidationError);
}

TEST_CASE("field noise ratio") {
  const HeatingPoint zb{63.0, 2.0, 39.0};
  const HeatingPoint zd{113.0, 5.3, 35.0};
  const double expect = 113.0 / (63.0 * std::pow(2.0 / 5.3, 1.7) * std::pow(39.0 / 35.0, 4.0));
  CHECK(field_noise_ratio(zb, zd, 1.7) == doctest::Approx(expect).epsilon(1e-13));
  CHECK(field_noise_ratio(zb, zd, 1.7) == doctest::Approx(6.1).epsilon(0.01));
  CHECK(field_noise_ratio(zb, zb, 1.7) == doctest::Approx(1.0).epsilon(1e-15));
  const HeatingPoint matched{63.0 * std::pow(2.0 / 5.3, 1.7) * std::pow(39.0 / 35.0, 4.0), 5.3, 35.0};
  CHECK(field_noise_ratio(zb, matched, 1.7) == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(field_noise_ratio(zd, zb, 1.7) * field_noise_ratio(zb, zd, 1.7) ==
        doctest::Approx(1.0).epsilon(1e-14));
  // Zone D is closer, so dropping the distance correction raises the ratio.
  CHECK(field_noise_ratio(zb, zd, 1.7, 0.0) > field_noise_ratio(zb, zd, 1.7));
  CHECK_THROWS_AS(field_noise_ratio(zb, {113.0, 5.3, 0.0}, 1.7), ValidationError);
}

TEST_CASE("kick heating") {
  CHECK(kick_heating_rate(0.009, 1000.0) == doctest::Approx(9.0));
  CHECK(kick_heating_rate(0.0, 1234.0) == 0.0);
  CHECK(kick_heating_rate(0.5, 0.0) == 0.0);
  CHECK_THROWS_AS(kick_heating_rate(-0.1, 1.0), ValidationError);
  CHECK_THROWS_AS(kick_heating_rate(0.1, -1.0), ValidationError);
}
