#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>

#include "doctest.h"
#include "snspd/errors.hpp"
#include "snspd/photon_sim.hpp"

using namespace snspd;
using namespace snspd::sim;

namespace {

ReadoutConfig no_herald(std::size_t n_bins, TransitionMode mode = TransitionMode::Exact) {
  ReadoutConfig cfg;
  cfg.n_bins = n_bins;
  cfg.herald_us = 0.0;
  cfg.mode = mode;
  return cfg;
}

double poisson(double mean, int n) { return std::exp(n * std::log(mean) - mean - std::lgamma(n + 1.0)); }

}  // namespace

TEST_CASE("dark emitter with no pumping never clicks") {
  const RateParams r{162.5, 0.0, 0.0, 0.0};
  const auto t = simulate_trial(r, no_herald(500), State::Dark, 7);
  CHECK(t.bins.size() == 500);
  CHECK(t.total_counts(0, 500) == 0);
}

TEST_CASE("identical seeds give identical trajectories across thread counts") {
  const auto cfg = no_herald(200);
  const auto a = simulate_dataset(RateParams::measured(), cfg, 50, 42, 1);
  const auto b = simulate_dataset(RateParams::measured(), cfg, 50, 42, 4);
  REQUIRE(a.size() == 100);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].bins == b[i].bins);
    CHECK(a[i].trial_id == i);
    CHECK(a[i].prepared == (i < 50 ? State::Bright : State::Dark));
  }
  const auto c = simulate_dataset(RateParams::measured(), cfg, 50, 43, 1);
  CHECK(a[0].bins != c[0].bins);
}

TEST_CASE("single trial per state yields both labels") {
  const auto d = simulate_dataset(RateParams::measured(), no_herald(10), 1, 1);
  REQUIRE(d.size() == 2);
  CHECK(d[0].prepared == State::Bright);
  CHECK(d[1].prepared == State::Dark);
}

TEST_CASE("bright mean total counts over 125 us") {
  const RateParams r{162.50, 5.095, 0.0, 0.0};
  const std::size_t n = 100000;
  const auto d = simulate_dataset(r, no_herald(125), n, 2024, 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += static_cast<double>(d[i].total_counts(0, 125));
  const double mean = sum / static_cast<double>(n);
  const double expect = 0.16250 * 125.0;
  CHECK(std::abs(mean - expect) < 3.0 * std::sqrt(expect / static_cast<double>(n)));
}

TEST_CASE("per-bin counts are Poisson by chi-square at the 1% level") {
  const RateParams r{162.50, 5.095, 0.0, 0.0};
  const std::size_t n = 100000;
  const auto d = simulate_dataset(r, no_herald(20), n, 99, 1);
  // Pool every bin of the bright trials into categories 0, 1, 2, >=3.
  std::array<double, 4> obs{};
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (auto c : d[i].bins) {
      obs[std::min<std::size_t>(c, 3)] += 1.0;
      total += 1.0;
    }
  }
  const double m = 0.1625;
  std::array<double, 4> p{poisson(m, 0), poisson(m, 1), poisson(m, 2), 0.0};
  p[3] = 1.0 - p[0] - p[1] - p[2];
  double chi2 = 0.0;
  for (int k = 0; k < 4; ++k) chi2 += std::pow(obs[k] - total * p[k], 2) / (total * p[k]);
  const boost::math::chi_squared dist(3.0);
  CHECK(boost::math::cdf(dist, chi2) < 0.99);
}

TEST_CASE("equal emission rates make the labels indistinguishable") {
  const RateParams r{50.0, 50.0, 0.0, 0.0};
  const std::size_t n = 20000;
  const auto d = simulate_dataset(r, no_herald(100), n, 5, 1);
  double sb = 0.0, sd = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sb += static_cast<double>(d[i].total_counts(0, 100));
    sd += static_cast<double>(d[n + i].total_counts(0, 100));
  }
  const double se = std::sqrt(2.0 * 5.0 / static_cast<double>(n));
  CHECK(std::abs(sb - sd) / static_cast<double>(n) < 4.0 * se);
}

TEST_CASE("depumped fraction of bright trials matches the two-state solution") {
  const auto r = RateParams::measured();
  const std::size_t n = 100000;
  const auto d = simulate_dataset(r, no_herald(500), n, 11, 0, true);
  std::size_t dark_at_end = 0;
  for (std::size_t i = 0; i < n; ++i) dark_at_end += d[i].true_states.back() == State::Dark;
  // State at the start of the last bin, i.e. after 499 us.
  const double t_ms = 0.499;
  const double g = r.gamma_dp + r.gamma_rp;
  const double p = r.gamma_dp / g * (1.0 - std::exp(-g * t_ms));
  const double f = static_cast<double>(dark_at_end) / static_cast<double>(n);
  CHECK(std::abs(f - p) < 2.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(n)));
  CHECK(p == doctest::Approx(r.gamma_dp * t_ms).epsilon(0.02));
}

TEST_CASE("exact and bin-boundary modes agree when pumping is slow") {
  const RateParams r{162.5, 5.095, 0.05, 0.05};  // t0 * gamma = 5e-5
  const std::size_t n = 20000;
  const auto ex = simulate_dataset(r, no_herald(200, TransitionMode::Exact), n, 3, 1);
  const auto bb = simulate_dataset(r, no_herald(200, TransitionMode::BinBoundary), n, 3, 1);
  for (std::size_t half : {std::size_t{0}, n}) {
    double se = 0.0, sb = 0.0, sq = 0.0;
    for (std::size_t i = half; i < half + n; ++i) {
      const double a = static_cast<double>(ex[i].total_counts(0, 200));
      se += a;
      sq += a * a;
      sb += static_cast<double>(bb[i].total_counts(0, 200));
    }
    const double dn = static_cast<double>(n);
    const double var = sq / dn - (se / dn) * (se / dn);
    CHECK(std::abs(se - sb) / dn < 3.0 * std::sqrt(2.0 * var / dn));
  }
}

TEST_CASE("herald outcomes") {
  ReadoutConfig cfg;  // 50 us herald, >= 8 counts for bright
  Trajectory t;
  t.bins.assign(500, 0);
  t.prepared = State::Dark;
  CHECK(apply_herald(t, cfg).outcome == HeraldOutcome::RetainedDark);

  t.prepared = State::Bright;
  t.bins[3] = 7;
  auto res = apply_herald(t, cfg);
  CHECK(res.outcome == HeraldOutcome::Discarded);
  t.bins[4] = 1;
  res = apply_herald(t, cfg);
  CHECK(res.outcome == HeraldOutcome::RetainedBright);
  CHECK(res.post.bins.size() == 450);

  cfg.herald_us = 0.0;
  t.prepared = State::Dark;
  res = apply_herald(t, cfg);
  CHECK(res.outcome == HeraldOutcome::RetainedDark);
  CHECK(res.post.bins.size() == 500);

  ReadoutConfig longer;
  longer.herald_us = 600.0;
  CHECK_THROWS_AS(apply_herald(t, longer), ValidationError);
}

TEST_CASE("herald discard rate matches the Poisson prediction") {
  const RateParams r{162.50, 5.095, 0.0, 0.0};
  ReadoutConfig cfg;
  cfg.n_bins = 50;
  const std::size_t n = 50000;
  const auto h = apply_herald(simulate_dataset(r, cfg, n, 17, 1), cfg);
  const double mean = 0.1625 * 50.0;
  double p = 0.0;
  for (int k = 1; k < cfg.herald_bright_min; ++k) p += poisson(mean, k);
  const double f = static_cast<double>(h.discarded_bright) / static_cast<double>(n);
  CHECK(std::abs(f - p) < 3.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(n)));
  CHECK(h.simulated_bright == n);
  CHECK(h.trials.size() + h.discarded_bright + h.discarded_dark == 2 * n);
}

TEST_CASE("invalid inputs are rejected") {
  auto cfg = no_herald(10);
  CHECK_THROWS_AS(simulate_trial({-1.0, 0.0, 0.0, 0.0}, cfg, State::Bright, 1), ValidationError);
  cfg.bin_width_us = 0.0;
  CHECK_THROWS_AS(simulate_trial(RateParams::measured(), cfg, State::Bright, 1), ValidationError);
  CHECK_THROWS_AS(simulate_dataset(RateParams::measured(), no_herald(10), 0, 1), ValidationError);
  EmitterStreamConfig ec;
  ec.route_prob_a = 0.7;
  ec.route_prob_b = 0.4;
  CHECK_THROWS_AS(simulate_timetag_streams(ec, 1), ValidationError);
}

TEST_CASE("slow-pumping warning") {
  ReadoutConfig cfg;
  cfg.bin_width_us = 1000.0;
  cfg.herald_us = 0.0;
  CHECK_FALSE(cfg.warnings({162.5, 5.0, 0.02, 0.012}).empty());
  cfg.bin_width_us = 1.0;
  CHECK(cfg.warnings(RateParams::measured()).empty());
}

TEST_CASE("time tags: dead time empties the delays around the offset") {
  EmitterStreamConfig ec;
  ec.emission_rate_per_s = 1e8;
  ec.dead_time_s = 5e-9;
  ec.route_prob_a = 0.01;
  ec.route_prob_b = 0.01;
  ec.channel_b_delay_offset_s = 28e-9;
  ec.duration_s = 0.05;
  const auto [a, b] = simulate_timetag_streams(ec, 8);
  a.validate();
  b.validate();
  REQUIRE(a.tags_ns.size() > 1000);
  REQUIRE(b.tags_ns.size() > 1000);
  // Floor-to-tick can shorten a true gap by up to 1 ns.
  std::size_t close = 0;
  std::size_t lo = 0;
  for (auto ta : a.tags_ns) {
    while (lo < b.tags_ns.size() && b.tags_ns[lo] < ta + 28 - 3) ++lo;
    for (std::size_t k = lo; k < b.tags_ns.size() && b.tags_ns[k] <= ta + 28 + 3; ++k) ++close;
  }
  CHECK(close == 0);
}

TEST_CASE("time tags: background only gives Poisson streams at the set rate") {
  EmitterStreamConfig ec;
  ec.emission_rate_per_s = 0.0;
  ec.background_rate_a_per_s = 2e5;
  ec.background_rate_b_per_s = 2e5;
  ec.duration_s = 1.0;
  const auto [a, b] = simulate_timetag_streams(ec, 4);
  const double n = 2e5;
  CHECK(std::abs(static_cast<double>(a.tags_ns.size()) - n) < 5.0 * std::sqrt(n));
  CHECK(std::abs(static_cast<double>(b.tags_ns.size()) - n) < 5.0 * std::sqrt(n));
  CHECK(std::is_sorted(a.tags_ns.begin(), a.tags_ns.end()));
  const auto again = simulate_timetag_streams(ec, 4);
  CHECK(again.first.tags_ns == a.tags_ns);
}
