#include <cmath>
#include <numbers>

#include "doctest.h"
#include "snspd/errors.hpp"
#include "snspd/rfcircuit.hpp"

using namespace snspd;
using namespace snspd::rf;

namespace {

BiasCountCurve sigmoid_curve(double mid_uA, double width_uA, double top_uA, double scale) {
  std::vector<double> b, c;
  for (int i = 0; i * 0.05 <= top_uA + 1e-12; ++i) {
    const double x = 0.05 * i;
    b.push_back(x);
    c.push_back(scale / (1.0 + std::exp(-(x - mid_uA) / width_uA)));
  }
  return {b, c};
}

}  // namespace

TEST_CASE("zero drive gives zero current") {
  NanowireNetwork n;
  n.V_rf = 0.0;
  const auto s = solve_network(n);
  for (auto i : s.current_A) CHECK(std::abs(i) == 0.0);
}

TEST_CASE("currents scale linearly with the drive") {
  NanowireNetwork n;
  const auto a = solve_network(n);
  n.V_rf *= 3.7;
  const auto b = solve_network(n);
  for (std::size_t k = 0; k < a.current_A.size(); ++k) {
    CHECK(std::abs(b.current_A[k] - 3.7 * a.current_A[k]) <= 1e-12 * std::abs(b.current_A[k]));
  }
}

TEST_CASE("symmetric terminations give antisymmetric currents") {
  NanowireNetwork n;
  n.Z_right_ohm = n.Z_left_ohm;
  const auto s = solve_network(n);
  const auto d = decompose(s);
  CHECK(d.antisymmetry_residual < 1e-6);
  CHECK(std::abs(s.current_A[static_cast<std::size_t>(n.K / 2)]) <
        1e-9 * std::abs(s.current_A.front()));
}

TEST_CASE("without coupling along the wire the current is uniform and in phase") {
  NanowireNetwork n;
  n.C_RN_F = 0.0;
  const auto s = solve_network(n);
  const auto d = decompose(s);
  double worst = 0.0;
  for (auto i : s.current_A) worst = std::max(worst, std::abs(i - d.uniform_A) / std::abs(d.uniform_A));
  CHECK(worst < 0.1);
  CHECK(std::abs(d.uniform_phase_deg) < 5.0);
}

TEST_CASE("paper regime splits into uniform and linear quadrature parts") {
  const NanowireNetwork n;
  const auto s = solve_network(n);
  CHECK(s.relative_residual < 1e-10);
  const auto d = decompose(s);
  CHECK(d.r_squared > 0.999);
  CHECK(std::abs(std::abs(d.slope_phase_deg) - 90.0) < 1.0);
  const auto m = to_pickup_model(d, n.K);
  CHECK(m.I0_uA == doctest::Approx(0.9).epsilon(0.15));
  CHECK(m.I1_uA == doctest::Approx(3.5).epsilon(0.05));
}

TEST_CASE("network validation and singular systems") {
  NanowireNetwork n;
  n.K = 1;
  CHECK_THROWS_AS(solve_network(n), ValidationError);
  n = {};
  n.C_NG_F = -1.0;
  CHECK_THROWS_AS(solve_network(n), ValidationError);
  n = {};
  n.omega_rad_per_s = 0.0;
  CHECK_THROWS_AS(solve_network(n), ValidationError);
  n = {};
  n.L_N_H = 0.0;
  CHECK_THROWS_AS(solve_network(n), NumericalError);
  // Everything zero: no element fixes the node voltages.
  n = {};
  n.L_N_H = n.C_NG_F = n.C_RN_F = n.C_RL_F = n.L_L_H = n.R_L_ohm = 0.0;
  n.Z_left_ohm = n.Z_right_ohm = 0.0;
  CHECK_THROWS_AS(solve_network(n), NumericalError);
}

TEST_CASE("reduced current substitutions") {
  const PickupModel m{0.9, 3.5, 40};
  for (double wt : {0.0, 0.3, 1.7, 4.0}) {
    CHECK(reduced_current(m, 20, wt) == doctest::Approx(0.9 * std::sin(wt)).epsilon(1e-15));
  }
  CHECK(reduced_current(m, 0, 0.0) == doctest::Approx(-3.5));
  CHECK_THROWS_AS(reduced_current(m, 41, 0.0), ValidationError);
  CHECK_THROWS_AS(reduced_current(m, -1, 0.0), ValidationError);
}

TEST_CASE("max_induced closed form against a fine grid") {
  constexpr int kPhases = 20000;
  for (auto m : {PickupModel{0.9, 3.5, 40}, PickupModel{0.0, 2.0, 40}, PickupModel{1.5, 0.0, 40}}) {
    double grid = 0.0;
    int best_k = 0;
    double best_wt = 0.0;
    for (int k = 0; k <= m.K; ++k) {
      for (int j = 0; j < kPhases; ++j) {
        const double wt = 2.0 * std::numbers::pi * j / kPhases;
        const double v = std::abs(reduced_current(m, k, wt));
        if (v > grid) {
          grid = v;
          best_k = k;
          best_wt = wt;
        }
      }
    }
    // Ternary-search polish of the phase around the best grid point.
    auto f = [&](double wt) { return std::abs(reduced_current(m, best_k, wt)); };
    double lo = best_wt - 1e-3, hi = best_wt + 1e-3;
    for (int it = 0; it < 200; ++it) {
      const double a = lo + (hi - lo) / 3.0;
      const double b = hi - (hi - lo) / 3.0;
      if (f(a) < f(b)) {
        lo = a;
      } else {
        hi = b;
      }
    }
    grid = std::max(grid, f(0.5 * (lo + hi)));
    CHECK(std::abs(grid - max_induced(m)) < 1e-9);
  }
  CHECK(max_induced({0.9, 3.5, 40}) == doctest::Approx(std::sqrt(0.81 + 12.25)));
  CHECK(max_induced({0.9, 3.5, 40}) == doctest::Approx(3.614).epsilon(1e-3));
}

TEST_CASE("bias curve interpolation") {
  const BiasCountCurve c({1.0, 2.0, 4.0}, {0.0, 10.0, 30.0});
  CHECK(c.at(1.5) == doctest::Approx(5.0));
  CHECK(c.at(3.0) == doctest::Approx(20.0));
  CHECK(c.at(4.0) == 30.0);
  CHECK(c.at(0.5) == 0.0);
  CHECK(c.at(4.5) == 0.0);
  CHECK_THROWS_AS(BiasCountCurve({1.0, 1.0}, {0.0, 1.0}), ValidationError);
  CHECK_THROWS_AS(BiasCountCurve({1.0, 2.0}, {0.0, -1.0}), ValidationError);
  CHECK_THROWS_AS(BiasCountCurve({}, {}), ValidationError);
}

TEST_CASE("predict_counts") {
  const auto off = sigmoid_curve(3.5, 0.5, 8.9, 100.0);
  SUBCASE("no pickup reproduces the rf-off curve") {
    for (double b : {1.0, 3.3, 6.0}) CHECK(predict_counts({0.0, 0.0, 40}, off, b) == doctest::Approx(off.at(b)));
  }
  SUBCASE("step curve and a uniform 2 uA swing") {
    const BiasCountCurve step({0.0, 4.999999, 5.0, 20.0}, {0.0, 0.0, 1.0, 1.0});
    // 6 + 2 sin(wt) >= 5 for two thirds of the cycle.
    CHECK(std::abs(predict_counts({2.0, 0.0, 40}, step, 6.0) - 2.0 / 3.0) <= 1.0 / 256.0);
  }
  SUBCASE("far below onset") {
    const BiasCountCurve high({5.0, 10.0}, {1.0, 2.0});
    CHECK(predict_counts({0.9, 3.5, 40}, high, 1.0) == 0.0);
  }
  SUBCASE("sign of either amplitude does not matter") {
    for (double b : {2.0, 4.0, 5.0}) {
      const double ref = predict_counts({0.9, 3.5, 40}, off, b);
      CHECK(predict_counts({-0.9, 3.5, 40}, off, b) == doctest::Approx(ref).epsilon(1e-12));
      CHECK(predict_counts({0.9, -3.5, 40}, off, b) == doctest::Approx(ref).epsilon(1e-12));
    }
  }
  SUBCASE("doubling the phase grid changes little") {
    for (double b : {2.0, 4.0, 5.0}) {
      const double a = predict_counts({0.9, 3.5, 40}, off, b, 256);
      const double c = predict_counts({0.9, 3.5, 40}, off, b, 512);
      CHECK(std::abs(a - c) < 1e-3 * a);
    }
  }
  CHECK_THROWS_AS(predict_counts({0.9, 3.5, 40}, BiasCountCurve{}, 1.0), ValidationError);
}

TEST_CASE("fit_pickup recovers the generating amplitudes") {
  const auto off = sigmoid_curve(3.5, 0.5, 8.9, 100.0);
  const PickupModel truth{0.9, 3.5, 40};
  std::vector<double> b, c;
  for (double x = 0.5; x <= 5.2; x += 0.25) {
    b.push_back(x);
    c.push_back(predict_counts(truth, off, x));
  }
  const BiasCountCurve on(b, c);
  const auto fit = fit_pickup(on, off, max_induced(truth));
  CHECK(fit.model.I0_uA == doctest::Approx(0.9).epsilon(0.05));
  CHECK(fit.model.I1_uA == doctest::Approx(3.5).epsilon(0.05));
  CHECK(fit.residual_norm < 1e-3);

  const auto zero = fit_pickup(on, off, 0.0);
  CHECK(zero.model.I0_uA == 0.0);
  CHECK(zero.model.I1_uA == 0.0);

  const BiasCountCurve flat({1.0, 2.0, 3.0}, {5.0, 5.0, 5.0});
  CHECK_THROWS_AS(fit_pickup(flat, off, 3.6), NumericalError);
  CHECK_THROWS_AS(fit_pickup(on, off, -1.0), ValidationError);
}

TEST_CASE("fit uncertainties are finite for noisy data") {
  const auto off = sigmoid_curve(3.5, 0.5, 8.9, 100.0);
  const PickupModel truth{1.2, 3.0, 40};
  std::vector<double> b, c;
  int i = 0;
  for (double x = 0.5; x <= 5.0; x += 0.25, ++i) {
    b.push_back(x);
    c.push_back(predict_counts(truth, off, x) + ((i % 2) ? 0.5 : -0.5));
  }
  const auto fit = fit_pickup({b, c}, off, max_induced(truth));
  CHECK(std::isfinite(fit.I0_err_uA));
  CHECK(fit.I0_err_uA > 0.0);
  CHECK(fit.I1_err_uA > 0.0);
  CHECK(fit.model.I0_uA == doctest::Approx(1.2).epsilon(0.2));
}
