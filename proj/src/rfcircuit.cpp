#include "snspd/rfcircuit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "snspd/errors.hpp"

namespace snspd::rf {

namespace {

bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0.0; }

bool finite(cplx z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); }

double phase_deg(cplx z, double drive) {
  if (std::abs(z) == 0.0) return 0.0;
  double p = std::arg(z) * 180.0 / std::numbers::pi;
  if (drive < 0.0) p += 180.0;
  while (p > 180.0) p -= 360.0;
  while (p <= -180.0) p += 360.0;
  return p;
}

}  // namespace

void NanowireNetwork::validate() const {
  if (K < 2) throw ValidationError(fmt::format("K must be >= 2, got {}", K));
  if (!finite_nonneg(L_N_H) || !finite_nonneg(C_NG_F) || !finite_nonneg(C_RN_F) ||
      !finite_nonneg(C_RL_F) || !finite_nonneg(L_L_H) || !finite_nonneg(R_L_ohm)) {
    throw ValidationError("circuit element values must be finite and >= 0");
  }
  if (!finite(Z_left_ohm) || !finite(Z_right_ohm) || Z_left_ohm.real() < 0.0 ||
      Z_right_ohm.real() < 0.0) {
    throw ValidationError("terminations must be finite and passive");
  }
  if (!(std::isfinite(omega_rad_per_s) && omega_rad_per_s > 0.0)) {
    throw ValidationError("omega_rf must be > 0");
  }
  if (!std::isfinite(V_rf)) throw ValidationError("V_rf must be finite");
}

InducedCurrentSolution solve_network(const NanowireNetwork& net) {
  net.validate();
  if (net.L_N_H == 0.0) throw NumericalError("singular network: zero segment inductance");

  const int n = net.K + 2;
  const double w = net.omega_rad_per_s;
  const cplx jw{0.0, w};
  const cplx y_l = 1.0 / (jw * net.L_N_H);

  Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(n, n);
  Eigen::VectorXcd J = Eigen::VectorXcd::Zero(n);
  for (int k = 0; k <= net.K; ++k) {
    Y(k, k) += y_l;
    Y(k + 1, k + 1) += y_l;
    Y(k, k + 1) -= y_l;
    Y(k + 1, k) -= y_l;
    for (int node : {k, k + 1}) {
      Y(node, node) += jw * 0.5 * (net.C_NG_F + net.C_RN_F);
      J(node) += jw * 0.5 * net.C_RN_F * net.V_rf;
    }
  }
  const int ends[2] = {0, n - 1};
  const cplx terms[2] = {net.Z_left_ohm, net.Z_right_ohm};
  for (int e = 0; e < 2; ++e) {
    const int node = ends[e];
    const cplx z = net.R_L_ohm + jw * net.L_L_H + terms[e];
    if (std::abs(z) == 0.0) {
      // Ideal short: pin the node to ground.
      Y.row(node).setZero();
      Y(node, node) = 1.0;
      J(node) = 0.0;
      continue;
    }
    Y(node, node) += jw * net.C_RL_F + 1.0 / z;
    J(node) += jw * net.C_RL_F * net.V_rf;
  }

  const Eigen::PartialPivLU<Eigen::MatrixXcd> lu(Y);
  if (!(lu.rcond() > 1e-14)) {
    throw NumericalError(fmt::format("singular network (rcond {:.3g})", lu.rcond()));
  }
  const Eigen::VectorXcd V = lu.solve(J);

  InducedCurrentSolution sol;
  sol.drive_V = net.V_rf;
  const double scale = Y.norm() * V.norm() + J.norm();
  sol.relative_residual = scale > 0.0 ? (Y * V - J).norm() / scale : 0.0;
  if (!(sol.relative_residual < 1e-10)) {
    throw NumericalError(
        fmt::format("network residual {:.3g} exceeds 1e-10", sol.relative_residual));
  }
  sol.node_voltage_V.assign(V.data(), V.data() + n);
  sol.current_A.resize(static_cast<std::size_t>(net.K + 1));
  for (int k = 0; k <= net.K; ++k) sol.current_A[static_cast<std::size_t>(k)] = (V(k) - V(k + 1)) * y_l;
  return sol;
}

CurrentDecomposition decompose(const InducedCurrentSolution& sol) {
  const auto& I = sol.current_A;
  if (I.size() < 3) throw ValidationError("need at least three segment currents");
  const double K = static_cast<double>(I.size() - 1);

  // x_k = k - K/2 is symmetric, so the two regressors are orthogonal.
  cplx mean = 0.0;
  cplx sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t k = 0; k < I.size(); ++k) {
    const double x = static_cast<double>(k) - K / 2.0;
    mean += I[k];
    sxy += x * I[k];
    sxx += x * x;
  }
  mean /= static_cast<double>(I.size());

  CurrentDecomposition d;
  d.uniform_A = mean;
  d.slope_A_per_segment = sxy / sxx;

  double ss_res = 0.0, ss_tot = 0.0, peak = 0.0, anti = 0.0;
  for (std::size_t k = 0; k < I.size(); ++k) {
    const double x = static_cast<double>(k) - K / 2.0;
    ss_res += std::norm(I[k] - d.uniform_A - d.slope_A_per_segment * x);
    ss_tot += std::norm(I[k] - mean);
    peak = std::max(peak, std::abs(I[k]));
    anti = std::max(anti, std::abs(I[k] + I[I.size() - 1 - k]));
  }
  d.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  d.antisymmetry_residual = peak > 0.0 ? anti / peak : 0.0;

  d.uniform_phase_deg = phase_deg(d.uniform_A, sol.drive_V);
  d.slope_phase_deg = phase_deg(d.slope_A_per_segment, sol.drive_V);
  return d;
}

void PickupModel::validate() const {
  if (K < 2 || K % 2 != 0) throw ValidationError(fmt::format("K must be even and >= 2, got {}", K));
  if (!finite_nonneg(I0_uA) || !finite_nonneg(I1_uA)) {
    throw ValidationError("pickup amplitudes must be finite and >= 0");
  }
}

PickupModel to_pickup_model(const CurrentDecomposition& d, int K) {
  return {std::abs(d.uniform_A) * 1e6, std::abs(d.slope_A_per_segment) * K / 2.0 * 1e6, K};
}

double reduced_current(const PickupModel& m, int k, double omega_t) {
  if (k < 0 || k > m.K) {
    throw ValidationError(fmt::format("segment index {} outside [0, {}]", k, m.K));
  }
  const double half = m.K / 2.0;
  return m.I0_uA * std::sin(omega_t) + m.I1_uA * ((k - half) / half) * std::cos(omega_t);
}

double max_induced(const PickupModel& m) { return std::hypot(m.I0_uA, m.I1_uA); }

BiasCountCurve::BiasCountCurve(std::vector<double> bias_uA, std::vector<double> counts)
    : bias_(std::move(bias_uA)), counts_(std::move(counts)) {
  if (bias_.empty()) throw ValidationError("bias-count curve is empty");
  if (bias_.size() != counts_.size()) throw ValidationError("bias and count columns differ in length");
  for (std::size_t i = 0; i < bias_.size(); ++i) {
    if (!std::isfinite(bias_[i]) || !finite_nonneg(counts_[i])) {
      throw ValidationError(fmt::format("bad curve point {} ({}, {})", i, bias_[i], counts_[i]));
    }
    if (i > 0 && !(bias_[i] > bias_[i - 1])) {
      throw ValidationError(fmt::format("bias values must increase strictly (row {})", i));
    }
  }
}

double BiasCountCurve::at(double b) const {
  if (bias_.empty()) throw ValidationError("bias-count curve is empty");
  if (b < bias_.front() || b > bias_.back()) return 0.0;
  const auto it = std::upper_bound(bias_.begin(), bias_.end(), b);
  if (it == bias_.end()) return counts_.back();
  const std::size_t i = static_cast<std::size_t>(it - bias_.begin());  // bias_[i-1] <= b < bias_[i]
  const double f = (b - bias_[i - 1]) / (bias_[i] - bias_[i - 1]);
  return counts_[i - 1] + f * (counts_[i] - counts_[i - 1]);
}

double BiasCountCurve::max_counts() const {
  if (counts_.empty()) throw ValidationError("bias-count curve is empty");
  return *std::max_element(counts_.begin(), counts_.end());
}

double predict_counts(const PickupModel& m, const BiasCountCurve& rf_off, double bias_uA,
                      int n_phase) {
  // Signed amplitudes are accepted here: a sign flip is only a phase shift.
  if (m.K < 2 || m.K % 2 != 0) throw ValidationError(fmt::format("K must be even and >= 2, got {}", m.K));
  if (!std::isfinite(m.I0_uA) || !std::isfinite(m.I1_uA)) {
    throw ValidationError("pickup amplitudes must be finite");
  }
  if (rf_off.empty()) throw ValidationError("rf-off curve is empty");
  if (n_phase < 1) throw ValidationError("need at least one phase point");
  double sum = 0.0;
  for (int j = 0; j < n_phase; ++j) {
    const double wt = 2.0 * std::numbers::pi * j / n_phase;
    for (int k = 0; k <= m.K; ++k) sum += rf_off.at(std::abs(bias_uA + reduced_current(m, k, wt)));
  }
  return sum / (static_cast<double>(n_phase) * (m.K + 1));
}

namespace {

bool flat(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

}  // namespace

PickupFit fit_pickup(const BiasCountCurve& data_rf_on, const BiasCountCurve& rf_off,
                     double delta_Im_uA, int K) {
  if (data_rf_on.empty() || rf_off.empty()) throw ValidationError("fit needs two nonempty curves");
  if (!finite_nonneg(delta_Im_uA)) throw ValidationError("delta_Im must be >= 0");
  PickupModel probe{0.0, 0.0, K};
  probe.validate();

  auto model_at = [&](double theta) {
    return PickupModel{delta_Im_uA * std::cos(theta), delta_Im_uA * std::sin(theta), K};
  };
  auto ssr = [&](double theta) {
    const PickupModel m = model_at(theta);
    double s = 0.0;
    for (std::size_t i = 0; i < data_rf_on.bias_uA().size(); ++i) {
      const double r = predict_counts(m, rf_off, data_rf_on.bias_uA()[i]) - data_rf_on.counts()[i];
      s += r * r;
    }
    return s;
  };

  PickupFit fit;
  if (delta_Im_uA == 0.0) {
    fit.model = probe;
    fit.residual_norm = std::sqrt(ssr(0.0));
    return fit;
  }
  if (flat(data_rf_on.counts()) || flat(rf_off.counts())) {
    throw NumericalError("flat count curves cannot constrain the pickup amplitudes");
  }

  constexpr int kScan = 90;
  const double top = std::numbers::pi / 2.0;
  int best = 0;
  double best_val = std::numeric_limits<double>::infinity();
  for (int j = 0; j <= kScan; ++j) {
    const double v = ssr(top * j / kScan);
    if (v < best_val) {
      best_val = v;
      best = j;
    }
  }
  double a = top * std::max(0, best - 1) / kScan;
  double b = top * std::min(kScan, best + 1) / kScan;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - g * (b - a);
  double d = a + g * (b - a);
  double fc = ssr(c), fd = ssr(d);
  while (b - a > 1e-9) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = ssr(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = ssr(d);
    }
  }
  double theta = 0.5 * (a + b);
  double f_theta = ssr(theta);
  // The scan grid point may still beat the polish at a boundary.
  if (best_val < f_theta) {
    theta = top * best / kScan;
    f_theta = best_val;
  }

  fit.theta_rad = theta;
  fit.model = model_at(theta);
  fit.residual_norm = std::sqrt(f_theta);

  // Var(theta) = 2 s^2 / SSR'' with s^2 the residual variance.
  const double h = 1e-3;
  const double t0 = std::clamp(theta, h, top - h);
  const double curv = (ssr(t0 + h) - 2.0 * ssr(t0) + ssr(t0 - h)) / (h * h);
  const std::size_t n = data_rf_on.bias_uA().size();
  const double s2 = n > 1 ? f_theta / static_cast<double>(n - 1) : 0.0;
  const double sigma_theta = curv > 0.0 ? std::sqrt(2.0 * s2 / curv)
                                        : std::numeric_limits<double>::infinity();
  fit.I0_err_uA = delta_Im_uA * std::abs(std::sin(theta)) * sigma_theta;
  fit.I1_err_uA = delta_Im_uA * std::abs(std::cos(theta)) * sigma_theta;
  return fit;
}

}  // namespace snspd::rf
