#pragma once

#include <complex>
#include <vector>

namespace snspd::rf {

using cplx = std::complex<double>;

/// Lumped LC ladder for a nanowire capacitively coupled to an rf electrode.
/// Inductor k (0..K) joins node k to node k+1; each segment's capacitances
/// to ground and to the rf electrode are split between its two nodes. The
/// end nodes 0 and K+1 couple to the rf electrode through C_RL and reach
/// ground through the lead (R_L + i w L_L) in series with a termination.
struct NanowireNetwork {
  int K{40};
  double L_N_H{2.2e-6 / 41.0};
  double C_NG_F{1.05e-14};
  double C_RN_F{4.6e-17};
  double C_RL_F{3.5e-15};
  double L_L_H{5e-9};
  double R_L_ohm{5.0};
  cplx Z_left_ohm{50.0, 0.0};
  cplx Z_right_ohm{0.0, 0.0};
  double omega_rad_per_s{2.0 * 3.14159265358979323846 * 67.03e6};
  double V_rf{8.8};

  void validate() const;
  int segments() const { return K + 1; }
};

struct InducedCurrentSolution {
  /// Complex amplitude through inductor k, positive from node k to k+1.
  std::vector<cplx> current_A;
  std::vector<cplx> node_voltage_V;
  double relative_residual{0.0};
  double drive_V{0.0};  // real drive amplitude, the phase reference
};

/// Harmonic steady state at omega_rf. Throws NumericalError on a singular
/// system or a residual above 1e-10.
InducedCurrentSolution solve_network(const NanowireNetwork& net);

/// Complex least-squares fit I(k) = uniform + slope * (k - K/2).
struct CurrentDecomposition {
  cplx uniform_A;
  cplx slope_A_per_segment;
  double r_squared{0.0};
  /// Phases relative to the drive, in (-180, 180].
  double uniform_phase_deg{0.0};
  double slope_phase_deg{0.0};
  /// max_k |I(k) + I(K - k)| / max_k |I(k)|
  double antisymmetry_residual{0.0};
};

CurrentDecomposition decompose(const InducedCurrentSolution& sol);

/// Amplitudes of the reduced pickup model, in microamps.
struct PickupModel {
  double I0_uA{0.0};
  double I1_uA{0.0};
  int K{40};

  void validate() const;
};

PickupModel to_pickup_model(const CurrentDecomposition& d, int K);

/// I0 sin(wt) + I1 ((k - K/2) / (K/2)) cos(wt), with omega_t = w t in radians.
double reduced_current(const PickupModel& m, int k, double omega_t);

/// Closed-form max over k and t of |reduced_current|: sqrt(I0^2 + I1^2).
double max_induced(const PickupModel& m);

/// Mean counts per detection window vs dc bias without rf.
class BiasCountCurve {
 public:
  BiasCountCurve() = default;
  BiasCountCurve(std::vector<double> bias_uA, std::vector<double> counts);

  /// Piecewise linear inside the table. Outside it the detector is either
  /// not biased enough or latched normal, and counts nothing.
  double at(double bias_uA) const;

  const std::vector<double>& bias_uA() const { return bias_; }
  const std::vector<double>& counts() const { return counts_; }
  bool empty() const { return bias_.empty(); }
  double min_bias() const { return bias_.front(); }
  double max_bias() const { return bias_.back(); }
  double max_counts() const;

 private:
  std::vector<double> bias_;
  std::vector<double> counts_;
};

/// Mean of rf_off(|bias + I_rf(k, t)|) over n_phase phases and k = 0..K.
double predict_counts(const PickupModel& m, const BiasCountCurve& rf_off, double bias_uA,
                      int n_phase = 256);

struct PickupFit {
  PickupModel model;
  double theta_rad{0.0};  // I0 = delta cos(theta), I1 = delta sin(theta)
  double residual_norm{0.0};
  double I0_err_uA{0.0};
  double I1_err_uA{0.0};
};

/// Least squares on the circle sqrt(I0^2 + I1^2) = delta_Im_uA: a coarse
/// scan of theta over [0, pi/2] polished by golden-section search.
PickupFit fit_pickup(const BiasCountCurve& data_rf_on, const BiasCountCurve& rf_off,
                     double delta_Im_uA, int K = 40);

}  // namespace snspd::rf
