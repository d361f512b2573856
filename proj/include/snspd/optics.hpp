#pragma once

#include <optional>
#include <string>
#include <vector>

#include "snspd/rfcircuit.hpp"

namespace snspd::optics {

/// Frame: z = 0 is the electrode top plane, the detector lies in z = -recess
/// centred on the origin, x runs along the trap axis (and the nanowires).
/// The ion sits at (lateral, 0, height).
struct DetectorScene {
  double detector_w_um{22.0};  // along x
  double detector_h_um{20.0};  // along y
  double recess_um{6.0};
  double ion_height_um{29.0};  // above the electrode plane
  double lateral_um{0.0};
  /// In-plane angles from the trap axis.
  double quant_axis_deg{45.0};
  double nanowire_axis_deg{0.0};
  double grid_pitch_um{1.0};
  /// The electrode opening above the detector extends this far beyond the
  /// detector edges, along and across the trap axis; sight lines crossing
  /// z = 0 outside it are blocked.
  double opening_margin_x_um{40.0};
  double opening_margin_y_um{10.0};

  void validate() const;
};

enum class Polarization { TE, TM };

/// Absorption probability vs incidence polar angle theta and azimuth phi
/// (from the nanowire axis), per polarization. Bilinear in (theta, phi),
/// periodic in phi.
class APSurface {
 public:
  static APSurface constant(double ap);
  /// Smooth stand-in, 0.72 at normal incidence for both polarizations and
  /// falling off with theta; TM falls off more slowly than TE.
  static APSurface synthetic();
  /// theta_deg and phi_deg ascending; tables indexed [theta][phi].
  static APSurface tabulated(std::vector<double> theta_deg, std::vector<double> phi_deg,
                             std::vector<std::vector<double>> te,
                             std::vector<std::vector<double>> tm);

  struct Row {
    Polarization pol;
    double theta_deg;
    double phi_deg;
    double ap;
  };
  /// Rows must fill the full (polarization, theta, phi) product grid.
  static APSurface from_rows(const std::vector<Row>& rows);
  std::vector<Row> rows() const;

  double at(Polarization pol, double theta_deg, double phi_deg) const;
  bool is_constant() const { return constant_.has_value(); }

 private:
  std::optional<double> constant_;
  std::vector<double> theta_;
  std::vector<double> phi_;
  std::vector<std::vector<double>> te_;
  std::vector<std::vector<double>> tm_;
};

struct CalibrationInputs {
  double gamma_per_s{1.0 / 8.850e-9};
  double ide{1.0};
  double measured_saturated_rate_per_s{0.0};

  void validate() const;
  double half_gamma() const { return 0.5 * gamma_per_s; }
};

/// (3 / 16 pi)(1 + cos^2 theta_q), in 1/sr.
double dipole_intensity(double theta_q_rad);

/// Integral of dipole_intensity over the sphere in lab coordinates, with the
/// quantization axis in the xy plane: Gauss-Legendre in cos(theta), uniform
/// in phi.
double dipole_sphere_integral(double quant_axis_deg = 45.0);

/// Solid angle of the rectangle [x1, x2] x [y1, y2] in a plane at distance d,
/// coordinates measured from the foot of the perpendicular.
double rectangle_solid_angle(double x1, double x2, double y1, double y2, double d);

/// Per-cell intensity weights of the sigma- far field for direction n
/// (unit, pointing from ion to detector). te + tm = 1.
struct PolarizationWeights {
  double te{0.5};
  double tm{0.5};
};
PolarizationWeights polarization_weights(const double n[3], const double q[3]);

double collection_fraction(const DetectorScene& scene);
std::size_t obscured_cells(const DetectorScene& scene);

/// Count rate at saturation: (Gamma/2) sum dOmega I(theta_q) IDE AP.
double expected_rate(const DetectorScene& scene, const APSurface& ap,
                     const CalibrationInputs& cal);

struct PositionCurve {
  std::vector<double> lateral_um;
  std::vector<double> rate_per_s;
  std::vector<double> normalized;           // rate / rate at the first offset
  std::vector<double> normalized_constant;  // same with a constant AP
};

PositionCurve rate_vs_position(const DetectorScene& scene, const APSurface& ap,
                               const CalibrationInputs& cal, const std::vector<double>& lateral_um);

struct SaturationPoint {
  double s{0.0};
  double rate{0.0};
};

struct SaturationFit {
  double rate_inf{0.0};
  double rate_inf_err{0.0};
  /// Saturation scale: rate = rate_inf s / (s + s_scale). 1 unless fitted.
  double s_scale{1.0};
  double residual_norm{0.0};
};

/// Least squares of rate = R_inf s / (1 + s). With fit_scale, the scale s0 in
/// s / (s + s0) is fitted too (needs three points).
SaturationFit saturation_extrapolate(const std::vector<SaturationPoint>& points,
                                     bool fit_scale = false);

/// SDE = rate / ((Gamma/2) collection_fraction).
double sde_calibrate(double saturated_rate_per_s, double collection_fraction, double gamma_per_s);
double sde_calibrate(double saturated_rate_per_s, const DetectorScene& scene,
                     const CalibrationInputs& cal);

/// sde_on * rf_off(highest bias) / rf_on(Im - margin), capped when asked.
double extrapolate_sde_no_rf(double sde_on, const rf::BiasCountCurve& curve_off,
                             const rf::BiasCountCurve& curve_on, double Im_uA, double margin_uA,
                             std::optional<double> cap = std::nullopt);

const char* to_string(Polarization p);
Polarization polarization_from_string(const std::string& s);

}  // namespace snspd::optics
