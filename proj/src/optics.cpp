#include "snspd/optics.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <set>
#include <tuple>

#include <boost/math/quadrature/gauss.hpp>
#include <fmt/format.h>

#include "snspd/errors.hpp"

namespace snspd::optics {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

using Vec = std::array<double, 3>;
using CVec = std::array<std::complex<double>, 3>;

Vec cross(const Vec& a, const Vec& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double dot(const Vec& a, const Vec& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

Vec scaled(const Vec& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }

Vec in_plane(double deg) { return {std::cos(deg * kDeg), std::sin(deg * kDeg), 0.0}; }

std::complex<double> cdot(const CVec& e, const Vec& u) {
  return e[0] * u[0] + e[1] * u[1] + e[2] * u[2];
}

struct Cell {
  double solid_angle;
  Vec n;  // unit, ion to cell centre
  bool visible;
};

/// Visits every detector cell, partial cells at the far edges included.
template <class F>
void for_each_cell(const DetectorScene& s, F&& f) {
  const double d = s.ion_height_um + s.recess_um;
  const double p = s.grid_pitch_um;
  const double hx = 0.5 * s.detector_w_um;
  const double hy = 0.5 * s.detector_h_um;
  const long nx = static_cast<long>(std::ceil(s.detector_w_um / p - 1e-9));
  const long ny = static_cast<long>(std::ceil(s.detector_h_um / p - 1e-9));
  const double ox = hx + s.opening_margin_x_um;
  const double oy = hy + s.opening_margin_y_um;
  // Fraction of the way from ion to detector plane at which a ray crosses z = 0.
  const double t = s.ion_height_um / d;
  const double X = s.lateral_um;
  for (long i = 0; i < nx; ++i) {
    const double x1 = -hx + static_cast<double>(i) * p;
    const double x2 = std::min(x1 + p, hx);
    if (x2 <= x1) continue;
    for (long j = 0; j < ny; ++j) {
      const double y1 = -hy + static_cast<double>(j) * p;
      const double y2 = std::min(y1 + p, hy);
      if (y2 <= y1) continue;
      const double xc = 0.5 * (x1 + x2);
      const double yc = 0.5 * (y1 + y2);
      Cell c;
      c.solid_angle = rectangle_solid_angle(x1 - X, x2 - X, y1, y2, d);
      const Vec v{xc - X, yc, -d};
      c.n = scaled(v, 1.0 / norm(v));
      c.visible = true;
      if (s.ion_height_um > 0.0) {
        const double cx = X + t * (xc - X);
        const double cy = t * yc;
        c.visible = std::abs(cx) <= ox && std::abs(cy) <= oy;
      }
      f(c);
    }
  }
}

/// Incidence angles of the Poynting vector n on the detector, phi measured
/// from the nanowire axis, in degrees.
std::pair<double, double> incidence_deg(const Vec& n, double wire_deg) {
  const double theta = std::acos(std::clamp(-n[2], -1.0, 1.0)) / kDeg;
  double phi = std::atan2(n[1], n[0]) / kDeg - wire_deg;
  phi = std::fmod(phi, 360.0);
  if (phi < 0.0) phi += 360.0;
  return {theta, phi};
}

double theta_q(const Vec& n, const Vec& q) { return std::acos(std::clamp(dot(n, q), -1.0, 1.0)); }

std::size_t locate(const std::vector<double>& g, double x) {
  // Index i with g[i] <= x <= g[i+1], clamped to the last interval.
  auto it = std::upper_bound(g.begin(), g.end(), x);
  std::size_t i = it == g.begin() ? 0 : static_cast<std::size_t>(it - g.begin()) - 1;
  return std::min(i, g.size() - 2);
}

void check_table(const std::vector<double>& theta, const std::vector<double>& phi,
                 const std::vector<std::vector<double>>& t, const char* name) {
  if (t.size() != theta.size()) throw ValidationError(fmt::format("{} table: wrong theta size", name));
  for (const auto& row : t) {
    if (row.size() != phi.size()) throw ValidationError(fmt::format("{} table: wrong phi size", name));
    for (double v : row) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ValidationError(fmt::format("{} table: AP {} outside [0, 1]", name, v));
      }
    }
  }
}

}  // namespace

void DetectorScene::validate() const {
  for (double v : {detector_w_um, detector_h_um, recess_um, ion_height_um, lateral_um,
                   quant_axis_deg, nanowire_axis_deg, grid_pitch_um, opening_margin_x_um, opening_margin_y_um}) {
    if (!std::isfinite(v)) throw ValidationError("scene values must be finite");
  }
  if (detector_w_um < 0.0 || detector_h_um < 0.0) throw ValidationError("detector size must be >= 0");
  if (recess_um < 0.0) throw ValidationError("recess must be >= 0");
  if (opening_margin_x_um < 0.0 || opening_margin_y_um < 0.0) throw ValidationError("recess opening margin must be >= 0");
  if (!(grid_pitch_um > 0.0)) throw ValidationError("grid pitch must be > 0");
  if (!(ion_height_um + recess_um > 0.0)) {
    throw ValidationError("ion must be strictly above the detector plane");
  }
}

void CalibrationInputs::validate() const {
  if (!(std::isfinite(gamma_per_s) && gamma_per_s > 0.0)) throw ValidationError("Gamma must be > 0");
  if (!(ide >= 0.0 && ide <= 1.0)) throw ValidationError("IDE must lie in [0, 1]");
  if (!(std::isfinite(measured_saturated_rate_per_s) && measured_saturated_rate_per_s >= 0.0)) {
    throw ValidationError("measured saturated rate must be >= 0");
  }
}

APSurface APSurface::constant(double ap) {
  if (!(ap >= 0.0 && ap <= 1.0)) throw ValidationError(fmt::format("AP {} outside [0, 1]", ap));
  APSurface s;
  s.constant_ = ap;
  return s;
}

APSurface APSurface::synthetic() {
  std::vector<double> theta, phi;
  for (int i = 0; i <= 45; ++i) theta.push_back(2.0 * i);
  for (int j = 0; j < 36; ++j) phi.push_back(10.0 * j);
  std::vector<std::vector<double>> te(theta.size(), std::vector<double>(phi.size()));
  auto tm = te;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double c = std::cos(theta[i] * kDeg);
    for (std::size_t j = 0; j < phi.size(); ++j) {
      const double cp = std::cos(phi[j] * kDeg);
      te[i][j] = 0.72 * std::pow(std::max(c, 0.0), 1.0 + 0.5 * cp * cp);
      tm[i][j] = 0.72 * std::pow(std::max(c, 0.0), 0.6);
    }
  }
  return tabulated(theta, phi, te, tm);
}

APSurface APSurface::tabulated(std::vector<double> theta_deg, std::vector<double> phi_deg,
                               std::vector<std::vector<double>> te,
                               std::vector<std::vector<double>> tm) {
  if (theta_deg.size() < 2) throw ValidationError("AP surface needs at least two theta values");
  if (phi_deg.empty()) throw ValidationError("AP surface needs at least one phi value");
  if (!std::is_sorted(theta_deg.begin(), theta_deg.end()) ||
      std::adjacent_find(theta_deg.begin(), theta_deg.end()) != theta_deg.end() ||
      !std::is_sorted(phi_deg.begin(), phi_deg.end()) ||
      std::adjacent_find(phi_deg.begin(), phi_deg.end()) != phi_deg.end()) {
    throw ValidationError("AP grids must be strictly ascending");
  }
  if (theta_deg.front() < 0.0 || theta_deg.back() > 90.0) {
    throw ValidationError("AP theta grid must lie in [0, 90] deg");
  }
  if (phi_deg.back() - phi_deg.front() >= 360.0) {
    throw ValidationError("AP phi grid must span less than 360 deg");
  }
  check_table(theta_deg, phi_deg, te, "TE");
  check_table(theta_deg, phi_deg, tm, "TM");
  APSurface s;
  s.theta_ = std::move(theta_deg);
  s.phi_ = std::move(phi_deg);
  s.te_ = std::move(te);
  s.tm_ = std::move(tm);
  return s;
}

APSurface APSurface::from_rows(const std::vector<Row>& rows) {
  std::set<double> ts, ps;
  std::map<std::tuple<int, double, double>, double> m;
  for (const auto& r : rows) {
    ts.insert(r.theta_deg);
    ps.insert(r.phi_deg);
    if (!m.emplace(std::tuple{static_cast<int>(r.pol), r.theta_deg, r.phi_deg}, r.ap).second) {
      throw ValidationError(fmt::format("duplicate AP row ({}, {}, {})", to_string(r.pol),
                                        r.theta_deg, r.phi_deg));
    }
  }
  std::vector<double> theta(ts.begin(), ts.end()), phi(ps.begin(), ps.end());
  std::vector<std::vector<double>> te(theta.size(), std::vector<double>(phi.size()));
  auto tm = te;
  for (int pol = 0; pol < 2; ++pol) {
    auto& t = pol == 0 ? te : tm;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      for (std::size_t j = 0; j < phi.size(); ++j) {
        auto it = m.find({pol, theta[i], phi[j]});
        if (it == m.end()) {
          throw ValidationError(fmt::format("AP surface missing ({}, {}, {})",
                                            to_string(static_cast<Polarization>(pol)), theta[i], phi[j]));
        }
        t[i][j] = it->second;
      }
    }
  }
  return tabulated(theta, phi, te, tm);
}

std::vector<APSurface::Row> APSurface::rows() const {
  std::vector<Row> out;
  if (constant_) {
    for (auto pol : {Polarization::TE, Polarization::TM}) {
      for (double t : {0.0, 90.0}) out.push_back({pol, t, 0.0, *constant_});
    }
    return out;
  }
  for (auto pol : {Polarization::TE, Polarization::TM}) {
    const auto& t = pol == Polarization::TE ? te_ : tm_;
    for (std::size_t i = 0; i < theta_.size(); ++i) {
      for (std::size_t j = 0; j < phi_.size(); ++j) out.push_back({pol, theta_[i], phi_[j], t[i][j]});
    }
  }
  return out;
}

double APSurface::at(Polarization pol, double theta_deg, double phi_deg) const {
  if (constant_) return *constant_;
  constexpr double tol = 1e-9;
  if (!(theta_deg >= theta_.front() - tol && theta_deg <= theta_.back() + tol)) {
    throw ValidationError(fmt::format("AP surface does not cover theta = {} deg", theta_deg));
  }
  const auto& t = pol == Polarization::TE ? te_ : tm_;
  const double th = std::clamp(theta_deg, theta_.front(), theta_.back());
  const std::size_t i = locate(theta_, th);
  const double u = (th - theta_[i]) / (theta_[i + 1] - theta_[i]);

  auto along_phi = [&](std::size_t row) {
    const auto& r = t[row];
    if (phi_.size() == 1) return r[0];
    double ph = std::fmod(phi_deg - phi_.front(), 360.0);
    if (ph < 0.0) ph += 360.0;
    ph += phi_.front();
    std::size_t j = phi_.size() - 1;
    double lo = phi_.back(), hi = phi_.front() + 360.0;
    std::size_t jn = 0;
    if (ph < phi_.back()) {
      j = locate(phi_, ph);
      jn = j + 1;
      lo = phi_[j];
      hi = phi_[jn];
    }
    const double v = (ph - lo) / (hi - lo);
    return (1.0 - v) * r[j] + v * r[jn];
  };
  return (1.0 - u) * along_phi(i) + u * along_phi(i + 1);
}

double dipole_intensity(double theta_q_rad) {
  const double c = std::cos(theta_q_rad);
  return 3.0 / (16.0 * std::numbers::pi) * (1.0 + c * c);
}

double dipole_sphere_integral(double quant_axis_deg) {
  // Lab-frame polar grid about z; the quantization axis lies in the xy plane,
  // so the integrand is a trigonometric polynomial of low degree in phi.
  constexpr int n_phi = 64;
  const Vec q = in_plane(quant_axis_deg);
  auto ring = [&](double u) {
    const double st = std::sqrt(std::max(0.0, 1.0 - u * u));
    double acc = 0.0;
    for (int k = 0; k < n_phi; ++k) {
      const double ph = 2.0 * std::numbers::pi * (k + 0.5) / n_phi;
      const Vec n{st * std::cos(ph), st * std::sin(ph), u};
      acc += dipole_intensity(theta_q(n, q));
    }
    return acc * 2.0 * std::numbers::pi / n_phi;
  };
  return boost::math::quadrature::gauss<double, 20>::integrate(ring, -1.0, 1.0);
}

double rectangle_solid_angle(double x1, double x2, double y1, double y2, double d) {
  auto F = [d](double x, double y) {
    return std::atan(x * y / (d * std::sqrt(x * x + y * y + d * d)));
  };
  return F(x2, y2) - F(x1, y2) - F(x2, y1) + F(x1, y1);
}

PolarizationWeights polarization_weights(const double n_in[3], const double q_in[3]) {
  const Vec n{n_in[0], n_in[1], n_in[2]};
  const Vec q{q_in[0], q_in[1], q_in[2]};
  // Orthonormal pair spanning the plane of the rotating dipole.
  const Vec helper = std::abs(q[2]) < 0.9 ? Vec{0.0, 0.0, 1.0} : Vec{1.0, 0.0, 0.0};
  Vec e1 = cross(helper, q);
  e1 = scaled(e1, 1.0 / norm(e1));
  const Vec e2 = cross(q, e1);
  const double r = 1.0 / std::sqrt(2.0);
  CVec d{};
  for (int a = 0; a < 3; ++a) d[a] = r * std::complex<double>(e1[a], -e2[a]);
  const auto dn = cdot(d, n);
  CVec E{};
  for (int a = 0; a < 3; ++a) E[a] = d[a] - dn * n[a];

  Vec s = cross(n, Vec{0.0, 0.0, 1.0});
  if (norm(s) < 1e-12) s = cross(n, Vec{1.0, 0.0, 0.0});
  s = scaled(s, 1.0 / norm(s));
  const Vec p = cross(n, s);
  const double te = std::norm(cdot(E, s));
  const double tm = std::norm(cdot(E, p));
  return {te / (te + tm), tm / (te + tm)};
}

double collection_fraction(const DetectorScene& scene) {
  scene.validate();
  const Vec q = in_plane(scene.quant_axis_deg);
  double acc = 0.0;
  for_each_cell(scene, [&](const Cell& c) {
    if (c.visible) acc += c.solid_angle * dipole_intensity(theta_q(c.n, q));
  });
  return acc;
}

std::size_t obscured_cells(const DetectorScene& scene) {
  scene.validate();
  std::size_t n = 0;
  for_each_cell(scene, [&](const Cell& c) { n += c.visible ? 0 : 1; });
  return n;
}

double expected_rate(const DetectorScene& scene, const APSurface& ap, const CalibrationInputs& cal) {
  scene.validate();
  cal.validate();
  const Vec q = in_plane(scene.quant_axis_deg);
  // Weights are taken in the nanowire frame: rotate n so the wires lie on x.
  const double wire = scene.nanowire_axis_deg * kDeg;
  double acc = 0.0;
  for_each_cell(scene, [&](const Cell& c) {
    if (!c.visible) return;
    const auto [theta, phi] = incidence_deg(c.n, scene.nanowire_axis_deg);
    double eff;
    if (ap.is_constant()) {
      eff = ap.at(Polarization::TE, theta, phi);
    } else {
      const double cw = std::cos(wire), sw = std::sin(wire);
      const double n[3] = {cw * c.n[0] + sw * c.n[1], -sw * c.n[0] + cw * c.n[1], c.n[2]};
      const double qr[3] = {cw * q[0] + sw * q[1], -sw * q[0] + cw * q[1], q[2]};
      const auto w = polarization_weights(n, qr);
      eff = w.te * ap.at(Polarization::TE, theta, phi) + w.tm * ap.at(Polarization::TM, theta, phi);
    }
    acc += c.solid_angle * dipole_intensity(theta_q(c.n, q)) * cal.ide * eff;
  });
  return cal.half_gamma() * acc;
}

PositionCurve rate_vs_position(const DetectorScene& scene, const APSurface& ap,
                               const CalibrationInputs& cal, const std::vector<double>& lateral_um) {
  if (lateral_um.empty()) throw ValidationError("need at least one lateral offset");
  PositionCurve out;
  std::vector<double> flat;
  const auto unit = APSurface::constant(1.0);
  for (double x : lateral_um) {
    DetectorScene s = scene;
    s.lateral_um = x;
    out.lateral_um.push_back(x);
    out.rate_per_s.push_back(expected_rate(s, ap, cal));
    flat.push_back(expected_rate(s, unit, cal));
  }
  if (!(out.rate_per_s.front() > 0.0) || !(flat.front() > 0.0)) {
    throw NumericalError("zero rate at the reference offset");
  }
  for (std::size_t i = 0; i < flat.size(); ++i) {
    out.normalized.push_back(i == 0 ? 1.0 : out.rate_per_s[i] / out.rate_per_s.front());
    out.normalized_constant.push_back(i == 0 ? 1.0 : flat[i] / flat.front());
  }
  return out;
}

namespace {

struct FixedScaleFit {
  double rate_inf;
  double ssr;
  double sum_g2;
};

FixedScaleFit fit_fixed(const std::vector<SaturationPoint>& pts, double s0) {
  double gr = 0.0, gg = 0.0;
  for (const auto& p : pts) {
    const double g = p.s / (p.s + s0);
    gr += g * p.rate;
    gg += g * g;
  }
  const double R = gr / gg;
  double ssr = 0.0;
  for (const auto& p : pts) {
    const double e = p.rate - R * p.s / (p.s + s0);
    ssr += e * e;
  }
  return {R, ssr, gg};
}

}  // namespace

SaturationFit saturation_extrapolate(const std::vector<SaturationPoint>& points, bool fit_scale) {
  std::set<double> distinct;
  for (const auto& p : points) {
    if (!(std::isfinite(p.s) && p.s > 0.0) || !std::isfinite(p.rate)) {
      throw ValidationError("saturation points need finite s > 0 and finite rates");
    }
    distinct.insert(p.s);
  }
  const std::size_t need = fit_scale ? 3 : 2;
  if (distinct.size() < need) {
    throw NumericalError(fmt::format("saturation fit underdetermined: {} distinct s, need {}",
                                     distinct.size(), need));
  }
  const double n = static_cast<double>(points.size());
  SaturationFit out;
  if (!fit_scale) {
    const auto f = fit_fixed(points, 1.0);
    out.rate_inf = f.rate_inf;
    out.residual_norm = std::sqrt(f.ssr);
    out.rate_inf_err = std::sqrt(f.ssr / (n - 1.0) / f.sum_g2);
    return out;
  }

  // Variable projection: R_inf is linear given s0, so search log s0 alone.
  const double lo0 = std::log(*distinct.begin()) - 5.0 * std::numbers::ln10;
  const double hi0 = std::log(*distinct.rbegin()) + 5.0 * std::numbers::ln10;
  auto ssr = [&](double ls) { return fit_fixed(points, std::exp(ls)).ssr; };
  constexpr int kScan = 400;
  int best = 0;
  double best_v = ssr(lo0);
  for (int i = 1; i <= kScan; ++i) {
    const double v = ssr(lo0 + (hi0 - lo0) * i / kScan);
    if (v < best_v) {
      best_v = v;
      best = i;
    }
  }
  const double step = (hi0 - lo0) / kScan;
  double a = lo0 + step * std::max(best - 1, 0), b = lo0 + step * std::min(best + 1, kScan);
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  while (b - a > 1e-12) {
    if (ssr(c) < ssr(d)) {
      b = d;
    } else {
      a = c;
    }
    c = b - gr * (b - a);
    d = a + gr * (b - a);
  }
  const double s0 = std::exp(0.5 * (a + b));
  const auto f = fit_fixed(points, s0);
  out.rate_inf = f.rate_inf;
  out.s_scale = s0;
  out.residual_norm = std::sqrt(f.ssr);
  // Gauss-Newton covariance of (R_inf, s0).
  double jrr = 0.0, jrs = 0.0, jss = 0.0;
  for (const auto& p : points) {
    const double dr = p.s / (p.s + s0);
    const double ds = -f.rate_inf * p.s / ((p.s + s0) * (p.s + s0));
    jrr += dr * dr;
    jrs += dr * ds;
    jss += ds * ds;
  }
  const double det = jrr * jss - jrs * jrs;
  const double sigma2 = points.size() > 2 ? f.ssr / (n - 2.0) : 0.0;
  out.rate_inf_err = det > 0.0 ? std::sqrt(sigma2 * jss / det) : 0.0;
  return out;
}

double sde_calibrate(double rate, double fraction, double gamma_per_s) {
  if (!(std::isfinite(rate) && rate >= 0.0)) throw ValidationError("rate must be >= 0");
  if (!(std::isfinite(gamma_per_s) && gamma_per_s > 0.0)) throw ValidationError("Gamma must be > 0");
  if (!(fraction > 0.0)) throw NumericalError("zero collection fraction");
  return rate / (0.5 * gamma_per_s * fraction);
}

double sde_calibrate(double rate, const DetectorScene& scene, const CalibrationInputs& cal) {
  cal.validate();
  return sde_calibrate(rate, collection_fraction(scene), cal.gamma_per_s);
}

double extrapolate_sde_no_rf(double sde_on, const rf::BiasCountCurve& curve_off,
                             const rf::BiasCountCurve& curve_on, double Im_uA, double margin_uA,
                             std::optional<double> cap) {
  if (curve_off.empty() || curve_on.empty()) throw ValidationError("bias curves must not be empty");
  if (!(std::isfinite(sde_on) && sde_on >= 0.0)) throw ValidationError("SDE must be >= 0");
  if (!std::isfinite(Im_uA) || !std::isfinite(margin_uA)) throw ValidationError("bias must be finite");
  const double num = curve_off.at(curve_off.max_bias());
  const double den = curve_on.at(Im_uA - margin_uA);
  if (!(den > 0.0)) {
    throw NumericalError(fmt::format("rf-on counts vanish at {} uA", Im_uA - margin_uA));
  }
  const double r = sde_on * num / den;
  return cap ? std::min(r, *cap) : r;
}

const char* to_string(Polarization p) { return p == Polarization::TE ? "TE" : "TM"; }

Polarization polarization_from_string(const std::string& s) {
  std::string u;
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) u += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  if (u == "TE") return Polarization::TE;
  if (u == "TM") return Polarization::TM;
  throw ValidationError(fmt::format("unknown polarization '{}'", s));
}

}  // namespace snspd::optics
