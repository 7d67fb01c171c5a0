#include "nvarray/aberration.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "nvarray/io.hpp"
#include "nvarray/quadrature.hpp"

namespace nvarray {

namespace {

constexpr int kMinPanels = 64;

double axial_root(const FocusConfig& cfg, double n, double rho) {
  const double s = n * n - std::pow(cfg.numerical_aperture * rho, 2);
  return std::sqrt(s);
}

// Largest intensity on a scan grid, then golden-section refinement.
template <typename F>
std::pair<double, double> maximise(F&& f, double lo, double hi, double step) {
  const int n = std::max(2, static_cast<int>(std::ceil((hi - lo) / step)) + 1);
  const double h = (hi - lo) / (n - 1);
  int best = 0;
  double best_val = -1.0;
  for (int i = 0; i < n; ++i) {
    const double v = f(lo + i * h);
    if (v > best_val) {
      best_val = v;
      best = i;
    }
  }
  double a = lo + std::max(best - 1, 0) * h, b = lo + std::min(best + 1, n - 1) * h;
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 80 && b - a > 1e-9; ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  const double x = 0.5 * (a + b);
  const double fx = f(x);
  if (fx >= best_val) return {x, fx};
  return {lo + best * h, best_val};
}

// Smallest x in (0, hi] with f(x) <= level, f decreasing from f(0) > level.
template <typename F>
double half_point(F&& f, double level, double step, double hi) {
  double a = 0.0, b = step;
  while (f(b) > level) {
    a = b;
    b += step;
    if (b > hi) throw std::runtime_error("focal_fwhm: half maximum not found");
  }
  for (int it = 0; it < 100 && b - a > 1e-12 * b; ++it) {
    const double m = 0.5 * (a + b);
    (f(m) > level ? a : b) = m;
  }
  return 0.5 * (a + b);
}

}  // namespace

void FocusConfig::validate() const {
  if (!(wavelength_nm > 0)) throw std::invalid_argument("FocusConfig.wavelength_nm: must be > 0");
  if (!(n_immersion > 1)) throw std::invalid_argument("FocusConfig.n_immersion: must be > 1");
  if (!(n_diamond > 1)) throw std::invalid_argument("FocusConfig.n_diamond: must be > 1");
  if (!(numerical_aperture > 0 && numerical_aperture < n_immersion))
    throw std::invalid_argument("FocusConfig.numerical_aperture: must lie in (0, n_immersion)");
  if (!(depth_um >= 0)) throw std::invalid_argument("FocusConfig.depth_um: must be >= 0");
}

double FocusConfig::k0_per_um() const { return 2.0 * std::numbers::pi / (wavelength_nm * 1e-3); }

std::vector<std::pair<double, double>> PupilPhase::samples(int n) const {
  if (n < 2) throw std::invalid_argument("PupilPhase::samples: need at least 2 samples");
  std::vector<std::pair<double, double>> out;
  for (int i = 0; i < n; ++i) {
    const double rho = static_cast<double>(i) / (n - 1);
    out.emplace_back(rho, phase(rho));
  }
  return out;
}

double aberration_phase(const FocusConfig& cfg, double rho) {
  if (!(rho >= 0 && rho <= 1)) throw std::invalid_argument("aberration_phase: rho outside [0, 1]");
  if (cfg.numerical_aperture * rho >= cfg.n_immersion)
    throw std::invalid_argument("aberration_phase: NA * rho reaches the evanescent region");
  return cfg.k0_per_um() * cfg.depth_um *
         (axial_root(cfg, cfg.n_diamond, rho) - axial_root(cfg, cfg.n_immersion, rho));
}

std::pair<double, double> piston_defocus(const FocusConfig& cfg) {
  cfg.validate();
  // Normal equations for {1, rho^2} under weight rho: Gram [[1/2, 1/4], [1/4, 1/6]].
  const auto m0 = quad::composite([&](double r) { return aberration_phase(cfg, r) * r; }, 0.0, 1.0, kMinPanels);
  const auto m2 = quad::composite([&](double r) { return aberration_phase(cfg, r) * r * r * r; }, 0.0, 1.0,
                                  kMinPanels);
  const double det = 0.5 / 6.0 - 0.25 * 0.25;
  const double c0 = (m0.value / 6.0 - 0.25 * m2.value) / det;
  const double c2 = (0.5 * m2.value - 0.25 * m0.value) / det;
  return {c0, c2};
}

PupilPhase zero_phase() { return {[](double) { return 0.0; }, false}; }

PupilPhase aberration_pupil(const FocusConfig& cfg, bool remove_piston_defocus) {
  cfg.validate();
  if (!remove_piston_defocus) return {[cfg](double rho) { return aberration_phase(cfg, rho); }, false};
  const auto [c0, c2] = piston_defocus(cfg);
  return {[cfg, c0, c2](double rho) { return aberration_phase(cfg, rho) - c0 - c2 * rho * rho; }, true};
}

PupilPhase correction_pupil(const FocusConfig& cfg) {
  cfg.validate();
  return {[cfg](double rho) { return -aberration_phase(cfg, rho); }, false};
}

PupilPhase tabulated_pupil(std::vector<double> rho, std::vector<double> phase) {
  if (rho.size() != phase.size() || rho.size() < 2)
    throw std::invalid_argument("tabulated_pupil: need matching rho and phase with >= 2 samples");
  if (rho.front() != 0.0 || rho.back() != 1.0)
    throw std::invalid_argument("tabulated_pupil: samples must cover [0, 1]");
  for (std::size_t i = 1; i < rho.size(); ++i)
    if (!(rho[i] > rho[i - 1])) throw std::invalid_argument("tabulated_pupil: rho must be strictly increasing");
  return {[rho = std::move(rho), phase = std::move(phase)](double r) {
            const auto it = std::upper_bound(rho.begin(), rho.end(), r);
            if (it == rho.begin()) return phase.front();
            if (it == rho.end()) return phase.back();
            const auto i = static_cast<std::size_t>(it - rho.begin());
            const double f = (r - rho[i - 1]) / (rho[i] - rho[i - 1]);
            return phase[i - 1] + f * (phase[i] - phase[i - 1]);
          },
          false};
}

double peak_to_valley(const FocusConfig& cfg, int samples) {
  const auto pupil = aberration_pupil(cfg, true);
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& [rho, phi] : pupil.samples(samples)) {
    lo = std::min(lo, phi);
    hi = std::max(hi, phi);
  }
  return hi - lo;
}

double axial_intensity_at(const FocusConfig& cfg, const PupilPhase& applied, double z_um, int panels) {
  const double k0 = cfg.k0_per_um();
  auto total_phase = [&](double rho) {
    return aberration_phase(cfg, rho) + applied(rho) + k0 * z_um * axial_root(cfg, cfg.n_diamond, rho);
  };
  if (panels <= 0) {
    // About one radian of phase per panel keeps G7K15 at rounding level.
    double variation = 0.0, prev = total_phase(0.0);
    for (int i = 1; i <= 32; ++i) {
      const double cur = total_phase(i / 32.0);
      variation += std::abs(cur - prev);
      prev = cur;
    }
    panels = std::max(kMinPanels, static_cast<int>(std::ceil(variation)));
  }
  const auto integral = quad::composite(
      [&](double rho) { return std::polar(rho, total_phase(rho)); }, 0.0, 1.0, panels);
  // The aberration-free peak is |int_0^1 rho d(rho)|^2 = 1/4.
  return 4.0 * std::norm(integral.value);
}

AxialProfile axial_intensity(const FocusConfig& cfg, const PupilPhase& applied, double z_min,
                             double z_max, int points) {
  cfg.validate();
  if (points < 2 || !(z_max > z_min))
    throw std::invalid_argument("axial_intensity: need z_max > z_min and at least 2 points");
  AxialProfile p;
  for (int i = 0; i < points; ++i) {
    const double z = z_min + (z_max - z_min) * i / (points - 1);
    const double v = axial_intensity_at(cfg, applied, z);
    if (!std::isfinite(v)) throw std::runtime_error("axial_intensity: non-finite value at z = " + io::format_number(z));
    p.z_um.push_back(z);
    p.intensity.push_back(v);
  }
  return p;
}

FocusPeak focus_peak(const FocusConfig& cfg, const PupilPhase& applied) {
  cfg.validate();
  // The index mismatch moves the focus by less than the depth itself.
  const double reach = 2.0 * cfg.depth_um + 5.0;
  const double step = 0.1 * cfg.wavelength_nm * 1e-3;
  const auto [z, v] = maximise([&](double zz) { return axial_intensity_at(cfg, applied, zz); }, -reach, reach, step);
  return {v, z};
}

double strehl(const FocusConfig& cfg, bool corrected) {
  return focus_peak(cfg, corrected ? correction_pupil(cfg) : zero_phase()).strehl;
}

double radial_intensity(const FocusConfig& cfg, double r_nm) {
  cfg.validate();
  const double v = cfg.k0_per_um() * cfg.numerical_aperture * r_nm * 1e-3;
  const auto integral = quad::composite(
      [v](double rho) { return std::cyl_bessel_j(0.0, v * rho) * rho; }, 0.0, 1.0, kMinPanels);
  return 4.0 * integral.value * integral.value;
}

FocalFwhm focal_fwhm(const FocusConfig& cfg) {
  cfg.validate();
  const double lambda_nm = cfg.wavelength_nm;
  FocalFwhm out;
  out.radial_nm = 2.0 * half_point([&](double r) { return radial_intensity(cfg, r); }, 0.5,
                                   0.05 * lambda_nm, 10.0 * lambda_nm);
  const auto corrected = correction_pupil(cfg);
  const double z_half = half_point([&](double z) { return axial_intensity_at(cfg, corrected, z); }, 0.5,
                                   0.05 * lambda_nm * 1e-3, 20.0 * lambda_nm * 1e-3);
  out.axial_nm = 2.0 * z_half * 1e3;
  return out;
}

void write_pupil_csv(std::ostream& os, const PupilPhase& pupil, int samples) {
  io::csv_row(os, "rho", "phase_rad");
  for (const auto& [rho, phi] : pupil.samples(samples)) io::csv_row(os, rho, phi);
}

void write_profile_csv(std::ostream& os, const AxialProfile& p) {
  io::csv_row(os, "z_um", "intensity");
  for (std::size_t i = 0; i < p.z_um.size(); ++i) io::csv_row(os, p.z_um[i], p.intensity[i]);
}

void to_json(nlohmann::json& j, const FocusConfig& c) {
  j = {{"wavelength_nm", c.wavelength_nm},
       {"numerical_aperture", c.numerical_aperture},
       {"n_immersion", c.n_immersion},
       {"n_diamond", c.n_diamond},
       {"depth_um", c.depth_um}};
}

void from_json(const nlohmann::json& j, FocusConfig& c) {
  FocusConfig d;
  d.wavelength_nm = j.value("wavelength_nm", d.wavelength_nm);
  d.numerical_aperture = j.value("numerical_aperture", d.numerical_aperture);
  d.n_immersion = j.value("n_immersion", d.n_immersion);
  d.n_diamond = j.value("n_diamond", d.n_diamond);
  d.depth_um = j.value("depth_um", d.depth_um);
  c = d;
}

}  // namespace nvarray
