#pragma once

// Scalar Debye model of focusing from immersion oil into diamond: the
// depth-dependent spherical-aberration pupil phase, its correction, on-axis
// intensity, Strehl ratio and focal FWHM.

#include <functional>
#include <iosfwd>
#include <utility>
#include <vector>

#include "json.hpp"

namespace nvarray {

struct FocusConfig {
  double wavelength_nm = 790.0;
  double numerical_aperture = 1.4;
  double n_immersion = 1.518;
  double n_diamond = 2.417;
  double depth_um = 0.0;  // nominal focus depth below the surface

  void validate() const;
  double k0_per_um() const;  // vacuum wavenumber
};

/// Pupil phase as a function of normalised radius rho in [0, 1].
struct PupilPhase {
  std::function<double(double)> phase;
  bool piston_defocus_removed = false;

  double operator()(double rho) const { return phase(rho); }
  /// n evenly spaced (rho, phase) samples covering [0, 1].
  std::vector<std::pair<double, double>> samples(int n = 101) const;
};

/// phi(rho) = k0 d (sqrt(n2^2 - NA^2 rho^2) - sqrt(n1^2 - NA^2 rho^2)).
double aberration_phase(const FocusConfig& cfg, double rho);

/// Coefficients (c0, c2) of the least-squares fit c0 + c2 rho^2 to phi with
/// weight rho d(rho).
std::pair<double, double> piston_defocus(const FocusConfig& cfg);

PupilPhase zero_phase();
PupilPhase aberration_pupil(const FocusConfig& cfg, bool remove_piston_defocus = false);
/// -phi; adding it to the aberration cancels it exactly.
PupilPhase correction_pupil(const FocusConfig& cfg);
/// Linear interpolation of samples; rho strictly increasing from 0 to 1.
PupilPhase tabulated_pupil(std::vector<double> rho, std::vector<double> phase);

/// Peak-to-valley of the piston/defocus-removed aberration phase.
double peak_to_valley(const FocusConfig& cfg, int samples = 2001);

/// On-axis intensity at defocus z (um) with the aberration of cfg plus the
/// applied phase, normalised to the aberration-free peak. `panels` of G7K15
/// are used; 0 picks a count from the phase variation.
double axial_intensity_at(const FocusConfig& cfg, const PupilPhase& applied, double z_um,
                          int panels = 0);

struct AxialProfile {
  std::vector<double> z_um;
  std::vector<double> intensity;
};

AxialProfile axial_intensity(const FocusConfig& cfg, const PupilPhase& applied, double z_min_um,
                             double z_max_um, int points);

struct FocusPeak {
  double strehl = 0.0;
  double z_um = 0.0;  // peak position relative to the nominal focus
};

/// Global maximum of the on-axis intensity over a scan wide enough to hold
/// the index-mismatch focal shift, refined by golden-section search.
FocusPeak focus_peak(const FocusConfig& cfg, const PupilPhase& applied);
double strehl(const FocusConfig& cfg, bool corrected);

struct FocalFwhm {
  double radial_nm = 0.0;
  double axial_nm = 0.0;
};

/// Normalised focal-plane intensity |2 int_0^1 J0(k0 NA r rho) rho d(rho)|^2.
double radial_intensity(const FocusConfig& cfg, double r_nm);
FocalFwhm focal_fwhm(const FocusConfig& cfg);

/// Columns: rho, phase_rad.
void write_pupil_csv(std::ostream& os, const PupilPhase& pupil, int samples = 101);
/// Columns: z_um, intensity.
void write_profile_csv(std::ostream& os, const AxialProfile& profile);

void to_json(nlohmann::json& j, const FocusConfig& cfg);
void from_json(const nlohmann::json& j, FocusConfig& cfg);

}  // namespace nvarray
