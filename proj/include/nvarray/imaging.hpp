#pragma once

// Synthetic confocal scans of emitters and 3D Gaussian PSF localization.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "nvarray/fit.hpp"
#include "nvarray/geometry.hpp"
#include "nvarray/rng.hpp"

namespace nvarray {

/// Anisotropic Gaussian PSF with unit peak scaled by peak_rate_hz.
struct PsfModel {
  double sigma_xy_nm = 83.0;
  double sigma_z_nm = 448.0;
  double peak_rate_hz = 1e5;
  double background_rate_hz = 5e2;  // per voxel
  void validate() const;
  static double sigma_from_fwhm(double fwhm) { return fwhm / 2.354820045030949; }
};

/// Unit-peak Gaussian at offset d (nm).
double psf_shape(const PsfModel& psf, const Vec3& d_nm);

struct VolumeSpec {
  Vec3 origin_um = Vec3::Zero();  // centre of voxel (0, 0, 0)
  Vec3 voxel_pitch_nm{50.0, 50.0, 150.0};
  std::array<int, 3> dims{21, 21, 21};
  double dwell_s = 1e-3;
  bool poisson_noise = true;

  void validate() const;
  /// Spec of the given dims centred on `centre_um`.
  static VolumeSpec centred(const Vec3& centre_um, const Vec3& pitch_nm, std::array<int, 3> dims,
                            double dwell_s);
};

struct ConfocalVolume {
  Vec3 origin_um = Vec3::Zero();
  Vec3 voxel_pitch_nm = Vec3::Ones();
  std::array<int, 3> dims{1, 1, 1};
  double dwell_s = 0.0;
  std::vector<double> counts;  // x fastest, then y, then z
  std::size_t clipped_emitters = 0;  // emitters outside the scanned box
  std::uint64_t seed = 0;

  std::size_t size() const { return counts.size(); }
  std::size_t index(int ix, int iy, int iz) const {
    return (static_cast<std::size_t>(iz) * dims[1] + iy) * dims[0] + ix;
  }
  Vec3 voxel_centre_nm(int ix, int iy, int iz) const {
    return 1000.0 * origin_um + Vec3(ix, iy, iz).cwiseProduct(voxel_pitch_nm);
  }
  bool contains_nm(const Vec3& p_nm) const;
};

/// Expected counts per voxel, then Poisson sampled unless the spec disables
/// noise. Emitter positions are in um.
ConfocalVolume render_scan(std::span<const Vec3> emitters_um, const PsfModel& psf,
                           const VolumeSpec& spec, Rng& rng);

/// Sum of the expected counts over the volume.
double expected_total(std::span<const Vec3> emitters_um, const PsfModel& psf,
                      const VolumeSpec& spec);

struct LocalizeOptions {
  double sigma_xy_guess_nm = 83.0;
  double sigma_z_guess_nm = 448.0;
  /// Fit region half-widths in units of the sigma guesses.
  double roi_sigmas = 5.0;
  fit::Options solver;
};

struct Localization {
  Vec3 position_nm = Vec3::Zero();
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();  // nm^2
  double amplitude = 0.0;   // counts at the peak voxel
  double background = 0.0;  // counts per voxel
  double sigma_xy_nm = 0.0;
  double sigma_z_nm = 0.0;
  bool converged = false;
  int iterations = 0;
  std::string message;
};

/// The least-squares problem localize() solves over the given voxels, with
/// x = (position offset from start_nm, ln sigma_xy, ln sigma_z, ln A, ln B).
fit::Model<double> psf_fit_model(std::vector<Vec3> centres_nm, std::vector<double> counts,
                                 const Vec3& start_nm);

/// Fits B + A G(x - p) with log-parametrised sigmas, amplitude and background
/// over a box around the seed. Voxels above 10 counts use Gaussian weighting,
/// the rest Poisson deviance.
Localization localize(const ConfocalVolume& volume, const Vec3& seed_nm,
                      const LocalizeOptions& options = {});

struct AxisHistogram {
  std::vector<double> edges_nm;
  std::vector<std::int64_t> counts;
};

struct PrecisionReport {
  Eigen::MatrixX3d residuals_nm;             // fitted - target
  Eigen::MatrixX3d registered_residuals_nm;  // after the best affine map of the targets
  Vec3 mean_nm = Vec3::Zero();
  Vec3 std_nm = Vec3::Zero();
  Vec3 registered_std_nm = Vec3::Zero();
  std::array<AxisHistogram, 3> histograms;
};

PrecisionReport precision_report(std::span<const Localization> localizations,
                                 std::span<const Vec3> targets_nm, double bin_width_nm = 50.0);

/// Columns: site_id, dx_nm, dy_nm, dz_nm, dx_reg_nm, dy_reg_nm, dz_reg_nm.
void write_residuals_csv(std::ostream& os, const PrecisionReport& report,
                         std::span<const std::size_t> site_ids);
/// Columns: axis, lo_nm, hi_nm, count.
void write_histograms_csv(std::ostream& os, const PrecisionReport& report);
nlohmann::json to_json(const PrecisionReport& report);

/// Raw little-endian float64 counts at `stem`.bin with a JSON header at `stem`.json.
void write_volume(const std::filesystem::path& stem, const ConfocalVolume& volume);
ConfocalVolume read_volume(const std::filesystem::path& stem);

void to_json(nlohmann::json& j, const PsfModel& psf);
void from_json(const nlohmann::json& j, PsfModel& psf);

}  // namespace nvarray
