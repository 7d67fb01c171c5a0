#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include "json.hpp"

namespace nvarray {

using Vec3 = Eigen::Vector3d;

/// Diamond chip dimensions. Lateral and thickness extents are in mm, the
/// usable (writable) depth below the surface in um.
struct ChipSpec {
  double x_extent_mm = 4.5;
  double y_extent_mm = 4.5;
  double z_extent_mm = 0.5;
  double usable_depth_um = 50.0;

  void validate() const;
};

/// Closed pulse-energy interval (nJ) over which the write calibration holds.
struct EnergyRange {
  double min_nj = 14.0;
  double max_nj = 19.0;
  bool contains(double e) const { return e >= min_nj && e <= max_nj; }
};

/// One laser-written 3D array: an nx x ny grid with spacing pitch_xy written
/// at each depth below the surface. Positions are in um; z grows into the
/// diamond.
struct ArrayPlan {
  std::string label = "M";
  Vec3 origin_um = Vec3::Zero();
  int nx = 21;
  int ny = 20;
  double pitch_xy_um = 3.0;
  std::vector<double> depths_um = {6, 9, 12, 15, 18};
  double pulse_energy_nj = 17.5;

  std::size_t site_count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * depths_um.size();
  }
  /// Throws std::invalid_argument naming the offending field.
  void validate(const EnergyRange& calibration = {}) const;
};

struct SiteIndex {
  int ix = 0;
  int iy = 0;
  int iz = 0;
  bool operator==(const SiteIndex&) const = default;
};

struct Site {
  std::string array_label;
  SiteIndex index;
  Vec3 target_um = Vec3::Zero();
};

/// Sites in depth-major, then row-major order: iz outermost, then iy, then ix.
std::vector<Site> plan_sites(const ArrayPlan& plan, const EnergyRange& calibration = {});

struct Capacity {
  std::int64_t nvc_sites = 0;
  std::int64_t total_qubits = 0;
};

/// Whole cubic cells of side site_pitch_um that fit in the usable volume,
/// times qubits per NVC (plus one electron spin each when requested).
Capacity capacity(const ChipSpec& chip, double site_pitch_um, int qubits_per_nvc,
                  bool count_electron = false);

void to_json(nlohmann::json& j, const ArrayPlan& plan);
void from_json(const nlohmann::json& j, ArrayPlan& plan);
void to_json(nlohmann::json& j, const ChipSpec& chip);
void from_json(const nlohmann::json& j, ChipSpec& chip);

/// Columns: array_label, ix, iy, iz, x_um, y_um, z_um.
void write_sites_csv(std::ostream& os, std::span<const Site> sites);

}  // namespace nvarray
