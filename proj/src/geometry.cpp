#include "nvarray/geometry.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "nvarray/io.hpp"

namespace nvarray {

namespace {

[[noreturn]] void reject(const std::string& field, const std::string& why) {
  throw std::invalid_argument(field + ": " + why);
}

// Whole cells of size `pitch` that fit in `extent`; tolerant of the rounding
// in quotients such as 0.3 / 0.1.
std::int64_t whole_cells(double extent, double pitch) {
  const double q = extent / pitch;
  return static_cast<std::int64_t>(std::floor(q * (1.0 + 1e-12)));
}

}  // namespace

void ChipSpec::validate() const {
  if (!(x_extent_mm > 0)) reject("ChipSpec.x_extent_mm", "must be > 0");
  if (!(y_extent_mm > 0)) reject("ChipSpec.y_extent_mm", "must be > 0");
  if (!(z_extent_mm > 0)) reject("ChipSpec.z_extent_mm", "must be > 0");
  if (!(usable_depth_um > 0)) reject("ChipSpec.usable_depth_um", "must be > 0");
  if (usable_depth_um > z_extent_mm * 1000.0)
    reject("ChipSpec.usable_depth_um", "exceeds the chip thickness");
}

void ArrayPlan::validate(const EnergyRange& calibration) const {
  if (label.empty()) reject("ArrayPlan.label", "must not be empty");
  if (!origin_um.allFinite()) reject("ArrayPlan.origin_um", "must be finite");
  if (nx < 1) reject("ArrayPlan.nx", "must be >= 1");
  if (ny < 1) reject("ArrayPlan.ny", "must be >= 1");
  if (!(pitch_xy_um > 0)) reject("ArrayPlan.pitch_xy_um", "must be > 0");
  if (depths_um.empty()) reject("ArrayPlan.depths_um", "must list at least one depth");
  for (std::size_t i = 0; i < depths_um.size(); ++i) {
    if (!(depths_um[i] > 0)) reject("ArrayPlan.depths_um", "depths must be > 0");
    if (i > 0 && !(depths_um[i] > depths_um[i - 1]))
      reject("ArrayPlan.depths_um", "depths must be strictly increasing");
  }
  if (!calibration.contains(pulse_energy_nj))
    reject("ArrayPlan.pulse_energy_nj", "outside the calibrated range [" +
                                            io::format_number(calibration.min_nj) + ", " +
                                            io::format_number(calibration.max_nj) + "] nJ");
}

std::vector<Site> plan_sites(const ArrayPlan& plan, const EnergyRange& calibration) {
  plan.validate(calibration);
  std::vector<Site> sites;
  sites.reserve(plan.site_count());
  for (int iz = 0; iz < static_cast<int>(plan.depths_um.size()); ++iz)
    for (int iy = 0; iy < plan.ny; ++iy)
      for (int ix = 0; ix < plan.nx; ++ix) {
        const Vec3 offset(ix * plan.pitch_xy_um, iy * plan.pitch_xy_um, plan.depths_um[iz]);
        sites.push_back({plan.label, {ix, iy, iz}, plan.origin_um + offset});
      }
  return sites;
}

Capacity capacity(const ChipSpec& chip, double site_pitch_um, int qubits_per_nvc,
                  bool count_electron) {
  chip.validate();
  if (!(site_pitch_um > 0)) throw std::invalid_argument("site_pitch_um: must be > 0");
  if (qubits_per_nvc < 1) throw std::invalid_argument("qubits_per_nvc: must be >= 1");
  Capacity c;
  c.nvc_sites = whole_cells(chip.x_extent_mm * 1000.0, site_pitch_um) *
                whole_cells(chip.y_extent_mm * 1000.0, site_pitch_um) *
                whole_cells(chip.usable_depth_um, site_pitch_um);
  c.total_qubits = c.nvc_sites * (qubits_per_nvc + (count_electron ? 1 : 0));
  return c;
}

void to_json(nlohmann::json& j, const ArrayPlan& plan) {
  j = nlohmann::json{{"label", plan.label},
                     {"origin_um", io::to_json(plan.origin_um)},
                     {"nx", plan.nx},
                     {"ny", plan.ny},
                     {"pitch_xy_um", plan.pitch_xy_um},
                     {"depths_um", plan.depths_um},
                     {"pulse_energy_nj", plan.pulse_energy_nj}};
}

void from_json(const nlohmann::json& j, ArrayPlan& plan) {
  ArrayPlan p;
  if (j.contains("label")) p.label = j.at("label").get<std::string>();
  if (j.contains("origin_um")) p.origin_um = io::vec3_from_json(j.at("origin_um"));
  if (j.contains("nx")) p.nx = j.at("nx").get<int>();
  if (j.contains("ny")) p.ny = j.at("ny").get<int>();
  if (j.contains("pitch_xy_um")) p.pitch_xy_um = j.at("pitch_xy_um").get<double>();
  if (j.contains("depths_um")) p.depths_um = j.at("depths_um").get<std::vector<double>>();
  if (j.contains("pulse_energy_nj")) p.pulse_energy_nj = j.at("pulse_energy_nj").get<double>();
  plan = std::move(p);
}

void to_json(nlohmann::json& j, const ChipSpec& chip) {
  j = nlohmann::json{{"x_extent_mm", chip.x_extent_mm},
                     {"y_extent_mm", chip.y_extent_mm},
                     {"z_extent_mm", chip.z_extent_mm},
                     {"usable_depth_um", chip.usable_depth_um}};
}

void from_json(const nlohmann::json& j, ChipSpec& chip) {
  ChipSpec c;
  c.x_extent_mm = j.value("x_extent_mm", c.x_extent_mm);
  c.y_extent_mm = j.value("y_extent_mm", c.y_extent_mm);
  c.z_extent_mm = j.value("z_extent_mm", c.z_extent_mm);
  c.usable_depth_um = j.value("usable_depth_um", c.usable_depth_um);
  chip = c;
}

void write_sites_csv(std::ostream& os, std::span<const Site> sites) {
  io::csv_row(os, "array_label", "ix", "iy", "iz", "x_um", "y_um", "z_um");
  for (const auto& s : sites)
    io::csv_row(os, s.array_label, s.index.ix, s.index.iy, s.index.iz, s.target_um.x(),
                s.target_um.y(), s.target_um.z());
}

}  // namespace nvarray
