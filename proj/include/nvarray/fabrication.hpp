#pragma once

// Monte-Carlo model of NV centre formation at laser-written sites:
// substitutional nitrogen as a homogeneous Poisson point process, a Poisson
// number of vacancies per laser pulse spread over the focal spot, and an
// anneal that binds each vacancy to its nearest free nitrogen.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "json.hpp"
#include "nvarray/geometry.hpp"
#include "nvarray/rng.hpp"

namespace nvarray {

struct MaterialSpec {
  double nitrogen_ppb = 3.0;
  double carbon_density_cm3 = 1.76e23;
  void validate() const;
};

/// Substitutional nitrogen number density in um^-3.
double nitrogen_density(const MaterialSpec& material);

/// Mean inter-dopant spacing density^(-1/3), converting um^-3 to nm.
double mean_spacing_nm(double density_per_um3);

struct Box {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();
  double volume() const { return (hi - lo).cwiseMax(0.0).prod(); }
  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
};

struct NitrogenCloud {
  Box bounds;
  std::vector<Vec3> dopants;        // um
  std::vector<std::uint8_t> consumed;  // one flag per dopant
};

NitrogenCloud sample_nitrogen(const Box& bounds, const MaterialSpec& material, Rng& rng);

/// Intensity FWHM of the write focus.
struct FocalSpot {
  double fwhm_radial_nm = 350.0;
  double fwhm_axial_nm = 1700.0;
  void validate() const;
};

/// Mean vacancies per pulse: scale * (E - threshold)^exponent above the
/// threshold and zero at or below it.
struct VacancyCalibration {
  double scale = 0.0;
  double threshold_nj = 14.0;
  double exponent = 8.0;
  EnergyRange domain{14.0, 19.0};

  double mean_vacancies(double energy_nj) const;
  /// Inverse of mean_vacancies on the calibrated domain.
  double energy_for_mean(double mean) const;
  void validate() const;

  /// Scale chosen so that a pulse at `reference_nj` occupies `occupancy` of
  /// sites when every vacancy binds (mean = -ln(1 - occupancy)).
  static VacancyCalibration for_occupancy(double occupancy, double reference_nj,
                                          double threshold_nj = 14.0, double exponent = 8.0,
                                          EnergyRange domain = {14.0, 19.0});
};

struct VacancyEnsemble {
  Site site;
  std::vector<Vec3> vacancy_positions;  // um
};

/// Gaussian standard deviations (um) of vacancy positions, radial and axial.
Eigen::Vector2d vacancy_sigma_um(const FocalSpot& spot, double interaction_shrink);

VacancyEnsemble write_site(const Site& site, double energy_nj, const FocalSpot& spot,
                           const VacancyCalibration& calib, Rng& rng,
                           double interaction_shrink = 1.0, double lambda_multiplier = 1.0);

struct EmitterSite {
  Site site;
  std::vector<Vec3> nvc_positions;  // um
  std::size_t multiplicity() const { return nvc_positions.size(); }
};

/// Processes vacancies in sampled order; each binds to its nearest
/// unconsumed dopant within capture_radius_um, consuming it, or is lost.
EmitterSite anneal(const VacancyEnsemble& vacancies, NitrogenCloud& cloud, double capture_radius_um);

/// Knobs of the site-level simulation.
struct FabricationParams {
  FocalSpot spot;
  VacancyCalibration calibration = VacancyCalibration::for_occupancy(0.09, 17.5);
  /// Scales the focal-spot Gaussian widths to the effective interaction volume.
  double interaction_shrink = 0.655;
  /// Capture radius in units of the mean nitrogen spacing.
  double capture_radius_factor = 2.0;
  /// Gamma-mixing variance of the per-site vacancy mean (0 = pure Poisson).
  double lambda_dispersion = 0.0;

  double capture_radius_um(const MaterialSpec& material) const;
  void validate() const;
};

/// Box around a site that contains the vacancy cloud (5 sigma) plus the
/// capture radius.
Box focal_neighbourhood(const Vec3& target_um, const FabricationParams& params,
                        const MaterialSpec& material);

/// Simulates one site with streams derived from (master_seed, site_index):
/// vacancies, nitrogen and dispersion draw from separate streams.
EmitterSite simulate_site(const Site& site, std::size_t site_index, double energy_nj,
                          const MaterialSpec& material, const FabricationParams& params,
                          std::uint64_t master_seed);

std::vector<EmitterSite> simulate_sites(std::span<const Site> sites, double energy_nj,
                                        const MaterialSpec& material,
                                        const FabricationParams& params,
                                        std::uint64_t master_seed, int threads = 1);

inline constexpr std::size_t kMultiplicityBuckets = 5;  // 0, 1, 2, 3, >=4

struct YieldCounts {
  std::int64_t n_sites = 0;
  std::array<std::int64_t, kMultiplicityBuckets> by_multiplicity{};
  /// Exact number of NVCs (the >=4 bucket hides the tail).
  std::int64_t total_nvcs = 0;

  static YieldCounts from_multiplicities(std::span<const std::size_t> multiplicities);
};

struct YieldSummary {
  YieldCounts counts;
  double occupied_fraction = 0.0;
  std::array<double, kMultiplicityBuckets> fraction_of_sites{};
  /// Fractions among occupied sites; index 0 is unused and stays 0.
  std::array<double, kMultiplicityBuckets> fraction_of_occupied{};
};

YieldSummary site_statistics(std::span<const EmitterSite> outcomes);
YieldSummary summarize(const YieldCounts& counts);

struct PoissonFit {
  double lambda_hat = 0.0;
  double lambda_std_error = 0.0;
  double chi2 = 0.0;
  int dof = 0;
  double gof_p = 1.0;
};

/// Maximum-likelihood Poisson mean with a chi-square goodness-of-fit test on
/// bins {0, 1, 2, >=3}, pooling the upper bins until every expected count is
/// at least 5.
PoissonFit poisson_fit(const YieldCounts& counts);

struct RewriteResult {
  std::vector<int> rounds_used;  // per site; equals max_rounds for sites left empty
  std::vector<EmitterSite> final_sites;
  YieldCounts final_counts;
};

/// Re-pulses and re-anneals each empty site until it holds at least one NVC
/// or max_rounds pulses have been spent. The site keeps the multiplicity of
/// the round that first occupied it.
RewriteResult rewrite_until_filled(std::span<const Site> sites, double energy_nj,
                                   const MaterialSpec& material, const FabricationParams& params,
                                   int max_rounds, std::uint64_t master_seed, int threads = 1);

/// Columns: site_id, array_label, multiplicity, nvc, dx_nm, dy_nm, dz_nm.
/// One row per NVC; empty sites get a single row with blank displacement.
void write_outcomes_csv(std::ostream& os, std::span<const EmitterSite> outcomes);

nlohmann::json to_json(const YieldSummary& summary, const PoissonFit& fit);

void to_json(nlohmann::json& j, const MaterialSpec& m);
void from_json(const nlohmann::json& j, MaterialSpec& m);
void to_json(nlohmann::json& j, const FabricationParams& p);
void from_json(const nlohmann::json& j, FabricationParams& p);

}  // namespace nvarray
