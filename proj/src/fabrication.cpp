#include "nvarray/fabrication.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>

#include "nvarray/io.hpp"
#include "nvarray/stats.hpp"

namespace nvarray {

namespace {

constexpr double kFwhmToSigma = 0.42466090014400953;  // 1 / (2 sqrt(2 ln 2))
constexpr double kUm3PerCm3 = 1e12;

}  // namespace

void MaterialSpec::validate() const {
  if (!(nitrogen_ppb > 0)) throw std::invalid_argument("MaterialSpec.nitrogen_ppb: must be > 0");
  if (!(carbon_density_cm3 > 0))
    throw std::invalid_argument("MaterialSpec.carbon_density_cm3: must be > 0");
}

double nitrogen_density(const MaterialSpec& material) {
  material.validate();
  return material.nitrogen_ppb * 1e-9 * material.carbon_density_cm3 / kUm3PerCm3;
}

double mean_spacing_nm(double density_per_um3) {
  if (!(density_per_um3 > 0)) throw std::invalid_argument("mean_spacing_nm: density must be > 0");
  return 1000.0 * std::cbrt(1.0 / density_per_um3);
}

NitrogenCloud sample_nitrogen(const Box& bounds, const MaterialSpec& material, Rng& rng) {
  if (!((bounds.hi.array() >= bounds.lo.array()).all()))
    throw std::invalid_argument("sample_nitrogen: box has hi < lo");
  NitrogenCloud cloud;
  cloud.bounds = bounds;
  const double mean = nitrogen_density(material) * bounds.volume();
  if (mean <= 0) return cloud;
  const auto count = std::poisson_distribution<std::int64_t>(mean)(rng);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Vec3 extent = bounds.hi - bounds.lo;
  cloud.dopants.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    const double x = u01(rng), y = u01(rng), z = u01(rng);
    cloud.dopants.push_back(bounds.lo + Vec3(x, y, z).cwiseProduct(extent));
  }
  cloud.consumed.assign(cloud.dopants.size(), 0);
  return cloud;
}

void FocalSpot::validate() const {
  if (!(fwhm_radial_nm > 0)) throw std::invalid_argument("FocalSpot.fwhm_radial_nm: must be > 0");
  if (!(fwhm_axial_nm > 0)) throw std::invalid_argument("FocalSpot.fwhm_axial_nm: must be > 0");
}

double VacancyCalibration::mean_vacancies(double energy_nj) const {
  if (!domain.contains(energy_nj))
    throw std::invalid_argument("pulse energy " + io::format_number(energy_nj) +
                                " nJ outside the calibrated range [" +
                                io::format_number(domain.min_nj) + ", " +
                                io::format_number(domain.max_nj) + "] nJ");
  if (energy_nj <= threshold_nj) return 0.0;
  return scale * std::pow(energy_nj - threshold_nj, exponent);
}

double VacancyCalibration::energy_for_mean(double mean) const {
  if (mean < 0) throw std::invalid_argument("energy_for_mean: mean must be >= 0");
  const double e = mean == 0 ? threshold_nj : threshold_nj + std::pow(mean / scale, 1.0 / exponent);
  if (!domain.contains(e))
    throw std::invalid_argument("energy_for_mean: mean " + io::format_number(mean) +
                                " requires " + io::format_number(e) +
                                " nJ, outside the calibrated range");
  return e;
}

void VacancyCalibration::validate() const {
  if (!(scale >= 0)) throw std::invalid_argument("VacancyCalibration.scale: must be >= 0");
  if (!(exponent > 0)) throw std::invalid_argument("VacancyCalibration.exponent: must be > 0");
  if (!(domain.max_nj > domain.min_nj))
    throw std::invalid_argument("VacancyCalibration.domain: max_nj must exceed min_nj");
}

VacancyCalibration VacancyCalibration::for_occupancy(double occupancy, double reference_nj,
                                                     double threshold_nj, double exponent,
                                                     EnergyRange domain) {
  if (!(occupancy > 0 && occupancy < 1))
    throw std::invalid_argument("for_occupancy: occupancy must lie in (0, 1)");
  if (!(reference_nj > threshold_nj))
    throw std::invalid_argument("for_occupancy: reference energy must exceed the threshold");
  VacancyCalibration c;
  c.threshold_nj = threshold_nj;
  c.exponent = exponent;
  c.domain = domain;
  c.scale = -std::log1p(-occupancy) / std::pow(reference_nj - threshold_nj, exponent);
  return c;
}

Eigen::Vector2d vacancy_sigma_um(const FocalSpot& spot, double interaction_shrink) {
  return Eigen::Vector2d(spot.fwhm_radial_nm, spot.fwhm_axial_nm) * (kFwhmToSigma * interaction_shrink / 1000.0);
}

VacancyEnsemble write_site(const Site& site, double energy_nj, const FocalSpot& spot,
                           const VacancyCalibration& calib, Rng& rng, double interaction_shrink,
                           double lambda_multiplier) {
  spot.validate();
  if (!(interaction_shrink > 0)) throw std::invalid_argument("interaction_shrink: must be > 0");
  const double lambda = calib.mean_vacancies(energy_nj) * lambda_multiplier;
  VacancyEnsemble out{site, {}};
  if (lambda <= 0) return out;
  const auto count = std::poisson_distribution<int>(lambda)(rng);
  const Eigen::Vector2d sigma = vacancy_sigma_um(spot, interaction_shrink);
  std::normal_distribution<double> normal(0.0, 1.0);
  out.vacancy_positions.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double dx = normal(rng), dy = normal(rng), dz = normal(rng);
    out.vacancy_positions.push_back(site.target_um +
                                    Vec3(dx * sigma[0], dy * sigma[0], dz * sigma[1]));
  }
  return out;
}

EmitterSite anneal(const VacancyEnsemble& vacancies, NitrogenCloud& cloud, double capture_radius_um) {
  EmitterSite out{vacancies.site, {}};
  const double r2_max = capture_radius_um * capture_radius_um;
  for (const Vec3& v : vacancies.vacancy_positions) {
    std::size_t best = cloud.dopants.size();
    double best_d2 = r2_max;
    for (std::size_t i = 0; i < cloud.dopants.size(); ++i) {
      if (cloud.consumed[i]) continue;
      const double d2 = (cloud.dopants[i] - v).squaredNorm();
      if (d2 <= best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    if (best == cloud.dopants.size()) continue;
    cloud.consumed[best] = 1;
    out.nvc_positions.push_back(cloud.dopants[best]);
  }
  return out;
}

double FabricationParams::capture_radius_um(const MaterialSpec& material) const {
  return capture_radius_factor * mean_spacing_nm(nitrogen_density(material)) / 1000.0;
}

void FabricationParams::validate() const {
  spot.validate();
  calibration.validate();
  if (!(interaction_shrink > 0))
    throw std::invalid_argument("FabricationParams.interaction_shrink: must be > 0");
  if (!(capture_radius_factor > 0))
    throw std::invalid_argument("FabricationParams.capture_radius_factor: must be > 0");
  if (!(lambda_dispersion >= 0))
    throw std::invalid_argument("FabricationParams.lambda_dispersion: must be >= 0");
}

Box focal_neighbourhood(const Vec3& target_um, const FabricationParams& params,
                        const MaterialSpec& material) {
  const Eigen::Vector2d sigma = vacancy_sigma_um(params.spot, params.interaction_shrink);
  const double r = params.capture_radius_um(material);
  const Vec3 half(5 * sigma[0] + r, 5 * sigma[0] + r, 5 * sigma[1] + r);
  return {target_um - half, target_um + half};
}

namespace {

double dispersion_multiplier(const FabricationParams& params, std::uint64_t seed, std::size_t idx) {
  if (params.lambda_dispersion <= 0) return 1.0;
  Rng rng = make_stream(seed, Stage::Dispersion, idx);
  const double shape = 1.0 / params.lambda_dispersion;
  return std::gamma_distribution<double>(shape, params.lambda_dispersion)(rng);
}

}  // namespace

EmitterSite simulate_site(const Site& site, std::size_t site_index, double energy_nj,
                          const MaterialSpec& material, const FabricationParams& params,
                          std::uint64_t master_seed) {
  Rng vacancy_rng = make_stream(master_seed, Stage::Vacancy, site_index);
  const double mult = dispersion_multiplier(params, master_seed, site_index);
  const auto ensemble = write_site(site, energy_nj, params.spot, params.calibration, vacancy_rng,
                                   params.interaction_shrink, mult);
  if (ensemble.vacancy_positions.empty()) return {site, {}};
  // Only dopants within the capture radius of some vacancy can bind, so the
  // Poisson cloud is needed over the padded bounding box of the vacancies alone.
  const double radius = params.capture_radius_um(material);
  Box bounds{ensemble.vacancy_positions.front(), ensemble.vacancy_positions.front()};
  for (const Vec3& v : ensemble.vacancy_positions) {
    bounds.lo = bounds.lo.cwiseMin(v);
    bounds.hi = bounds.hi.cwiseMax(v);
  }
  bounds.lo.array() -= radius;
  bounds.hi.array() += radius;
  Rng nitrogen_rng = make_stream(master_seed, Stage::Nitrogen, site_index);
  NitrogenCloud cloud = sample_nitrogen(bounds, material, nitrogen_rng);
  return anneal(ensemble, cloud, radius);
}

std::vector<EmitterSite> simulate_sites(std::span<const Site> sites, double energy_nj,
                                        const MaterialSpec& material,
                                        const FabricationParams& params,
                                        std::uint64_t master_seed, int threads) {
  material.validate();
  params.validate();
  std::vector<EmitterSite> out(sites.size());
  parallel_for(sites.size(), threads, [&](std::size_t i) {
    out[i] = simulate_site(sites[i], i, energy_nj, material, params, master_seed);
  });
  return out;
}

YieldCounts YieldCounts::from_multiplicities(std::span<const std::size_t> multiplicities) {
  YieldCounts c;
  c.n_sites = static_cast<std::int64_t>(multiplicities.size());
  for (std::size_t m : multiplicities) {
    ++c.by_multiplicity[std::min(m, kMultiplicityBuckets - 1)];
    c.total_nvcs += static_cast<std::int64_t>(m);
  }
  return c;
}

YieldSummary summarize(const YieldCounts& counts) {
  if (counts.n_sites <= 0) throw std::invalid_argument("site_statistics: no sites");
  YieldSummary s;
  s.counts = counts;
  const double n = static_cast<double>(counts.n_sites);
  const std::int64_t occupied = counts.n_sites - counts.by_multiplicity[0];
  s.occupied_fraction = occupied / n;
  for (std::size_t k = 0; k < kMultiplicityBuckets; ++k) {
    s.fraction_of_sites[k] = counts.by_multiplicity[k] / n;
    if (k > 0 && occupied > 0)
      s.fraction_of_occupied[k] = counts.by_multiplicity[k] / static_cast<double>(occupied);
  }
  return s;
}

YieldSummary site_statistics(std::span<const EmitterSite> outcomes) {
  if (outcomes.empty()) throw std::invalid_argument("site_statistics: empty outcome list");
  std::vector<std::size_t> m;
  m.reserve(outcomes.size());
  for (const auto& o : outcomes) m.push_back(o.multiplicity());
  return summarize(YieldCounts::from_multiplicities(m));
}

PoissonFit poisson_fit(const YieldCounts& counts) {
  if (counts.n_sites < 1) throw std::invalid_argument("poisson_fit: need at least one site");
  const double n = static_cast<double>(counts.n_sites);
  std::int64_t bucket_total = 0;
  for (std::size_t k = 1; k < kMultiplicityBuckets; ++k)
    bucket_total += static_cast<std::int64_t>(k) * counts.by_multiplicity[k];
  const double total = static_cast<double>(std::max(counts.total_nvcs, bucket_total));

  PoissonFit fit;
  fit.lambda_hat = total / n;
  fit.lambda_std_error = std::sqrt(fit.lambda_hat / n);
  if (fit.lambda_hat == 0) return fit;

  const double lam = fit.lambda_hat;
  const double p0 = std::exp(-lam);
  const double p1 = p0 * lam;
  const double p2 = p1 * lam / 2.0;
  std::vector<double> expected = {n * p0, n * p1, n * p2, n * std::max(0.0, 1.0 - p0 - p1 - p2)};
  std::vector<double> observed = {
      static_cast<double>(counts.by_multiplicity[0]), static_cast<double>(counts.by_multiplicity[1]),
      static_cast<double>(counts.by_multiplicity[2]),
      static_cast<double>(counts.by_multiplicity[3] + counts.by_multiplicity[4])};

  while (expected.size() > 1 && expected.back() < 5.0) {
    expected[expected.size() - 2] += expected.back();
    observed[observed.size() - 2] += observed.back();
    expected.pop_back();
    observed.pop_back();
  }
  while (expected.size() > 1 && expected.front() < 5.0) {
    expected[1] += expected[0];
    observed[1] += observed[0];
    expected.erase(expected.begin());
    observed.erase(observed.begin());
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const double d = observed[i] - expected[i];
    fit.chi2 += d * d / expected[i];
  }
  fit.dof = static_cast<int>(expected.size()) - 2;
  fit.gof_p = fit.dof >= 1 ? stats::chi2_sf(fit.chi2, fit.dof) : 1.0;
  return fit;
}

RewriteResult rewrite_until_filled(std::span<const Site> sites, double energy_nj,
                                   const MaterialSpec& material, const FabricationParams& params,
                                   int max_rounds, std::uint64_t master_seed, int threads) {
  if (max_rounds < 1) throw std::invalid_argument("rewrite_until_filled: max_rounds must be >= 1");
  material.validate();
  params.validate();
  const double radius = params.capture_radius_um(material);
  RewriteResult out;
  out.rounds_used.assign(sites.size(), 0);
  out.final_sites.resize(sites.size());
  parallel_for(sites.size(), threads, [&](std::size_t i) {
    const Site& site = sites[i];
    const double mult = dispersion_multiplier(params, master_seed, i);
    std::optional<NitrogenCloud> cloud;
    EmitterSite result{site, {}};
    int round = 0;
    while (round < max_rounds && result.nvc_positions.empty()) {
      Rng vacancy_rng = make_stream(master_seed, Stage::Vacancy, i, static_cast<std::uint64_t>(round));
      ++round;
      const auto ensemble = write_site(site, energy_nj, params.spot, params.calibration,
                                       vacancy_rng, params.interaction_shrink, mult);
      if (ensemble.vacancy_positions.empty()) continue;
      if (!cloud) {
        Rng nitrogen_rng = make_stream(master_seed, Stage::Nitrogen, i);
        cloud = sample_nitrogen(focal_neighbourhood(site.target_um, params, material), material,
                                nitrogen_rng);
      }
      result = anneal(ensemble, *cloud, radius);
    }
    out.rounds_used[i] = round;
    out.final_sites[i] = std::move(result);
  });
  std::vector<std::size_t> m;
  m.reserve(sites.size());
  for (const auto& s : out.final_sites) m.push_back(s.multiplicity());
  out.final_counts = YieldCounts::from_multiplicities(m);
  return out;
}

void write_outcomes_csv(std::ostream& os, std::span<const EmitterSite> outcomes) {
  io::csv_row(os, "site_id", "array_label", "multiplicity", "nvc", "dx_nm", "dy_nm", "dz_nm");
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& o = outcomes[i];
    if (o.nvc_positions.empty()) {
      io::csv_row(os, i, o.site.array_label, 0, "", "", "", "");
      continue;
    }
    for (std::size_t k = 0; k < o.nvc_positions.size(); ++k) {
      const Vec3 d = (o.nvc_positions[k] - o.site.target_um) * 1000.0;
      io::csv_row(os, i, o.site.array_label, o.multiplicity(), k, d.x(), d.y(), d.z());
    }
  }
}

nlohmann::json to_json(const YieldSummary& s, const PoissonFit& fit) {
  const auto& c = s.counts;
  return {{"n_sites", c.n_sites},
          {"total_nvcs", c.total_nvcs},
          {"by_multiplicity",
           {{"0", c.by_multiplicity[0]},
            {"1", c.by_multiplicity[1]},
            {"2", c.by_multiplicity[2]},
            {"3", c.by_multiplicity[3]},
            {">=4", c.by_multiplicity[4]}}},
          {"occupied_fraction", s.occupied_fraction},
          {"single_fraction_of_sites", s.fraction_of_sites[1]},
          {"double_fraction_of_sites", s.fraction_of_sites[2]},
          {"triple_fraction_of_sites", s.fraction_of_sites[3]},
          {"fraction_of_occupied",
           {{"1", s.fraction_of_occupied[1]},
            {"2", s.fraction_of_occupied[2]},
            {"3", s.fraction_of_occupied[3]},
            {">=4", s.fraction_of_occupied[4]}}},
          {"poisson",
           {{"lambda_hat", fit.lambda_hat},
            {"lambda_std_error", fit.lambda_std_error},
            {"chi2", fit.chi2},
            {"dof", fit.dof},
            {"gof_p", fit.gof_p}}}};
}

void to_json(nlohmann::json& j, const MaterialSpec& m) {
  j = {{"nitrogen_ppb", m.nitrogen_ppb}, {"carbon_density_cm3", m.carbon_density_cm3}};
}

void from_json(const nlohmann::json& j, MaterialSpec& m) {
  MaterialSpec d;
  d.nitrogen_ppb = j.value("nitrogen_ppb", d.nitrogen_ppb);
  d.carbon_density_cm3 = j.value("carbon_density_cm3", d.carbon_density_cm3);
  m = d;
}

void to_json(nlohmann::json& j, const FabricationParams& p) {
  j = {{"spot", {{"fwhm_radial_nm", p.spot.fwhm_radial_nm}, {"fwhm_axial_nm", p.spot.fwhm_axial_nm}}},
       {"calibration",
        {{"scale", p.calibration.scale},
         {"threshold_nj", p.calibration.threshold_nj},
         {"exponent", p.calibration.exponent},
         {"min_nj", p.calibration.domain.min_nj},
         {"max_nj", p.calibration.domain.max_nj}}},
       {"interaction_shrink", p.interaction_shrink},
       {"capture_radius_factor", p.capture_radius_factor},
       {"lambda_dispersion", p.lambda_dispersion}};
}

void from_json(const nlohmann::json& j, FabricationParams& p) {
  FabricationParams d;
  if (j.contains("spot")) {
    const auto& s = j.at("spot");
    d.spot.fwhm_radial_nm = s.value("fwhm_radial_nm", d.spot.fwhm_radial_nm);
    d.spot.fwhm_axial_nm = s.value("fwhm_axial_nm", d.spot.fwhm_axial_nm);
  }
  if (j.contains("calibration")) {
    const auto& c = j.at("calibration");
    const double threshold = c.value("threshold_nj", d.calibration.threshold_nj);
    const double exponent = c.value("exponent", d.calibration.exponent);
    const EnergyRange domain{c.value("min_nj", d.calibration.domain.min_nj),
                             c.value("max_nj", d.calibration.domain.max_nj)};
    // An occupancy target takes precedence over an explicit scale.
    if (c.contains("occupancy") || c.contains("reference_nj") || !c.contains("scale")) {
      d.calibration = VacancyCalibration::for_occupancy(c.value("occupancy", 0.09),
                                                        c.value("reference_nj", 17.5), threshold,
                                                        exponent, domain);
    } else {
      d.calibration.scale = c.at("scale").get<double>();
      d.calibration.threshold_nj = threshold;
      d.calibration.exponent = exponent;
      d.calibration.domain = domain;
    }
  }
  d.interaction_shrink = j.value("interaction_shrink", d.interaction_shrink);
  d.capture_radius_factor = j.value("capture_radius_factor", d.capture_radius_factor);
  d.lambda_dispersion = j.value("lambda_dispersion", d.lambda_dispersion);
  p = d;
}

}  // namespace nvarray
