#include "nvarray/imaging.hpp"

#include <algorithm>
#include <memory>
#include <bit>
#include <cmath>
#include <fstream>
#include <ostream>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>

#include "nvarray/io.hpp"
#include "nvarray/stats.hpp"

namespace nvarray {

namespace {

// Counts above this use Gaussian weighting with the observed variance.
constexpr double kGaussianCountThreshold = 10.0;

double residual_value(double obs, double mu) {
  if (obs > kGaussianCountThreshold) return (obs - mu) / std::sqrt(obs);
  return fit::poisson_deviance_residual(obs, mu);
}

double residual_slope(double obs, double mu) {
  if (obs > kGaussianCountThreshold) return -1.0 / std::sqrt(obs);
  return fit::poisson_deviance_derivative(obs, mu);
}

}  // namespace

void PsfModel::validate() const {
  if (!(sigma_xy_nm > 0)) throw std::invalid_argument("PsfModel.sigma_xy_nm: must be > 0");
  if (!(sigma_z_nm > 0)) throw std::invalid_argument("PsfModel.sigma_z_nm: must be > 0");
  if (!(peak_rate_hz >= 0)) throw std::invalid_argument("PsfModel.peak_rate_hz: must be >= 0");
  if (!(background_rate_hz >= 0))
    throw std::invalid_argument("PsfModel.background_rate_hz: must be >= 0");
}

double psf_shape(const PsfModel& psf, const Vec3& d) {
  const double sxy2 = psf.sigma_xy_nm * psf.sigma_xy_nm, sz2 = psf.sigma_z_nm * psf.sigma_z_nm;
  return std::exp(-0.5 * ((d.x() * d.x() + d.y() * d.y()) / sxy2 + d.z() * d.z() / sz2));
}

void VolumeSpec::validate() const {
  if (!origin_um.allFinite()) throw std::invalid_argument("VolumeSpec.origin_um: must be finite");
  if (!(voxel_pitch_nm.array() > 0).all())
    throw std::invalid_argument("VolumeSpec.voxel_pitch_nm: must be > 0");
  for (int d : dims)
    if (d < 1) throw std::invalid_argument("VolumeSpec.dims: every axis must be >= 1");
  if (!(dwell_s > 0)) throw std::invalid_argument("VolumeSpec.dwell_s: must be > 0");
}

VolumeSpec VolumeSpec::centred(const Vec3& centre_um, const Vec3& pitch_nm,
                               std::array<int, 3> dims, double dwell_s) {
  VolumeSpec s;
  s.voxel_pitch_nm = pitch_nm;
  s.dims = dims;
  s.dwell_s = dwell_s;
  const Vec3 half(0.5 * (dims[0] - 1), 0.5 * (dims[1] - 1), 0.5 * (dims[2] - 1));
  s.origin_um = centre_um - half.cwiseProduct(pitch_nm) / 1000.0;
  return s;
}

bool ConfocalVolume::contains_nm(const Vec3& p) const {
  const Vec3 lo = 1000.0 * origin_um - 0.5 * voxel_pitch_nm;
  const Vec3 hi = voxel_centre_nm(dims[0] - 1, dims[1] - 1, dims[2] - 1) + 0.5 * voxel_pitch_nm;
  return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
}

namespace {

ConfocalVolume expected_volume(std::span<const Vec3> emitters_um, const PsfModel& psf,
                               const VolumeSpec& spec) {
  psf.validate();
  spec.validate();
  ConfocalVolume v;
  v.origin_um = spec.origin_um;
  v.voxel_pitch_nm = spec.voxel_pitch_nm;
  v.dims = spec.dims;
  v.dwell_s = spec.dwell_s;
  v.counts.assign(static_cast<std::size_t>(spec.dims[0]) * spec.dims[1] * spec.dims[2],
                  spec.dwell_s * psf.background_rate_hz);
  std::vector<Vec3> em_nm;
  for (const auto& e : emitters_um) {
    em_nm.push_back(1000.0 * e);
    if (!v.contains_nm(em_nm.back())) ++v.clipped_emitters;
  }
  const double signal = spec.dwell_s * psf.peak_rate_hz;
  for (int iz = 0; iz < v.dims[2]; ++iz)
    for (int iy = 0; iy < v.dims[1]; ++iy)
      for (int ix = 0; ix < v.dims[0]; ++ix) {
        const Vec3 c = v.voxel_centre_nm(ix, iy, iz);
        double sum = 0.0;
        for (const auto& e : em_nm) sum += psf_shape(psf, c - e);
        v.counts[v.index(ix, iy, iz)] += signal * sum;
      }
  return v;
}

}  // namespace

ConfocalVolume render_scan(std::span<const Vec3> emitters_um, const PsfModel& psf,
                           const VolumeSpec& spec, Rng& rng) {
  ConfocalVolume v = expected_volume(emitters_um, psf, spec);
  if (!spec.poisson_noise) return v;
  for (double& c : v.counts)
    c = c > 0 ? static_cast<double>(std::poisson_distribution<std::int64_t>(c)(rng)) : 0.0;
  return v;
}

double expected_total(std::span<const Vec3> emitters_um, const PsfModel& psf,
                      const VolumeSpec& spec) {
  const auto v = expected_volume(emitters_um, psf, spec);
  double total = 0.0;
  for (double c : v.counts) total += c;
  return total;
}

fit::Model<double> psf_fit_model(std::vector<Vec3> centres_nm, std::vector<double> counts,
                                 const Vec3& start_nm) {
  if (centres_nm.size() != counts.size())
    throw std::invalid_argument("psf_fit_model: voxel centres and counts differ in length");
  struct Data {
    std::vector<Vec3> centres;
    std::vector<double> obs;
    Vec3 start;
  };
  const auto data = std::make_shared<const Data>(Data{std::move(centres_nm), std::move(counts), start_nm});
  const auto m = static_cast<Eigen::Index>(data->obs.size());

  struct Shape {
    Vec3 offset;
    double inv_sxy2, inv_sz2, a, b;
  };
  auto shape = [](const Eigen::VectorXd& x) {
    return Shape{x.head<3>(), std::exp(-2.0 * x[3]), std::exp(-2.0 * x[4]), std::exp(x[5]), std::exp(x[6])};
  };
  auto mean_and_grad = [data](const Shape& p, Eigen::Index i, double* grad) {
    const Vec3 d = data->centres[i] - data->start - p.offset;
    const double qxy = (d.x() * d.x() + d.y() * d.y()) * p.inv_sxy2;
    const double qz = d.z() * d.z() * p.inv_sz2;
    const double ag = p.a * std::exp(-0.5 * (qxy + qz));
    if (grad) {
      grad[0] = ag * d.x() * p.inv_sxy2;
      grad[1] = ag * d.y() * p.inv_sxy2;
      grad[2] = ag * d.z() * p.inv_sz2;
      grad[3] = ag * qxy;
      grad[4] = ag * qz;
      grad[5] = ag;
      grad[6] = p.b;
    }
    return p.b + ag;
  };
  fit::Model<double> model;
  model.num_params = 7;
  model.residual = [data, m, shape, mean_and_grad](const Eigen::VectorXd& x) {
    const Shape p = shape(x);
    Eigen::VectorXd r(m);
    for (Eigen::Index i = 0; i < m; ++i) r[i] = residual_value(data->obs[i], mean_and_grad(p, i, nullptr));
    return r;
  };
  model.jacobian = [data, m, shape, mean_and_grad](const Eigen::VectorXd& x) {
    const Shape p = shape(x);
    Eigen::MatrixXd jac(m, 7);
    double g[7];
    for (Eigen::Index i = 0; i < m; ++i) {
      const double mu = mean_and_grad(p, i, g);
      const double s = residual_slope(data->obs[i], mu);
      for (int k = 0; k < 7; ++k) jac(i, k) = s * g[k];
    }
    return jac;
  };
  return model;
}

Localization localize(const ConfocalVolume& volume, const Vec3& seed_nm,
                      const LocalizeOptions& options) {
  if (volume.counts.size() != static_cast<std::size_t>(volume.dims[0]) * volume.dims[1] *
                                  volume.dims[2])
    throw std::invalid_argument("localize: counts do not match the volume dims");
  if (!volume.contains_nm(seed_nm)) throw std::invalid_argument("localize: seed outside volume");
  if (std::all_of(volume.counts.begin(), volume.counts.end(), [](double c) { return c <= 0; }))
    throw std::invalid_argument("localize: volume has no counts");
  if (!(options.sigma_xy_guess_nm > 0 && options.sigma_z_guess_nm > 0 && options.roi_sigmas > 0))
    throw std::invalid_argument("localize: sigma guesses and roi_sigmas must be > 0");

  // Fit box around the seed, clipped to the volume.
  const Vec3 guess(options.sigma_xy_guess_nm, options.sigma_xy_guess_nm, options.sigma_z_guess_nm);
  std::array<int, 3> lo{}, hi{};
  for (int a = 0; a < 3; ++a) {
    const double centre = (seed_nm[a] - 1000.0 * volume.origin_um[a]) / volume.voxel_pitch_nm[a];
    const double half = options.roi_sigmas * guess[a] / volume.voxel_pitch_nm[a];
    lo[a] = std::max(0, static_cast<int>(std::floor(centre - half)));
    hi[a] = std::min(volume.dims[a] - 1, static_cast<int>(std::ceil(centre + half)));
  }
  std::vector<Vec3> centres;
  std::vector<double> obs;
  for (int iz = lo[2]; iz <= hi[2]; ++iz)
    for (int iy = lo[1]; iy <= hi[1]; ++iy)
      for (int ix = lo[0]; ix <= hi[0]; ++ix) {
        centres.push_back(volume.voxel_centre_nm(ix, iy, iz));
        obs.push_back(volume.counts[volume.index(ix, iy, iz)]);
      }
  const auto m = static_cast<Eigen::Index>(obs.size());
  if (m < 8) throw std::invalid_argument("localize: fit region has fewer than 8 voxels");

  // Start at the brightest voxel within three guessed sigmas of the seed.
  std::vector<double> sorted = obs;
  std::nth_element(sorted.begin(), sorted.begin() + m / 2, sorted.end());
  const double background0 = std::max(sorted[static_cast<std::size_t>(m / 2)], 1e-3);
  Eigen::Index best = -1;
  for (Eigen::Index i = 0; i < m; ++i) {
    if ((centres[i] - seed_nm).cwiseQuotient(guess).norm() > 3.0) continue;
    if (best < 0 || obs[i] > obs[best]) best = i;
  }
  const Vec3 start = best >= 0 ? centres[best] : seed_nm;
  const double peak0 = best >= 0 ? obs[best] : background0;
  const double amplitude0 = std::max(peak0 - background0, 1.0);

  const auto model = psf_fit_model(std::move(centres), std::move(obs), start);

  Eigen::VectorXd x0(7);
  x0 << 0, 0, 0, std::log(guess.x()), std::log(guess.z()), std::log(amplitude0),
      std::log(background0);

  Localization loc;
  loc.position_nm = start;
  try {
    const auto res = fit::least_squares(model, x0, options.solver);
    loc.position_nm = start + res.params.head<3>();
    loc.covariance = res.covariance.topLeftCorner<3, 3>();
    loc.sigma_xy_nm = std::exp(res.params[3]);
    loc.sigma_z_nm = std::exp(res.params[4]);
    loc.amplitude = std::exp(res.params[5]);
    loc.background = std::exp(res.params[6]);
    loc.iterations = res.iterations;
    loc.converged = res.converged && loc.covariance.allFinite();
    loc.message = res.message;
  } catch (const std::exception& e) {
    loc.message = e.what();
  }
  return loc;
}

PrecisionReport precision_report(std::span<const Localization> localizations,
                                 std::span<const Vec3> targets_nm, double bin_width_nm) {
  if (localizations.size() != targets_nm.size())
    throw std::invalid_argument("precision_report: localizations and targets differ in length");
  if (localizations.empty()) throw std::invalid_argument("precision_report: no localizations");
  if (!(bin_width_nm > 0)) throw std::invalid_argument("precision_report: bin width must be > 0");
  const auto n = static_cast<Eigen::Index>(targets_nm.size());

  PrecisionReport rep;
  rep.residuals_nm.resize(n, 3);
  Eigen::MatrixXd design(n, 4);
  Eigen::MatrixX3d fitted(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    fitted.row(i) = localizations[i].position_nm.transpose();
    rep.residuals_nm.row(i) = (localizations[i].position_nm - targets_nm[i]).transpose();
    design.row(i) << targets_nm[i].transpose(), 1.0;
  }
  // Fitted ~ affine(target); removes drift, rotation and scale of the grid.
  const Eigen::MatrixXd map = design.completeOrthogonalDecomposition().solve(Eigen::MatrixXd(fitted));
  rep.registered_residuals_nm = fitted - design * map;

  for (int a = 0; a < 3; ++a) {
    std::vector<double> col(rep.residuals_nm.col(a).data(), rep.residuals_nm.col(a).data() + n);
    std::vector<double> reg(rep.registered_residuals_nm.col(a).data(),
                            rep.registered_residuals_nm.col(a).data() + n);
    rep.mean_nm[a] = stats::mean(col);
    rep.std_nm[a] = n > 1 ? stats::stddev(col) : 0.0;
    rep.registered_std_nm[a] = n > 1 ? stats::stddev(reg) : 0.0;

    double max_abs = 0.0;
    for (double v : col) max_abs = std::max(max_abs, std::abs(v));
    const int half = std::max(1, static_cast<int>(std::ceil(max_abs / bin_width_nm)));
    auto& h = rep.histograms[a];
    for (int k = -half; k <= half; ++k) h.edges_nm.push_back(k * bin_width_nm);
    h.counts.assign(2 * static_cast<std::size_t>(half), 0);
    for (double v : col) {
      auto bin = static_cast<std::int64_t>(std::floor(v / bin_width_nm)) + half;
      bin = std::clamp<std::int64_t>(bin, 0, 2 * half - 1);
      ++h.counts[static_cast<std::size_t>(bin)];
    }
  }
  return rep;
}

void write_residuals_csv(std::ostream& os, const PrecisionReport& rep,
                         std::span<const std::size_t> site_ids) {
  if (site_ids.size() != static_cast<std::size_t>(rep.residuals_nm.rows()))
    throw std::invalid_argument("write_residuals_csv: site id count mismatch");
  io::csv_row(os, "site_id", "dx_nm", "dy_nm", "dz_nm", "dx_reg_nm", "dy_reg_nm", "dz_reg_nm");
  for (Eigen::Index i = 0; i < rep.residuals_nm.rows(); ++i) {
    const auto& r = rep.residuals_nm;
    const auto& g = rep.registered_residuals_nm;
    io::csv_row(os, site_ids[static_cast<std::size_t>(i)], r(i, 0), r(i, 1), r(i, 2), g(i, 0),
                g(i, 1), g(i, 2));
  }
}

void write_histograms_csv(std::ostream& os, const PrecisionReport& rep) {
  static constexpr const char* kAxes[3] = {"x", "y", "z"};
  io::csv_row(os, "axis", "lo_nm", "hi_nm", "count");
  for (int a = 0; a < 3; ++a) {
    const auto& h = rep.histograms[a];
    for (std::size_t k = 0; k < h.counts.size(); ++k)
      io::csv_row(os, kAxes[a], h.edges_nm[k], h.edges_nm[k + 1], h.counts[k]);
  }
}

nlohmann::json to_json(const PrecisionReport& rep) {
  return {{"n", rep.residuals_nm.rows()},
          {"mean_nm", io::to_json(rep.mean_nm)},
          {"std_nm", io::to_json(rep.std_nm)},
          {"registered_std_nm", io::to_json(rep.registered_std_nm)}};
}

void write_volume(const std::filesystem::path& stem, const ConfocalVolume& v) {
  std::string bytes(v.counts.size() * 8, '\0');
  for (std::size_t i = 0; i < v.counts.size(); ++i) {
    // Shifting out the low byte first gives little-endian order on any host.
    const auto word = std::bit_cast<std::uint64_t>(v.counts[i]);
    for (int b = 0; b < 8; ++b) bytes[8 * i + b] = static_cast<char>((word >> (8 * b)) & 0xffu);
  }
  auto bin = stem;
  bin += ".bin";
  auto header = stem;
  header += ".json";
  io::write_text(bin, bytes);
  io::write_json(header, {{"dims", v.dims},
                          {"voxel_pitch_nm", io::to_json(v.voxel_pitch_nm)},
                          {"origin_um", io::to_json(v.origin_um)},
                          {"dwell_s", v.dwell_s},
                          {"seed", v.seed},
                          {"clipped_emitters", v.clipped_emitters},
                          {"dtype", "float64-le"},
                          {"order", "x-fastest"},
                          {"data", bin.filename().string()}});
}

ConfocalVolume read_volume(const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".bin";
  auto header = stem;
  header += ".json";
  const auto h = nlohmann::json::parse(io::read_text(header));
  ConfocalVolume v;
  v.dims = h.at("dims").get<std::array<int, 3>>();
  v.voxel_pitch_nm = io::vec3_from_json(h.at("voxel_pitch_nm"));
  v.origin_um = io::vec3_from_json(h.at("origin_um"));
  v.dwell_s = h.at("dwell_s").get<double>();
  v.seed = h.at("seed").get<std::uint64_t>();
  v.clipped_emitters = h.at("clipped_emitters").get<std::size_t>();
  const std::string bytes = io::read_text(bin);
  const std::size_t n = static_cast<std::size_t>(v.dims[0]) * v.dims[1] * v.dims[2];
  if (bytes.size() != 8 * n) throw std::runtime_error("read_volume: size mismatch in " + bin.string());
  v.counts.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t word = 0;
    for (int b = 0; b < 8; ++b)
      word |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 * i + b])) << (8 * b);
    v.counts[i] = std::bit_cast<double>(word);
  }
  return v;
}

void to_json(nlohmann::json& j, const PsfModel& p) {
  j = {{"sigma_xy_nm", p.sigma_xy_nm},
       {"sigma_z_nm", p.sigma_z_nm},
       {"peak_rate_hz", p.peak_rate_hz},
       {"background_rate_hz", p.background_rate_hz}};
}

void from_json(const nlohmann::json& j, PsfModel& p) {
  PsfModel d;
  d.sigma_xy_nm = j.value("sigma_xy_nm", d.sigma_xy_nm);
  d.sigma_z_nm = j.value("sigma_z_nm", d.sigma_z_nm);
  d.peak_rate_hz = j.value("peak_rate_hz", d.peak_rate_hz);
  d.background_rate_hz = j.value("background_rate_hz", d.background_rate_hz);
  p = d;
}

}  // namespace nvarray
