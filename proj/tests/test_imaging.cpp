#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "nvarray/imaging.hpp"
#include "nvarray/stats.hpp"
#include "support.hpp"

using namespace nvarray;

namespace {

const Vec3 kCentre(10.0, 20.0, 12.0);  // um

VolumeSpec noiseless(std::array<int, 3> dims = {21, 21, 31}, const Vec3& centre = kCentre) {
  auto s = VolumeSpec::centred(centre, Vec3(50, 50, 150), dims, 1e-3);
  s.poisson_noise = false;
  return s;
}

// Separable sum of the unit Gaussian over voxel centres along one axis.
double axis_sum(double origin_nm, double pitch, int n, double e_nm, double sigma) {
  double s = 0;
  for (int i = 0; i < n; ++i) s += std::exp(-0.5 * std::pow((origin_nm + i * pitch - e_nm) / sigma, 2));
  return s;
}

}  // namespace

TEST_CASE("an empty, background-free scan is all zeros") {
  PsfModel psf;
  psf.background_rate_hz = 0;
  Rng rng(1);
  const auto v = render_scan({}, psf, VolumeSpec::centred(kCentre, Vec3(50, 50, 150), {9, 9, 9}, 1e-3), rng);
  CHECK(v.size() == 729);
  CHECK(std::all_of(v.counts.begin(), v.counts.end(), [](double c) { return c == 0.0; }));
  CHECK(support::mentions(support::thrown_message([&] { localize(v, 1000.0 * kCentre); }), "no counts"));
}

TEST_CASE("the brightest voxel sits on the emitter") {
  const std::vector<Vec3> em = {kCentre + Vec3(0.1, -0.05, 0.3)};
  Rng rng(1);
  const auto v = render_scan(em, PsfModel{}, noiseless(), rng);
  const auto it = std::max_element(v.counts.begin(), v.counts.end());
  const auto idx = static_cast<std::size_t>(it - v.counts.begin());
  const int ix = static_cast<int>(idx % 21), iy = static_cast<int>((idx / 21) % 21), iz = static_cast<int>(idx / (21 * 21));
  CHECK(v.voxel_centre_nm(ix, iy, iz).isApprox(1000.0 * em[0], 1e-9));
  CHECK(*it == doctest::Approx(1e-3 * (1e5 + 5e2)));
  CHECK(v.clipped_emitters == 0);

  const std::vector<Vec3> outside = {kCentre + Vec3(5, 0, 0)};
  CHECK(render_scan(outside, PsfModel{}, noiseless(), rng).clipped_emitters == 1);
}

TEST_CASE("expected counts are conserved") {
  const PsfModel psf;
  const auto spec = noiseless();
  const std::vector<Vec3> em = {kCentre + Vec3(0.012, 0.031, -0.07), kCentre + Vec3(-0.2, 0.1, 0.5)};
  const Vec3 o = 1000.0 * spec.origin_um;
  double signal = 0;
  for (const auto& e : em) {
    const Vec3 en = 1000.0 * e;
    signal += axis_sum(o.x(), 50, 21, en.x(), psf.sigma_xy_nm) * axis_sum(o.y(), 50, 21, en.y(), psf.sigma_xy_nm) *
              axis_sum(o.z(), 150, 31, en.z(), psf.sigma_z_nm);
  }
  const double oracle = spec.dwell_s * (psf.peak_rate_hz * signal + psf.background_rate_hz * 21 * 21 * 31);
  CHECK(expected_total(em, psf, spec) == doctest::Approx(oracle).epsilon(1e-12));

  auto noisy = spec;
  noisy.poisson_noise = true;
  Rng rng(3);
  const auto v = render_scan(em, psf, noisy, rng);
  double total = 0;
  for (double c : v.counts) {
    CHECK(c == std::floor(c));
    total += c;
  }
  CHECK(std::abs(total - oracle) < 4.0 * std::sqrt(oracle));
}

TEST_CASE("noiseless localization is exact") {
  for (const Vec3& off : {Vec3(0, 0, 0), Vec3(0.023, -0.017, 0.061), Vec3(-0.04, 0.031, -0.12)}) {
    const std::vector<Vec3> em = {kCentre + off};
    Rng rng(1);
    const auto v = render_scan(em, PsfModel{}, noiseless(), rng);
    const auto loc = localize(v, 1000.0 * kCentre);
    CHECK(loc.converged);
    CHECK((loc.position_nm - 1000.0 * em[0]).norm() < 1.0);
    // Width recovery: fitted FWHMs within 3% of the rendered PSF.
    CHECK(loc.sigma_xy_nm == doctest::Approx(83.0).epsilon(0.03));
    CHECK(loc.sigma_z_nm == doctest::Approx(448.0).epsilon(0.03));
    CHECK(loc.background == doctest::Approx(0.5).epsilon(0.03));
  }
}

TEST_CASE("fitted widths under shot noise") {
  PsfModel psf;
  psf.peak_rate_hz = 2e6;
  auto spec = noiseless();
  spec.poisson_noise = true;
  Rng rng(21);
  std::vector<double> sxy, sz;
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<Vec3> em = {kCentre};
    const auto loc = localize(render_scan(em, psf, spec, rng), 1000.0 * kCentre);
    REQUIRE(loc.converged);
    sxy.push_back(loc.sigma_xy_nm);
    sz.push_back(loc.sigma_z_nm);
  }
  CHECK(stats::mean(sxy) == doctest::Approx(83.0).epsilon(0.03));
  CHECK(stats::mean(sz) == doctest::Approx(448.0).epsilon(0.03));
}

TEST_CASE("localization is translation equivariant") {
  const Vec3 shift(3.21, -1.7, 0.45);
  const std::vector<Vec3> a = {kCentre + Vec3(0.02, 0.01, -0.05)};
  const std::vector<Vec3> b = {a[0] + shift};
  auto sa = noiseless();
  sa.poisson_noise = true;
  auto sb = VolumeSpec::centred(kCentre + shift, Vec3(50, 50, 150), {21, 21, 31}, 1e-3);
  Rng ra(5), rb(5);
  const auto va = render_scan(a, PsfModel{}, sa, ra);
  const auto vb = render_scan(b, PsfModel{}, sb, rb);
  const auto la = localize(va, 1000.0 * kCentre);
  const auto lb = localize(vb, 1000.0 * (kCentre + shift));
  CHECK((lb.position_nm - la.position_nm - 1000.0 * shift).norm() < 1e-6);
}

TEST_CASE("each seed converges to its own emitter") {
  const std::vector<Vec3> em = {kCentre + Vec3(-1.5, 0, 0), kCentre + Vec3(1.5, 0.01, 0.02)};
  Rng rng(1);
  const auto v = render_scan(em, PsfModel{}, noiseless({81, 21, 31}), rng);
  for (const auto& e : em) {
    const auto loc = localize(v, 1000.0 * e + Vec3(60, -40, 200));
    CHECK(loc.converged);
    CHECK((loc.position_nm - 1000.0 * e).norm() < 5.0);
  }
}

TEST_CASE("localize input validation") {
  Rng rng(1);
  const std::vector<Vec3> em = {kCentre};
  const auto v = render_scan(em, PsfModel{}, noiseless(), rng);
  CHECK(support::mentions(support::thrown_message([&] { localize(v, 1000.0 * (kCentre + Vec3(5, 0, 0))); }),
                          "seed outside volume"));
  LocalizeOptions bad;
  bad.roi_sigmas = 0;
  CHECK_THROWS_AS(localize(v, 1000.0 * kCentre, bad), std::invalid_argument);
}

TEST_CASE("shot-noise precision improves with photon count") {
  // Standard deviation of x over repeated scans at two brightness levels; the
  // ratio should follow N^-1/2 (factor sqrt(10) for 10x the photons).
  auto spec = noiseless();
  spec.poisson_noise = true;
  std::array<double, 2> sd{};
  for (int level = 0; level < 2; ++level) {
    PsfModel psf;
    psf.background_rate_hz = 0.1;
    psf.peak_rate_hz = level == 0 ? 1e5 : 1e6;
    Rng rng(100 + level);
    std::vector<double> xs;
    for (int trial = 0; trial < 60; ++trial) {
      const std::vector<Vec3> em = {kCentre};
      const auto loc = localize(render_scan(em, psf, spec, rng), 1000.0 * kCentre);
      xs.push_back(loc.position_nm.x());
    }
    sd[level] = stats::stddev(xs);
  }
  CHECK(sd[0] / sd[1] == doctest::Approx(std::sqrt(10.0)).epsilon(0.35));
}

TEST_CASE("precision report") {
  std::vector<Vec3> targets;
  std::vector<Localization> locs;
  Eigen::Matrix3d a;
  a << 1.001, 0.002, 0, -0.002, 0.999, 0, 0, 0, 1.003;
  const Vec3 b(30, -20, 100);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 5; ++j) {
      targets.emplace_back(3000.0 * i, 3000.0 * j, 6000.0 + 3000.0 * ((i + j) % 3));
      Localization l;
      l.position_nm = targets.back();
      locs.push_back(l);
    }
  const auto same = precision_report(locs, targets);
  CHECK(same.residuals_nm.cwiseAbs().maxCoeff() == 0.0);
  CHECK(same.std_nm.norm() == 0.0);

  for (std::size_t i = 0; i < locs.size(); ++i) locs[i].position_nm = a * targets[i] + b;
  const auto rep = precision_report(locs, targets);
  CHECK(rep.residuals_nm.cwiseAbs().maxCoeff() > 10.0);
  CHECK(rep.registered_residuals_nm.cwiseAbs().maxCoeff() < 1e-6);
  for (const auto& h : rep.histograms) {
    std::int64_t n = 0;
    for (auto c : h.counts) n += c;
    CHECK(n == 30);
    CHECK(h.edges_nm.size() == h.counts.size() + 1);
  }

  std::ostringstream os;
  std::vector<std::size_t> ids(30);
  for (std::size_t i = 0; i < 30; ++i) ids[i] = 100 + i;
  write_residuals_csv(os, rep, ids);
  CHECK(support::mentions(os.str(), "site_id,dx_nm,dy_nm,dz_nm,dx_reg_nm,dy_reg_nm,dz_reg_nm\n100,"));
  CHECK_THROWS_AS(write_residuals_csv(os, rep, std::span(ids).first(3)), std::invalid_argument);

  targets.pop_back();
  CHECK(support::mentions(support::thrown_message([&] { precision_report(locs, targets); }), "differ in length"));
}

TEST_CASE("volume file round trip") {
  Rng rng(9);
  const std::vector<Vec3> em = {kCentre};
  auto v = render_scan(em, PsfModel{}, VolumeSpec::centred(kCentre, Vec3(50, 50, 150), {7, 5, 3}, 2e-3), rng);
  v.seed = 1234567890123ULL;
  v.counts[3] = 0.1;  // a value that needs all 64 bits
  const auto dir = std::filesystem::temp_directory_path() / "nvarray_volume_test";
  std::filesystem::create_directories(dir);
  write_volume(dir / "vol", v);
  CHECK(std::filesystem::file_size(dir / "vol.bin") == 8 * 105);
  const auto back = read_volume(dir / "vol");
  CHECK(back.counts == v.counts);
  CHECK(back.dims == v.dims);
  CHECK(back.origin_um == v.origin_um);
  CHECK(back.seed == v.seed);
  CHECK(back.dwell_s == v.dwell_s);
  std::filesystem::remove_all(dir);
}
