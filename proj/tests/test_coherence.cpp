#include <chrono>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "nvarray/coherence.hpp"
#include "nvarray/stats.hpp"
#include "oracles/ou_paths.hpp"
#include "support.hpp"

using namespace nvarray;

namespace {

NoiseModel bath(double b, double tau_c, double t1 = 1e6) { return {b, tau_c, t1}; }

// 23 fitted T2 values spread over five layers, 16 of them above 500 us and
// one exactly on the threshold.
struct SurveyFixture {
  std::vector<StretchedExpFit> fits;
  std::vector<double> depths;
};

SurveyFixture survey_fixture() {
  const double t2_us[23] = {312, 640, 455, 980, 720, 500, 1210, 585, 433, 870, 505, 760,
                            690, 1540, 470, 615, 830, 392, 1100, 560, 488, 905, 655};
  SurveyFixture f;
  for (int i = 0; i < 23; ++i) {
    StretchedExpFit fit;
    fit.T2_s = t2_us[i] * 1e-6;
    fit.converged = true;
    f.fits.push_back(fit);
    f.depths.push_back(6.0 + 3.0 * (i % 5));
  }
  return f;
}

std::vector<double> grid(double lo, double hi, int n) {
  std::vector<double> t;
  for (int i = 0; i < n; ++i) t.push_back(lo + (hi - lo) * i / (n - 1));
  return t;
}

}  // namespace

TEST_CASE("sequence parsing and pulse layout") {
  CHECK(PulseSequence::parse("Ramsey").pulse_count() == 0);
  CHECK(PulseSequence::parse("hahn").pulse_count() == 1);
  CHECK(PulseSequence::parse("cpmg-6").pulse_count() == 6);
  const auto xy = PulseSequence::parse("XY8-4");
  CHECK(xy.pulse_count() == 32);
  CHECK(xy.name() == "XY8(4)");
  const auto f = PulseSequence::cpmg(2).pulse_fractions();
  CHECK(f == std::vector<double>{0.25, 0.75});
  CHECK_THROWS_AS(PulseSequence::parse("xy8-"), std::invalid_argument);
  CHECK_THROWS_AS(PulseSequence::parse("cpmg-0"), std::invalid_argument);
  CHECK_THROWS_AS(PulseSequence::parse("spin-lock"), std::invalid_argument);
}

TEST_CASE("filter functions") {
  for (double u : {0.0, 0.3, 2.0, 7.5, 40.0, 333.3}) {
    CHECK(filter_function(PulseSequence::cpmg(1), u) ==
          doctest::Approx(filter_function(PulseSequence::hahn_echo(), u)).epsilon(1e-12).scale(1));
    CHECK(filter_function(PulseSequence::xy8(2), u) ==
          doctest::Approx(filter_function(PulseSequence::cpmg(16), u)).epsilon(1e-12).scale(1));
    CHECK(filter_function(PulseSequence::ramsey(), u) == doctest::Approx(2.0 * std::pow(std::sin(u / 2), 2)));
  }
  // Echo sequences cancel static noise: F ~ u^4 at small u.
  CHECK(filter_function(PulseSequence::hahn_echo(), 1e-3) < 1e-12);
  CHECK(filter_function(PulseSequence::cpmg(4), 1e-3) < 1e-12);
}

TEST_CASE("Ramsey and Hahn quadrature against closed forms") {
  const auto noise = bath(2e4, 1e-4);
  for (double x : {1e-3, 0.05, 0.7, 3.0, 20.0, 400.0}) {
    const double t = x * noise.tau_c_s;
    const double r_exact = chi_ramsey_exact(t, noise);
    const double h_exact = chi_hahn_exact(t, noise);
    CHECK(std::abs(chi(PulseSequence::ramsey(), t, noise) / r_exact - 1.0) < 1e-4);
    CHECK(std::abs(chi(PulseSequence::hahn_echo(), t, noise) / h_exact - 1.0) < 1e-6);
    CHECK(std::abs(chi(PulseSequence::cpmg(1), t, noise) / h_exact - 1.0) < 1e-6);
  }
}

TEST_CASE("closed-form limits") {
  const auto noise = bath(1e4, 1e-3);
  // Slow bath: chi_hahn -> b^2 t^3 / (12 tau_c); quasi-static Ramsey -> (b t)^2 / 2.
  const double t = noise.tau_c_s / 100.0;
  CHECK(chi_hahn_exact(t, noise) ==
        doctest::Approx(noise.b_rad_s * noise.b_rad_s * t * t * t / (12.0 * noise.tau_c_s)).epsilon(0.01));
  CHECK(chi_ramsey_exact(t, noise) == doctest::Approx(0.5 * std::pow(noise.b_rad_s * t, 2)).epsilon(0.01));
  // Motional narrowing: both approach b^2 tau_c t.
  const double t_long = 1e4 * noise.tau_c_s;
  CHECK(chi_ramsey_exact(t_long, noise) == doctest::Approx(1e8 * 1e-3 * t_long).epsilon(1e-3));
  CHECK(chi_hahn_exact(t_long, noise) == doctest::Approx(1e8 * 1e-3 * t_long).epsilon(1e-3));
  // Series and direct branches meet smoothly.
  for (double x : {0.1, 0.5}) {
    const double below = chi_hahn_exact(x * (1 - 1e-9) * noise.tau_c_s, noise);
    const double above = chi_hahn_exact(x * (1 + 1e-9) * noise.tau_c_s, noise);
    CHECK(above / below == doctest::Approx(1.0).epsilon(1e-7));
  }
}

TEST_CASE("filter-function chi against Ornstein-Uhlenbeck trajectories") {
  const double tau_c = 1e-4;
  for (const auto& seq : {PulseSequence::hahn_echo(), PulseSequence::xy8(4)}) {
    for (double x : {0.1, 1.0, 10.0}) {
      const double t = x * tau_c;
      const double unit = chi(seq, t, bath(1.0, tau_c));
      const double b = std::sqrt(0.5 / unit);  // chi = 0.5 at this t
      const auto mc = oracle::ou_chi(seq.pulse_fractions(), t, b, tau_c, 40000, 77);
      const double filter = chi(seq, t, bath(b, tau_c));
      CAPTURE(seq.name());
      CAPTURE(x);
      CHECK(std::abs(filter - mc.chi) < std::max(4.0 * mc.std_error, 0.05 * mc.chi));
    }
  }
}

TEST_CASE("signal envelope") {
  const auto noise = calibrate_bath();
  const auto hahn = PulseSequence::hahn_echo();
  CHECK(coherence_signal(hahn, 0.0, noise) == 1.0);
  double prev = 1.0;
  for (double t = 50e-6; t < 3e-3; t += 50e-6) {
    const double w = coherence_signal(hahn, t, noise);
    CHECK(w < prev);
    CHECK(w > 0.0);
    prev = w;
  }
  NoiseModel quiet = noise;
  quiet.b_rad_s = 0.0;
  CHECK(coherence_signal(hahn, quiet.t1_s, quiet) == doctest::Approx(std::exp(-1.0)));
  CHECK(decay_time(hahn, quiet) == doctest::Approx(quiet.t1_s).epsilon(1e-9));
  // More pulses filter the slow bath better.
  CHECK(coherence_signal(PulseSequence::xy8(4), 1e-3, noise) > coherence_signal(PulseSequence::xy8(1), 1e-3, noise));
  CHECK(coherence_signal(PulseSequence::xy8(1), 1e-3, noise) > coherence_signal(hahn, 1e-3, noise));
}

TEST_CASE("bath calibration reproduces the echo decay") {
  const auto noise = calibrate_bath(690e-6, 2.0, 3e-3);
  CHECK(decay_time(PulseSequence::hahn_echo(), noise) == doctest::Approx(690e-6).epsilon(1e-6));
  CHECK(local_stretch(PulseSequence::hahn_echo(), 690e-6, noise) == doctest::Approx(2.0).epsilon(1e-4));
  CHECK(support::mentions(support::thrown_message([] { calibrate_bath(690e-6, 3.5, 3e-3); }), "calibrate_bath.stretch"));
  CHECK_THROWS_AS(calibrate_bath(690e-6, 2.0, 500e-6), std::invalid_argument);
}

TEST_CASE("CPMG decay time scales as N^(2/3) for a slow bath") {
  const auto noise = bath(1e4, 1.0);
  std::vector<double> ln_n, ln_t;
  for (int n : {1, 2, 4, 8, 16}) {
    ln_n.push_back(std::log(n));
    ln_t.push_back(std::log(decay_time(PulseSequence::cpmg(n), noise)));
  }
  CHECK(stats::ols_slope(ln_n, ln_t) == doctest::Approx(2.0 / 3.0).epsilon(0.02));
}

TEST_CASE("quadrature failure names the sequence and time") {
  const auto msg = support::thrown_message([] { chi(PulseSequence::ramsey(), 1e-3, bath(1e3, 1e-3), 1e-300); });
  CHECK(support::mentions(msg, "Ramsey"));
  CHECK(support::mentions(msg, "t = 0.001"));
}

TEST_CASE("synthetic curves: binomial noise level") {
  const auto t = grid(50e-6, 1.5e-3, 8);
  const auto noise = calibrate_bath();
  const int repeats = 400;
  std::vector<std::vector<double>> signal(t.size());
  std::vector<double> sigma_sum(t.size(), 0.0);
  Rng rng(31);
  for (int r = 0; r < repeats; ++r) {
    const auto c = synth_decay(PulseSequence::hahn_echo(), noise, t, 2000, rng);
    for (std::size_t i = 0; i < t.size(); ++i) {
      signal[i].push_back(c.signal[i]);
      sigma_sum[i] += c.sigma[i];
    }
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(stats::stddev(signal[i]) == doctest::Approx(sigma_sum[i] / repeats).epsilon(0.1));
    CHECK(stats::mean(signal[i]) == doctest::Approx(coherence_signal(PulseSequence::hahn_echo(), t[i], noise)).epsilon(0.02));
  }
  Rng flat(1);
  const auto one = synth_curve([](double) { return 1.0; }, t, 100, flat);
  for (double s : one.signal) CHECK(s == 1.0);
  for (double s : one.sigma) CHECK(s > 0.0);
}

TEST_CASE("stretched-exponential fit round trip") {
  const auto t = grid(20e-6, 2e-3, 25);
  const auto model = stretched_exp_model(t);
  for (const auto& [t2, n] : {std::pair{690e-6, 2.0}, {710e-6, 2.4}, {2.4e-3, 1.1}}) {
    const Eigen::VectorXd x{{0.97, std::log(t2), std::log(n)}};
    const Eigen::VectorXd y = model.predict(x);
    DecayCurve c{t, {y.data(), y.data() + y.size()}, std::vector<double>(t.size(), 0.01)};
    const auto f = fit_stretched_exp(c);
    CHECK(f.converged);
    CHECK(f.T2_s == doctest::Approx(t2).epsilon(1e-6));
    CHECK(f.n == doctest::Approx(n).epsilon(1e-6));
    CHECK(f.A == doctest::Approx(0.97).epsilon(1e-6));
  }
}

TEST_CASE("fit input validation") {
  DecayCurve tiny{{0, 1e-4, 2e-4}, {1, 0.9, 0.8}, {0.01, 0.01, 0.01}};
  CHECK(support::mentions(support::thrown_message([&] { fit_stretched_exp(tiny); }), "at least 5 points"));
  DecayCurve zero{grid(0, 1e-3, 6), std::vector<double>(6, 0.0), std::vector<double>(6, 0.01)};
  CHECK(support::mentions(support::thrown_message([&] { fit_stretched_exp(zero); }), "identically zero"));
  DecayCurve bad_sigma = zero;
  bad_sigma.signal[0] = 1;
  bad_sigma.sigma[2] = 0;
  CHECK(support::mentions(support::thrown_message([&] { fit_t1(bad_sigma); }), "DecayCurve.sigma"));
}

TEST_CASE("T1 fit and the unbounded diagnostic") {
  const auto t = grid(0.1e-3, 12e-3, 25);
  const auto model = t1_model(t);
  const Eigen::VectorXd y = model.predict(Eigen::VectorXd{{0.99, std::log(3e-3)}});
  const auto f = fit_t1({t, {y.data(), y.data() + y.size()}, std::vector<double>(t.size(), 0.005)});
  CHECK(f.converged);
  CHECK_FALSE(f.unbounded);
  CHECK(f.T1_s == doctest::Approx(3e-3).epsilon(1e-6));

  Rng rng(4);
  const auto flat = synth_curve([](double) { return 0.98; }, t, 20000, rng);
  const auto g = fit_t1(flat);
  CHECK(g.unbounded);
  CHECK(support::mentions(g.message, "not constrained"));
}

TEST_CASE("T2 survey tally and histogram") {
  const auto fx = survey_fixture();
  const auto s = survey(fx.fits, fx.depths);
  CHECK(s.tally() == "16/23 exceed 500 μs");
  CHECK(s.exceeding == 16);
  CHECK(s.total == 23);
  CHECK(s.depths_um == std::vector<double>{6, 9, 12, 15, 18});
  std::int64_t n = 0;
  for (const auto& layer : s.counts) {
    CHECK(layer.size() == s.edges_s.size());
    for (auto c : layer) n += c;
  }
  CHECK(n == 23);
  // 1540 us lands in the open last bin (>= 2 ms is the last edge).
  CHECK(s.edges_s.back() == doctest::Approx(2e-3));

  auto with_failure = fx.fits;
  with_failure[1].converged = false;
  const auto s2 = survey(with_failure, fx.depths);
  CHECK(s2.excluded == 1);
  CHECK(s2.tally() == "15/22 exceed 500 μs");
  CHECK_THROWS_AS(survey(fx.fits, std::vector<double>(3, 6.0)), std::invalid_argument);
}

TEST_CASE("depth homogeneity test") {
  // Every layer has the same above/below split: no evidence of depth dependence.
  std::vector<StretchedExpFit> fits;
  std::vector<double> depths;
  for (int layer = 0; layer < 4; ++layer)
    for (int i = 0; i < 10; ++i) {
      StretchedExpFit f;
      f.converged = true;
      f.T2_s = i < 6 ? 800e-6 : 300e-6;
      fits.push_back(f);
      depths.push_back(5.0 * (layer + 1));
    }
  const auto s = survey(fits, depths);
  CHECK(s.depth_p == doctest::Approx(1.0));
  CHECK(s.depth_dof == 3);
  // Deep layers all short, shallow all long: strongly depth dependent.
  for (std::size_t i = 0; i < fits.size(); ++i) fits[i].T2_s = depths[i] > 10 ? 300e-6 : 800e-6;
  CHECK(survey(fits, depths).depth_p < 1e-6);
}

TEST_CASE("curve CSV round trip") {
  Rng rng(2);
  const auto c = synth_decay(PulseSequence::hahn_echo(), calibrate_bath(), grid(20e-6, 2e-3, 10), 1000, rng);
  std::stringstream ss;
  write_curve_csv(ss, c);
  const auto back = read_curve_csv(ss);
  CHECK(back.times_s == c.times_s);
  CHECK(back.signal == c.signal);
  CHECK(back.sigma == c.sigma);
}
