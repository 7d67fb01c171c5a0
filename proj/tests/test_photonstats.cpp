#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "nvarray/photonstats.hpp"
#include "support.hpp"

using namespace nvarray;

namespace {

EmitterModel background_free(int k) {
  EmitterModel m;
  m.k = k;
  m.background_rate_hz = 0.0;
  return m;
}

}  // namespace

TEST_CASE("emitter model rates") {
  const EmitterModel m;
  // 1 / (1/a + tau): 4e7 Hz excitation, 12 ns lifetime.
  CHECK(m.emission_rate_hz() == doctest::Approx(1.0 / (25e-9 + 12e-9)));
  CHECK(m.dip_timescale_ns() == doctest::Approx(1.0 / (0.04 + 1.0 / 12.0)));
  CHECK(m.signal_fraction() == doctest::Approx(1e5 / 1.05e5));
  CHECK(m.detection_efficiency() == doctest::Approx(1e5 * 37e-9));

  EmitterModel bad = m;
  bad.k = 0;
  CHECK(support::mentions(support::thrown_message([&] { bad.validate(); }), "EmitterModel.k"));
  bad = m;
  bad.detected_rate_hz = 1e9;
  CHECK(support::mentions(support::thrown_message([&] { bad.validate(); }), "detected_rate_hz"));
  bad = m;
  bad.dead_time_ns = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("streams are sorted, rate-correct and reproducible") {
  EmitterModel m;
  m.k = 2;
  const double duration = 2e9;
  Rng rng(4);
  const auto s = simulate_stream(m, duration, rng);
  CHECK(std::is_sorted(s.detector_a.begin(), s.detector_a.end()));
  CHECK(std::adjacent_find(s.detector_b.begin(), s.detector_b.end()) == s.detector_b.end());
  const double n = static_cast<double>(s.detector_a.size() + s.detector_b.size());
  const double expected = (m.k * m.detected_rate_hz + m.background_rate_hz) * duration * 1e-9;
  // Antibunched light is sub-Poissonian, so sqrt(N) is a generous bound.
  CHECK(std::abs(n - expected) < 4.0 * std::sqrt(expected));
  CHECK(std::abs(static_cast<double>(s.detector_a.size()) - n / 2) < 4.0 * std::sqrt(n / 4));
  for (double t : s.detector_b) CHECK((t >= 0 && t < duration));

  Rng again(4);
  const auto s2 = simulate_stream(m, duration, again);
  CHECK(s2.detector_a == s.detector_a);
  CHECK(s2.detector_b == s.detector_b);
}

TEST_CASE("dead time removes close pairs on each detector") {
  EmitterModel m;
  m.detected_rate_hz = 2e6;
  m.dead_time_ns = 50.0;
  Rng rng(8);
  const auto s = simulate_stream(m, 5e8, rng);
  for (const auto* d : {&s.detector_a, &s.detector_b})
    for (std::size_t i = 1; i < d->size(); ++i) CHECK((*d)[i] - (*d)[i - 1] >= 50.0);
}

TEST_CASE("histogram bins are symmetric in the delay") {
  PhotonStream s;
  s.duration_ns = 1000.0;
  s.detector_a = {100.0, 500.0};
  s.detector_b = {100.5, 499.5, 503.2, 600.0};
  const auto h = g2_histogram(s, 1.0, 10.0);
  REQUIRE(h.size() == 21);
  CHECK(h.half_bins == 10);
  // +0.5 rounds away from zero to bin +1, -0.5 to bin -1, 3.2 to bin 3.
  CHECK(h.raw[11] == 1);
  CHECK(h.raw[9] == 1);
  CHECK(h.raw[13] == 1);
  CHECK(std::accumulate(h.raw.begin(), h.raw.end(), std::int64_t{0}) == 3);
  CHECK(h.tau_ns(0) == -10.0);
  CHECK(h.normalization == doctest::Approx(2.0 * 4.0 * 1.0 / 1000.0));

  const auto sym = g2_histogram(s, 1.0, 10.0, true);
  for (int j = 0; j <= 10; ++j) CHECK(sym.raw[static_cast<std::size_t>(10 + j)] == sym.raw[static_cast<std::size_t>(10 - j)]);
  CHECK(sym.normalization == doctest::Approx(2.0 * h.normalization));

  CHECK_THROWS_AS(g2_histogram(s, 0.0, 10.0), std::invalid_argument);
  CHECK_THROWS_AS(g2_histogram(s, 2.0, 1.0), std::invalid_argument);
  PhotonStream empty{1000.0, {1.0}, {}};
  CHECK_THROWS_AS(g2_histogram(empty, 1.0, 10.0), std::invalid_argument);
}

TEST_CASE("uncorrelated light gives a flat g2 of one") {
  EmitterModel m;
  m.detected_rate_hz = 0.0;
  m.background_rate_hz = 2e6;
  Rng rng(2);
  const auto s = simulate_stream(m, 2e9, rng);
  const auto h = g2_histogram(s, 1.0, 100.0);
  double sum = 0;
  for (std::size_t i = 0; i < h.size(); ++i) sum += h.value(i);
  CHECK(sum / static_cast<double>(h.size()) == doctest::Approx(1.0).epsilon(0.01));
  const auto est = estimate_g2_zero(h, false);
  CHECK(std::abs(est.g2_zero - 1.0) < 4.0 * est.g2_zero_err);
}

TEST_CASE("single emitter is antibunched") {
  Rng rng(12);
  const auto s = simulate_stream(background_free(1), 10e9, rng);
  const auto h = g2_histogram(s, 1.0, 100.0);
  const auto fit = estimate_g2_zero(h, true);
  CHECK(fit.from_fit);
  CHECK(fit.g2_zero < 0.15);
  CHECK(fit.dip_timescale_ns == doctest::Approx(EmitterModel{}.dip_timescale_ns()).epsilon(0.15));
  // Far from zero delay the emitter is uncorrelated with itself.
  CHECK(h.value(0) == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("ideal and background-corrected g2") {
  CHECK(ideal_g2_zero(1) == 0.0);
  CHECK(ideal_g2_zero(2) == 0.5);
  CHECK(ideal_g2_zero(3) == doctest::Approx(2.0 / 3.0));
  CHECK(ideal_g2_zero(1, 0.8) == doctest::Approx(0.36));
  for (int k = 1; k <= 4; ++k)
    for (double p : {0.5, 0.8, 1.0})
      CHECK(background_corrected_g2(ideal_g2_zero(k, p), p) == doctest::Approx(1.0 - 1.0 / k));
  CHECK_THROWS_AS(ideal_g2_zero(0), std::invalid_argument);
  CHECK_THROWS_AS(background_corrected_g2(0.3, 0.0), std::invalid_argument);
}

TEST_CASE("classification table, including boundaries") {
  CHECK(classify(0.0).kind == Multiplicity::Single);
  CHECK(classify(0.4999).kind == Multiplicity::Single);
  CHECK(classify(0.5).kind == Multiplicity::Double);
  CHECK(classify(0.6599).kind == Multiplicity::Double);
  CHECK(classify(0.66).kind == Multiplicity::Triple);
  CHECK(classify(0.7499).kind == Multiplicity::Triple);
  CHECK(classify(0.75).kind == Multiplicity::Unresolved);
  CHECK(classify(1.2).kind == Multiplicity::Unresolved);
  CHECK(classify(0.3, 0.02).g2_zero_err == 0.02);
  CHECK_THROWS_AS(classify(-0.01), std::invalid_argument);
  CHECK_THROWS_AS(classify(std::nan("")), std::invalid_argument);
  CHECK(to_string(Multiplicity::Triple) == "triple");
}

TEST_CASE("multiplicity report") {
  const std::vector<MultiplicityClass> c = {classify(0.1), classify(0.2), classify(0.55), classify(0.9)};
  const auto r = multiplicity_report(c);
  CHECK(r.total == 4);
  CHECK(r.counts == std::array<std::int64_t, 4>{2, 1, 0, 1});
  CHECK(r.fractions[0] == doctest::Approx(0.5));
  const auto j = to_json(r);
  CHECK(j["counts"]["single"] == 2);
  CHECK(j["fractions"]["unresolved"] == doctest::Approx(0.25));
  CHECK_THROWS_AS(multiplicity_report(std::vector<MultiplicityClass>{}), std::invalid_argument);
}

TEST_CASE("g2 CSV and emitter JSON") {
  PhotonStream s{100.0, {10.0}, {12.0}};
  std::ostringstream os;
  write_g2_csv(os, g2_histogram(s, 1.0, 2.0));
  CHECK(support::mentions(os.str(), "tau_ns,g2,raw,err\n-2,0,0,"));
  std::ostringstream st;
  write_stream_csv(st, s);
  CHECK(st.str() == "detector,t_ns\na,10\nb,12\n");

  EmitterModel m;
  m.k = 3;
  m.dead_time_ns = 20;
  const nlohmann::json j = m;
  const auto back = j.get<EmitterModel>();
  CHECK(back.k == 3);
  CHECK(back.dead_time_ns == 20);
}
