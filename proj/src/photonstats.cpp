#include "nvarray/photonstats.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>

#include "nvarray/fit.hpp"
#include "nvarray/io.hpp"

namespace nvarray {

namespace {

constexpr double kNsPerS = 1e9;

// Appends detected photon times of one emitter on [0, duration). The process
// is started well before t = 0 so the first recorded gap is stationary.
void emitter_photons(const EmitterModel& m, double duration_ns, Rng& rng,
                     std::vector<double>& out) {
  const double eta = m.detection_efficiency();
  if (eta <= 0) return;
  const double a = m.excitation_rate_hz / kNsPerS;
  const double b = 1.0 / m.emission_lifetime_ns;
  const double warmup = 100.0 * (1.0 / a + 1.0 / b);
  std::geometric_distribution<std::int64_t> cycles(eta);
  double t = -warmup;
  while (true) {
    // G cycles of (excitation wait + decay) separate two detections.
    const double g = static_cast<double>(1 + cycles(rng));
    t += std::gamma_distribution<double>(g, 1.0 / a)(rng) +
         std::gamma_distribution<double>(g, 1.0 / b)(rng);
    if (t >= duration_ns) break;
    if (t >= 0) out.push_back(t);
  }
}

void background_photons(double rate_hz, double duration_ns, Rng& rng, std::vector<double>& out) {
  if (rate_hz <= 0) return;
  std::exponential_distribution<double> gap(rate_hz / kNsPerS);
  for (double t = gap(rng); t < duration_ns; t += gap(rng)) out.push_back(t);
}

void apply_dead_time(std::vector<double>& times, double dead_ns) {
  std::sort(times.begin(), times.end());
  std::vector<double> kept;
  kept.reserve(times.size());
  for (double t : times) {
    if (!kept.empty() && (t <= kept.back() || t - kept.back() < dead_ns)) continue;
    kept.push_back(t);
  }
  times = std::move(kept);
}

// Signed bin of delay d: magnitude rounded to whole bin widths.
std::int64_t delay_bin(double d, double width) {
  const double m = std::floor(std::abs(d) / width + 0.5);
  return static_cast<std::int64_t>(d < 0 ? -m : m);
}

// Bin average of exp(-|tau| / tau0) over the bin centred at j * width.
double averaged_dip(int j, double width, double tau0) {
  const double h = width / (2.0 * tau0);
  if (j == 0) return -std::expm1(-h) / h;
  return std::exp(-std::abs(j) * width / tau0) * std::sinh(h) / h;
}

}  // namespace

void EmitterModel::validate() const {
  if (k < 1) throw std::invalid_argument("EmitterModel.k: must be >= 1");
  if (!(excitation_rate_hz > 0))
    throw std::invalid_argument("EmitterModel.excitation_rate_hz: must be > 0");
  if (!(emission_lifetime_ns > 0))
    throw std::invalid_argument("EmitterModel.emission_lifetime_ns: must be > 0");
  if (!(detected_rate_hz >= 0))
    throw std::invalid_argument("EmitterModel.detected_rate_hz: must be >= 0");
  if (detected_rate_hz > emission_rate_hz())
    throw std::invalid_argument("EmitterModel.detected_rate_hz: exceeds the emission rate");
  if (!(background_rate_hz >= 0))
    throw std::invalid_argument("EmitterModel.background_rate_hz: must be >= 0");
  if (!(dead_time_ns >= 0)) throw std::invalid_argument("EmitterModel.dead_time_ns: must be >= 0");
}

double EmitterModel::emission_rate_hz() const {
  const double decay_hz = kNsPerS / emission_lifetime_ns;
  return excitation_rate_hz * decay_hz / (excitation_rate_hz + decay_hz);
}

double EmitterModel::detection_efficiency() const { return detected_rate_hz / emission_rate_hz(); }

double EmitterModel::dip_timescale_ns() const {
  return 1.0 / (excitation_rate_hz / kNsPerS + 1.0 / emission_lifetime_ns);
}

double EmitterModel::signal_fraction() const {
  const double signal = k * detected_rate_hz;
  const double total = signal + background_rate_hz;
  return total > 0 ? signal / total : 0.0;
}

PhotonStream simulate_stream(const EmitterModel& model, double duration_ns, Rng& rng) {
  model.validate();
  if (!(duration_ns > 0)) throw std::invalid_argument("simulate_stream: duration must be > 0");
  std::vector<double> photons;
  for (int e = 0; e < model.k; ++e) emitter_photons(model, duration_ns, rng, photons);
  background_photons(model.background_rate_hz, duration_ns, rng, photons);

  // Photons are routed by a 50/50 beamsplitter in time order so the draw
  // sequence does not depend on how the emitters were interleaved.
  std::sort(photons.begin(), photons.end());
  PhotonStream s;
  s.duration_ns = duration_ns;
  std::bernoulli_distribution split(0.5);
  for (double t : photons) (split(rng) ? s.detector_a : s.detector_b).push_back(t);
  apply_dead_time(s.detector_a, model.dead_time_ns);
  apply_dead_time(s.detector_b, model.dead_time_ns);
  return s;
}

double G2Histogram::error(std::size_t i) const {
  return std::sqrt(static_cast<double>(std::max<std::int64_t>(raw[i], 1))) / normalization;
}

G2Histogram g2_histogram(const PhotonStream& stream, double bin_width_ns, double window_ns,
                         bool symmetrize) {
  if (!(bin_width_ns > 0)) throw std::invalid_argument("g2_histogram: bin width must be > 0");
  if (!(window_ns >= bin_width_ns))
    throw std::invalid_argument("g2_histogram: window must be at least one bin width");
  if (!(stream.duration_ns > 0)) throw std::invalid_argument("g2_histogram: empty stream duration");
  const auto& ta = stream.detector_a;
  const auto& tb = stream.detector_b;
  if (ta.empty() || tb.empty())
    throw std::invalid_argument("g2_histogram: both detectors need at least one photon");

  G2Histogram h;
  h.bin_width_ns = bin_width_ns;
  h.half_bins = static_cast<int>(std::llround(window_ns / bin_width_ns));
  h.raw.assign(2 * static_cast<std::size_t>(h.half_bins) + 1, 0);
  h.duration_ns = stream.duration_ns;
  h.symmetrized = symmetrize;
  h.normalization = static_cast<double>(ta.size()) * static_cast<double>(tb.size()) *
                    bin_width_ns / stream.duration_ns * (symmetrize ? 2.0 : 1.0);

  const double reach = (h.half_bins + 0.5) * bin_width_ns;
  std::size_t lo = 0;
  for (double t : ta) {
    while (lo < tb.size() && tb[lo] < t - reach) ++lo;
    for (std::size_t i = lo; i < tb.size() && tb[i] <= t + reach; ++i) {
      const std::int64_t j = delay_bin(tb[i] - t, bin_width_ns);
      if (std::abs(j) > h.half_bins) continue;
      ++h.raw[static_cast<std::size_t>(j + h.half_bins)];
      if (symmetrize) ++h.raw[static_cast<std::size_t>(-j + h.half_bins)];
    }
  }
  return h;
}

G2Estimate estimate_g2_zero(const G2Histogram& hist, bool dip_model_fit) {
  if (hist.raw.empty() || !(hist.normalization > 0))
    throw std::invalid_argument("estimate_g2_zero: empty histogram");
  const auto c = static_cast<std::size_t>(hist.half_bins);
  const std::size_t first = c > 0 ? c - 1 : c, last = std::min(c + 1, hist.size() - 1);
  std::int64_t central = 0;
  for (std::size_t i = first; i <= last; ++i) central += hist.raw[i];
  const double nbins = static_cast<double>(last - first + 1);

  G2Estimate est;
  est.g2_zero = static_cast<double>(central) / (nbins * hist.normalization);
  est.g2_zero_err = std::sqrt(static_cast<double>(std::max<std::int64_t>(central, 1))) /
                    (nbins * hist.normalization);
  if (!dip_model_fit) return est;

  const Eigen::Index n = static_cast<Eigen::Index>(hist.size());
  if (n < 5) {
    est.fit_failed = true;
    est.message = "too few bins for the dip fit";
    return est;
  }
  const double width = hist.bin_width_ns, norm = hist.normalization;
  const int half = hist.half_bins;

  // Parameters: depth a and ln(tau0). Poisson deviance residuals make this a
  // maximum-likelihood fit, which stays unbiased when the dip bins hold few counts.
  // Below a small floor the mean continues as a C1 exponential instead of a
  // hard clamp, so an empty central bin does not pin the optimum on a kink.
  const double floor = 1e-3 * norm;
  auto expected = [=](const Eigen::VectorXd& x, Eigen::Index i) {
    const double mu = norm * (1.0 - x[0] * averaged_dip(static_cast<int>(i) - half, width,
                                                        std::exp(x[1])));
    return mu >= floor ? mu : floor * std::exp(mu / floor - 1.0);
  };
  fit::Model<double> model;
  model.num_params = 2;
  model.residual = [&hist, expected, n](const Eigen::VectorXd& x) {
    Eigen::VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i)
      r[i] = fit::poisson_deviance_residual(static_cast<double>(hist.raw[i]), expected(x, i));
    return r;
  };

  const double a0 = std::clamp(1.0 - est.g2_zero, 0.05, 1.0);
  double tau0 = 5.0 * width;
  for (int j = 1; j <= half; ++j) {
    const double v = 0.5 * (hist.value(c + j) + hist.value(c - j));
    if (v >= 1.0 - a0 / std::exp(1.0)) {
      tau0 = std::max(j * width, 0.5 * width);
      break;
    }
  }
  Eigen::VectorXd x0(2);
  x0 << a0, std::log(tau0);

  try {
    const auto res = fit::least_squares(model, x0);
    const double err = std::sqrt(res.covariance(0, 0));
    if (!res.converged || !std::isfinite(err) || !(res.params[0] > -1.0)) {
      est.fit_failed = true;
      est.message = res.message.empty() ? "dip fit did not converge" : res.message;
      return est;
    }
    est.g2_zero = 1.0 - res.params[0];
    est.g2_zero_err = err;
    est.dip_timescale_ns = std::exp(res.params[1]);
    est.from_fit = true;
  } catch (const std::exception& e) {
    est.fit_failed = true;
    est.message = e.what();
  }
  return est;
}

double ideal_g2_zero(int k, double signal_fraction) {
  if (k < 1) throw std::invalid_argument("ideal_g2_zero: k must be >= 1");
  if (!(signal_fraction >= 0 && signal_fraction <= 1))
    throw std::invalid_argument("ideal_g2_zero: signal fraction must be in [0, 1]");
  return 1.0 - signal_fraction * signal_fraction / k;
}

double background_corrected_g2(double g2_zero, double signal_fraction) {
  if (!(signal_fraction > 0 && signal_fraction <= 1))
    throw std::invalid_argument("background_corrected_g2: signal fraction must be in (0, 1]");
  const double p2 = signal_fraction * signal_fraction;
  return (g2_zero - (1.0 - p2)) / p2;
}

std::string to_string(Multiplicity m) {
  switch (m) {
    case Multiplicity::Single: return "single";
    case Multiplicity::Double: return "double";
    case Multiplicity::Triple: return "triple";
    case Multiplicity::Unresolved: return "unresolved";
  }
  return "unresolved";
}

MultiplicityClass classify(double g2_zero, double g2_zero_err) {
  if (!std::isfinite(g2_zero) || g2_zero < 0)
    throw std::invalid_argument("classify: g2(0) must be finite and >= 0");
  MultiplicityClass c;
  c.g2_zero = g2_zero;
  c.g2_zero_err = g2_zero_err;
  if (g2_zero < 0.5) c.kind = Multiplicity::Single;
  else if (g2_zero < 0.66) c.kind = Multiplicity::Double;
  else if (g2_zero < 0.75) c.kind = Multiplicity::Triple;
  else c.kind = Multiplicity::Unresolved;
  return c;
}

MultiplicityReport multiplicity_report(std::span<const MultiplicityClass> classes) {
  if (classes.empty()) throw std::invalid_argument("multiplicity_report: no classified sites");
  MultiplicityReport r;
  for (const auto& c : classes) ++r.counts[static_cast<std::size_t>(c.kind)];
  r.total = static_cast<std::int64_t>(classes.size());
  for (std::size_t i = 0; i < r.counts.size(); ++i)
    r.fractions[i] = static_cast<double>(r.counts[i]) / static_cast<double>(r.total);
  return r;
}

void write_g2_csv(std::ostream& os, const G2Histogram& hist) {
  io::csv_row(os, "tau_ns", "g2", "raw", "err");
  for (std::size_t i = 0; i < hist.size(); ++i)
    io::csv_row(os, hist.tau_ns(i), hist.value(i), hist.raw[i], hist.error(i));
}

void write_stream_csv(std::ostream& os, const PhotonStream& stream) {
  io::csv_row(os, "detector", "t_ns");
  for (double t : stream.detector_a) io::csv_row(os, "a", t);
  for (double t : stream.detector_b) io::csv_row(os, "b", t);
}

nlohmann::json to_json(const MultiplicityReport& r) {
  nlohmann::json j{{"total", r.total}};
  for (std::size_t i = 0; i < r.counts.size(); ++i) {
    const auto name = to_string(static_cast<Multiplicity>(i));
    j["counts"][name] = r.counts[i];
    j["fractions"][name] = r.fractions[i];
  }
  return j;
}

void to_json(nlohmann::json& j, const EmitterModel& m) {
  j = {{"k", m.k},
       {"excitation_rate_hz", m.excitation_rate_hz},
       {"emission_lifetime_ns", m.emission_lifetime_ns},
       {"detected_rate_hz", m.detected_rate_hz},
       {"background_rate_hz", m.background_rate_hz},
       {"dead_time_ns", m.dead_time_ns}};
}

void from_json(const nlohmann::json& j, EmitterModel& m) {
  EmitterModel d;
  d.k = j.value("k", d.k);
  d.excitation_rate_hz = j.value("excitation_rate_hz", d.excitation_rate_hz);
  d.emission_lifetime_ns = j.value("emission_lifetime_ns", d.emission_lifetime_ns);
  d.detected_rate_hz = j.value("detected_rate_hz", d.detected_rate_hz);
  d.background_rate_hz = j.value("background_rate_hz", d.background_rate_hz);
  d.dead_time_ns = j.value("dead_time_ns", d.dead_time_ns);
  m = d;
}

}  // namespace nvarray
