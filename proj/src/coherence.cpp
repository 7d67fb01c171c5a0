#include "nvarray/coherence.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "nvarray/io.hpp"
#include "nvarray/quadrature.hpp"
#include "nvarray/stats.hpp"

namespace nvarray {

namespace {

// sum_{k >= k0} coef(k) x^k for small x, where the closed forms cancel.
template <typename Coef>
double series(double x, int k0, Coef coef) {
  double sum = 0.0, power = std::pow(x, k0), fact = std::tgamma(k0 + 1.0);
  for (int k = k0; k < k0 + 25; ++k) {
    const double term = coef(k) * power / fact;
    sum += term;
    if (std::abs(term) < 1e-18 * std::abs(sum)) break;
    power *= x;
    fact *= k + 1;
  }
  return sum;
}

// e^-x - 1 + x
double ramsey_shape(double x) {
  if (x < 0.1) return series(x, 2, [](int k) { return k % 2 ? -1.0 : 1.0; });
  return std::expm1(-x) + x;
}

// x - 3 + 4 e^(-x/2) - e^-x
double hahn_shape(double x) {
  if (x < 0.5)
    return series(x, 3, [](int k) { return (k % 2 ? -1.0 : 1.0) * (4.0 * std::ldexp(1.0, -k) - 1.0); });
  return x - 3.0 + 4.0 * std::exp(-0.5 * x) - std::exp(-x);
}

// t d(hahn_shape)/dt expressed in x: x (1 - e^(-x/2))^2
double hahn_log_derivative(double x) {
  const double e = std::expm1(-0.5 * x);
  return x * e * e;
}

[[noreturn]] void reject(const std::string& field, const std::string& why) {
  throw std::invalid_argument(field + ": " + why);
}

}  // namespace

PulseSequence PulseSequence::parse(const std::string& text) {
  std::string s;
  for (char c : text) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "ramsey") return ramsey();
  if (s == "hahn" || s == "hahn-echo" || s == "hahnecho" || s == "echo") return hahn_echo();
  auto with_count = [&](const std::string& prefix) -> int {
    const std::string rest = s.substr(prefix.size());
    std::size_t used = 0;
    int n = 0;
    try {
      n = std::stoi(rest, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != rest.size()) reject("sequence", "cannot parse '" + text + "'");
    return n;
  };
  PulseSequence seq;
  if (s.rfind("cpmg-", 0) == 0) seq = cpmg(with_count("cpmg-"));
  else if (s.rfind("xy8-", 0) == 0) seq = xy8(with_count("xy8-"));
  else reject("sequence", "unknown sequence '" + text + "'");
  seq.validate();
  return seq;
}

int PulseSequence::pulse_count() const {
  switch (kind) {
    case SequenceKind::Ramsey: return 0;
    case SequenceKind::HahnEcho: return 1;
    case SequenceKind::CPMG: return n;
    case SequenceKind::XY8: return 8 * n;
  }
  return 0;
}

std::vector<double> PulseSequence::pulse_fractions() const {
  const int count = pulse_count();
  std::vector<double> f(static_cast<std::size_t>(count));
  for (int j = 1; j <= count; ++j) f[static_cast<std::size_t>(j - 1)] = (j - 0.5) / count;
  return f;
}

std::string PulseSequence::name() const {
  switch (kind) {
    case SequenceKind::Ramsey: return "Ramsey";
    case SequenceKind::HahnEcho: return "HahnEcho";
    case SequenceKind::CPMG: return "CPMG(" + std::to_string(n) + ")";
    case SequenceKind::XY8: return "XY8(" + std::to_string(n) + ")";
  }
  return "?";
}

void PulseSequence::validate() const {
  if ((kind == SequenceKind::CPMG || kind == SequenceKind::XY8) && n < 1)
    reject("PulseSequence.n", "must be >= 1 for " + name());
}

void NoiseModel::validate() const {
  if (!(b_rad_s >= 0)) reject("NoiseModel.b_rad_s", "must be >= 0");
  if (!(tau_c_s > 0)) reject("NoiseModel.tau_c_s", "must be > 0");
  if (!(t1_s > 0)) reject("NoiseModel.t1_s", "must be > 0");
}

double filter_function(const PulseSequence& seq, double u) {
  // |1 + (-1)^(N+1) e^(iu) + 2 sum_j (-1)^j e^(iu t_j)|^2 / 2 for pulses at t_j.
  switch (seq.kind) {
    case SequenceKind::Ramsey: {
      const double s = std::sin(0.5 * u);
      return 2.0 * s * s;
    }
    case SequenceKind::HahnEcho: {
      const double s = std::sin(0.25 * u);
      return 8.0 * s * s * s * s;
    }
    default: break;
  }
  const int count = seq.pulse_count();
  const double last = count % 2 ? 1.0 : -1.0;
  if (std::abs(u) < 1.0) {
    // The coefficients a_k and their first moments sum to zero, so the sum
    // equals sum_k a_k (e^(i theta_k) - 1 - i theta_k), which keeps full
    // relative accuracy where F ~ u^4.
    auto excess = [](double th) {
      const double h = std::sin(0.5 * th);
      double im = 0.0;
      if (std::abs(th) < 0.5) {
        double term = -th * th * th / 6.0;
        for (int k = 1; k < 12 && term != 0.0; ++k) {
          im += term;
          term *= -th * th / ((2.0 * k + 2.0) * (2.0 * k + 3.0));
        }
      } else {
        im = std::sin(th) - th;
      }
      return std::complex<double>(-2.0 * h * h, im);
    };
    std::complex<double> sum = last * excess(u);
    double sign = -1.0;
    for (int j = 1; j <= count; ++j) {
      sum += 2.0 * sign * excess(u * (j - 0.5) / count);
      sign = -sign;
    }
    return 0.5 * std::norm(sum);
  }
  std::complex<double> sum = 1.0 + last * std::polar(1.0, u);
  const std::complex<double> step = std::polar(1.0, u / count);
  std::complex<double> phase = std::polar(1.0, 0.5 * u / count);
  double sign = -1.0;
  for (int j = 1; j <= count; ++j) {
    sum += 2.0 * sign * phase;
    phase *= step;
    sign = -sign;
  }
  return 0.5 * std::norm(sum);
}

double chi(const PulseSequence& seq, double t, const NoiseModel& noise, double rel_tol) {
  seq.validate();
  noise.validate();
  if (!(t >= 0)) reject("chi", "t must be >= 0");
  if (t == 0 || noise.b_rad_s == 0) return 0.0;

  // With u = w t the integral becomes
  //   chi = (2 b^2 tau_c t / pi) int_0^inf F(u) / (u^2 (1 + u^2 / r^2)) du,  r = t / tau_c.
  const double r = t / noise.tau_c_s;
  const double prefactor = 2.0 * noise.b_rad_s * noise.b_rad_s * noise.tau_c_s * t / std::numbers::pi;
  auto integrand = [&](double u) {
    if (u == 0) return 0.0;
    return filter_function(seq, u) / (u * u * (1.0 + (u / r) * (u / r)));
  };
  const double count = seq.pulse_count();
  const double f_max = seq.kind == SequenceKind::Ramsey ? 2.0 : 0.5 * (2 * count + 2) * (2 * count + 2);
  // F is a trigonometric polynomial: its period average is half the sum of
  // squared coefficients, and every oscillating term has frequency at least
  // 1 / (2 N) (1 for Ramsey).
  const double f_mean = 1.0 + 2.0 * count;
  const double omega_min = count > 0 ? 0.5 / count : 1.0;
  // int_U^inf du / (u^2 (1 + u^2 / r^2)) = (1 - atan(z) / z) / U with z = r / U.
  auto tail_integral = [r](double u) {
    const double z = r / u;
    if (z < 1e-2) return z * z * (1.0 / 3.0 - z * z / 5.0 + z * z * z * z / 7.0) / u;
    return (1.0 - std::atan(z) / z) / u;
  };

  // Filter functions have frequency content <= 2 in u, so panels of width
  // pi see at most one oscillation; the Lorentzian is resolved adaptively.
  // Beyond the last panel F is replaced by its mean; the oscillating rest is
  // bounded by the second mean value theorem, 2 f_max g(U) / omega_min with g
  // the decreasing weight, or crudely by f_max times the tail integral.
  constexpr double kPanel = std::numbers::pi;
  constexpr long kMaxPanels = 2'000'000;
  double total = 0.0;
  for (long p = 0; p < kMaxPanels; ++p) {
    const double a = p * kPanel, b = a + kPanel;
    bool panel_ok = true;
    const auto part = quad::adaptive(integrand, a, b, 0.1 * rel_tol, 0.01 * rel_tol * total, &panel_ok);
    if (!panel_ok) break;
    total += part.value;
    const double g = 1.0 / (b * b * (1.0 + (b / r) * (b / r)));
    const double mean_tail = f_mean * tail_integral(b);
    const double remainder = f_max * std::min(2.0 * g / omega_min, tail_integral(b));
    if (remainder <= rel_tol * (total + mean_tail)) return prefactor * (total + mean_tail);
  }
  std::ostringstream msg;
  msg << "chi: quadrature did not converge for (" << seq.name() << ", t = " << io::format_number(t)
      << " s)";
  throw std::runtime_error(msg.str());
}

double chi_ramsey_exact(double t, const NoiseModel& noise) {
  const double bt = noise.b_rad_s * noise.tau_c_s;
  return bt * bt * ramsey_shape(t / noise.tau_c_s);
}

double chi_hahn_exact(double t, const NoiseModel& noise) {
  const double bt = noise.b_rad_s * noise.tau_c_s;
  return bt * bt * hahn_shape(t / noise.tau_c_s);
}

double coherence_signal(const PulseSequence& seq, double t, const NoiseModel& noise) {
  return std::exp(-chi(seq, t, noise) - t / noise.t1_s);
}

double decay_time(const PulseSequence& seq, const NoiseModel& noise) {
  noise.validate();
  // chi + t / T1 - 1 is increasing, -1 at 0 and >= 0 at T1.
  auto f = [&](double t) { return chi(seq, t, noise, 1e-9) + t / noise.t1_s - 1.0; };
  double lo = 0.0, hi = noise.t1_s, flo = -1.0, fhi = f(hi);
  if (fhi == 0) return hi;
  int side = 0;
  for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
    // Illinois variant of regula falsi.
    const double t = (lo * fhi - hi * flo) / (fhi - flo);
    const double ft = f(t);
    if (ft == 0) return t;
    if ((ft < 0) == (flo < 0)) {
      lo = t;
      flo = ft;
      if (side == -1) fhi *= 0.5;
      side = -1;
    } else {
      hi = t;
      fhi = ft;
      if (side == 1) flo *= 0.5;
      side = 1;
    }
  }
  return 0.5 * (lo + hi);
}

double local_stretch(const PulseSequence& seq, double t, const NoiseModel& noise) {
  if (!(t > 0)) reject("local_stretch", "t must be > 0");
  const double h = 1e-4;
  auto g = [&](double ln_t) {
    const double tt = std::exp(ln_t);
    return std::log(chi(seq, tt, noise, 1e-10) + tt / noise.t1_s);
  };
  return (g(std::log(t) + h) - g(std::log(t) - h)) / (2.0 * h);
}

NoiseModel calibrate_bath(double t_e, double stretch, double t1) {
  if (!(t_e > 0)) reject("calibrate_bath.t_e_s", "must be > 0");
  if (!(t1 > t_e)) reject("calibrate_bath.t1_s", "must exceed the decay time");
  const double q = t_e / t1;
  // Echo stretch at the 1/e point as a function of x = t_e / tau_c: falls
  // from 3 (slow bath) to 1 (motional narrowing), diluted by the T1 share q.
  auto n_of = [&](double x) { return (1.0 - q) * hahn_log_derivative(x) / hahn_shape(x) + q; };
  double lo = std::log(1e-4), hi = std::log(1e4);
  if (!(stretch < n_of(std::exp(lo)) && stretch > n_of(std::exp(hi))))
    reject("calibrate_bath.stretch", "not reachable for this T1 (must lie in (1, " +
                                         io::format_number(3.0 - 2.0 * q) + "))");
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (n_of(std::exp(mid)) > stretch ? lo : hi) = mid;
  }
  const double x = std::exp(0.5 * (lo + hi));
  NoiseModel m;
  m.t1_s = t1;
  m.tau_c_s = t_e / x;
  m.b_rad_s = std::sqrt((1.0 - q) / hahn_shape(x)) / m.tau_c_s;
  return m;
}

void DecayCurve::validate() const {
  if (times_s.size() != signal.size() || times_s.size() != sigma.size())
    reject("DecayCurve", "times, signal and sigma differ in length");
  for (std::size_t i = 0; i < times_s.size(); ++i) {
    if (!std::isfinite(times_s[i]) || times_s[i] < 0) reject("DecayCurve.times_s", "must be >= 0");
    if (i > 0 && !(times_s[i] > times_s[i - 1]))
      reject("DecayCurve.times_s", "must be strictly increasing");
    if (!std::isfinite(signal[i])) reject("DecayCurve.signal", "must be finite");
    if (!(sigma[i] > 0) || !std::isfinite(sigma[i])) reject("DecayCurve.sigma", "must be > 0");
  }
}

DecayCurve synth_curve(const std::function<double(double)>& envelope,
                       std::span<const double> times, long long shots, Rng& rng) {
  if (shots < 1) reject("synth_decay.shots_per_point", "must be >= 1");
  DecayCurve c;
  const auto n = static_cast<double>(shots);
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < 0 || (i > 0 && !(times[i] > times[i - 1])))
      reject("synth_decay.times", "must be >= 0 and strictly increasing");
    const double p = std::clamp(0.5 * (1.0 + envelope(times[i])), 0.0, 1.0);
    const auto k = static_cast<double>(std::binomial_distribution<long long>(shots, p)(rng));
    const double shrunk = (k + 0.5) / (n + 1.0);
    c.times_s.push_back(times[i]);
    c.signal.push_back(2.0 * k / n - 1.0);
    c.sigma.push_back(2.0 * std::sqrt(shrunk * (1.0 - shrunk) / n));
  }
  return c;
}

DecayCurve synth_decay(const PulseSequence& seq, const NoiseModel& noise,
                       std::span<const double> times, long long shots, Rng& rng) {
  return synth_curve([&](double t) { return coherence_signal(seq, t, noise); }, times, shots, rng);
}

namespace {

void check_fit_input(const DecayCurve& curve, const char* who) {
  curve.validate();
  if (curve.times_s.size() < 5) reject(who, "need at least 5 points");
  if (!(curve.times_s.back() > 0)) reject(who, "need a point with t > 0");
  if (std::all_of(curve.signal.begin(), curve.signal.end(), [](double s) { return s == 0; }))
    reject(who, "signal is identically zero");
}

// First time the signal drops to level, interpolated linearly; 0 if never.
double crossing_time(const DecayCurve& c, double level) {
  for (std::size_t i = 1; i < c.times_s.size(); ++i)
    if (c.signal[i] <= level && c.signal[i - 1] > level) {
      const double f = (c.signal[i - 1] - level) / (c.signal[i - 1] - c.signal[i]);
      return c.times_s[i - 1] + f * (c.times_s[i] - c.times_s[i - 1]);
    }
  return 0.0;
}

fit::Observations<double> observations(const DecayCurve& c) {
  const auto m = static_cast<Eigen::Index>(c.times_s.size());
  return {Eigen::Map<const Eigen::VectorXd>(c.signal.data(), m),
          Eigen::Map<const Eigen::VectorXd>(c.sigma.data(), m)};
}

}  // namespace

fit::CurveModel<double> stretched_exp_model(std::span<const double> times_s) {
  const Eigen::VectorXd t =
      Eigen::Map<const Eigen::VectorXd>(times_s.data(), static_cast<Eigen::Index>(times_s.size()));
  fit::CurveModel<double> model;
  model.num_params = 3;
  model.predict = [t](const Eigen::VectorXd& x) {
    const double t2 = std::exp(x[1]), n = std::exp(x[2]);
    return Eigen::VectorXd(x[0] * (-(t.array() / t2).pow(n)).exp());
  };
  model.predict_jacobian = [t](const Eigen::VectorXd& x) {
    const double t2 = std::exp(x[1]), n = std::exp(x[2]);
    Eigen::MatrixXd jac(t.size(), 3);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double ratio = t[i] / t2;
      const double s = ratio > 0 ? std::pow(ratio, n) : 0.0;
      const double e = std::exp(-s);
      jac(i, 0) = e;
      jac(i, 1) = x[0] * e * n * s;
      jac(i, 2) = ratio > 0 ? -x[0] * e * s * n * std::log(ratio) : 0.0;
    }
    return jac;
  };

  return model;
}

fit::CurveModel<double> t1_model(std::span<const double> times_s) {
  const Eigen::VectorXd t =
      Eigen::Map<const Eigen::VectorXd>(times_s.data(), static_cast<Eigen::Index>(times_s.size()));
  fit::CurveModel<double> model;
  model.num_params = 2;
  model.predict = [t](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(x[0] * (-t.array() / std::exp(x[1])).exp());
  };
  model.predict_jacobian = [t](const Eigen::VectorXd& x) {
    const double t1 = std::exp(x[1]);
    Eigen::MatrixXd jac(t.size(), 2);
    jac.col(0) = (-t.array() / t1).exp();
    jac.col(1) = x[0] * jac.col(0).array() * t.array() / t1;
    return jac;
  };

  return model;
}

StretchedExpFit fit_stretched_exp(const DecayCurve& curve, const fit::Options& opt) {
  check_fit_input(curve, "fit_stretched_exp");

  const auto model = stretched_exp_model(curve.times_s);

  const double a0 = curve.signal.front();
  double t2_0 = crossing_time(curve, a0 / std::exp(1.0));
  if (!(t2_0 > 0)) {
    const double last = curve.signal.back();
    t2_0 = (last > 0 && last < a0) ? curve.times_s.back() / std::sqrt(-std::log(last / a0))
                                   : 10.0 * curve.times_s.back();
  }
  Eigen::VectorXd x0(3);
  x0 << a0, std::log(t2_0), std::log(1.5);

  StretchedExpFit out;
  const auto res = fit::least_squares(fit::curve_problem(model, observations(curve)), x0, opt);
  out.A = res.params[0];
  out.T2_s = std::exp(res.params[1]);
  out.n = std::exp(res.params[2]);
  const Eigen::Vector3d scale(1.0, out.T2_s, out.n);
  out.covariance = scale.asDiagonal() * res.covariance * scale.asDiagonal();
  out.A_err = std::sqrt(out.covariance(0, 0));
  out.T2_err_s = std::sqrt(out.covariance(1, 1));
  out.n_err = std::sqrt(out.covariance(2, 2));
  out.chi2_reduced = res.chi2_reduced;
  out.iterations = res.iterations;
  out.converged = res.converged && out.covariance.allFinite();
  out.message = res.message;
  return out;
}

T1Fit fit_t1(const DecayCurve& curve, const fit::Options& opt) {
  check_fit_input(curve, "fit_t1");

  const auto model = t1_model(curve.times_s);

  const double a0 = curve.signal.front();
  const double t_max = curve.times_s.back();
  double t1_0 = crossing_time(curve, a0 / std::exp(1.0));
  if (!(t1_0 > 0)) {
    const double last = curve.signal.back();
    t1_0 = (last > 0 && last < a0) ? -t_max / std::log(last / a0) : 1e3 * t_max;
  }
  Eigen::VectorXd x0(2);
  x0 << a0, std::log(t1_0);

  T1Fit out;
  const auto res = fit::least_squares(fit::curve_problem(model, observations(curve)), x0, opt);
  out.A = res.params[0];
  out.T1_s = std::exp(res.params[1]);
  out.A_err = std::sqrt(res.covariance(0, 0));
  out.T1_err_s = out.T1_s * std::sqrt(res.covariance(1, 1));
  out.chi2_reduced = res.chi2_reduced;
  out.converged = res.converged;
  out.message = res.message;
  if (!res.converged || !std::isfinite(out.T1_err_s) || out.T1_err_s > out.T1_s ||
      out.T1_s > 100.0 * t_max) {
    out.unbounded = true;
    out.message += out.message.empty() ? "" : "; ";
    out.message += "T1 not constrained by the sampled times";
  }
  return out;
}

std::string T2Survey::tally() const {
  return std::to_string(exceeding) + "/" + std::to_string(total) + " exceed " +
         io::format_number(threshold_s * 1e6) + " \xCE\xBCs";
}

T2Survey survey(std::span<const StretchedExpFit> fits, std::span<const double> depths_um,
                double threshold_s, std::vector<double> edges_s) {
  if (fits.size() != depths_um.size()) reject("survey", "fits and depths differ in length");
  if (!(threshold_s > 0)) reject("survey.threshold_s", "must be > 0");
  if (edges_s.empty())
    for (int k = 0; k <= 20; ++k) edges_s.push_back(k * 100e-6);
  if (!std::is_sorted(edges_s.begin(), edges_s.end()) ||
      std::adjacent_find(edges_s.begin(), edges_s.end()) != edges_s.end())
    reject("survey.edges_s", "must be strictly increasing");

  T2Survey s;
  s.threshold_s = threshold_s;
  s.edges_s = edges_s;
  std::map<double, std::size_t> layer_of;
  for (double d : depths_um) layer_of.emplace(d, 0);
  for (auto& [d, idx] : layer_of) {
    idx = s.depths_um.size();
    s.depths_um.push_back(d);
  }
  s.counts.assign(s.depths_um.size(), std::vector<std::int64_t>(edges_s.size(), 0));
  std::vector<double> split(2 * s.depths_um.size(), 0.0);
  for (std::size_t i = 0; i < fits.size(); ++i) {
    if (!fits[i].converged) {
      ++s.excluded;
      continue;
    }
    const double t2 = fits[i].T2_s;
    const std::size_t layer = layer_of.at(depths_um[i]);
    // Bin k holds [edge_k, edge_{k+1}); the last bin is open-ended.
    const auto it = std::upper_bound(edges_s.begin(), edges_s.end(), t2);
    const std::size_t bin = it == edges_s.begin() ? 0 : static_cast<std::size_t>(it - edges_s.begin()) - 1;
    ++s.counts[layer][bin];
    ++s.total;
    const bool above = t2 > threshold_s;
    if (above) ++s.exceeding;
    split[2 * layer + (above ? 1 : 0)] += 1.0;
  }
  if (s.depths_um.size() > 1 && s.total > 0) {
    const auto test = stats::chi2_independence(split, static_cast<int>(s.depths_um.size()), 2);
    s.depth_chi2 = test.chi2;
    s.depth_dof = test.dof;
    s.depth_p = test.p_value;
  }
  return s;
}

void write_curve_csv(std::ostream& os, const DecayCurve& c) {
  io::csv_row(os, "t_s", "signal", "sigma");
  for (std::size_t i = 0; i < c.times_s.size(); ++i)
    io::csv_row(os, c.times_s[i], c.signal[i], c.sigma[i]);
}

DecayCurve read_curve_csv(std::istream& is) {
  DecayCurve c;
  std::string line;
  if (!std::getline(is, line)) reject("read_curve_csv", "empty input");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string a, b, d;
    if (!std::getline(row, a, ',') || !std::getline(row, b, ',') || !std::getline(row, d))
      reject("read_curve_csv", "malformed row '" + line + "'");
    c.times_s.push_back(std::stod(a));
    c.signal.push_back(std::stod(b));
    c.sigma.push_back(std::stod(d));
  }
  return c;
}

void write_survey_csv(std::ostream& os, const T2Survey& s) {
  io::csv_row(os, "depth_um", "lo_s", "hi_s", "count");
  for (std::size_t l = 0; l < s.depths_um.size(); ++l)
    for (std::size_t k = 0; k < s.edges_s.size(); ++k) {
      const std::string hi = k + 1 < s.edges_s.size() ? io::format_number(s.edges_s[k + 1]) : "";
      io::csv_row(os, s.depths_um[l], s.edges_s[k], hi, s.counts[l][k]);
    }
}

nlohmann::json to_json(const StretchedExpFit& f) {
  return {{"A", f.A},
          {"T2_s", f.T2_s},
          {"n", f.n},
          {"A_err", f.A_err},
          {"T2_err_s", f.T2_err_s},
          {"n_err", f.n_err},
          {"covariance", io::to_json(Eigen::MatrixXd(f.covariance))},
          {"chi2_reduced", f.chi2_reduced},
          {"iterations", f.iterations},
          {"converged", f.converged},
          {"message", f.message}};
}

nlohmann::json to_json(const T1Fit& f) {
  return {{"A", f.A},       {"T1_s", f.T1_s},         {"A_err", f.A_err},
          {"T1_err_s", f.T1_err_s}, {"chi2_reduced", f.chi2_reduced}, {"converged", f.converged},
          {"unbounded", f.unbounded}, {"message", f.message}};
}

nlohmann::json to_json(const T2Survey& s) {
  return {{"threshold_s", s.threshold_s},
          {"exceeding", s.exceeding},
          {"total", s.total},
          {"excluded", s.excluded},
          {"tally", s.tally()},
          {"depths_um", s.depths_um},
          {"edges_s", s.edges_s},
          {"counts", s.counts},
          {"depth_chi2", s.depth_chi2},
          {"depth_dof", s.depth_dof},
          {"depth_p", s.depth_p}};
}

void to_json(nlohmann::json& j, const NoiseModel& n) {
  j = {{"b_rad_s", n.b_rad_s}, {"tau_c_s", n.tau_c_s}, {"t1_s", n.t1_s}};
}

void from_json(const nlohmann::json& j, NoiseModel& n) {
  NoiseModel d;
  d.b_rad_s = j.value("b_rad_s", d.b_rad_s);
  d.tau_c_s = j.value("tau_c_s", d.tau_c_s);
  d.t1_s = j.value("t1_s", d.t1_s);
  n = d;
}

}  // namespace nvarray
