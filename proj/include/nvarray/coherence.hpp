#pragma once

// Electron-spin coherence under Ornstein-Uhlenbeck dephasing noise: filter
// functions of Ramsey, Hahn echo, CPMG and XY8 sequences, synthetic decay
// curves, stretched-exponential and T1 fits, and a T2 survey.

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "nvarray/fit.hpp"
#include "nvarray/rng.hpp"

namespace nvarray {

enum class SequenceKind { Ramsey, HahnEcho, CPMG, XY8 };

struct PulseSequence {
  SequenceKind kind = SequenceKind::HahnEcho;
  int n = 1;  // CPMG pulses or XY8 blocks; ignored otherwise

  static PulseSequence ramsey() { return {SequenceKind::Ramsey, 1}; }
  static PulseSequence hahn_echo() { return {SequenceKind::HahnEcho, 1}; }
  static PulseSequence cpmg(int n) { return {SequenceKind::CPMG, n}; }
  static PulseSequence xy8(int n) { return {SequenceKind::XY8, n}; }
  /// Parses "ramsey", "hahn", "cpmg-N" or "xy8-N".
  static PulseSequence parse(const std::string& text);

  int pulse_count() const;
  /// Pulse times as fractions of the total evolution time: (j - 1/2) / N.
  std::vector<double> pulse_fractions() const;
  std::string name() const;
  void validate() const;
};

/// Dephasing noise: OU process with rms b (rad/s) and correlation time tau_c,
/// plus longitudinal relaxation T1.
struct NoiseModel {
  double b_rad_s = 0.0;
  double tau_c_s = 1e-3;
  double t1_s = 3e-3;
  void validate() const;
};

/// Filter function F(omega t) of the sequence, with u = omega * t.
double filter_function(const PulseSequence& seq, double u);

/// chi(t) = (1/pi) int_0^inf S(w) F(w t) / w^2 dw with the OU spectrum
/// S(w) = 2 b^2 tau_c / (1 + w^2 tau_c^2). Throws naming the sequence and t
/// if the quadrature does not converge.
double chi(const PulseSequence& seq, double t_s, const NoiseModel& noise,
           double rel_tol = 1e-8);

/// Closed forms for the same spectrum, x = t / tau_c.
double chi_ramsey_exact(double t_s, const NoiseModel& noise);
double chi_hahn_exact(double t_s, const NoiseModel& noise);

/// W(t) = exp(-chi(t)) exp(-t / T1).
double coherence_signal(const PulseSequence& seq, double t_s, const NoiseModel& noise);

/// Time at which W(t) falls to 1/e.
double decay_time(const PulseSequence& seq, const NoiseModel& noise);

/// Local stretch exponent d ln(-ln W) / d ln t at time t.
double local_stretch(const PulseSequence& seq, double t_s, const NoiseModel& noise);

/// Hahn-echo bath: tau_c and b such that the echo decays to 1/e at t_e with
/// local stretch n there, given T1. Solved on the closed form.
NoiseModel calibrate_bath(double t_e_s = 690e-6, double stretch = 2.0, double t1_s = 3e-3);

struct DecayCurve {
  std::vector<double> times_s;
  std::vector<double> signal;
  std::vector<double> sigma;
  void validate() const;
};

/// Binomial readout: per point k ~ Binomial(shots, (1 + W) / 2), signal
/// 2k / shots - 1 and sigma from the shrunk estimate (k + 1/2) / (shots + 1).
DecayCurve synth_curve(const std::function<double(double)>& envelope,
                       std::span<const double> times_s, long long shots_per_point, Rng& rng);
DecayCurve synth_decay(const PulseSequence& seq, const NoiseModel& noise,
                       std::span<const double> times_s, long long shots_per_point, Rng& rng);

struct StretchedExpFit {
  double A = 0.0, T2_s = 0.0, n = 0.0;
  double A_err = 0.0, T2_err_s = 0.0, n_err = 0.0;
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();  // (A, T2, n)
  double chi2_reduced = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string message;
};

/// Predictions A exp(-(t / T2)^n) with x = (A, ln T2, ln n), analytic Jacobian.
fit::CurveModel<double> stretched_exp_model(std::span<const double> times_s);
/// Predictions A exp(-t / T1) with x = (A, ln T1), analytic Jacobian.
fit::CurveModel<double> t1_model(std::span<const double> times_s);

/// Weighted fit of A exp(-(t / T2)^n). Starts from A = first signal, T2 at
/// the interpolated A/e crossing and n = 1.5.
StretchedExpFit fit_stretched_exp(const DecayCurve& curve, const fit::Options& opt = {});

struct T1Fit {
  double A = 0.0, T1_s = 0.0;
  double A_err = 0.0, T1_err_s = 0.0;
  double chi2_reduced = 0.0;
  bool converged = false;
  /// No decay resolved: T1 far beyond the sampled times or not constrained.
  bool unbounded = false;
  std::string message;
};

T1Fit fit_t1(const DecayCurve& curve, const fit::Options& opt = {});

struct T2Survey {
  std::vector<double> depths_um;      // distinct layers, ascending
  std::vector<double> edges_s;        // histogram edges; the last bin is open-ended
  std::vector<std::vector<std::int64_t>> counts;  // [layer][bin], size edges.size()
  double threshold_s = 500e-6;
  std::int64_t exceeding = 0;
  std::int64_t total = 0;
  std::int64_t excluded = 0;  // fits that did not converge
  /// Layers x {<= threshold, > threshold} independence test.
  double depth_chi2 = 0.0;
  int depth_dof = 0;
  double depth_p = 1.0;
  std::string tally() const;
};

T2Survey survey(std::span<const StretchedExpFit> fits, std::span<const double> depths_um,
                double threshold_s = 500e-6, std::vector<double> edges_s = {});

/// Columns: t_s, signal, sigma.
void write_curve_csv(std::ostream& os, const DecayCurve& curve);
DecayCurve read_curve_csv(std::istream& is);
/// Columns: depth_um, lo_s, hi_s, count (hi_s blank for the open bin).
void write_survey_csv(std::ostream& os, const T2Survey& survey);

nlohmann::json to_json(const StretchedExpFit& f);
nlohmann::json to_json(const T1Fit& f);
nlohmann::json to_json(const T2Survey& s);
void to_json(nlohmann::json& j, const NoiseModel& n);
void from_json(const nlohmann::json& j, NoiseModel& n);

}  // namespace nvarray
