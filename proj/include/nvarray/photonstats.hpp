#pragma once

// Hanbury-Brown Twiss photon statistics: two-detector photon streams from k
// independent emitters plus background, the normalised cross-correlation
// histogram g2(tau), its zero-delay value and the resulting emitter class.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nvarray/rng.hpp"

namespace nvarray {

/// Rates are in Hz, times in ns. Each emitter is a renewal process: an
/// exponential wait for excitation followed by an exponential radiative decay.
struct EmitterModel {
  int k = 1;
  double excitation_rate_hz = 4e7;
  double emission_lifetime_ns = 12.0;
  double detected_rate_hz = 1e5;  // per emitter, after collection and detection
  double background_rate_hz = 5e3;
  double dead_time_ns = 0.0;

  void validate() const;
  /// Photons emitted per second by one emitter.
  double emission_rate_hz() const;
  /// Probability that an emitted photon is detected.
  double detection_efficiency() const;
  /// Antibunching timescale 1 / (excitation rate + decay rate), ns.
  double dip_timescale_ns() const;
  /// Fraction of detected photons that come from the emitters.
  double signal_fraction() const;
};

struct PhotonStream {
  double duration_ns = 0.0;
  std::vector<double> detector_a;  // strictly increasing, ns
  std::vector<double> detector_b;
};

PhotonStream simulate_stream(const EmitterModel& model, double duration_ns, Rng& rng);

/// Coincidence histogram of t_b - t_a. Bin j (j = -half_bins..half_bins)
/// holds delays whose magnitude rounds to |j| bin widths, so bin(-d) is the
/// mirror of bin(d) exactly.
struct G2Histogram {
  double bin_width_ns = 1.0;
  int half_bins = 0;
  std::vector<std::int64_t> raw;  // size 2 * half_bins + 1, index j + half_bins
  double normalization = 1.0;     // expected coincidences per bin for uncorrelated light
  double duration_ns = 0.0;
  bool symmetrized = false;

  std::size_t size() const { return raw.size(); }
  double tau_ns(std::size_t i) const {
    return (static_cast<double>(i) - half_bins) * bin_width_ns;
  }
  double value(std::size_t i) const { return static_cast<double>(raw[i]) / normalization; }
  /// Poisson counting error of value(i).
  double error(std::size_t i) const;
};

/// Histograms all cross-detector pairs within +/-window_ns. With symmetrize
/// every pair is counted at both d and -d.
G2Histogram g2_histogram(const PhotonStream& stream, double bin_width_ns, double window_ns,
                         bool symmetrize = false);

struct G2Estimate {
  double g2_zero = 1.0;
  double g2_zero_err = 0.0;
  bool from_fit = false;
  bool fit_failed = false;  // dip fit requested but fell back to central bins
  double dip_timescale_ns = 0.0;
  std::string message;
};

/// Zero-delay value with no background subtraction: from a bin-averaged fit
/// of 1 - a exp(-|tau| / tau0) when dip_model_fit is set, otherwise the mean
/// of the three central bins.
G2Estimate estimate_g2_zero(const G2Histogram& hist, bool dip_model_fit = true);

/// Ideal g2(0) for k equal emitters whose light is a fraction p of the
/// detected counts: 1 - p^2 / k.
double ideal_g2_zero(int k, double signal_fraction = 1.0);

/// Background-corrected g2(0) given the signal fraction p.
double background_corrected_g2(double g2_zero, double signal_fraction);

enum class Multiplicity { Single, Double, Triple, Unresolved };
std::string to_string(Multiplicity m);

struct MultiplicityClass {
  Multiplicity kind = Multiplicity::Unresolved;
  double g2_zero = 0.0;
  double g2_zero_err = 0.0;
};

/// Single below 0.5, Double in [0.5, 0.66), Triple in [0.66, 0.75),
/// Unresolved from 0.75 up.
MultiplicityClass classify(double g2_zero, double g2_zero_err = 0.0);

struct MultiplicityReport {
  std::array<std::int64_t, 4> counts{};   // Single, Double, Triple, Unresolved
  std::array<double, 4> fractions{};
  std::int64_t total = 0;
};

MultiplicityReport multiplicity_report(std::span<const MultiplicityClass> classes);

/// Columns: tau_ns, g2, raw, err.
void write_g2_csv(std::ostream& os, const G2Histogram& hist);
/// Columns: detector, t_ns.
void write_stream_csv(std::ostream& os, const PhotonStream& stream);

nlohmann::json to_json(const MultiplicityReport& report);
void to_json(nlohmann::json& j, const EmitterModel& m);
void from_json(const nlohmann::json& j, EmitterModel& m);

}  // namespace nvarray
