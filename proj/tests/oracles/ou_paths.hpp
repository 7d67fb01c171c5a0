#pragma once

// Monte-Carlo reference for dephasing under Ornstein-Uhlenbeck frequency noise.
// Each path is propagated segment by segment between pi pulses using the exact
// joint Gaussian law of (x(end), integral of x over the segment) given x(start),
// so there is no time-step error; only sampling noise remains.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

struct OuChi {
  double chi = 0.0;
  double std_error = 0.0;  // of chi, from the spread of cos(phase)
};

/// chi = -ln <cos phi> for a sequence whose pi pulses sit at the given
/// fractions of t. b is the rms angular frequency (rad/s), tau the
/// correlation time (s).
inline OuChi ou_chi(const std::vector<double>& pulse_fractions, double t, double b, double tau,
                    int paths, std::uint64_t seed) {
  std::vector<double> edges{0.0};
  for (double f : pulse_fractions) edges.push_back(f * t);
  edges.push_back(t);

  struct Segment {
    double e, a, l11, l21, l22;
  };
  std::vector<Segment> segs;
  for (std::size_t k = 1; k < edges.size(); ++k) {
    const double d = edges[k] - edges[k - 1];
    const double e = std::exp(-d / tau);
    // Conditional covariance of (x_end, I) given x_start.
    const double vxx = b * b * (1 - e * e);
    const double vxi = b * b * tau * (1 - e) * (1 - e);
    const double vii = b * b * tau * tau * (2 * d / tau - 3 + 4 * e - e * e);
    const double l11 = std::sqrt(vxx);
    const double l21 = l11 > 0 ? vxi / l11 : 0.0;
    const double l22 = std::sqrt(std::max(vii - l21 * l21, 0.0));
    segs.push_back({e, tau * (1 - e), l11, l21, l22});
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  double s1 = 0.0, s2 = 0.0;
  for (int p = 0; p < paths; ++p) {
    double x = b * g(rng);
    double phase = 0.0, sign = 1.0;
    for (const auto& s : segs) {
      const double z1 = g(rng), z2 = g(rng);
      const double integral = s.a * x + s.l21 * z1 + s.l22 * z2;
      x = s.e * x + s.l11 * z1;
      phase += sign * integral;
      sign = -sign;
    }
    const double c = std::cos(phase);
    s1 += c;
    s2 += c * c;
  }
  const double mean = s1 / paths;
  const double var = std::max(s2 / paths - mean * mean, 0.0);
  return {-std::log(mean), std::sqrt(var / paths) / mean};
}

}  // namespace oracle
