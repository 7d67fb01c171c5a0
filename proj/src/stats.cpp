#include "nvarray/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <unsupported/Eigen/SpecialFunctions>

namespace nvarray::stats {

double chi2_sf(double x, double dof) {
  if (dof <= 0) throw std::invalid_argument("chi2_sf: dof must be positive");
  if (x <= 0) return 1.0;
  return Eigen::numext::igammac(0.5 * dof, 0.5 * x);
}

double mean(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("mean: empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.size() < 2) throw std::invalid_argument("stddev: need at least two values");
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double ks_uniform_statistic(std::vector<double> sample) {
  if (sample.empty()) throw std::invalid_argument("ks_uniform_statistic: empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double u = std::clamp(sample[i], 0.0, 1.0);
    d = std::max({d, (i + 1) / n - u, u - i / n});
  }
  return d;
}

double ks_p_value(double statistic, std::size_t n) {
  // Stephens' small-sample correction to the Kolmogorov distribution.
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * statistic;
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = 2.0 * ((j % 2) ? 1.0 : -1.0) * std::exp(-2.0 * j * j * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-12) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

double ols_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("ols_slope: need two aligned samples of size >= 2");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

ContingencyTest chi2_independence(std::span<const double> table, int rows, int cols) {
  if (static_cast<int>(table.size()) != rows * cols)
    throw std::invalid_argument("chi2_independence: table size does not match shape");
  std::vector<double> row_sum(rows, 0.0), col_sum(cols, 0.0);
  double total = 0.0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      row_sum[r] += table[r * cols + c];
      col_sum[c] += table[r * cols + c];
      total += table[r * cols + c];
    }
  const int live_rows = static_cast<int>(std::count_if(row_sum.begin(), row_sum.end(),
                                                       [](double s) { return s > 0; }));
  const int live_cols = static_cast<int>(std::count_if(col_sum.begin(), col_sum.end(),
                                                       [](double s) { return s > 0; }));
  ContingencyTest out;
  if (live_rows < 2 || live_cols < 2) return out;
  for (int r = 0; r < rows; ++r) {
    if (row_sum[r] <= 0) continue;
    for (int c = 0; c < cols; ++c) {
      if (col_sum[c] <= 0) continue;
      const double expected = row_sum[r] * col_sum[c] / total;
      const double diff = table[r * cols + c] - expected;
      out.chi2 += diff * diff / expected;
    }
  }
  out.dof = (live_rows - 1) * (live_cols - 1);
  out.p_value = chi2_sf(out.chi2, out.dof);
  return out;
}

}  // namespace nvarray::stats
