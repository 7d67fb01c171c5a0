#pragma once

#include <span>
#include <vector>

namespace nvarray::stats {

/// Upper tail P(X > x) of the chi-square distribution with `dof` degrees of
/// freedom.
double chi2_sf(double x, double dof);

double mean(std::span<const double> v);
/// Sample standard deviation (n - 1 denominator).
double stddev(std::span<const double> v);

/// Kolmogorov-Smirnov statistic of a sample against Uniform(0, 1).
double ks_uniform_statistic(std::vector<double> sample);
/// Asymptotic p-value for a one-sample KS statistic.
double ks_p_value(double statistic, std::size_t n);

/// Ordinary least-squares slope of y against x.
double ols_slope(std::span<const double> x, std::span<const double> y);

/// Pearson chi-square test of independence on an r x c contingency table
/// (row-major). Rows or columns that are entirely zero are dropped.
struct ContingencyTest {
  double chi2 = 0.0;
  int dof = 0;
  double p_value = 1.0;
};
ContingencyTest chi2_independence(std::span<const double> table, int rows, int cols);

}  // namespace nvarray::stats
