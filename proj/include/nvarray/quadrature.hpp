#pragma once

// Gauss-Kronrod (7, 15) quadrature, templated on the integrand's value type so
// the same rule integrates real and complex functions.

#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>

namespace nvarray::quad {

namespace detail {

inline constexpr std::array<double, 8> kKronrodNodes = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};

inline constexpr std::array<double, 8> kKronrodWeights = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};

// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5) and the centre.
inline constexpr std::array<double, 4> kGaussWeights = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

inline double magnitude(double v) { return std::abs(v); }
inline double magnitude(const std::complex<double>& v) { return std::abs(v); }

}  // namespace detail

template <typename T>
struct Estimate {
  T value{};
  double error = 0.0;
};

/// One G7K15 panel on [a, b]; the error is |K15 - G7|.
template <typename F>
auto gauss_kronrod(F&& f, double a, double b) {
  using T = decltype(f(a));
  const double centre = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const T fc = f(centre);
  T kronrod = fc * detail::kKronrodWeights[7];
  T gauss = fc * detail::kGaussWeights[3];
  for (int j = 0; j < 7; ++j) {
    const double dx = half * detail::kKronrodNodes[j];
    const T sum = f(centre - dx) + f(centre + dx);
    kronrod += sum * detail::kKronrodWeights[j];
    if (j % 2 == 1) gauss += sum * detail::kGaussWeights[j / 2];
  }
  Estimate<T> out;
  out.value = kronrod * half;
  out.error = detail::magnitude((kronrod - gauss) * half);
  return out;
}

/// Composite G7K15 over `panels` equal panels; no adaptivity, so halving the
/// panel width is a direct convergence check.
template <typename F>
auto composite(F&& f, double a, double b, int panels) {
  using T = decltype(f(a));
  Estimate<T> total;
  const double h = (b - a) / panels;
  for (int i = 0; i < panels; ++i) {
    const double lo = a + i * h;
    const double hi = (i + 1 == panels) ? b : lo + h;
    const auto part = gauss_kronrod(f, lo, hi);
    total.value += part.value;
    total.error += part.error;
  }
  return total;
}

namespace detail {

template <typename F, typename T>
Estimate<T> adaptive_step(F& f, double a, double b, const Estimate<T>& whole,
                          double abs_tol, int depth, bool& ok) {
  // Below the rounding level of the panel value bisection cannot help.
  const bool at_rounding = whole.error <= 50.0 * std::numeric_limits<double>::epsilon() * magnitude(whole.value);
  if (whole.error <= abs_tol || at_rounding || depth <= 0) {
    if (whole.error > abs_tol && !at_rounding) ok = false;
    return whole;
  }
  const double mid = 0.5 * (a + b);
  const auto left = gauss_kronrod(f, a, mid);
  const auto right = gauss_kronrod(f, mid, b);
  const auto l = adaptive_step(f, a, mid, left, 0.5 * abs_tol, depth - 1, ok);
  const auto r = adaptive_step(f, mid, b, right, 0.5 * abs_tol, depth - 1, ok);
  return {l.value + r.value, l.error + r.error};
}

}  // namespace detail

/// Recursive bisection until each panel meets its share of
/// max(abs_tol, rel_tol * |I|). `converged` reports whether the depth limit
/// was hit first.
template <typename F>
auto adaptive(F&& f, double a, double b, double rel_tol, double abs_tol,
              bool* converged = nullptr, int max_depth = 30) {
  const auto whole = gauss_kronrod(f, a, b);
  const double tol = std::max(abs_tol, rel_tol * detail::magnitude(whole.value));
  bool ok = true;
  auto out = detail::adaptive_step(f, a, b, whole, tol, max_depth, ok);
  if (converged) *converged = ok;
  return out;
}

}  // namespace nvarray::quad
