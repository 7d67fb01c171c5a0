#pragma once

// Weighted nonlinear least squares (Levenberg-Marquardt with a Gauss-Newton
// trial step), covariance estimation and residual bootstrap.
//
// The engine minimises  sum_i w_i * r_i(x)^2  over x. Everything is templated
// on the scalar type and works on dense Eigen vectors; there is no shared
// state, so independent fits may run concurrently.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nvarray/rng.hpp"

namespace nvarray::fit {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar = double>
struct Model {
  Eigen::Index num_params = 0;
  std::function<VectorX<Scalar>(const VectorX<Scalar>&)> residual;
  /// Jacobian of `residual`; central differences are used when empty.
  std::function<MatrixX<Scalar>(const VectorX<Scalar>&)> jacobian;
  /// Per-residual weights; empty means unit weights.
  VectorX<Scalar> weights;
};

struct Options {
  int max_iterations = 200;
  double gradient_tolerance = 1e-10;
  double step_tolerance = 1e-8;
  /// Relative decrease of the cost below which an accepted step ends the fit.
  double cost_tolerance = 1e-14;
  double initial_damping = 1e-3;
  double damping_increase = 10.0;
  double damping_decrease = 0.3;
  double max_damping = 1e16;
  double fd_relative_step = 1e-6;
  bool try_gauss_newton = true;
};

template <typename Scalar = double>
struct FitOutcome {
  VectorX<Scalar> params;
  MatrixX<Scalar> covariance;
  Scalar cost = 0;  // weighted sum of squares at params
  Scalar chi2_reduced = 0;
  int dof = 0;
  int iterations = 0;
  bool converged = false;
  std::string message;
  /// Cost after every accepted step, starting with the initial cost.
  std::vector<Scalar> cost_history;
};

template <typename Scalar>
std::string format_params(const VectorX<Scalar>& x) {
  std::ostringstream os;
  os.precision(10);
  os << '[';
  for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
  os << ']';
  return os.str();
}

/// Central differences with per-parameter step rel_step * |x_i| (or rel_step
/// when x_i is zero).
template <typename Scalar>
MatrixX<Scalar> numerical_jacobian(const Model<Scalar>& model, const VectorX<Scalar>& x,
                                   double rel_step = 1e-6) {
  const VectorX<Scalar> r0 = model.residual(x);
  MatrixX<Scalar> jac(r0.size(), x.size());
  VectorX<Scalar> xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const Scalar h = static_cast<Scalar>(rel_step) * (x[j] != Scalar(0) ? std::abs(x[j]) : Scalar(1));
    xp[j] = x[j] + h;
    const VectorX<Scalar> rp = model.residual(xp);
    xp[j] = x[j] - h;
    const VectorX<Scalar> rm = model.residual(xp);
    xp[j] = x[j];
    jac.col(j) = (rp - rm) / (Scalar(2) * h);
  }
  return jac;
}

namespace detail {

template <typename Scalar>
Scalar weighted_cost(const Model<Scalar>& model, const VectorX<Scalar>& r) {
  if (model.weights.size() == 0) return r.squaredNorm();
  return (model.weights.array() * r.array().square()).sum();
}

template <typename Scalar>
MatrixX<Scalar> evaluate_jacobian(const Model<Scalar>& model, const VectorX<Scalar>& x,
                                  const Options& opt) {
  return model.jacobian ? model.jacobian(x) : numerical_jacobian(model, x, opt.fd_relative_step);
}

// Normal matrix J^T W J and gradient J^T W r.
template <typename Scalar>
void normal_equations(const Model<Scalar>& model, const MatrixX<Scalar>& jac,
                      const VectorX<Scalar>& r, MatrixX<Scalar>& normal, VectorX<Scalar>& grad) {
  if (model.weights.size() == 0) {
    normal = jac.transpose() * jac;
    grad = jac.transpose() * r;
  } else {
    const MatrixX<Scalar> wj = model.weights.asDiagonal() * jac;
    normal = jac.transpose() * wj;
    grad = wj.transpose() * r;
  }
}

}  // namespace detail

template <typename Scalar>
void finalize_covariance(const Model<Scalar>& model, FitOutcome<Scalar>& out, const Options& opt) {
  const VectorX<Scalar> r = model.residual(out.params);
  const MatrixX<Scalar> jac = detail::evaluate_jacobian(model, out.params, opt);
  MatrixX<Scalar> normal;
  VectorX<Scalar> grad;
  detail::normal_equations(model, jac, r, normal, grad);
  const Eigen::Index p = out.params.size();
  out.dof = static_cast<int>(std::max<Eigen::Index>(r.size() - p, 1));
  out.cost = detail::weighted_cost(model, r);
  out.chi2_reduced = out.cost / static_cast<Scalar>(out.dof);
  Eigen::CompleteOrthogonalDecomposition<MatrixX<Scalar>> cod(normal);
  if (cod.rank() < p) {
    out.covariance = MatrixX<Scalar>::Constant(p, p, std::numeric_limits<Scalar>::infinity());
    out.message += out.message.empty() ? "singular normal matrix at solution"
                                       : "; singular normal matrix at solution";
    return;
  }
  MatrixX<Scalar> inv = cod.pseudoInverse();
  inv = Scalar(0.5) * (inv + inv.transpose());
  out.covariance = out.chi2_reduced * inv;
}

/// Damped Gauss-Newton minimisation. Each iteration first tries the undamped
/// Gauss-Newton step and keeps it if the cost drops; otherwise the Marquardt
/// system (A + lambda diag(A)) dx = -g is solved with lambda raised x10 per
/// rejection and lowered x0.3 per acceptance.
template <typename Scalar>
FitOutcome<Scalar> least_squares(const Model<Scalar>& model, const VectorX<Scalar>& initial,
                                 const Options& opt = {}) {
  FitOutcome<Scalar> out;
  out.params = initial;
  const Eigen::Index p = initial.size();
  if (p != model.num_params && model.num_params != 0) {
    out.message = "initial vector has the wrong dimension";
    return out;
  }
  if (!initial.allFinite()) {
    out.message = "non-finite initial parameters " + format_params(initial);
    return out;
  }

  VectorX<Scalar> x = initial;
  VectorX<Scalar> r = model.residual(x);
  if (!r.allFinite()) {
    out.message = "NaN or infinite residual at parameters " + format_params(x);
    return out;
  }
  Scalar cost = detail::weighted_cost(model, r);
  out.cost_history.push_back(cost);
  const Scalar exact_floor = std::numeric_limits<Scalar>::epsilon() *
                             std::numeric_limits<Scalar>::epsilon() *
                             static_cast<Scalar>(std::max<Eigen::Index>(r.size(), 1));

  Scalar lambda = static_cast<Scalar>(opt.initial_damping);
  MatrixX<Scalar> normal;
  VectorX<Scalar> grad;

  auto try_step = [&](const VectorX<Scalar>& step, VectorX<Scalar>& x_new, VectorX<Scalar>& r_new,
                      Scalar& cost_new) {
    if (!step.allFinite()) return false;
    x_new = x + step;
    r_new = model.residual(x_new);
    if (!r_new.allFinite()) return false;
    cost_new = detail::weighted_cost(model, r_new);
    return cost_new < cost;
  };

  while (true) {
    if (cost <= exact_floor) {
      out.converged = true;
      out.message = "zero residual";
      break;
    }
    const MatrixX<Scalar> jac = detail::evaluate_jacobian(model, x, opt);
    detail::normal_equations(model, jac, r, normal, grad);

    // Cosine between the residual and each Jacobian column.
    Scalar worst_cos = 0;
    const Scalar rnorm = std::sqrt(cost);
    for (Eigen::Index j = 0; j < p; ++j) {
      const Scalar cn = std::sqrt(normal(j, j));
      if (cn > 0) worst_cos = std::max(worst_cos, std::abs(grad[j]) / (cn * rnorm));
    }
    if (worst_cos <= static_cast<Scalar>(opt.gradient_tolerance)) {
      out.converged = true;
      out.message = "gradient tolerance reached";
      break;
    }
    if (out.iterations >= opt.max_iterations) {
      out.message = "maximum iterations reached";
      break;
    }
    ++out.iterations;

    VectorX<Scalar> step, x_new, r_new;
    Scalar cost_new = cost;
    bool accepted = false;
    if (opt.try_gauss_newton) {
      Eigen::LDLT<MatrixX<Scalar>> ldlt(normal);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        step = ldlt.solve(-grad);
        accepted = try_step(step, x_new, r_new, cost_new);
      }
    }
    if (accepted) {
      lambda = std::max(lambda * static_cast<Scalar>(opt.damping_decrease),
                        std::numeric_limits<Scalar>::min());
    }
    const Scalar diag_floor =
        std::max(normal.diagonal().maxCoeff(), Scalar(1)) * std::numeric_limits<Scalar>::epsilon();
    while (!accepted) {
      MatrixX<Scalar> damped = normal;
      for (Eigen::Index j = 0; j < p; ++j)
        damped(j, j) += lambda * std::max(normal(j, j), diag_floor);
      step = damped.ldlt().solve(-grad);
      accepted = try_step(step, x_new, r_new, cost_new);
      if (accepted) {
        lambda = std::max(lambda * static_cast<Scalar>(opt.damping_decrease),
                          std::numeric_limits<Scalar>::min());
      } else {
        lambda *= static_cast<Scalar>(opt.damping_increase);
        if (lambda > static_cast<Scalar>(opt.max_damping)) break;
      }
    }
    if (!accepted) {
      // No descent direction left at this damping: either we are at the
      // minimum to working precision or the normal equations are singular.
      const bool stationary = step.allFinite() &&
          (step.array().abs() / (x.array().abs() + Scalar(opt.step_tolerance))).maxCoeff() <
              static_cast<Scalar>(opt.step_tolerance);
      out.converged = stationary;
      out.message = stationary ? "no further decrease at working precision"
                               : "singular normal equations after maximum damping";
      break;
    }

    const Scalar rel_step =
        (step.array().abs() / (x.array().abs() + static_cast<Scalar>(opt.step_tolerance))).maxCoeff();
    const Scalar rel_decrease = (cost - cost_new) / cost;
    x = x_new;
    r = r_new;
    cost = cost_new;
    out.cost_history.push_back(cost);
    if (rel_step < static_cast<Scalar>(opt.step_tolerance)) {
      out.converged = true;
      out.message = "step tolerance reached";
      break;
    }
    if (rel_decrease < static_cast<Scalar>(opt.cost_tolerance)) {
      out.converged = true;
      out.message = "cost tolerance reached";
      break;
    }
  }

  out.params = x;
  finalize_covariance(model, out, opt);
  return out;
}

/// Signed Poisson deviance residual: its square is the deviance contribution
/// of one observed count against mean mu, so least squares on these residuals
/// is Poisson maximum likelihood.
template <typename Scalar>
Scalar poisson_deviance_residual(Scalar observed, Scalar mu) {
  Scalar d = Scalar(2) * (mu - observed);
  if (observed > 0) d += Scalar(2) * observed * std::log(observed / mu);
  const Scalar r = std::sqrt(std::max(d, Scalar(0)));
  return observed >= mu ? r : -r;
}

/// d(residual)/d(mu) for poisson_deviance_residual.
template <typename Scalar>
Scalar poisson_deviance_derivative(Scalar observed, Scalar mu) {
  const Scalar r = poisson_deviance_residual(observed, mu);
  if (std::abs(r) < Scalar(1e-6)) return -Scalar(1) / std::sqrt(mu);
  return (Scalar(1) - observed / mu) / r;
}

/// Data-fitting view: predictions f(x) compared against observations y with
/// per-point standard deviations.
template <typename Scalar = double>
struct CurveModel {
  Eigen::Index num_params = 0;
  std::function<VectorX<Scalar>(const VectorX<Scalar>&)> predict;
  std::function<MatrixX<Scalar>(const VectorX<Scalar>&)> predict_jacobian;  // optional
};

template <typename Scalar = double>
struct Observations {
  VectorX<Scalar> y;
  VectorX<Scalar> sigma;
};

/// Residual y - f(x) with weights 1 / sigma^2.
template <typename Scalar>
Model<Scalar> curve_problem(const CurveModel<Scalar>& curve, const Observations<Scalar>& data) {
  Model<Scalar> model;
  model.num_params = curve.num_params;
  model.residual = [curve, y = data.y](const VectorX<Scalar>& x) -> VectorX<Scalar> {
    return y - curve.predict(x);
  };
  if (curve.predict_jacobian) {
    model.jacobian = [curve](const VectorX<Scalar>& x) -> MatrixX<Scalar> {
      return -curve.predict_jacobian(x);
    };
  }
  model.weights = data.sigma.array().square().inverse().matrix();
  return model;
}

template <typename Scalar = double>
struct BootstrapResult {
  VectorX<Scalar> stddev;
  int resamples = 0;
  int failures = 0;
  bool flagged = false;  // more than 10% of resample fits failed
};

/// Residual-resampling bootstrap around a converged fit. Standardised
/// residuals are drawn with replacement, inflated by sqrt(m / (m - p)), and
/// added back to the fitted curve; each pseudo-data set is refitted from the
/// original solution.
template <typename Scalar>
BootstrapResult<Scalar> bootstrap_errors(const CurveModel<Scalar>& curve,
                                         const Observations<Scalar>& data,
                                         const FitOutcome<Scalar>& fit, int n_resamples, Rng& rng,
                                         const Options& opt = {}) {
  if (!fit.converged) throw std::invalid_argument("bootstrap_errors: fit did not converge");
  if (n_resamples < 100) throw std::invalid_argument("bootstrap_errors: need at least 100 resamples");
  const Eigen::Index m = data.y.size();
  const Eigen::Index p = fit.params.size();
  const VectorX<Scalar> fitted = curve.predict(fit.params);
  VectorX<Scalar> standardized = (data.y - fitted).cwiseQuotient(data.sigma);
  if (m > p) standardized *= std::sqrt(static_cast<Scalar>(m) / static_cast<Scalar>(m - p));

  std::uniform_int_distribution<Eigen::Index> pick(0, m - 1);
  std::vector<VectorX<Scalar>> samples;
  samples.reserve(n_resamples);
  BootstrapResult<Scalar> out;
  out.resamples = n_resamples;
  for (int b = 0; b < n_resamples; ++b) {
    Observations<Scalar> resampled{fitted, data.sigma};
    for (Eigen::Index i = 0; i < m; ++i) resampled.y[i] += data.sigma[i] * standardized[pick(rng)];
    const auto refit = least_squares(curve_problem(curve, resampled), fit.params, opt);
    if (!refit.converged) {
      ++out.failures;
      continue;
    }
    samples.push_back(refit.params);
  }
  out.flagged = out.failures * 10 > n_resamples;
  out.stddev = VectorX<Scalar>::Zero(p);
  if (samples.size() >= 2) {
    VectorX<Scalar> mu = VectorX<Scalar>::Zero(p);
    for (const auto& s : samples) mu += s;
    mu /= static_cast<Scalar>(samples.size());
    VectorX<Scalar> var = VectorX<Scalar>::Zero(p);
    for (const auto& s : samples) var += (s - mu).cwiseAbs2();
    out.stddev = (var / static_cast<Scalar>(samples.size() - 1)).cwiseSqrt();
  }
  return out;
}

}  // namespace nvarray::fit
