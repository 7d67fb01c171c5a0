#include <cmath>
#include <random>

#include "doctest.h"
#include "nvarray/coherence.hpp"
#include "nvarray/fit.hpp"
#include "nvarray/imaging.hpp"
#include "support.hpp"

using namespace nvarray;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

bool cost_monotone(const fit::FitOutcome<double>& f) {
  for (std::size_t i = 1; i < f.cost_history.size(); ++i)
    if (f.cost_history[i] > f.cost_history[i - 1]) return false;
  return true;
}

double max_rel_diff(const MatrixXd& a, const MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

fit::Model<double> rosenbrock() {
  fit::Model<double> m;
  m.num_params = 2;
  m.residual = [](const VectorXd& x) { return VectorXd{{10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]}}; };
  m.jacobian = [](const VectorXd& x) { return MatrixXd{{-20.0 * x[0], 10.0}, {-1.0, 0.0}}; };
  return m;
}

struct LinearData {
  MatrixXd design;
  VectorXd y, sigma;
};

LinearData linear_data() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  LinearData d;
  const int n = 40;
  d.design.resize(n, 3);
  d.y.resize(n);
  d.sigma.resize(n);
  for (int i = 0; i < n; ++i) {
    const double t = i / 10.0;
    d.design.row(i) << 1.0, t, t * t;
    d.sigma[i] = 0.1 + 0.01 * i;
    d.y[i] = 2.0 - 0.5 * t + 0.3 * t * t + d.sigma[i] * g(rng);
  }
  return d;
}

fit::CurveModel<double> linear_curve(const MatrixXd& design) {
  fit::CurveModel<double> c;
  c.num_params = design.cols();
  c.predict = [design](const VectorXd& x) { return VectorXd(design * x); };
  c.predict_jacobian = [design](const VectorXd&) { return design; };
  return c;
}

}  // namespace

TEST_CASE("linear model is solved exactly in at most two iterations") {
  const auto d = linear_data();
  const fit::Observations<double> obs{d.y, d.sigma};
  const auto res = fit::least_squares(fit::curve_problem(linear_curve(d.design), obs), VectorXd(VectorXd::Zero(3)));
  CHECK(res.converged);
  CHECK(res.iterations <= 2);

  const VectorXd w = d.sigma.array().square().inverse();
  const MatrixXd normal = d.design.transpose() * w.asDiagonal() * d.design;
  const VectorXd exact = normal.ldlt().solve(d.design.transpose() * w.asDiagonal() * d.y);
  CHECK((res.params - exact).norm() < 1e-10 * exact.norm());

  // Covariance: reduced chi-square times the inverse normal matrix.
  const double chi2 = (w.array() * (d.y - d.design * exact).array().square()).sum() / (40 - 3);
  CHECK(res.chi2_reduced == doctest::Approx(chi2).epsilon(1e-8));
  CHECK(max_rel_diff(res.covariance, chi2 * normal.inverse()) < 1e-8);
  CHECK(res.dof == 37);
}

TEST_CASE("cost never increases over accepted steps") {
  SUBCASE("Rosenbrock") {
    const auto res = fit::least_squares(rosenbrock(), VectorXd{{-1.2, 1.0}});
    CHECK(res.converged);
    CHECK(cost_monotone(res));
    CHECK(res.params[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(res.params[1] == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("Rosenbrock with pure Marquardt steps and numerical Jacobian") {
    auto m = rosenbrock();
    m.jacobian = nullptr;
    fit::Options opt;
    opt.try_gauss_newton = false;
    opt.max_iterations = 2000;
    const auto res = fit::least_squares(m, VectorXd{{-1.2, 1.0}}, opt);
    CHECK(res.converged);
    CHECK(cost_monotone(res));
    CHECK(res.params[0] == doctest::Approx(1.0).epsilon(1e-5));
  }
  SUBCASE("stretched exponential from a poor start") {
    std::vector<double> t;
    for (int i = 1; i <= 30; ++i) t.push_back(i * 1e-4);
    const auto curve = stretched_exp_model(t);
    const VectorXd truth{{0.9, std::log(1.2e-3), std::log(2.2)}};
    const fit::Observations<double> obs{curve.predict(truth), VectorXd::Constant(30, 0.01)};
    const auto res = fit::least_squares(fit::curve_problem(curve, obs), VectorXd{{0.5, std::log(3e-4), 0.0}});
    CHECK(res.converged);
    CHECK(cost_monotone(res));
    CHECK((res.params - truth).norm() < 1e-6);
  }
  SUBCASE("Gaussian peak with offset") {
    fit::Model<double> m;
    m.num_params = 4;
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g(0.0, 0.02);
    VectorXd y(60), t(60);
    for (int i = 0; i < 60; ++i) {
      t[i] = -3.0 + 0.1 * i;
      y[i] = 0.2 + 1.5 * std::exp(-0.5 * std::pow((t[i] - 0.4) / 0.7, 2)) + g(rng);
    }
    m.residual = [t, y](const VectorXd& x) {
      return VectorXd(y.array() - x[0] - x[1] * (-0.5 * ((t.array() - x[2]) / x[3]).square()).exp());
    };
    const auto res = fit::least_squares(m, VectorXd{{0.0, 1.0, 0.0, 1.0}});
    CHECK(res.converged);
    CHECK(cost_monotone(res));
    CHECK(res.params[2] == doctest::Approx(0.4).epsilon(0.05));
  }
}

TEST_CASE("analytic Jacobians agree with finite differences") {
  std::vector<double> t;
  for (int i = 0; i < 25; ++i) t.push_back(2e-5 + i * 8e-5);
  const VectorXd sigma = VectorXd::Constant(25, 0.01);

  for (const VectorXd& x : {VectorXd{{0.95, std::log(690e-6), std::log(2.0)}},
                            VectorXd{{1.02, std::log(2.4e-3), std::log(1.1)}},
                            VectorXd{{0.7, std::log(3e-4), std::log(3.0)}}}) {
    const auto model = fit::curve_problem(stretched_exp_model(t), {VectorXd::Zero(25), sigma});
    CHECK(max_rel_diff(model.jacobian(x), fit::numerical_jacobian(model, x)) < 1e-4);
  }
  {
    const auto model = fit::curve_problem(t1_model(t), {VectorXd::Zero(25), sigma});
    const VectorXd x{{0.98, std::log(3e-3)}};
    CHECK(max_rel_diff(model.jacobian(x), fit::numerical_jacobian(model, x)) < 1e-4);
  }
  {
    // PSF model over a small voxel grid with both Gaussian and Poisson voxels.
    std::vector<Vec3> centres;
    std::vector<double> counts;
    std::mt19937_64 rng(1);
    for (int iz = -4; iz <= 4; ++iz)
      for (int iy = -4; iy <= 4; ++iy)
        for (int ix = -4; ix <= 4; ++ix) {
          const Vec3 c(50.0 * ix, 50.0 * iy, 150.0 * iz);
          centres.push_back(c);
          const double mu = 0.5 + 80.0 * std::exp(-0.5 * ((c.head<2>().squaredNorm()) / (83.0 * 83.0) +
                                                          c.z() * c.z() / (448.0 * 448.0)));
          counts.push_back(static_cast<double>(std::poisson_distribution<int>(mu)(rng)));
        }
    const auto model = psf_fit_model(centres, counts, Vec3(10, -5, 20));
    const VectorXd x{{4.0, -3.0, 25.0, std::log(90.0), std::log(430.0), std::log(75.0), std::log(0.6)}};
    const MatrixXd a = model.jacobian(x), n = fit::numerical_jacobian(model, x);
    // Columnwise, as the position and log-scale columns differ in magnitude.
    for (Eigen::Index k = 0; k < 7; ++k) CHECK(max_rel_diff(a.col(k), n.col(k)) < 1e-4);
  }
}

TEST_CASE("Poisson deviance residuals") {
  for (double obs : {0.0, 1.0, 3.0, 40.0})
    for (double mu : {0.2, 1.5, 5.0, 35.0}) {
      const double r = fit::poisson_deviance_residual(obs, mu);
      const double dev = 2.0 * (mu - obs + (obs > 0 ? obs * std::log(obs / mu) : 0.0));
      CHECK(r * r == doctest::Approx(dev));
      CHECK((r >= 0) == (obs >= mu));
      const double h = 1e-6 * mu;
      const double fd = (fit::poisson_deviance_residual(obs, mu + h) - fit::poisson_deviance_residual(obs, mu - h)) / (2 * h);
      CHECK(fit::poisson_deviance_derivative(obs, mu) == doctest::Approx(fd).epsilon(1e-4));
    }
  CHECK(fit::poisson_deviance_residual(4.0, 4.0) == 0.0);
}

TEST_CASE("failures are reported with the parameters") {
  fit::Model<double> m;
  m.num_params = 1;
  m.residual = [](const VectorXd& x) { return VectorXd{{std::sqrt(x[0]) - 1.0, 0.5}}; };
  const auto bad = fit::least_squares(m, VectorXd{{-4.0}});
  CHECK_FALSE(bad.converged);
  CHECK(support::mentions(bad.message, "[-4]"));

  const auto nan_start = fit::least_squares(m, VectorXd{{std::nan("")}});
  CHECK_FALSE(nan_start.converged);
  CHECK(support::mentions(nan_start.message, "non-finite initial parameters"));

  // Trial steps that land in the NaN region are rejected, not accepted.
  const auto res = fit::least_squares(m, VectorXd{{0.01}});
  CHECK(res.converged);
  CHECK(res.params[0] == doctest::Approx(1.0));
  CHECK(cost_monotone(res));
}

TEST_CASE("rank-deficient problems give infinite covariance") {
  fit::Model<double> m;
  m.num_params = 2;
  m.residual = [](const VectorXd& x) { return VectorXd{{x[0] + x[1] - 1.0, 2.0 * (x[0] + x[1]) - 2.5, x[0] + x[1]}}; };
  const auto res = fit::least_squares(m, VectorXd{{0.0, 0.0}});
  CHECK(std::isinf(res.covariance(0, 0)));
  CHECK(support::mentions(res.message, "singular"));
}

TEST_CASE("bootstrap errors match the covariance on a linear problem") {
  const auto d = linear_data();
  const fit::Observations<double> obs{d.y, d.sigma};
  const auto curve = linear_curve(d.design);
  const auto res = fit::least_squares(fit::curve_problem(curve, obs), VectorXd(VectorXd::Zero(3)));
  Rng rng(17);
  const auto boot = fit::bootstrap_errors(curve, obs, res, 2000, rng);
  CHECK_FALSE(boot.flagged);
  CHECK(boot.failures == 0);
  for (int k = 0; k < 3; ++k) {
    // The covariance is scaled by the sample chi2; the bootstrap by the pooled residual spread.
    CHECK(boot.stddev[k] == doctest::Approx(std::sqrt(res.covariance(k, k))).epsilon(0.2));
  }
  CHECK_THROWS_AS(fit::bootstrap_errors(curve, obs, res, 50, rng), std::invalid_argument);
}
