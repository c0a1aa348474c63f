#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "snowpac/gp.hpp"
#include "snowpac/rng.hpp"

using namespace snowpac;
using namespace snowpac::gp;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

KernelParams unit_params(int dim, double sigma = 1.0, double length = 1.0,
                         bool ard = false) {
  KernelParams p;
  p.sigma = sigma;
  p.lengths = VectorXd::Constant(dim, length);
  p.ard = ard;
  return p;
}

}  // namespace

TEST_CASE("kernel evaluates the stationary square-exponential form") {
  auto p = unit_params(1);
  VectorXd x = VectorXd::Constant(1, 0.3);
  CHECK(kernel(p, x, x) == doctest::Approx(1.0));
  VectorXd y = VectorXd::Constant(1, 1.3);
  CHECK(kernel(p, x, y) == doctest::Approx(std::exp(-0.5)));

  auto wide = unit_params(1, 2.0, 1.0);
  CHECK(kernel(wide, x, x) == doctest::Approx(4.0));

  VectorXd z = VectorXd::Zero(2);
  CHECK_THROWS_AS(kernel(p, x, z), std::invalid_argument);

  KernelParams bad = unit_params(1, -1.0);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("kernel is symmetric and the two forms agree in 1D") {
  RngStream rng(4);
  auto literal = unit_params(3, 1.3, 0.7, false);
  auto per_coord = unit_params(1, 1.3, 0.7, true);
  for (int trial = 0; trial < 100; ++trial) {
    VectorXd x(3), y(3);
    for (int i = 0; i < 3; ++i) {
      x(i) = rng.uniform(-2.0, 2.0);
      y(i) = rng.uniform(-2.0, 2.0);
    }
    CHECK(std::abs(kernel(literal, x, y) - kernel(literal, y, x)) < 1e-15);
    VectorXd x1 = x.head(1), y1 = y.head(1);
    CHECK(kernel(unit_params(1, 1.3, 0.7, false), x1, y1) ==
          doctest::Approx(kernel(per_coord, x1, y1)));
  }
}

TEST_CASE("posterior interpolates noise-free data and reverts to the prior") {
  MatrixXd x(5, 1);
  x << -4.0, -2.0, 0.0, 2.0, 4.0;
  VectorXd y(5);
  for (int i = 0; i < 5; ++i) y(i) = std::sin(x(i, 0));
  GaussianSurrogate surrogate(unit_params(1), x, y, VectorXd::Zero(5), 2.0);

  for (int i = 0; i < 5; ++i) {
    const auto [mean, sd] = surrogate.posterior(x.row(i));
    CHECK(std::abs(mean - y(i)) < 1e-6);
    CHECK(sd <= 1e-6);
  }

  const auto [far_mean, far_sd] = surrogate.posterior(VectorXd::Constant(1, 500.0));
  CHECK(far_mean == doctest::Approx(y.mean()).epsilon(1e-9));
  CHECK(far_sd == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("posterior std never exceeds the prior std at training inputs") {
  RngStream rng(8);
  MatrixXd x(30, 2);
  VectorXd y(30), errs(30);
  for (int i = 0; i < 30; ++i) {
    x(i, 0) = rng.uniform(-1.0, 1.0);
    x(i, 1) = rng.uniform(-1.0, 1.0);
    y(i) = x(i, 0) * x(i, 1) + rng.normal() * 0.1;
    errs(i) = 0.2;
  }
  GaussianSurrogate surrogate(unit_params(2, 0.8, 0.5), x, y, errs, 2.0);
  for (int i = 0; i < 30; ++i) {
    const auto [mean, sd] = surrogate.posterior(x.row(i));
    (void)mean;
    CHECK(sd <= 0.8 + 1e-8);
  }
}

TEST_CASE("posterior mean smooths noise on a sine wave") {
  // Averaged over seeds the posterior filters out at least half of the
  // observation noise (in RMS) on sin with noise std 0.2.
  const int m = 40;
  double ratio_sum = 0.0;
  const int seeds = 5;
  for (int seed = 0; seed < seeds; ++seed) {
    RngStream rng(19 + seed);
    MatrixXd x(m, 1);
    VectorXd y(m), errs(m);
    double raw_sq = 0.0;
    for (int i = 0; i < m; ++i) {
      x(i, 0) = -3.0 + 6.0 * i / (m - 1);
      const double noise = 0.2 * rng.normal();
      y(i) = std::sin(x(i, 0)) + noise;
      errs(i) = 2.0 * 0.2;  // half-width at t=2
      raw_sq += noise * noise;
    }
    auto fit = fit_hyperparameters(x, y, errs, 2.0, default_bounds(x, y), 3, rng);
    REQUIRE(fit.ok);
    GaussianSurrogate surrogate(fit.params, x, y, errs, 2.0);

    double post_sq = 0.0;
    for (int i = 0; i < m; ++i) {
      const auto [mean, sd] = surrogate.posterior(x.row(i));
      (void)sd;
      const double err = mean - std::sin(x(i, 0));
      post_sq += err * err;
    }
    ratio_sum += std::sqrt(post_sq / raw_sq);
  }
  CHECK(ratio_sum / seeds <= 0.5);
}

TEST_CASE("hyperparameter fit recovers a known length scale") {
  const int trials = 60;
  const int m = 50;
  int recovered = 0;
  RngStream rng(77);
  for (int trial = 0; trial < trials; ++trial) {
    MatrixXd x(m, 1);
    for (int i = 0; i < m; ++i) x(i, 0) = rng.uniform(0.0, 2.0);
    // Sample from the generating GP with sigma=1, l=0.5, noise sd 0.1.
    KernelParams truth = unit_params(1, 1.0, 0.5);
    MatrixXd k(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) k(i, j) = kernel(truth, x.row(i), x.row(j));
    k.diagonal().array() += 1e-10;
    Eigen::LLT<MatrixXd> llt(k);
    REQUIRE(llt.info() == Eigen::Success);
    VectorXd z(m);
    for (int i = 0; i < m; ++i) z(i) = rng.normal();
    VectorXd y = llt.matrixL() * z;
    for (int i = 0; i < m; ++i) y(i) += 0.1 * rng.normal();

    auto fit = fit_hyperparameters(x, y, VectorXd::Constant(m, 0.2), 2.0,
                                   default_bounds(x, y), 2, rng);
    if (fit.ok && fit.params.lengths(0) >= 0.25 && fit.params.lengths(0) <= 1.0)
      ++recovered;
  }
  CHECK(recovered >= static_cast<int>(0.8 * trials));
}

TEST_CASE("constant data drives sigma to its lower bound") {
  MatrixXd x(6, 1);
  x << 0.0, 1.0, 2.0, 3.0, 4.0, 5.0;
  VectorXd y = VectorXd::Constant(6, 2.5);
  RngStream rng(3);
  const auto bounds = default_bounds(x, y);
  auto fit = fit_hyperparameters(x, y, VectorXd::Zero(6), 2.0, bounds, 3, rng);
  CHECK(fit.ok);
  CHECK(fit.at_bound);
  CHECK(fit.params.sigma == doctest::Approx(bounds.sigma_lo).epsilon(1e-6));
}

TEST_CASE("doubling noise keeps the fitted signal inside bounds") {
  RngStream rng(25);
  for (int seed = 0; seed < 20; ++seed) {
    const int m = 25;
    MatrixXd x(m, 1);
    VectorXd y(m);
    for (int i = 0; i < m; ++i) {
      x(i, 0) = rng.uniform(-2.0, 2.0);
      y(i) = std::cos(x(i, 0)) + 0.1 * rng.normal();
    }
    const auto bounds = default_bounds(x, y);
    RngStream fit_rng(100 + seed);
    auto base = fit_hyperparameters(x, y, VectorXd::Constant(m, 0.2), 2.0, bounds, 2, fit_rng);
    RngStream fit_rng2(100 + seed);
    auto doubled =
        fit_hyperparameters(x, y, VectorXd::Constant(m, 0.4), 2.0, bounds, 2, fit_rng2);
    CHECK(base.ok);
    CHECK(doubled.ok);
    CHECK(doubled.params.sigma <= bounds.sigma_hi * (1.0 + 1e-9));
    CHECK(doubled.params.sigma >= bounds.sigma_lo * (1.0 - 1e-9));
  }
}

TEST_CASE("hyperparameter fitting is deterministic under a fixed seed") {
  RngStream data_rng(5);
  const int m = 15;
  MatrixXd x(m, 1);
  VectorXd y(m);
  for (int i = 0; i < m; ++i) {
    x(i, 0) = data_rng.uniform(-1.0, 1.0);
    y(i) = x(i, 0) * x(i, 0) + 0.05 * data_rng.normal();
  }
  RngStream a(42), b(42);
  auto fit_a = fit_hyperparameters(x, y, VectorXd::Constant(m, 0.1), 2.0,
                                   default_bounds(x, y), 4, a);
  auto fit_b = fit_hyperparameters(x, y, VectorXd::Constant(m, 0.1), 2.0,
                                   default_bounds(x, y), 4, b);
  CHECK(fit_a.params.sigma == fit_b.params.sigma);
  CHECK(fit_a.params.lengths(0) == fit_b.params.lengths(0));
}

TEST_CASE("corrected evaluations blend raw values with the posterior") {
  // A tight, noise-free surrogate: corrections at the training point follow
  // the GP almost entirely.
  MatrixXd x(3, 1);
  x << -1.0, 0.0, 1.0;
  VectorXd y(3);
  y << 1.0, 2.0, 3.0;
  GaussianSurrogate tight(unit_params(1), x, y, VectorXd::Zero(3), 2.0);
  MatrixXd query(1, 1);
  query << 0.0;
  VectorXd raw(1), raw_err(1);
  raw << 5.0;
  raw_err << 0.7;
  auto corrected = correct_evaluations(tight, query, raw, raw_err, 2.0);
  REQUIRE(corrected.size() == 1);
  CHECK(corrected[0].weight > 0.999);
  CHECK(corrected[0].value_hat == doctest::Approx(2.0).epsilon(1e-2));
  CHECK(corrected[0].err_hat < 0.01);

  // Far from the data the posterior std approaches sigma; with sigma=ln 2
  // the blend weight is exactly 1/2 in the limit.
  GaussianSurrogate half(unit_params(1, std::log(2.0)), x, y, VectorXd::Zero(3), 2.0);
  MatrixXd far(1, 1);
  far << 400.0;
  auto blend = correct_evaluations(half, far, raw, raw_err, 2.0);
  CHECK(blend[0].weight == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(blend[0].value_hat == doctest::Approx(0.5 * y.mean() + 0.5 * 5.0).epsilon(1e-6));
  CHECK(blend[0].err_hat ==
        doctest::Approx(0.5 * 2.0 * std::log(2.0) + 0.5 * 0.7).epsilon(1e-6));
}

TEST_CASE("corrected values stay between raw and posterior mean") {
  RngStream rng(12);
  const int m = 18;
  MatrixXd x(m, 1);
  VectorXd y(m), errs(m);
  for (int i = 0; i < m; ++i) {
    x(i, 0) = rng.uniform(-2.0, 2.0);
    y(i) = std::sin(2.0 * x(i, 0)) + 0.15 * rng.normal();
    errs(i) = 0.3;
  }
  GaussianSurrogate surrogate(unit_params(1, 0.9, 0.6), x, y, errs, 2.0);
  auto corrected = correct_evaluations(surrogate, x, y, errs, 2.0);
  for (int i = 0; i < m; ++i) {
    const auto [mean, sd] = surrogate.posterior(x.row(i));
    (void)sd;
    const double lo = std::min(mean, y(i)) - 1e-12;
    const double hi = std::max(mean, y(i)) + 1e-12;
    CHECK(corrected[static_cast<std::size_t>(i)].value_hat >= lo);
    CHECK(corrected[static_cast<std::size_t>(i)].value_hat <= hi);
    CHECK(corrected[static_cast<std::size_t>(i)].weight > 0.0);
    CHECK(corrected[static_cast<std::size_t>(i)].weight <= 1.0);
  }
}
