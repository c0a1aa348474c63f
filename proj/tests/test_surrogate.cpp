#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "snowpac/rng.hpp"
#include "snowpac/surrogate.hpp"

using namespace snowpac;
using namespace snowpac::surrogate;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

namespace {

// Center plus ring points giving a poised quadratic basis in 2D.
NodeSet quadratic_set_2d(const VectorXd& center, double rho,
                         const std::function<double(const VectorXd&)>& f,
                         double err = 0.0) {
  const std::vector<Vector2d> offsets = {{0.0, 0.0}, {1.0, 0.0},  {0.0, 1.0},
                                         {-1.0, 0.0}, {0.0, -1.0}, {0.7, 0.7}};
  NodeSet set;
  set.center = center;
  set.radius = rho;
  for (const auto& o : offsets) {
    VectorXd x = center + rho * VectorXd(o);
    set.nodes.push_back({x, f(x), err});
  }
  return set;
}

NodeSet simplex_set(const VectorXd& center, double rho,
                    const std::function<double(const VectorXd&)>& f) {
  NodeSet set;
  set.center = center;
  set.radius = rho;
  set.nodes.push_back({center, f(center), 0.0});
  for (int i = 0; i < center.size(); ++i) {
    VectorXd x = center + rho * VectorXd::Unit(center.size(), i);
    set.nodes.push_back({x, f(x), 0.0});
  }
  return set;
}

}  // namespace

TEST_CASE("node set validation") {
  NodeSet set;
  set.center = Vector2d(0.0, 0.0);
  set.radius = 1.0;
  set.nodes.push_back({Vector2d(0.0, 0.0), 1.0, 0.0});
  set.nodes.push_back({Vector2d(1.0, 0.0), 2.0, 0.0});
  CHECK_NOTHROW(set.validate());

  NodeSet far = set;
  far.nodes.push_back({Vector2d(5.0, 0.0), 0.0, 0.0});
  CHECK_THROWS_AS(far.validate(), std::invalid_argument);

  NodeSet no_center = set;
  no_center.center = Vector2d(0.3, 0.3);
  CHECK_THROWS_AS(no_center.validate(), std::invalid_argument);
}

TEST_CASE("constant and linear functions are reproduced exactly") {
  const VectorXd center = Vector2d(0.4, -0.2);
  auto constant = [](const VectorXd&) { return 3.7; };
  LocalModel flat = build_model(simplex_set(center, 0.5, constant));
  CHECK(flat.constant == doctest::Approx(3.7));
  CHECK(flat.gradient.norm() < 1e-10);
  CHECK(flat.hessian.norm() < 1e-12);

  const Vector2d a(1.5, -2.25);
  auto linear = [&](const VectorXd& x) { return a.dot(x) + 0.75; };
  LocalModel lin = build_model(simplex_set(center, 0.5, linear));
  CHECK((lin.gradient - a).norm() < 1e-10);
  CHECK(lin.value_at(VectorXd::Zero(2)) == doctest::Approx(linear(center)));
}

TEST_CASE("linear functions survive regression with uneven weights") {
  const VectorXd center = Vector2d(0.0, 0.0);
  const Vector2d a(2.0, 0.5);
  auto linear = [&](const VectorXd& x) { return a.dot(x) - 1.0; };
  NodeSet set = quadratic_set_2d(center, 0.8, linear);
  double errs[] = {0.01, 0.5, 1.3, 0.0, 0.2, 0.9};
  for (int i = 0; i < 6; ++i) set.nodes[i].err = errs[i];
  LocalModel model = build_model(set);
  CHECK((model.gradient - a).norm() < 1e-8);
  CHECK(model.hessian.norm() < 1e-7);
}

TEST_CASE("quadratics are reproduced from six poised exact points") {
  const VectorXd center = Vector2d(1.0, 2.0);
  auto sphere = [](const VectorXd& x) { return x.squaredNorm(); };
  LocalModel model = build_model(quadratic_set_2d(center, 1.0, sphere));
  CHECK((model.hessian - 2.0 * MatrixXd::Identity(2, 2)).norm() < 1e-8);
  CHECK((model.gradient - 2.0 * center).norm() < 1e-8);

  MatrixXd h(2, 2);
  h << 3.0, -1.0, -1.0, 2.0;
  const Vector2d b(0.5, -2.0);
  auto quad = [&](const VectorXd& x) { return 0.5 * x.dot(h * x) + b.dot(x) + 4.0; };
  LocalModel general = build_model(quadratic_set_2d(center, 0.7, quad));
  CHECK((general.hessian - h).norm() < 1e-7);
  CHECK((general.gradient - (h * center + b)).norm() < 1e-7);
}

TEST_CASE("model interpolates the center value even with noisy regression") {
  RngStream rng(21);
  const VectorXd center = Vector2d(0.1, 0.9);
  auto f = [](const VectorXd& x) { return std::sin(x(0)) + x(1) * x(1); };
  NodeSet set = quadratic_set_2d(center, 0.6, f);
  for (auto& node : set.nodes) {
    node.value += rng.uniform(-0.2, 0.2);
    node.err = 0.2;
  }
  set.nodes[0].value = f(center) + 0.05;  // corrected value at the center
  LocalModel model = build_model(set);
  CHECK(std::abs(model.value_at(VectorXd::Zero(2)) - set.nodes[0].value) < 1e-6);
  CHECK((model.hessian - model.hessian.transpose()).norm() == 0.0);
}

TEST_CASE("uniform error levels give the same model as any other uniform level") {
  auto f = [](const VectorXd& x) { return std::cos(x(0)) * x(1) + 0.3 * x(0); };
  NodeSet a = quadratic_set_2d(Vector2d(0.2, 0.3), 0.5, f, 0.4);
  NodeSet b = quadratic_set_2d(Vector2d(0.2, 0.3), 0.5, f, 1.7);
  LocalModel ma = build_model(a);
  LocalModel mb = build_model(b);
  CHECK((ma.gradient - mb.gradient).norm() < 1e-12);
  CHECK((ma.hessian - mb.hessian).norm() < 1e-12);
  CHECK(ma.constant == doctest::Approx(mb.constant).epsilon(1e-12));
}

TEST_CASE("degenerate geometry is rejected with guidance") {
  NodeSet set;
  set.center = Vector2d(0.0, 0.0);
  set.radius = 1.0;
  // Three collinear points cannot span an affine basis in 2D.
  set.nodes.push_back({Vector2d(0.0, 0.0), 0.0, 0.0});
  set.nodes.push_back({Vector2d(0.5, 0.0), 1.0, 0.0});
  set.nodes.push_back({Vector2d(1.0, 0.0), 2.0, 0.0});
  CHECK_THROWS_AS(build_model(set), GeometryError);

  NodeSet tiny;
  tiny.center = Vector2d(0.0, 0.0);
  tiny.radius = 1.0;
  tiny.nodes.push_back({Vector2d(0.0, 0.0), 0.0, 0.0});
  tiny.nodes.push_back({Vector2d(1.0, 0.0), 1.0, 0.0});
  CHECK_THROWS_AS(build_model(tiny), GeometryError);
}

TEST_CASE("model error decays at fully linear rates") {
  auto f = [](const VectorXd& x) { return std::sin(x(0)) + x(1) * x(1); };
  auto grad_f = [](const VectorXd& x) {
    return Vector2d(std::cos(x(0)), 2.0 * x(1));
  };
  const VectorXd center = Vector2d(0.3, 0.4);
  RngStream rng(3);
  std::vector<double> radii, value_errors, gradient_errors;
  for (int k = 1; k <= 6; ++k) {
    const double rho = std::pow(2.0, -k);
    LocalModel model = build_model(quadratic_set_2d(center, rho, f));
    double ve = 0.0;
    double ge = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      Vector2d step(rng.normal(), rng.normal());
      step *= rho * std::pow(rng.uniform(), 0.5) / step.norm();
      const VectorXd x = center + step;
      ve = std::max(ve, std::abs(model.value_at(step) - f(x)));
      ge = std::max(ge, (model.gradient_at(step) - VectorXd(grad_f(x))).norm());
    }
    radii.push_back(rho);
    value_errors.push_back(ve);
    gradient_errors.push_back(ge);
  }
  const ConvergenceDiagnostics diag = fit_error_decay(radii, value_errors, gradient_errors);
  CHECK(diag.value_slope >= 1.8);
  CHECK(diag.gradient_slope >= 0.8);
  CHECK(diag.kappa1_hat >= 0.0);
  CHECK(diag.kappa2_hat >= 0.0);
}

TEST_CASE("poisedness of the unit simplex matches a grid oracle") {
  auto zero = [](const VectorXd&) { return 0.0; };
  NodeSet set = simplex_set(Vector2d(0.0, 0.0), 1.0, zero);
  PoisednessReport report = poisedness(set, 100.0);
  CHECK(report.lambda <= 3.0);
  CHECK(report.meets_threshold);

  // Independent check: solve for each Lagrange polynomial of the three
  // nodes and maximize on a dense polar grid over the unit disk.
  MatrixXd basis(3, 3);
  for (int i = 0; i < 3; ++i) {
    basis(i, 0) = 1.0;
    basis.row(i).tail(2) = set.nodes[i].x.transpose();
  }
  double grid_lambda = 0.0;
  for (int j = 0; j < 3; ++j) {
    VectorXd coeff = basis.fullPivLu().solve(VectorXd::Unit(3, j));
    for (int ir = 0; ir <= 60; ++ir)
      for (int it = 0; it < 240; ++it) {
        const double r = ir / 60.0;
        const double t = 2.0 * M_PI * it / 240.0;
        const double value =
            coeff(0) + coeff(1) * r * std::cos(t) + coeff(2) * r * std::sin(t);
        grid_lambda = std::max(grid_lambda, std::abs(value));
      }
  }
  CHECK(report.lambda == doctest::Approx(std::max(grid_lambda, 1.0)).epsilon(1e-3));
}

TEST_CASE("poisedness is invariant under rotation about the center") {
  auto zero = [](const VectorXd&) { return 0.0; };
  NodeSet set = quadratic_set_2d(Vector2d(0.0, 0.0), 1.0, zero);
  set.nodes.pop_back();
  set.nodes.pop_back();
  const double base = poisedness(set, 100.0).lambda;

  const double angle = 0.83;
  MatrixXd rot(2, 2);
  rot << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  NodeSet rotated = set;
  for (auto& node : rotated.nodes) node.x = rot * node.x;
  CHECK(poisedness(rotated, 100.0).lambda == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("degenerate poisedness cases") {
  NodeSet dup;
  dup.center = Vector2d(0.0, 0.0);
  dup.radius = 1.0;
  dup.nodes.push_back({Vector2d(0.0, 0.0), 0.0, 0.0});
  dup.nodes.push_back({Vector2d(0.0, 0.0), 0.0, 0.0});
  PoisednessReport report = poisedness(dup, 100.0);
  CHECK(!report.meets_threshold);
  CHECK(std::isinf(report.lambda));

  NodeSet lonely;
  lonely.center = Vector2d(0.0, 0.0);
  lonely.radius = 1.0;
  lonely.nodes.push_back({Vector2d(0.0, 0.0), 0.0, 0.0});
  CHECK_THROWS_AS(poisedness(lonely, 100.0), std::invalid_argument);
}

TEST_CASE("geometry improvement restores and refines node sets") {
  auto zero = [](const VectorXd&) { return 0.0; };
  NodeSet good = simplex_set(Vector2d(0.0, 0.0), 1.0, zero);
  CHECK(improve_geometry(good, 100.0).empty());

  NodeSet collinear;
  collinear.center = Vector2d(0.0, 0.0);
  collinear.radius = 1.0;
  collinear.nodes.push_back({Vector2d(0.0, 0.0), 0.0, 0.0});
  collinear.nodes.push_back({Vector2d(1.0, 0.0), 0.0, 0.0});
  collinear.nodes.push_back({Vector2d(0.5, 1e-7), 0.0, 0.0});
  auto suggestions = improve_geometry(collinear, 100.0);
  CHECK(!suggestions.empty());
  NodeSet improved = collinear;
  for (const auto& point : suggestions) improved.nodes.push_back({point, 0.0, 0.0});
  PoisednessReport after = poisedness(improved, 100.0);
  CHECK(after.meets_threshold);

  NodeSet duplicates;
  duplicates.center = Vector2d(0.0, 0.0);
  duplicates.radius = 1.0;
  duplicates.nodes.push_back({Vector2d(0.0, 0.0), 0.0, 0.0});
  duplicates.nodes.push_back({Vector2d(0.0, 0.0), 0.0, 0.0});
  auto fixes = improve_geometry(duplicates, 100.0);
  CHECK(!fixes.empty());
  NodeSet restored = duplicates;
  for (const auto& point : fixes) restored.nodes.push_back({point, 0.0, 0.0});
  CHECK(std::isfinite(poisedness(restored, 100.0).lambda));
}
