#pragma once

#include <Eigen/Core>
#include <limits>
#include <stdexcept>
#include <vector>

namespace snowpac::surrogate {

// One interpolation/regression node: a design point with its corrected
// value estimate and corrected error bound.
struct Node {
  Eigen::VectorXd x;
  double value = 0.0;
  double err = 0.0;
};

struct NodeSet {
  std::vector<Node> nodes;
  Eigen::VectorXd center;
  double radius = 1.0;

  int dim() const { return static_cast<int>(center.size()); }
  // Checks finiteness, the 2*radius locality window, and center membership.
  void validate() const;
};

// Raised when the node geometry cannot support a model; callers should run
// improve_geometry and re-evaluate before retrying.
class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LocalModel {
  double constant = 0.0;
  Eigen::VectorXd gradient;   // at the center
  Eigen::MatrixXd hessian;    // symmetric; zero for linear models
  Eigen::VectorXd center;

  // Model value and gradient at center + step.
  double value_at(const Eigen::VectorXd& step) const {
    return constant + gradient.dot(step) + 0.5 * step.dot(hessian * step);
  }
  Eigen::VectorXd gradient_at(const Eigen::VectorXd& step) const {
    return gradient + hessian * step;
  }
};

struct PoisednessReport {
  double lambda = std::numeric_limits<double>::infinity();
  Eigen::VectorXd worst_point_suggestion;
  bool meets_threshold = false;
};

// Empirical constants and slopes of the model error decay err <= C * rho^s,
// fitted in log-log space from paired (radius, error) observations.
struct ConvergenceDiagnostics {
  double kappa1_hat = 0.0;
  double kappa2_hat = 0.0;
  double value_slope = 0.0;
  double gradient_slope = 0.0;
};

// Minimum-Frobenius-norm quadratic regression through the nodes (exact
// linear interpolation when exactly n+1 nodes are given).  Node errors act
// as relative regression weights; the center is interpolated tightly.
LocalModel build_model(const NodeSet& nodes);

// Poisedness constant of the best affinely independent node subset:
// max over its Lagrange polynomials of their max absolute value over
// B(center, radius).  Degenerate sets get an infinite sentinel.
PoisednessReport poisedness(const NodeSet& nodes, double lambda_max);

// Replacement points inside B(center, radius) that bring the poisedness
// constant below lambda_max; empty if the set already meets it.
std::vector<Eigen::VectorXd> improve_geometry(const NodeSet& nodes, double lambda_max);

ConvergenceDiagnostics fit_error_decay(const std::vector<double>& radii,
                                       const std::vector<double>& value_errors,
                                       const std::vector<double>& gradient_errors);

}  // namespace snowpac::surrogate
