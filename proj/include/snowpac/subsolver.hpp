#pragma once

#include <Eigen/Core>
#include <vector>

#include "snowpac/rng.hpp"
#include "snowpac/surrogate.hpp"

namespace snowpac::subsolver {

// M1 minimizes the objective model subject to the boundary-path-augmented
// constraint models; M2 (feasibility restoration) drives the violated
// constraint models back toward feasibility without worsening any
// constraint beyond its slack.
enum class Mode { M1, M2 };

// Trust-region subproblem shared by the trial-step and criticality solvers.
// All models are expressed in step coordinates around the current center.
struct SubproblemSpec {
  Mode mode = Mode::M1;
  surrogate::LocalModel objective_model;
  std::vector<surrogate::LocalModel> constraint_models;
  double radius = 1.0;
  Eigen::VectorXd slacks;             // tau_i = max{corrected c_i, 0}; M2 only
  std::vector<int> active_index_set;  // violated constraint indices; M2 only
  double lambda_g = 1e-4;
  double ibp_scale = 0.0;             // shared inner-boundary-path strength

  int dim() const { return static_cast<int>(objective_model.gradient.size()); }
  void validate() const;
};

struct StepResult {
  Eigen::VectorXd step;
  double model_objective_at_step = 0.0;
  // False when the center itself violates the constraint models in M1;
  // the caller should switch to restoration instead of trusting the step.
  bool feasible_for_models = true;
};

// Convex offset added to every constraint model: scale * ||s||^2.
double inner_boundary_path(const Eigen::VectorXd& s, double scale);

// Default offset strength, coupled to the largest constraint curvature:
// max(1, max_i ||H_i||) / 2 with the spectral norm.
double inner_boundary_path_scale(const std::vector<surrogate::LocalModel>& constraint_models);

// Approximately minimizes the mode objective over the augmented-model
// feasible set inside the ball ||s|| <= radius, via multi-start projected
// gradient descent on a log-barrier relaxation.  The result never worsens
// the center value and captures at least a fixed fraction of the Cauchy
// decrease along steepest descent.
StepResult solve_trial_step(const SubproblemSpec& spec, RngStream& rng);

// Criticality measure alpha(rho) = |min <g, d>| / rho over model-feasible
// directions with ||d|| <= rho, where g is the mode gradient at the center
// (objective-model gradient in M1, the weighted constraint-gradient sum in
// M2).  A model-infeasible center falls back to the restoration variant.
double criticality(const SubproblemSpec& spec);

}  // namespace snowpac::subsolver
