#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "snowpac/gp.hpp"
#include "snowpac/problems.hpp"
#include "snowpac/rng.hpp"
#include "snowpac/subsolver.hpp"
#include "snowpac/surrogate.hpp"

namespace snowpac::engine {

// Knobs of the noise-adapted trust-region loop.  The defaults reproduce the
// reference parameterization; validate() rejects inconsistent settings.
struct OptimizerConfig {
  // Acceptance and radius control.
  double eta0 = 0.1;           // accept the trial step when r_k >= eta0
  double eta1 = 0.7;           // expand the region when r_k >= eta1
  double gamma_shrink = 0.5;   // contraction on rejection
  double gamma_inc = 2.0;      // expansion on strong acceptance
  double omega = 0.6;          // contraction inside the criticality loop
  double theta_tr = 0.5;       // contraction on an infeasible trial point
  double rho0 = 1.0;           // initial radius
  double rho_min = 1e-6;       // stop when the radius falls below this
  double rho_max = 10.0;       // hard radius cap

  // Noise coupling, model quality, and restoration regularization.
  double lambda_t = 1.4142135623730951;  // radius floor factor on sqrt(noise)
  double lambda_max = 100.0;             // poisedness threshold for model nodes
  double lambda_g = 1e-4;                // linear regularizer of the restoration objective
  double t_quantile = 2.0;               // error bounds are t * standard error

  // Criticality loop: contract while alpha < crit_threshold and
  // rho > crit_mu * alpha, at most 50 repetitions.
  double crit_threshold = 1e-3;
  double crit_mu = 10.0;

  // Gaussian-process maintenance: refit hyperparameters every
  // gp_refit_every evaluations, or after lambda_k * dim consecutive
  // rejected or infeasible steps.
  int gp_refit_every = 10;
  int lambda_k = 2;

  // Total estimator-call budget (initialization included) and seeding.
  int n_max = 200;
  std::uint64_t seed = 0;

  // Exploration points are drawn componentwise around the iterate with
  // width 3 * sqrt(rho) / 10; by default that number is the variance, with
  // this switch it is read as the standard deviation instead.
  bool exploration_std = false;

  void validate() const;
};

// Radius, noise level of the current model nodes, and mode of the iterate.
struct TrustRegionState {
  double rho = 1.0;
  double eps_max = 0.0;  // max corrected error bound over current model nodes
  subsolver::Mode mode = subsolver::Mode::M1;
  Eigen::VectorXd x;     // current center, in the (possibly extended) design space
};

// One estimator call.  Entry 0 of each vector is the objective, entries
// 1..r the constraints; corrected values are refreshed in place whenever the
// Gaussian processes are updated.
struct EvaluationRecord {
  Eigen::VectorXd point;
  Eigen::VectorXd raw;
  Eigen::VectorXd raw_err;
  Eigen::VectorXd corrected;
  Eigen::VectorXd corrected_err;
  int iteration = 0;      // 0 marks initialization evaluations
  bool accepted = false;  // true when the point became the center
  bool trial = false;     // true when the point was a subproblem step
  subsolver::Mode mode = subsolver::Mode::M1;
};

enum class Termination {
  Budget,             // evaluation budget exhausted
  RadiusFloor,        // trust-region radius fell below rho_min
  SubproblemFailure,  // trial-step solve failed twice in a row
  BlackBoxFailure,    // the estimator threw; partial history returned
};

// Snapshot taken when an iteration reaches its trial-step solve, exposing
// the noise-coupled radius floor and the mode decision for auditing.
struct IterationTrace {
  int iteration = 0;
  double rho = 0.0;
  double eps_max = 0.0;
  subsolver::Mode mode = subsolver::Mode::M1;
  bool center_infeasible = false;  // some corrected constraint > 0 at the center
};

std::string termination_name(Termination t);

struct RunResult {
  Eigen::VectorXd best_point;
  double best_objective = 0.0;       // corrected objective estimate at best_point
  Eigen::VectorXd best_constraints;  // corrected constraint estimates at best_point
  bool best_feasible = false;        // best_point satisfied the corrected constraints
  int iterations = 0;
  int evaluations = 0;
  bool criticality_bound_hit = false;
  Termination termination = Termination::Budget;
  std::vector<EvaluationRecord> history;
  std::vector<IterationTrace> trace;
};

// rho <- min(max(factor * rho, lambda_t * sqrt(eps_max)), rho_max).  The
// noise floor keeps the region from contracting below the resolution the
// estimator errors support.
TrustRegionState update_radius(const TrustRegionState& state, double factor,
                               const OptimizerConfig& config);

// r_k = (f_old - f_new) / (m_old - m_new) from corrected estimates and model
// values; returns -infinity when the predicted decrease is below
// 1e-14 * max(1, |m_old|).
double acceptance_ratio(double f_old, double f_new, double m_old, double m_new);

// Gaussian exploration draw around x with componentwise variance
// 3 * sqrt(rho) / 10 (standard deviation instead when std_scale is set).
Eigen::VectorXd sample_exploration_point(const Eigen::VectorXd& x, double rho,
                                         RngStream& rng, bool std_scale = false);

// The trust-region optimizer.  run() drives the full loop; initialize() and
// criticality_step() are public so the initialization and the criticality
// contraction can be exercised in isolation.
class Optimizer {
 public:
  Optimizer(problems::RobustProblem problem, OptimizerConfig config);

  // Evaluates the start point and a coordinate simplex of radius rho0, fits
  // the Gaussian processes, and builds the first models.
  void initialize();

  // Contracts the radius while the criticality measure is small relative to
  // it, spending one exploration evaluation per contraction.  Bounded by 50
  // repetitions; criticality_bound_hit() reports when the bound fired.
  void criticality_step();

  RunResult run();

  const TrustRegionState& state() const { return state_; }
  const std::vector<EvaluationRecord>& history() const { return db_; }
  const std::vector<IterationTrace>& trace() const { return trace_; }
  int evaluations() const { return static_cast<int>(db_.size()); }
  bool criticality_bound_hit() const { return crit_bound_hit_; }

 private:
  struct GpChannel {
    gp::KernelParams params;
    bool fitted = false;
    std::unique_ptr<gp::GaussianSurrogate> surrogate;
  };

  bool budget_left() const { return evaluations() < config_.n_max; }
  const EvaluationRecord& evaluate(const Eigen::VectorXd& x, bool trial = false);
  void refresh_gps();
  void refresh_best();
  bool rebuild_models();
  void recompute_mode();
  subsolver::SubproblemSpec make_spec() const;
  double merit(const EvaluationRecord& rec, const std::vector<int>& active) const;
  bool exploration_refresh();
  RunResult finish(Termination why);

  problems::RobustProblem problem_;
  OptimizerConfig config_;
  RngStream rng_;
  std::vector<EvaluationRecord> db_;
  std::vector<IterationTrace> trace_;
  TrustRegionState state_;
  std::vector<GpChannel> gps_;
  std::vector<surrogate::LocalModel> models_;  // objective first, then constraints
  std::vector<int> model_nodes_;               // history indices of the current node set
  bool models_ok_ = false;
  int center_index_ = -1;
  int iteration_ = 0;
  int evals_since_fit_ = 0;
  int rejections_since_fit_ = 0;
  bool crit_bound_hit_ = false;
  bool initialized_ = false;
  bool have_best_ = false;
  int best_index_ = -1;
  double best_value_ = 0.0;
  Eigen::VectorXd best_constraints_;
};

// Convenience wrapper: construct, run, return.
RunResult optimize(const problems::RobustProblem& problem, const OptimizerConfig& config);

}  // namespace snowpac::engine
