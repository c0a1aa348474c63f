#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "snowpac/measures.hpp"
#include "snowpac/rng.hpp"

namespace snowpac::problems {

// A stochastic black box: deterministic in (x, theta), with theta drawn from
// a seeded sampler.  The exact_* members expose analytic (or semi-analytic)
// robust measures used by the post-processing oracles; additive zero-mean
// noise makes these cheap offsets of the deterministic functions.
struct StochasticBlackBox {
  std::string name;
  int dim = 0;
  int num_constraints = 0;
  int theta_dim = 0;
  std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)> objective;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> constraints;
  std::function<Eigen::VectorXd(RngStream&)> sample_theta;
  Eigen::VectorXd start;
  Eigen::VectorXd domain_lo, domain_hi;   // box used to seed oracle searches
  Eigen::VectorXd deterministic_optimum;  // optimum of the noiseless problem
  double deterministic_value = 0.0;

  std::function<double(const Eigen::VectorXd&)> exact_mean_objective;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> exact_mean_constraints;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)> exact_quantile_constraints;
  // R6(x, gamma) at level beta, exact in the additive-noise sense.
  std::function<double(const Eigen::VectorXd&, double, double)> exact_cvar_objective;
  // beta-quantile of the noisy objective at x (the VaR ordinate).
  std::function<double(const Eigen::VectorXd&, double)> exact_objective_quantile;

  void validate() const;
};

// The three robust formulation classes: mean objective with mean
// constraints, mean objective with 95%-quantile constraints, and 95%-CVaR
// objective (auxiliary VaR ordinate appended to the design) with mean
// constraints.
enum class Formulation { MeanMean, MeanQuantile95, CVaR95Mean };

std::string formulation_name(Formulation f);
Formulation parse_formulation(const std::string& name);

struct RobustEstimates {
  measures::EstimateWithError objective;
  std::vector<measures::EstimateWithError> constraints;
};

// A robust reformulation of a black box: fixes the measures, the sample size
// per estimate, and the seeded noise streams.  Each estimate draws N fresh
// theta samples from a stream keyed by (seed, eval_index), so evaluations
// are reproducible and independent across indices.
struct RobustProblem {
  StochasticBlackBox base;
  Formulation formulation = Formulation::MeanMean;
  int n_samples = 100;
  std::uint64_t seed = 0;

  bool extended() const { return formulation == Formulation::CVaR95Mean; }
  int dim() const { return base.dim + (extended() ? 1 : 0); }
  int num_constraints() const { return base.num_constraints; }
  double beta() const { return 0.95; }

  // Start point in the optimizer's space; the CVaR ordinate is initialized
  // at the sample beta-quantile of the objective at the base start.
  Eigen::VectorXd start() const;

  RobustEstimates estimate(const Eigen::VectorXd& z, std::uint64_t eval_index) const;

  // Exact robust measures at a design z for post-processing.
  double exact_objective(const Eigen::VectorXd& z) const;
  Eigen::VectorXd exact_constraints(const Eigen::VectorXd& z) const;
};

RobustProblem make_robust(const StochasticBlackBox& base, Formulation formulation,
                          int n_samples, std::uint64_t seed);

// The two-dimensional test problem with four uncertain parameters and
// closed-form expectations.
StochasticBlackBox example_2d();

// Eight classic constrained test problems with additive U[-1,1] noise on
// the objective and on each constraint.
std::vector<StochasticBlackBox> noisy_suite();

StochasticBlackBox problem_by_name(const std::string& name);
std::vector<std::string> problem_names();

struct OracleReference {
  Eigen::VectorXd point;  // in the optimizer's (possibly extended) space
  double value = 0.0;
  // False when no feasible point was found or the dense-grid cross-check
  // disagrees with the multi-start search; such problems are excluded from
  // quantitative comparisons.
  bool trusted = false;
};

// Reference robust optimum from multi-start local search on the exact
// robust functions, cross-checked against a dense grid for 2-D problems.
OracleReference oracle_reference(const StochasticBlackBox& base, Formulation formulation,
                                 int n_starts = 100);

// Zoomed dense-grid minimization of the exact robust problem (2-D only).
OracleReference grid_reference(const StochasticBlackBox& base, Formulation formulation,
                               int resolution = 401);

}  // namespace snowpac::problems
