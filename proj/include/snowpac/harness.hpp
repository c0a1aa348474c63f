#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "snowpac/engine.hpp"
#include "snowpac/problems.hpp"

namespace snowpac::harness {

// One entry of the post-processed iterate series.  Step 0 is the start
// point; step k is the trust-region center after outer iteration k.  All
// errors are computed from the exact robust functions and the reference
// optimum, never from estimator values.
struct IterationPoint {
  int step = 0;
  double objective_error = 0.0;  // |R(x_k) - R(x*)| / max(1, |R(x*)|)
  double max_violation = 0.0;    // max_i [exact constraint_i(x_k)]^+
  double design_error = 0.0;     // Euclidean distance to the reference optimum
};

struct RunRecord {
  std::string problem;
  problems::Formulation formulation = problems::Formulation::MeanMean;
  int n_samples = 0;
  std::uint64_t seed = 0;
  int run_index = 0;
  int dim = 0;  // optimizer-space dimension n_p (CVaR runs carry the ordinate)
  bool failed = false;
  std::string termination;
  int evaluations = 0;
  std::vector<IterationPoint> series;
  double wall_seconds = 0.0;  // informational only; never exported
};

struct DataProfile {
  std::vector<double> alphas;
  std::vector<double> fraction_solved;
};

// Smallest step index whose exact relative objective error is at most eps_f
// and whose exact constraint violation is at most eps_c; infinity when no
// step within the cap qualifies.
double solved_time(const RunRecord& record, double eps_f, double eps_c);

// d(alpha) = fraction of records with solved_time / (dim + 1) <= alpha.
DataProfile data_profile(const std::vector<RunRecord>& records, double eps_f, double eps_c,
                         const std::vector<double>& alphas);

struct CampaignPlan {
  std::vector<std::string> problems;
  std::vector<problems::Formulation> formulations;
  std::vector<int> sample_sizes;
  int repeats = 1;
  std::uint64_t master_seed = 0;
  engine::OptimizerConfig config;  // per-run seed is derived, not taken from here
  int workers = 1;
  int step_cap = 250;  // outer-iteration cap of the post-processed series
};

// Derived seed of run number `run_index` under a master seed.
std::uint64_t run_seed(std::uint64_t master_seed, int run_index);

// Executes repeats x problems x formulations x sample-size runs.  Reference
// optima are resolved once, single-threaded, before any worker starts; runs
// are then independent, so results are identical for every worker count.
// Individual run failures are recorded and the campaign continues.
std::vector<RunRecord> run_campaign(const CampaignPlan& plan);

// One seeded run, post-processed against a caller-supplied reference.
RunRecord run_single(const problems::RobustProblem& problem, const std::string& name,
                     const engine::OptimizerConfig& config, int step_cap, int run_index,
                     const problems::OracleReference& reference);

// CSV with one row per record per series step (17-significant-digit fields,
// so values round-trip exactly), plus a reader and a quartile summary.
void export_records_csv(const std::vector<RunRecord>& records, const std::string& path);
std::vector<RunRecord> read_records_csv(const std::string& path);
void export_profile_csv(const DataProfile& profile, const std::string& path);
void export_summary(const std::vector<RunRecord>& records, const std::string& path);

// Writes through a temporary file in the same directory followed by an
// atomic rename.
void atomic_write(const std::string& path, const std::string& contents);

}  // namespace snowpac::harness
