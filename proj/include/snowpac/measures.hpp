#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace snowpac::measures {

// A sample set is a vector of evaluated integrand values B(x, theta_i).
// Estimators validate finiteness and minimum size on entry.
using SampleSet = Eigen::VectorXd;

enum class MeasureKind { Mean, Variance, MeanVariance, ChanceProb, Quantile, CVaR };

struct MeasureSpec {
  MeasureKind kind = MeasureKind::Mean;
  double beta = 0.95;         // probability level for ChanceProb / Quantile / CVaR
  double gamma_weight = 0.5;  // trade-off weight for MeanVariance
  double c1 = 1.0;            // mean scale for MeanVariance
  double c2 = 1.0;            // variance scale for MeanVariance
  double confidence = 0.95;   // target confidence of the error bound

  void validate() const;
};

struct EstimateWithError {
  double value = 0.0;
  double err_bound = 0.0;
  int n_samples = 0;
  double confidence = 0.0;  // attained (quantile) or targeted (mean-type)
};

// Raised when no order-statistic window reaches the requested confidence;
// carries the largest coverage attainable with the given sample count.
class CoverageError : public std::runtime_error {
 public:
  CoverageError(const std::string& what, double attainable)
      : std::runtime_error(what), attainable_coverage(attainable) {}
  double attainable_coverage;
};

// Pointwise integrand of the measure: the value whose sample mean estimates
// the measure.  mean_hint supplies the inner mean for variance-type kinds,
// cvar_gamma the current VaR level for CVaR.  Quantile has no integrand and
// is rejected; use estimate_quantile instead.
double integrand(const MeasureSpec& spec, double b_value, double mean_hint = 0.0,
                 double cvar_gamma = 0.0);

// Sample mean with confidence half-width t_quantile * s_N / sqrt(N).
EstimateWithError estimate_mean(const SampleSet& samples, double t_quantile = 2.0);

// 1-based index of the order statistic estimating the beta-quantile.
// u_draw breaks the tie when N*beta is an integer and beta = 0.5; both
// central statistics are selected with probability 1/2 over uniform draws.
int quantile_index(int n_samples, double beta, double u_draw);

// P(l <= K < u) for K ~ Binomial(N, beta); stable for N up to 1e5.
double binomial_coverage(int l, int u, int n_samples, double beta);

// Order-statistic quantile estimate with the smallest symmetric window of
// neighbouring order statistics whose binomial coverage reaches `confidence`.
// Window indices are clamped to the sample range; the attained coverage is
// reported in the result.
EstimateWithError estimate_quantile(const SampleSet& samples, double beta,
                                    double confidence, double u_draw);

// Sample CVaR at level beta with VaR ordinate gamma: the mean estimator
// applied to gamma + max(b - gamma, 0) / (1 - beta).
EstimateWithError estimate_cvar(const SampleSet& samples, double beta, double gamma,
                                double t_quantile = 2.0);

}  // namespace snowpac::measures
