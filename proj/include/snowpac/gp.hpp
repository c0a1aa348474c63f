#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <utility>
#include <vector>

#include "snowpac/rng.hpp"

namespace snowpac::gp {

struct KernelParams {
  double sigma = 1.0;        // signal standard deviation
  Eigen::VectorXd lengths;   // per-dimension length scales
  // The default kernel form divides the full euclidean distance by each
  // length scale in turn; setting ard switches to classic per-coordinate
  // scaling instead.
  bool ard = false;

  void validate() const;
};

double kernel(const KernelParams& params, const Eigen::VectorXd& x,
              const Eigen::VectorXd& y);

struct HyperBounds {
  double sigma_lo = 1e-6;
  double sigma_hi = 10.0;
  double length_lo = 1e-3;
  double length_hi = 10.0;
};

// Length bounds scaled by the spread of the inputs, sigma bounds by the
// spread of the observations.
HyperBounds default_bounds(const Eigen::MatrixXd& points, const Eigen::VectorXd& values);

// Gaussian-process regressor over noisy observations.  Observation noise
// enters as the variance (err/t_quantile)^2, converting confidence
// half-widths back to a standard-deviation scale.  The prior mean is the
// training mean, so far-field queries revert to it.
class GaussianSurrogate {
 public:
  GaussianSurrogate(KernelParams params, Eigen::MatrixXd points, Eigen::VectorXd values,
                    Eigen::VectorXd errs, double t_quantile);

  // Posterior (mean, standard deviation) at a query point.
  std::pair<double, double> posterior(const Eigen::VectorXd& x) const;

  const KernelParams& params() const { return params_; }
  int size() const { return static_cast<int>(values_.size()); }
  double prior_mean() const { return mean_; }

 private:
  KernelParams params_;
  Eigen::MatrixXd points_;
  Eigen::VectorXd values_;
  Eigen::VectorXd noise_var_;
  double mean_ = 0.0;
  Eigen::LLT<Eigen::MatrixXd> factor_;
  Eigen::VectorXd alpha_;
};

struct FitResult {
  KernelParams params;
  bool ok = false;        // false when every start failed to factorize
  bool at_bound = false;  // some parameter clamped at its bound
};

// Maximizes the log marginal likelihood by multi-start projected gradient
// ascent in log-parameter space; deterministic given the RNG stream.
FitResult fit_hyperparameters(const Eigen::MatrixXd& points, const Eigen::VectorXd& values,
                              const Eigen::VectorXd& errs, double t_quantile,
                              const HyperBounds& bounds, int restarts, RngStream& rng,
                              bool ard = false);

struct CorrectedEvaluation {
  double value_hat = 0.0;
  double err_hat = 0.0;
  double weight = 0.0;  // exp(-posterior std), the blend factor
};

// Blends raw noisy estimates with the GP posterior: the smaller the
// posterior uncertainty, the more the smoothed value replaces the raw one.
std::vector<CorrectedEvaluation> correct_evaluations(const GaussianSurrogate& surrogate,
                                                     const Eigen::MatrixXd& points,
                                                     const Eigen::VectorXd& raw_values,
                                                     const Eigen::VectorXd& raw_errs,
                                                     double t_quantile);

}  // namespace snowpac::gp
