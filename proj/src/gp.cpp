#include "snowpac/gp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace snowpac::gp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Eigen::MatrixXd kernel_matrix(const KernelParams& params, const Eigen::MatrixXd& points) {
  const int m = static_cast<int>(points.rows());
  Eigen::MatrixXd k(m, m);
  for (int i = 0; i < m; ++i) {
    k(i, i) = params.sigma * params.sigma;
    for (int j = 0; j < i; ++j) {
      k(i, j) = kernel(params, points.row(i), points.row(j));
      k(j, i) = k(i, j);
    }
  }
  return k;
}

// Cholesky with a jitter ladder; returns false if even the largest jitter
// cannot make the matrix positive definite.
bool factorize(const Eigen::MatrixXd& k, double scale, Eigen::LLT<Eigen::MatrixXd>& llt) {
  const double ladder[] = {0.0, 1e-10, 1e-8, 1e-6};
  for (double jitter : ladder) {
    Eigen::MatrixXd shifted = k;
    if (jitter > 0.0)
      shifted.diagonal().array() += jitter * std::max(scale, 1e-300);
    llt.compute(shifted);
    if (llt.info() == Eigen::Success) return true;
  }
  return false;
}

struct LikelihoodModel {
  const Eigen::MatrixXd& points;
  Eigen::VectorXd centered;
  Eigen::VectorXd noise_var;
  bool ard;
  int dim;
  // Squared distances, full (literal form) and per coordinate (ard form).
  Eigen::MatrixXd sq_dist;
  std::vector<Eigen::MatrixXd> sq_dist_coord;

  LikelihoodModel(const Eigen::MatrixXd& pts, const Eigen::VectorXd& values,
                  const Eigen::VectorXd& nv, bool use_ard)
      : points(pts), noise_var(nv), ard(use_ard), dim(static_cast<int>(pts.cols())) {
    centered = (values.array() - values.mean()).matrix();
    const int m = static_cast<int>(pts.rows());
    if (ard) {
      sq_dist_coord.assign(dim, Eigen::MatrixXd(m, m));
      for (int d = 0; d < dim; ++d)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < m; ++j) {
            const double delta = pts(i, d) - pts(j, d);
            sq_dist_coord[d](i, j) = delta * delta;
          }
    } else {
      sq_dist.resize(m, m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
          sq_dist(i, j) = (pts.row(i) - pts.row(j)).squaredNorm();
    }
  }

  int n_hyper() const { return ard ? 1 + dim : 2; }

  // theta holds log sigma followed by log length scale(s).
  // Returns the log marginal likelihood, or -inf when factorization fails.
  double evaluate(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const {
    const int m = static_cast<int>(points.rows());
    const double sigma2 = std::exp(2.0 * theta(0));
    Eigen::MatrixXd scaled;  // the exponent matrix Q
    if (ard) {
      scaled = Eigen::MatrixXd::Zero(m, m);
      for (int d = 0; d < dim; ++d)
        scaled += sq_dist_coord[d] / std::exp(2.0 * theta(1 + d));
    } else {
      scaled = sq_dist * (dim / std::exp(2.0 * theta(1)));
    }
    const Eigen::MatrixXd signal = sigma2 * (-0.5 * scaled.array()).exp().matrix();
    Eigen::MatrixXd k = signal;
    k.diagonal() += noise_var;

    Eigen::LLT<Eigen::MatrixXd> llt;
    if (!factorize(k, sigma2, llt))
      return -std::numeric_limits<double>::infinity();

    const Eigen::VectorXd alpha = llt.solve(centered);
    double log_det = 0.0;
    for (int i = 0; i < m; ++i) log_det += std::log(llt.matrixLLT()(i, i));
    const double lml = -0.5 * centered.dot(alpha) - log_det - 0.5 * m * kLog2Pi;

    if (grad) {
      const Eigen::MatrixXd kinv = llt.solve(Eigen::MatrixXd::Identity(m, m));
      const Eigen::MatrixXd outer = alpha * alpha.transpose() - kinv;
      grad->resize(n_hyper());
      (*grad)(0) = 0.5 * outer.cwiseProduct(2.0 * signal).sum();
      if (ard) {
        for (int d = 0; d < dim; ++d) {
          const Eigen::MatrixXd dk =
              signal.cwiseProduct(sq_dist_coord[d] / std::exp(2.0 * theta(1 + d)));
          (*grad)(1 + d) = 0.5 * outer.cwiseProduct(dk).sum();
        }
      } else {
        const Eigen::MatrixXd dk = signal.cwiseProduct(scaled);
        (*grad)(1) = 0.5 * outer.cwiseProduct(dk).sum();
      }
    }
    return lml;
  }
};

}  // namespace

void KernelParams::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw std::invalid_argument("kernel sigma must be positive and finite");
  if (lengths.size() == 0) throw std::invalid_argument("kernel needs length scales");
  for (int i = 0; i < lengths.size(); ++i)
    if (!(lengths(i) > 0.0) || !std::isfinite(lengths(i)))
      throw std::invalid_argument("kernel length scales must be positive and finite");
}

double kernel(const KernelParams& params, const Eigen::VectorXd& x,
              const Eigen::VectorXd& y) {
  if (x.size() != y.size() || x.size() != params.lengths.size())
    throw std::invalid_argument("kernel dimension mismatch");
  double exponent = 0.0;
  if (params.ard) {
    for (int i = 0; i < x.size(); ++i) {
      const double scaled = (x(i) - y(i)) / params.lengths(i);
      exponent += scaled * scaled;
    }
  } else {
    const double dist2 = (x - y).squaredNorm();
    for (int i = 0; i < params.lengths.size(); ++i)
      exponent += dist2 / (params.lengths(i) * params.lengths(i));
  }
  return params.sigma * params.sigma * std::exp(-0.5 * exponent);
}

HyperBounds default_bounds(const Eigen::MatrixXd& points, const Eigen::VectorXd& values) {
  double spread = 0.0;
  for (int i = 0; i < points.rows(); ++i)
    for (int j = 0; j < i; ++j)
      spread = std::max(spread, (points.row(i) - points.row(j)).norm());
  spread = std::max(spread, 1e-8);
  double range = values.size() > 0 ? values.maxCoeff() - values.minCoeff() : 0.0;
  HyperBounds bounds;
  bounds.length_lo = 1e-3 * spread;
  bounds.length_hi = 10.0 * spread;
  bounds.sigma_lo = 1e-6;
  bounds.sigma_hi = std::max(10.0 * range, 1e-5);
  return bounds;
}

GaussianSurrogate::GaussianSurrogate(KernelParams params, Eigen::MatrixXd points,
                                     Eigen::VectorXd values, Eigen::VectorXd errs,
                                     double t_quantile)
    : params_(std::move(params)), points_(std::move(points)), values_(std::move(values)) {
  params_.validate();
  if (points_.rows() != values_.size() || errs.size() != values_.size())
    throw std::invalid_argument("training set size mismatch");
  if (!(t_quantile > 0.0)) throw std::invalid_argument("t_quantile must be positive");
  if (values_.size() == 0) return;

  noise_var_ = (errs / t_quantile).array().square();
  mean_ = values_.mean();
  Eigen::MatrixXd k = kernel_matrix(params_, points_);
  k.diagonal() += noise_var_;
  if (!factorize(k, params_.sigma * params_.sigma, factor_))
    throw std::runtime_error("kernel matrix not positive definite after max jitter");
  const Eigen::VectorXd centered = values_.array() - mean_;
  alpha_ = factor_.solve(centered);
}

std::pair<double, double> GaussianSurrogate::posterior(const Eigen::VectorXd& x) const {
  if (size() == 0) return {0.0, params_.sigma};
  Eigen::VectorXd kx(size());
  for (int i = 0; i < size(); ++i) kx(i) = kernel(params_, points_.row(i), x);
  const double mean = mean_ + kx.dot(alpha_);
  const Eigen::VectorXd v = factor_.matrixL().solve(kx);
  const double variance = params_.sigma * params_.sigma - v.squaredNorm();
  return {mean, std::sqrt(std::max(variance, 0.0))};
}

FitResult fit_hyperparameters(const Eigen::MatrixXd& points, const Eigen::VectorXd& values,
                              const Eigen::VectorXd& errs, double t_quantile,
                              const HyperBounds& bounds, int restarts, RngStream& rng,
                              bool ard) {
  const int m = static_cast<int>(points.rows());
  const int n = static_cast<int>(points.cols());
  if (m < 3) throw std::invalid_argument("hyperparameter fit needs at least 3 points");
  if (values.size() != m || errs.size() != m)
    throw std::invalid_argument("training set size mismatch");

  const Eigen::VectorXd noise_var = (errs / t_quantile).array().square();
  const LikelihoodModel model(points, values, noise_var, ard);
  const int nh = model.n_hyper();

  const Eigen::Vector2d sigma_box(std::log(bounds.sigma_lo), std::log(bounds.sigma_hi));
  const Eigen::Vector2d length_box(std::log(bounds.length_lo), std::log(bounds.length_hi));
  auto clamp_theta = [&](Eigen::VectorXd theta) {
    theta(0) = std::clamp(theta(0), sigma_box(0), sigma_box(1));
    for (int j = 1; j < nh; ++j)
      theta(j) = std::clamp(theta(j), length_box(0), length_box(1));
    return theta;
  };

  // Heuristic start: data spread for sigma, median pairwise distance for
  // the length scales.
  std::vector<double> dists;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < i; ++j) dists.push_back((points.row(i) - points.row(j)).norm());
  std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
  const double med_dist = dists.empty() ? 1.0 : std::max(dists[dists.size() / 2], 1e-12);
  const double sd =
      std::sqrt((values.array() - values.mean()).square().sum() / std::max(m - 1, 1));
  Eigen::VectorXd heuristic(nh);
  heuristic(0) = std::log(std::max(sd, 1e-12));
  for (int j = 1; j < nh; ++j) heuristic(j) = std::log(med_dist);
  heuristic = clamp_theta(heuristic);

  Eigen::VectorXd best_theta = heuristic;
  double best_value = -std::numeric_limits<double>::infinity();
  bool any_success = false;

  for (int start = 0; start < std::max(restarts, 1); ++start) {
    Eigen::VectorXd theta(nh);
    if (start == 0) {
      theta = heuristic;
    } else {
      theta(0) = rng.uniform(sigma_box(0), sigma_box(1));
      for (int j = 1; j < nh; ++j) theta(j) = rng.uniform(length_box(0), length_box(1));
    }

    Eigen::VectorXd grad(nh);
    double value = model.evaluate(theta, &grad);
    if (!std::isfinite(value)) continue;
    any_success = true;

    double step = 0.5;
    for (int iter = 0; iter < 60; ++iter) {
      if (grad.norm() < 1e-6) break;
      Eigen::VectorXd trial;
      double trial_value = -std::numeric_limits<double>::infinity();
      bool improved = false;
      for (int cut = 0; cut < 25; ++cut) {
        trial = clamp_theta(theta + step * grad);
        trial_value = model.evaluate(trial, nullptr);
        if (std::isfinite(trial_value) && trial_value > value) {
          improved = true;
          break;
        }
        step *= 0.5;
      }
      if (!improved) break;
      theta = trial;
      value = model.evaluate(theta, &grad);
      step = std::min(step * 1.5, 4.0);
    }
    if (value > best_value) {
      best_value = value;
      best_theta = theta;
    }
  }

  FitResult result;
  result.ok = any_success;
  result.params.ard = ard;
  result.params.sigma = std::exp(best_theta(0));
  result.params.lengths = Eigen::VectorXd::Constant(n, std::exp(best_theta(nh - 1)));
  if (ard)
    for (int d = 0; d < n; ++d) result.params.lengths(d) = std::exp(best_theta(1 + d));
  const auto near = [](double v, double bound) {
    return std::abs(v - bound) <= 1e-9 * std::max(std::abs(bound), 1.0);
  };
  result.at_bound = near(best_theta(0), sigma_box(0)) || near(best_theta(0), sigma_box(1));
  for (int j = 1; j < nh; ++j)
    result.at_bound = result.at_bound || near(best_theta(j), length_box(0)) ||
                      near(best_theta(j), length_box(1));
  return result;
}

std::vector<CorrectedEvaluation> correct_evaluations(const GaussianSurrogate& surrogate,
                                                     const Eigen::MatrixXd& points,
                                                     const Eigen::VectorXd& raw_values,
                                                     const Eigen::VectorXd& raw_errs,
                                                     double t_quantile) {
  if (points.rows() != raw_values.size() || raw_errs.size() != raw_values.size())
    throw std::invalid_argument("corrected-evaluation input size mismatch");
  std::vector<CorrectedEvaluation> out(static_cast<std::size_t>(points.rows()));
  for (int i = 0; i < points.rows(); ++i) {
    const auto [mean, sd] = surrogate.posterior(points.row(i));
    const double weight = std::exp(-sd);
    CorrectedEvaluation& c = out[static_cast<std::size_t>(i)];
    c.weight = weight;
    c.value_hat = weight * mean + (1.0 - weight) * raw_values(i);
    c.err_hat = weight * t_quantile * sd + (1.0 - weight) * raw_errs(i);
  }
  return out;
}

}  // namespace snowpac::gp
