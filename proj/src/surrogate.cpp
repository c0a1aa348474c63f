#include "snowpac/surrogate.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace snowpac::surrogate {

namespace {

// Scaled displacements (x_i - center) / radius, one row per node.
Eigen::MatrixXd scaled_displacements(const NodeSet& set) {
  const int m = static_cast<int>(set.nodes.size());
  const int n = set.dim();
  Eigen::MatrixXd d(m, n);
  for (int i = 0; i < m; ++i)
    d.row(i) = (set.nodes[i].x - set.center).transpose() / set.radius;
  return d;
}

int center_node(const NodeSet& set) {
  for (std::size_t i = 0; i < set.nodes.size(); ++i)
    if ((set.nodes[i].x - set.center).norm() <= 1e-12 * set.radius)
      return static_cast<int>(i);
  return -1;
}

struct PoisednessDetail {
  bool degenerate = true;
  double lambda = std::numeric_limits<double>::infinity();
  std::vector<int> subset;            // node indices of the selected basis
  std::vector<double> poly_max;       // per subset member
  std::vector<Eigen::VectorXd> argmax;  // maximizer of each Lagrange polynomial
  int worst = -1;                     // position within subset
  Eigen::MatrixXd displacements;
};

// Selects the best-conditioned affine basis of n+1 nodes by column-pivoted
// QR on the homogeneous basis (1, d_i), then maximizes each of its Lagrange
// polynomials over the unit ball in scaled coordinates.
PoisednessDetail poisedness_detail(const NodeSet& set) {
  const int m = static_cast<int>(set.nodes.size());
  const int n = set.dim();
  PoisednessDetail out;
  out.displacements = scaled_displacements(set);

  Eigen::MatrixXd basis(n + 1, m);
  for (int i = 0; i < m; ++i) {
    basis(0, i) = 1.0;
    basis.col(i).tail(n) = out.displacements.row(i).transpose();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(basis);
  qr.setThreshold(1e-10);
  if (qr.rank() < n + 1) return out;  // degenerate sentinel

  out.degenerate = false;
  out.subset.resize(n + 1);
  for (int j = 0; j < n + 1; ++j)
    out.subset[j] = static_cast<int>(qr.colsPermutation().indices()(j));

  Eigen::MatrixXd sub(n + 1, n + 1);
  for (int j = 0; j < n + 1; ++j) sub.col(j) = basis.col(out.subset[j]);
  // l_j(d) = (1,d) . row_j(sub^-1), so that l_j(d_i) = (sub^-1 sub)_ji = delta_ij.
  Eigen::MatrixXd coeff = sub.inverse().transpose();

  out.lambda = 0.0;
  out.poly_max.resize(n + 1);
  out.argmax.resize(n + 1);
  for (int j = 0; j < n + 1; ++j) {
    const double a0 = coeff(0, j);
    const Eigen::VectorXd a = coeff.col(j).tail(n);
    const double amp = a.norm();
    out.poly_max[j] = std::abs(a0) + amp;
    Eigen::VectorXd direction = amp > 0 ? Eigen::VectorXd(a / amp)
                                        : Eigen::VectorXd::Unit(n, 0).eval();
    if (a0 < 0.0) direction = -direction;
    out.argmax[j] = set.center + set.radius * direction;
    if (out.poly_max[j] > out.lambda) {
      out.lambda = out.poly_max[j];
      out.worst = j;
    }
  }
  out.lambda = std::max(out.lambda, 1.0);
  return out;
}

// Unit directions missing from the affine span of the node set.
std::vector<Eigen::VectorXd> missing_directions(const NodeSet& set) {
  const Eigen::MatrixXd d = scaled_displacements(set);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(d, Eigen::ComputeFullV);
  const double tol = 1e-10 * std::max(1.0, svd.singularValues().size() > 0
                                               ? svd.singularValues()(0)
                                               : 1.0);
  std::vector<Eigen::VectorXd> dirs;
  for (int j = 0; j < set.dim(); ++j) {
    const bool spanned = j < svd.singularValues().size() && svd.singularValues()(j) > tol;
    if (!spanned) dirs.push_back(svd.matrixV().col(j));
  }
  return dirs;
}

}  // namespace

void NodeSet::validate() const {
  if (!(radius > 0.0)) throw std::invalid_argument("node set radius must be positive");
  if (!center.allFinite()) throw std::invalid_argument("node set center not finite");
  for (const auto& node : nodes) {
    if (node.x.size() != center.size())
      throw std::invalid_argument("node dimension mismatch");
    if (!node.x.allFinite() || !std::isfinite(node.value) || !std::isfinite(node.err))
      throw std::invalid_argument("node set contains non-finite entries");
    if ((node.x - center).norm() > 2.0 * radius * (1.0 + 1e-9))
      throw std::invalid_argument("node outside the 2*radius locality window");
  }
  if (center_node(*this) < 0)
    throw std::invalid_argument("node set must contain the center");
}

LocalModel build_model(const NodeSet& set) {
  set.validate();
  const int m = static_cast<int>(set.nodes.size());
  const int n = set.dim();
  if (m < n + 1)
    throw GeometryError("model build needs at least n+1 nodes; add geometry points");

  const Eigen::MatrixXd d = scaled_displacements(set);
  Eigen::MatrixXd affine(m, n + 1);
  affine.col(0).setOnes();
  affine.rightCols(n) = d;
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(affine);
    qr.setThreshold(1e-10);
    if (qr.rank() < n + 1)
      throw GeometryError("degenerate node geometry; improve geometry before building");
  }

  Eigen::VectorXd values(m);
  for (int i = 0; i < m; ++i) values(i) = set.nodes[i].value;

  LocalModel model;
  model.center = set.center;

  if (m == n + 1) {
    const Eigen::VectorXd sol = affine.fullPivLu().solve(values);
    model.constant = sol(0);
    model.gradient = sol.tail(n) / set.radius;
    model.hessian = Eigen::MatrixXd::Zero(n, n);
    return model;
  }

  // Minimum-Frobenius-norm regression in dual form.  The kernel block
  // Q_ij = (d_i . d_j)^2 / 2 carries the quadratic part; the regularizer
  // encodes relative node weights 1/max(err, 0.1 * median err), so that the
  // model trusts precise nodes more.  A uniform weight profile reduces to
  // plain (unweighted) regression independent of the common error level.
  std::vector<double> errs;
  errs.reserve(m);
  for (const auto& node : set.nodes) errs.push_back(node.err);
  std::nth_element(errs.begin(), errs.begin() + m / 2, errs.end());
  const double median_err = errs[m / 2];
  const int center_idx = center_node(set);

  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(m + n + 1, m + n + 1);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      const double dot = d.row(i).dot(d.row(j));
      kkt(i, j) = 0.5 * dot * dot;
    }
  double max_weight = 0.0;
  for (int i = 0; i < m; ++i)
    max_weight = std::max(max_weight, std::max(set.nodes[i].err, 0.1 * median_err));
  for (int i = 0; i < m; ++i) {
    const double rel = max_weight > 0.0
                           ? std::max(set.nodes[i].err, 0.1 * median_err) / max_weight
                           : 1.0;
    // The center is pinned down tightly so the model reproduces the
    // corrected value at the current iterate.
    kkt(i, i) += (i == center_idx) ? 1e-13 : std::max(1e-9 * rel, 1e-11);
  }
  kkt.block(0, m, m, n + 1) = affine;
  kkt.block(m, 0, n + 1, m) = affine.transpose();

  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + n + 1);
  rhs.head(m) = values;

  const Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);
  const Eigen::VectorXd lambda = sol.head(m);
  const Eigen::VectorXd tail = sol.tail(n + 1);

  Eigen::MatrixXd hess_scaled = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < m; ++i)
    hess_scaled += lambda(i) * d.row(i).transpose() * d.row(i);

  model.constant = tail(0);
  model.gradient = tail.tail(n) / set.radius;
  model.hessian = (hess_scaled + hess_scaled.transpose()) / (2.0 * set.radius * set.radius);
  return model;
}

PoisednessReport poisedness(const NodeSet& set, double lambda_max) {
  set.validate();
  if (set.nodes.size() < 2)
    throw std::invalid_argument("poisedness needs at least two nodes");
  const PoisednessDetail detail = poisedness_detail(set);
  PoisednessReport report;
  if (detail.degenerate) {
    const auto dirs = missing_directions(set);
    if (!dirs.empty())
      report.worst_point_suggestion = set.center + set.radius * dirs.front();
    return report;
  }
  report.lambda = detail.lambda;
  report.worst_point_suggestion = detail.argmax[detail.worst];
  report.meets_threshold = detail.lambda <= lambda_max;
  return report;
}

std::vector<Eigen::VectorXd> improve_geometry(const NodeSet& set, double lambda_max) {
  NodeSet work = set;
  std::vector<Eigen::VectorXd> suggestions;
  double previous = std::numeric_limits<double>::infinity();
  const int max_rounds = 6 * (set.dim() + 1);
  for (int round = 0; round < max_rounds; ++round) {
    const PoisednessDetail detail = poisedness_detail(work);
    if (detail.degenerate) {
      for (const auto& dir : missing_directions(work)) {
        const Eigen::VectorXd point = work.center + work.radius * dir;
        suggestions.push_back(point);
        work.nodes.push_back({point, 0.0, 0.0});
      }
      continue;
    }
    if (detail.lambda <= lambda_max) break;
    if (detail.lambda >= previous) break;  // no progress, stop suggesting
    previous = detail.lambda;

    // Replace the subset node owning the worst Lagrange polynomial with
    // that polynomial's maximizer; never evict the center.
    const int center_idx = center_node(work);
    int choice = -1;
    double worst_value = -1.0;
    for (int j = 0; j < static_cast<int>(detail.subset.size()); ++j) {
      if (detail.subset[j] == center_idx) continue;
      if (detail.poly_max[j] > worst_value) {
        worst_value = detail.poly_max[j];
        choice = j;
      }
    }
    if (choice < 0) break;
    const Eigen::VectorXd point = detail.argmax[choice];
    suggestions.push_back(point);
    work.nodes[detail.subset[choice]] = {point, 0.0, 0.0};
  }
  return suggestions;
}

ConvergenceDiagnostics fit_error_decay(const std::vector<double>& radii,
                                       const std::vector<double>& value_errors,
                                       const std::vector<double>& gradient_errors) {
  if (radii.size() < 2 || radii.size() != value_errors.size() ||
      radii.size() != gradient_errors.size())
    throw std::invalid_argument("decay fit needs matching series of length >= 2");
  auto fit = [&](const std::vector<double>& errors) {
    const int k = static_cast<int>(radii.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (int i = 0; i < k; ++i) {
      const double x = std::log(radii[i]);
      const double y = std::log(std::max(errors[i], 1e-300));
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    const double slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    const double intercept = (sy - slope * sx) / k;
    return std::pair<double, double>(slope, std::exp(intercept));
  };
  ConvergenceDiagnostics diag;
  const auto [value_slope, kappa1] = fit(value_errors);
  const auto [gradient_slope, kappa2] = fit(gradient_errors);
  diag.value_slope = value_slope;
  diag.gradient_slope = gradient_slope;
  diag.kappa1_hat = kappa1;
  diag.kappa2_hat = kappa2;
  return diag;
}

}  // namespace snowpac::surrogate
