#include "snowpac/subsolver.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace snowpac::subsolver {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Objective of the active mode: the raw model in M1, the restoration sum
// over violated constraints in M2, or an explicit linear form for the
// criticality measure.
struct ModeObjective {
  enum class Kind { Model, Restoration, Linear };
  Kind kind = Kind::Model;
  const surrogate::LocalModel* model = nullptr;
  const std::vector<surrogate::LocalModel>* constraints = nullptr;
  const std::vector<int>* active = nullptr;
  double lambda_g = 0.0;
  Eigen::VectorXd linear_gradient;

  double value(const Eigen::VectorXd& s) const {
    switch (kind) {
      case Kind::Model:
        return model->value_at(s);
      case Kind::Restoration: {
        double total = 0.0;
        for (int i : *active) {
          const double v = (*constraints)[static_cast<size_t>(i)].value_at(s);
          total += v * v + lambda_g * v;
        }
        return total;
      }
      case Kind::Linear:
        return linear_gradient.dot(s);
    }
    return 0.0;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& s) const {
    switch (kind) {
      case Kind::Model:
        return model->gradient_at(s);
      case Kind::Restoration: {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(s.size());
        for (int i : *active) {
          const auto& c = (*constraints)[static_cast<size_t>(i)];
          g += (2.0 * c.value_at(s) + lambda_g) * c.gradient_at(s);
        }
        return g;
      }
      case Kind::Linear:
        return linear_gradient;
    }
    return Eigen::VectorXd::Zero(s.size());
  }
};

// Augmented constraints m_i(s) + scale*||s||^2 <= bounds[i] inside the
// ball, with bounds inflated just enough to keep the center strictly
// interior for the barrier.
struct FeasibleSet {
  const std::vector<surrogate::LocalModel>* constraints = nullptr;
  Eigen::VectorXd bounds;
  double scale = 0.0;
  double radius = 1.0;

  int count() const {
    return constraints ? static_cast<int>(constraints->size()) : 0;
  }
  double augmented(int i, const Eigen::VectorXd& s) const {
    return (*constraints)[static_cast<size_t>(i)].value_at(s) + scale * s.squaredNorm();
  }
  bool strictly_feasible(const Eigen::VectorXd& s) const {
    if (s.norm() > radius * (1.0 + 1e-12)) return false;
    for (int i = 0; i < count(); ++i)
      if (augmented(i, s) >= bounds[i]) return false;
    return true;
  }
  bool feasible(const Eigen::VectorXd& s) const {
    if (s.norm() > radius * (1.0 + 1e-9)) return false;
    for (int i = 0; i < count(); ++i) {
      const double slop = 1e-12 * std::max(1.0, std::abs(bounds[i]));
      if (augmented(i, s) > bounds[i] + slop) return false;
    }
    return true;
  }
};

double barrier_value(const ModeObjective& obj, const FeasibleSet& feas, double mu,
                     const Eigen::VectorXd& s) {
  double v = obj.value(s);
  for (int i = 0; i < feas.count(); ++i) {
    const double gap = feas.bounds[i] - feas.augmented(i, s);
    if (gap <= 0.0) return kInf;
    v -= mu * std::log(gap);
  }
  return v;
}

Eigen::VectorXd barrier_gradient(const ModeObjective& obj, const FeasibleSet& feas,
                                 double mu, const Eigen::VectorXd& s) {
  Eigen::VectorXd g = obj.gradient(s);
  for (int i = 0; i < feas.count(); ++i) {
    const double gap = feas.bounds[i] - feas.augmented(i, s);
    const auto& c = (*feas.constraints)[static_cast<size_t>(i)];
    g += (mu / gap) * (c.gradient_at(s) + (2.0 * feas.scale) * s);
  }
  return g;
}

Eigen::VectorXd project_ball(Eigen::VectorXd s, double radius) {
  const double nrm = s.norm();
  if (nrm > radius) s *= radius / nrm;
  return s;
}

// Projected gradient descent with backtracking on the barrier relaxation.
Eigen::VectorXd minimize_barrier(const ModeObjective& obj, const FeasibleSet& feas,
                                 double mu, Eigen::VectorXd s) {
  const double rho = feas.radius;
  const double tol = 1e-8 * rho;
  double fs = barrier_value(obj, feas, mu, s);
  double t_accepted = 0.0;
  for (int iter = 0; iter < 200; ++iter) {
    const Eigen::VectorXd g = barrier_gradient(obj, feas, mu, s);
    const double gn = g.norm();
    if (gn < 1e-16) break;
    double t = 2.0 * rho / gn;
    if (t_accepted > 0.0) t = std::min(4.0 * t_accepted, t);
    double moved = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < 45 && !accepted; ++bt) {
      const Eigen::VectorXd cand = project_ball(s - t * g, rho);
      const double dn2 = (cand - s).squaredNorm();
      if (feas.strictly_feasible(cand)) {
        const double fc = barrier_value(obj, feas, mu, cand);
        if (fc <= fs - 1e-4 * dn2 / t) {
          moved = std::sqrt(dn2);
          s = cand;
          fs = fc;
          t_accepted = t;
          accepted = true;
        }
      }
      if (!accepted) t *= 0.5;
    }
    if (!accepted || moved <= tol) break;
  }
  return s;
}

Eigen::VectorXd shrink_to_feasible(const FeasibleSet& feas, Eigen::VectorXd s) {
  for (int i = 0; i < 60 && !feas.strictly_feasible(s); ++i) s *= 0.5;
  if (!feas.strictly_feasible(s)) s.setZero();
  return s;
}

// Minimizer of the mode objective along the steepest-descent ray, clipped
// to the ball: the exact Cauchy point for quadratic objectives, a sampled
// one for the quartic restoration objective.
Eigen::VectorXd cauchy_point(const ModeObjective& obj, double rho, int n) {
  const Eigen::VectorXd g0 = obj.gradient(Eigen::VectorXd::Zero(n));
  const double gn = g0.norm();
  if (gn < 1e-16) return Eigen::VectorXd::Zero(n);
  const Eigen::VectorXd dir = -g0 / gn;
  double t_star = rho;
  if (obj.kind == ModeObjective::Kind::Model) {
    const double curv = dir.dot(obj.model->hessian * dir);
    if (curv > 0.0) t_star = std::min(rho, gn / curv);
  } else if (obj.kind == ModeObjective::Kind::Restoration) {
    double best_v = obj.value(Eigen::VectorXd::Zero(n));
    t_star = 0.0;
    auto probe = [&](double t) {
      const double v = obj.value(t * dir);
      if (v < best_v) {
        best_v = v;
        t_star = t;
      }
    };
    for (int j = 1; j <= 128; ++j) probe(rho * j / 128.0);
    for (int k = 1; k <= 20; ++k) probe(rho * std::pow(0.5, k));
  }
  return t_star * dir;
}

struct CoreResult {
  Eigen::VectorXd step;
  double objective = 0.0;
};

// Multi-start barrier solve with a final ray polish; always returns a
// feasible point no worse than the center.
CoreResult solve_core(const ModeObjective& obj, const FeasibleSet& feas, int n,
                      RngStream& rng) {
  const double rho = feas.radius;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);

  std::vector<Eigen::VectorXd> starts;
  starts.push_back(zero);
  const Eigen::VectorXd cauchy = project_ball(cauchy_point(obj, rho, n), rho);
  starts.push_back(shrink_to_feasible(feas, cauchy));
  if (obj.kind == ModeObjective::Kind::Model) {
    // Eigenvector starts catch boundary minima of indefinite quadratics.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(obj.model->hessian);
    if (eig.info() == Eigen::Success) {
      const Eigen::VectorXd v = rho * eig.eigenvectors().col(0);
      starts.push_back(shrink_to_feasible(feas, v));
      starts.push_back(shrink_to_feasible(feas, -v));
    }
  }
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXd d(n);
    for (int i = 0; i < n; ++i) d(i) = rng.normal();
    const double dn = d.norm();
    if (dn < 1e-14) {
      starts.push_back(zero);
      continue;
    }
    const double r = rho * std::pow(rng.uniform(), 1.0 / n);
    starts.push_back(shrink_to_feasible(feas, (r / dn) * d));
  }

  std::vector<double> mus;
  if (feas.count() == 0) {
    mus = {0.0};
  } else {
    const double scale =
        std::max(1.0, std::abs(obj.value(zero)) + obj.gradient(zero).norm() * rho);
    mus = {1e-1 * scale, 1e-3 * scale, 1e-5 * scale, 1e-7 * scale};
  }

  std::vector<Eigen::VectorXd> candidates;
  candidates.push_back(zero);
  candidates.push_back(cauchy);
  for (const auto& s0 : starts) {
    Eigen::VectorXd s = s0;
    for (double mu : mus) s = minimize_barrier(obj, feas, mu, s);
    candidates.push_back(s);
  }

  Eigen::VectorXd best = zero;
  double best_v = obj.value(zero);
  for (const auto& cand : candidates) {
    if (!feas.feasible(cand)) continue;
    const Eigen::VectorXd c = project_ball(cand, rho);
    const double v = obj.value(c);
    if (v < best_v) {
      best_v = v;
      best = c;
    }
  }

  const double bn = best.norm();
  if (bn > 1e-14) {
    const Eigen::VectorXd dir = best / bn;
    for (int j = 1; j <= 128; ++j) {
      const Eigen::VectorXd c = (rho * j / 128.0) * dir;
      if (!feas.feasible(c)) continue;
      const double v = obj.value(c);
      if (v < best_v) {
        best_v = v;
        best = c;
      }
    }
  }
  return {best, best_v};
}

// Effective barrier bounds: nominal slack or zero, inflated by a hair
// whenever the center model value sits on or above it.
Eigen::VectorXd effective_bounds(const SubproblemSpec& spec, Mode mode,
                                 const Eigen::VectorXd& slacks) {
  const int r = static_cast<int>(spec.constraint_models.size());
  Eigen::VectorXd bounds(r);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(spec.dim());
  for (int i = 0; i < r; ++i) {
    const double m0 = spec.constraint_models[static_cast<size_t>(i)].value_at(zero);
    const double raw = (mode == Mode::M2 && slacks.size() > 0) ? slacks(i) : 0.0;
    const double delta = 1e-9 * std::max(1.0, std::abs(m0));
    bounds(i) = std::max(raw, m0 + delta);
  }
  return bounds;
}

bool center_violates(const SubproblemSpec& spec) {
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(spec.dim());
  for (const auto& c : spec.constraint_models) {
    const double m0 = c.value_at(zero);
    if (m0 > 1e-8 * std::max(1.0, std::abs(m0))) return true;
  }
  return false;
}

}  // namespace

void SubproblemSpec::validate() const {
  if (!std::isfinite(radius) || radius <= 0.0)
    throw std::invalid_argument("subproblem radius must be positive and finite");
  const int n = dim();
  if (n == 0) throw std::invalid_argument("objective model has no dimension");
  if (objective_model.hessian.rows() != n || objective_model.hessian.cols() != n)
    throw std::invalid_argument("objective hessian dimension mismatch");
  const int r = static_cast<int>(constraint_models.size());
  for (const auto& c : constraint_models) {
    if (c.gradient.size() != n || c.hessian.rows() != n || c.hessian.cols() != n)
      throw std::invalid_argument("constraint model dimension mismatch");
  }
  if (!(lambda_g >= 0.0)) throw std::invalid_argument("lambda_g must be nonnegative");
  if (!std::isfinite(ibp_scale) || ibp_scale < 0.0)
    throw std::invalid_argument("inner boundary path scale must be nonnegative");
  if (slacks.size() != 0 && slacks.size() != r)
    throw std::invalid_argument("slack count must match the constraint count");
  for (Eigen::Index i = 0; i < slacks.size(); ++i) {
    if (!std::isfinite(slacks(i)) || slacks(i) < 0.0)
      throw std::invalid_argument("slacks must be nonnegative and finite");
  }
  for (int i : active_index_set) {
    if (i < 0 || i >= r) throw std::invalid_argument("active constraint index out of range");
  }
  if (mode == Mode::M1) {
    if (!active_index_set.empty())
      throw std::invalid_argument("M1 admits no active restoration set");
    if (slacks.size() > 0 && slacks.lpNorm<Eigen::Infinity>() > 0.0)
      throw std::invalid_argument("M1 admits no constraint slacks");
  }
}

double inner_boundary_path(const Eigen::VectorXd& s, double scale) {
  if (!std::isfinite(scale) || scale < 0.0)
    throw std::invalid_argument("inner boundary path scale must be nonnegative");
  return scale * s.squaredNorm();
}

double inner_boundary_path_scale(const std::vector<surrogate::LocalModel>& constraint_models) {
  double max_norm = 0.0;
  for (const auto& c : constraint_models) {
    if (c.hessian.size() == 0) continue;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c.hessian);
    if (eig.info() != Eigen::Success) continue;
    max_norm = std::max(max_norm, eig.eigenvalues().cwiseAbs().maxCoeff());
  }
  return std::max(1.0, max_norm) / 2.0;
}

StepResult solve_trial_step(const SubproblemSpec& spec, RngStream& rng) {
  spec.validate();
  const int n = spec.dim();
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);

  ModeObjective obj;
  if (spec.mode == Mode::M1) {
    obj.kind = ModeObjective::Kind::Model;
    obj.model = &spec.objective_model;
  } else {
    if (spec.active_index_set.empty()) return {zero, 0.0, true};
    obj.kind = ModeObjective::Kind::Restoration;
    obj.constraints = &spec.constraint_models;
    obj.active = &spec.active_index_set;
    obj.lambda_g = spec.lambda_g;
  }

  FeasibleSet feas;
  feas.constraints = &spec.constraint_models;
  feas.scale = spec.ibp_scale;
  feas.radius = spec.radius;
  feas.bounds = effective_bounds(spec, spec.mode, spec.slacks);

  const bool center_ok = spec.mode == Mode::M2 || !center_violates(spec);
  const CoreResult core = solve_core(obj, feas, n, rng);
  return {core.step, core.objective, center_ok};
}

double criticality(const SubproblemSpec& spec) {
  spec.validate();
  const int n = spec.dim();
  const int r = static_cast<int>(spec.constraint_models.size());
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);

  Mode mode = spec.mode;
  std::vector<int> active = spec.active_index_set;
  Eigen::VectorXd slacks =
      spec.slacks.size() > 0 ? spec.slacks : Eigen::VectorXd::Zero(r);
  if (mode == Mode::M1 && center_violates(spec)) {
    mode = Mode::M2;
    active.clear();
    for (int i = 0; i < r; ++i) {
      const double m0 = spec.constraint_models[static_cast<size_t>(i)].value_at(zero);
      if (m0 > 0.0) active.push_back(i);
      slacks(i) = std::max(m0, 0.0);
    }
  }

  Eigen::VectorXd g;
  if (mode == Mode::M1) {
    g = spec.objective_model.gradient;
  } else {
    g = Eigen::VectorXd::Zero(n);
    for (int i : active) {
      const auto& c = spec.constraint_models[static_cast<size_t>(i)];
      g += (2.0 * c.value_at(zero) + spec.lambda_g) * c.gradient;
    }
  }
  if (g.norm() < 1e-300) return 0.0;

  ModeObjective obj;
  obj.kind = ModeObjective::Kind::Linear;
  obj.linear_gradient = g;

  FeasibleSet feas;
  feas.constraints = &spec.constraint_models;
  feas.scale = spec.ibp_scale;
  feas.radius = spec.radius;
  feas.bounds = effective_bounds(spec, mode, slacks);

  RngStream rng(0x51edc0deULL);
  const CoreResult core = solve_core(obj, feas, n, rng);
  return std::max(0.0, -core.objective / spec.radius);
}

}  // namespace snowpac::subsolver
