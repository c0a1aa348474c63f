#include "snowpac/engine.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace snowpac::engine {

namespace {

constexpr std::uint64_t kEngineStreamKey = 0x60d1ce5u;
constexpr int kWindowCap = 100;
constexpr int kCriticalityBound = 50;
const double kInf = std::numeric_limits<double>::infinity();

// Value of the mode objective at the center (step = 0): the objective-model
// constant in M1, the restoration merit of the constraint-model constants
// in M2.
double model_merit_at_zero(const subsolver::SubproblemSpec& spec) {
  if (spec.mode == subsolver::Mode::M1) return spec.objective_model.constant;
  double sum = 0.0;
  for (int i : spec.active_index_set) {
    const double c = spec.constraint_models[static_cast<std::size_t>(i)].constant;
    sum += c * c + spec.lambda_g * c;
  }
  return sum;
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(0.0 < eta0 && eta0 < eta1 && eta1 < 1.0))
    throw std::invalid_argument("acceptance thresholds need 0 < eta0 < eta1 < 1");
  if (!(0.0 < gamma_shrink && gamma_shrink < 1.0 && gamma_inc > 1.0))
    throw std::invalid_argument("radius factors need 0 < gamma_shrink < 1 < gamma_inc");
  if (!(0.0 < omega && omega < 1.0) || !(0.0 < theta_tr && theta_tr < 1.0))
    throw std::invalid_argument("omega and theta_tr must lie in (0, 1)");
  if (!(rho_min > 0.0 && rho_min < rho0 && rho0 <= rho_max))
    throw std::invalid_argument("radii need 0 < rho_min < rho0 <= rho_max");
  if (!(lambda_t > 0.0) || !std::isfinite(lambda_t))
    throw std::invalid_argument("lambda_t must be positive and finite");
  if (!(lambda_max >= 1.0)) throw std::invalid_argument("lambda_max must be at least 1");
  if (!(lambda_g >= 0.0)) throw std::invalid_argument("lambda_g must be nonnegative");
  if (!(t_quantile > 0.0)) throw std::invalid_argument("t_quantile must be positive");
  if (!(crit_threshold > 0.0) || !(crit_mu > 0.0))
    throw std::invalid_argument("criticality parameters must be positive");
  if (gp_refit_every < 1 || lambda_k < 1)
    throw std::invalid_argument("refit cadences must be at least 1");
  if (n_max < 0) throw std::invalid_argument("evaluation budget must be nonnegative");
}

std::string termination_name(Termination t) {
  switch (t) {
    case Termination::Budget: return "budget";
    case Termination::RadiusFloor: return "radius-floor";
    case Termination::SubproblemFailure: return "subproblem-failure";
    case Termination::BlackBoxFailure: return "black-box-failure";
  }
  return "unknown";
}

TrustRegionState update_radius(const TrustRegionState& state, double factor,
                               const OptimizerConfig& config) {
  if (!(factor > 0.0) || !std::isfinite(factor))
    throw std::invalid_argument("radius factor must be positive and finite");
  TrustRegionState next = state;
  const double floor = config.lambda_t * std::sqrt(std::max(state.eps_max, 0.0));
  next.rho = std::min(std::max(factor * state.rho, floor), config.rho_max);
  return next;
}

double acceptance_ratio(double f_old, double f_new, double m_old, double m_new) {
  const double predicted = m_old - m_new;
  if (std::abs(predicted) <= 1e-14 * std::max(1.0, std::abs(m_old))) return -kInf;
  return (f_old - f_new) / predicted;
}

Eigen::VectorXd sample_exploration_point(const Eigen::VectorXd& x, double rho,
                                         RngStream& rng, bool std_scale) {
  if (!(rho > 0.0) || !std::isfinite(rho))
    throw std::invalid_argument("exploration needs a positive radius");
  const double width = 0.3 * std::sqrt(rho);
  const double sd = std_scale ? width : std::sqrt(width);
  Eigen::VectorXd out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out(i) = x(i) + sd * rng.normal();
  return out;
}

Optimizer::Optimizer(problems::RobustProblem problem, OptimizerConfig config)
    : problem_(std::move(problem)),
      config_(config),
      rng_(config.seed, kEngineStreamKey) {
  config_.validate();
  problem_.base.validate();
  gps_.resize(static_cast<std::size_t>(1 + problem_.num_constraints()));
  state_.rho = config_.rho0;
}

const EvaluationRecord& Optimizer::evaluate(const Eigen::VectorXd& x, bool trial) {
  const auto est = problem_.estimate(x, static_cast<std::uint64_t>(db_.size()));
  const int r = problem_.num_constraints();
  EvaluationRecord rec;
  rec.point = x;
  rec.raw.resize(1 + r);
  rec.raw_err.resize(1 + r);
  rec.raw(0) = est.objective.value;
  rec.raw_err(0) = est.objective.err_bound;
  for (int i = 0; i < r; ++i) {
    rec.raw(1 + i) = est.constraints[static_cast<std::size_t>(i)].value;
    rec.raw_err(1 + i) = est.constraints[static_cast<std::size_t>(i)].err_bound;
  }
  if (!rec.raw.allFinite() || !rec.raw_err.allFinite())
    throw std::runtime_error("black box returned a non-finite estimate");
  rec.corrected = rec.raw;
  rec.corrected_err = rec.raw_err;
  rec.iteration = iteration_;
  rec.trial = trial;
  rec.mode = state_.mode;
  db_.push_back(std::move(rec));
  ++evals_since_fit_;
  return db_.back();
}

void Optimizer::refresh_gps() {
  const int n = problem_.dim();
  const int r = problem_.num_constraints();
  const int m_all = static_cast<int>(db_.size());
  if (m_all == 0) return;

  // Training window: the most recent points within twice the radius of the
  // center, capped; widened to the whole history when nearly empty.
  std::vector<int> window;
  for (int i = m_all - 1; i >= 0 && static_cast<int>(window.size()) < kWindowCap; --i) {
    if ((db_[static_cast<std::size_t>(i)].point - state_.x).norm() <=
        2.0 * state_.rho * (1.0 + 1e-12))
      window.push_back(i);
  }
  if (static_cast<int>(window.size()) < std::min(m_all, 3)) {
    window.clear();
    for (int i = m_all - 1; i >= 0 && static_cast<int>(window.size()) < kWindowCap; --i)
      window.push_back(i);
  }
  std::reverse(window.begin(), window.end());

  const int m = static_cast<int>(window.size());
  Eigen::MatrixXd pts(m, n);
  for (int i = 0; i < m; ++i)
    pts.row(i) = db_[static_cast<std::size_t>(window[static_cast<std::size_t>(i)])]
                     .point.transpose();

  const bool want_fit =
      evals_since_fit_ >= config_.gp_refit_every ||
      rejections_since_fit_ >= config_.lambda_k * n;
  bool fitted_now = false;
  for (int b = 0; b <= r; ++b) {
    auto& channel = gps_[static_cast<std::size_t>(b)];
    Eigen::VectorXd vals(m), errs(m);
    for (int i = 0; i < m; ++i) {
      const auto& rec = db_[static_cast<std::size_t>(window[static_cast<std::size_t>(i)])];
      vals(i) = rec.raw(b);
      errs(i) = rec.raw_err(b);
    }
    if ((!channel.fitted || want_fit) && m >= 3) {
      const auto bounds = gp::default_bounds(pts, vals);
      const int restarts = channel.fitted ? 1 : 2;
      const auto fit = gp::fit_hyperparameters(pts, vals, errs, config_.t_quantile, bounds,
                                               restarts, rng_, false);
      if (fit.ok) {
        channel.params = fit.params;
        channel.fitted = true;
        fitted_now = true;
      }
    }
    if (!channel.fitted) {
      // Too little data for a likelihood fit: fall back to the data spread.
      const double sd = m > 1 ? std::sqrt((vals.array() - vals.mean()).square().sum() /
                                          static_cast<double>(m - 1))
                              : 0.0;
      channel.params.sigma = std::max(sd, 1e-3);
      channel.params.lengths = Eigen::VectorXd::Constant(n, std::max(2.0 * state_.rho, 1e-3));
      channel.params.ard = false;
    }
    channel.surrogate = std::make_unique<gp::GaussianSurrogate>(channel.params, pts, vals,
                                                                errs, config_.t_quantile);
    const auto corrected =
        gp::correct_evaluations(*channel.surrogate, pts, vals, errs, config_.t_quantile);
    for (int i = 0; i < m; ++i) {
      auto& rec = db_[static_cast<std::size_t>(window[static_cast<std::size_t>(i)])];
      rec.corrected(b) = corrected[static_cast<std::size_t>(i)].value_hat;
      rec.corrected_err(b) = corrected[static_cast<std::size_t>(i)].err_hat;
    }
  }
  if (fitted_now) {
    evals_since_fit_ = 0;
    rejections_since_fit_ = 0;
  }
  refresh_best();
}

void Optimizer::refresh_best() {
  for (std::size_t i = 0; i < db_.size(); ++i) {
    const auto& c = db_[i].corrected;
    bool feasible = true;
    for (Eigen::Index j = 1; j < c.size(); ++j) feasible = feasible && c(j) <= 0.0;
    if (!feasible) continue;
    if (!have_best_ || c(0) < best_value_) {
      have_best_ = true;
      best_index_ = static_cast<int>(i);
      best_value_ = c(0);
      best_constraints_ = c.tail(c.size() - 1);
    }
  }
}

bool Optimizer::rebuild_models() {
  const int n = problem_.dim();
  const int r = problem_.num_constraints();
  models_ok_ = false;
  if (center_index_ < 0) return false;

  // A record whose corrected error alone would lift the noise floor past
  // rho_max cannot inform a model at any admissible radius; such points are
  // left to the Gaussian processes and never used as model nodes.
  const double noise_ceiling =
      (config_.rho_max / config_.lambda_t) * (config_.rho_max / config_.lambda_t);

  const auto admitted_window = [this](double ceiling) {
    std::vector<int> picked;
    for (int i = static_cast<int>(db_.size()) - 1;
         i >= 0 && static_cast<int>(picked.size()) < kWindowCap - 1; --i) {
      if (i == center_index_) continue;
      const auto& rec = db_[static_cast<std::size_t>(i)];
      if (rec.corrected_err.maxCoeff() > ceiling * (1.0 + 1e-12)) continue;
      if ((rec.point - state_.x).norm() <= 2.0 * state_.rho * (1.0 + 1e-12))
        picked.push_back(i);
    }
    picked.push_back(center_index_);
    std::reverse(picked.begin(), picked.end());
    return picked;
  };

  // The noise floor tracks the worst error bound among the model nodes, so
  // admission needs an anchor at the uncertainty scale the iteration is
  // actually operating at. The center alone is a poor anchor: a sample-lucky
  // center reports a near-zero bound and would starve the model of exactly
  // the noisier neighbours that carry the local slope. The worst bound among
  // the center's nearest neighbours tracks the operating scale instead:
  // recent probes land close to the center and hold the ceiling open while
  // they are locally relevant, then age out of the nearest set as quieter
  // points accumulate. A radius-coupled ceiling would instead re-admit noisy
  // nodes whenever the region grows and wedge the radius at the scale of
  // their error bounds.
  std::vector<std::pair<double, double>> near;  // (distance, error bound)
  for (int i = static_cast<int>(db_.size()) - 1;
       i >= 0 && static_cast<int>(near.size()) < kWindowCap; --i) {
    if (i == center_index_) continue;
    const auto& rec = db_[static_cast<std::size_t>(i)];
    const double dist = (rec.point - state_.x).norm();
    if (dist <= 2.0 * state_.rho * (1.0 + 1e-12))
      near.emplace_back(dist, rec.corrected_err.maxCoeff());
  }
  const std::size_t k_near = std::min<std::size_t>(6, near.size());
  std::partial_sort(near.begin(), near.begin() + static_cast<std::ptrdiff_t>(k_near),
                    near.end());
  double scale_anchor = 0.0;
  for (std::size_t i = 0; i < k_near; ++i)
    scale_anchor = std::max(scale_anchor, near[i].second);

  for (int round = 0; round < 5; ++round) {
    // The final round relaxes admission to the hard cap so a model is still
    // built from what exists rather than failing.
    const bool relaxed = round == 4;
    const double center_err =
        db_[static_cast<std::size_t>(center_index_)].corrected_err.maxCoeff();
    const double ceiling =
        relaxed ? noise_ceiling : 2.0 * std::max(center_err, scale_anchor);

    // Node window: the center plus the most recent admissible points within
    // twice the radius, capped like the Gaussian-process window.
    std::vector<int> picked = admitted_window(ceiling);

    surrogate::NodeSet geometry;
    geometry.center = state_.x;
    geometry.radius = state_.rho;
    for (int idx : picked) {
      const auto& rec = db_[static_cast<std::size_t>(idx)];
      geometry.nodes.push_back({rec.point, rec.corrected(0), rec.corrected_err(0)});
    }

    bool need_points = static_cast<int>(picked.size()) < n + 1;
    if (!need_points)
      need_points = !surrogate::poisedness(geometry, config_.lambda_max).meets_threshold;

    if (!need_points) {
      try {
        std::vector<surrogate::LocalModel> built(static_cast<std::size_t>(1 + r));
        built[0] = surrogate::build_model(geometry);
        for (int b = 1; b <= r; ++b) {
          for (std::size_t j = 0; j < picked.size(); ++j) {
            const auto& rec = db_[static_cast<std::size_t>(picked[j])];
            geometry.nodes[j].value = rec.corrected(b);
            geometry.nodes[j].err = rec.corrected_err(b);
          }
          built[static_cast<std::size_t>(b)] = surrogate::build_model(geometry);
        }
        models_ = std::move(built);
        model_nodes_ = picked;
        double eps = 0.0;
        for (int idx : picked)
          eps = std::max(eps, db_[static_cast<std::size_t>(idx)].corrected_err.maxCoeff());
        state_.eps_max = eps;
        state_.rho = std::min(std::max(state_.rho, config_.lambda_t * std::sqrt(eps)),
                              config_.rho_max);
        models_ok_ = true;
        return true;
      } catch (const surrogate::GeometryError&) {
        // fall through to geometry improvement
      }
    }

    if (relaxed) return false;  // nothing further to try
    if (!budget_left()) return false;
    const auto suggestions = surrogate::improve_geometry(geometry, config_.lambda_max);
    if (suggestions.empty()) return false;
    bool evaluated = false;
    for (const auto& point : suggestions) {
      if (!budget_left()) break;
      evaluate(point);
      evaluated = true;
    }
    if (!evaluated) return false;
    refresh_gps();
    // When none of the fresh points clears the admission ceiling, more
    // improvement rounds cannot help; go straight to the relaxed attempt.
    if (static_cast<int>(admitted_window(ceiling).size()) <=
        static_cast<int>(picked.size()))
      round = 3;
  }
  return false;
}

void Optimizer::recompute_mode() {
  if (center_index_ < 0) return;
  const auto& c = db_[static_cast<std::size_t>(center_index_)].corrected;
  bool infeasible = false;
  for (Eigen::Index j = 1; j < c.size(); ++j) infeasible = infeasible || c(j) > 0.0;
  state_.mode = infeasible ? subsolver::Mode::M2 : subsolver::Mode::M1;
}

subsolver::SubproblemSpec Optimizer::make_spec() const {
  const int r = problem_.num_constraints();
  subsolver::SubproblemSpec spec;
  spec.objective_model = models_[0];
  spec.constraint_models.assign(models_.begin() + 1, models_.end());
  spec.radius = state_.rho;
  spec.lambda_g = config_.lambda_g;
  spec.ibp_scale = subsolver::inner_boundary_path_scale(spec.constraint_models);
  spec.mode = state_.mode;
  if (state_.mode == subsolver::Mode::M2) {
    const auto& c = db_[static_cast<std::size_t>(center_index_)].corrected;
    spec.slacks = Eigen::VectorXd::Zero(r);
    for (int i = 0; i < r; ++i) {
      spec.slacks(i) = std::max(c(1 + i), 0.0);
      if (c(1 + i) > 0.0) spec.active_index_set.push_back(i);
    }
    if (spec.active_index_set.empty()) {
      spec.mode = subsolver::Mode::M1;
      spec.slacks.resize(0);
    }
  }
  return spec;
}

double Optimizer::merit(const EvaluationRecord& rec, const std::vector<int>& active) const {
  if (active.empty()) return rec.corrected(0);
  double sum = 0.0;
  for (int i : active) {
    const double c = rec.corrected(1 + i);
    sum += c * c + config_.lambda_g * c;
  }
  return sum;
}

bool Optimizer::exploration_refresh() {
  if (!budget_left()) return false;
  const Eigen::VectorXd point =
      sample_exploration_point(state_.x, state_.rho, rng_, config_.exploration_std);
  evaluate(point);
  refresh_gps();
  return true;
}

void Optimizer::initialize() {
  if (initialized_) return;
  initialized_ = true;
  iteration_ = 0;
  const int n = problem_.dim();
  const Eigen::VectorXd x0 = problem_.start();
  state_.x = x0;
  state_.rho = config_.rho0;
  state_.mode = subsolver::Mode::M1;

  // The start point is always evaluated, even under a zero budget; the
  // coordinate simplex around it completes the first fully linear set.
  evaluate(x0);
  center_index_ = 0;
  for (int i = 0; i < n; ++i) {
    if (!budget_left()) break;
    evaluate(x0 + config_.rho0 * Eigen::VectorXd::Unit(n, i));
  }
  refresh_gps();
  rebuild_models();
  recompute_mode();
}

void Optimizer::criticality_step() {
  if (!initialized_ || !models_ok_) return;
  int reps = 0;
  while (reps < kCriticalityBound) {
    const auto spec = make_spec();
    const double alpha = subsolver::criticality(spec);
    if (alpha >= config_.crit_threshold || state_.rho <= config_.crit_mu * alpha) return;
    if (!budget_left()) return;
    state_ = update_radius(state_, config_.omega, config_);
    if (!exploration_refresh()) return;
    if (!rebuild_models()) return;
    recompute_mode();
    ++reps;
  }
  const auto spec = make_spec();
  const double alpha = subsolver::criticality(spec);
  if (alpha < config_.crit_threshold && state_.rho > config_.crit_mu * alpha)
    crit_bound_hit_ = true;
}

RunResult Optimizer::run() {
  try {
    if (!initialized_) initialize();
    while (true) {
      if (!budget_left()) return finish(Termination::Budget);
      if (state_.rho < config_.rho_min) return finish(Termination::RadiusFloor);
      if (!models_ok_)
        return finish(budget_left() ? Termination::SubproblemFailure : Termination::Budget);
      ++iteration_;

      // STEP 0: contract while the criticality measure is out of scale.
      criticality_step();
      if (!budget_left()) return finish(Termination::Budget);
      if (state_.rho < config_.rho_min) return finish(Termination::RadiusFloor);
      if (!models_ok_)
        return finish(budget_left() ? Termination::SubproblemFailure : Termination::Budget);

      // STEP 1: solve the trust-region subproblem and evaluate the trial.
      auto spec = make_spec();
      {
        IterationTrace t;
        t.iteration = iteration_;
        t.rho = state_.rho;
        t.eps_max = state_.eps_max;
        t.mode = state_.mode;
        const auto& c = db_[static_cast<std::size_t>(center_index_)].corrected;
        for (Eigen::Index j = 1; j < c.size(); ++j)
          t.center_infeasible = t.center_infeasible || c(j) > 0.0;
        trace_.push_back(t);
      }
      subsolver::StepResult step;
      try {
        step = subsolver::solve_trial_step(spec, rng_);
      } catch (const std::exception&) {
        // Shrink once and retry before giving up on the subproblem.
        state_ = update_radius(state_, config_.gamma_shrink, config_);
        if (!rebuild_models()) return finish(Termination::SubproblemFailure);
        recompute_mode();
        spec = make_spec();
        try {
          step = subsolver::solve_trial_step(spec, rng_);
        } catch (const std::exception&) {
          return finish(Termination::SubproblemFailure);
        }
      }
      const double m_old = model_merit_at_zero(spec);
      const double m_new = step.model_objective_at_step;
      const Eigen::VectorXd trial = state_.x + step.step;
      const int trial_index = static_cast<int>(db_.size());
      evaluate(trial, true);
      refresh_gps();

      // STEP 2: a trial whose raw constraint estimates overshoot the slacks
      // is discarded; the region contracts, and when the corrected values
      // confirm the violation an exploration point keeps the data fresh.
      const int r = problem_.num_constraints();
      Eigen::VectorXd tau = Eigen::VectorXd::Zero(r);
      if (spec.mode == subsolver::Mode::M2) tau = spec.slacks;
      const auto& trial_rec = db_[static_cast<std::size_t>(trial_index)];
      bool raw_infeasible = false;
      for (int i = 0; i < r; ++i)
        raw_infeasible = raw_infeasible || trial_rec.raw(1 + i) > tau(i);
      if (raw_infeasible) {
        state_ = update_radius(state_, config_.theta_tr, config_);
        bool corrected_infeasible = false;
        for (int i = 0; i < r; ++i)
          corrected_infeasible = corrected_infeasible || trial_rec.corrected(1 + i) > tau(i);
        ++rejections_since_fit_;
        if (corrected_infeasible) exploration_refresh();
        if (!rebuild_models()) continue;
        recompute_mode();
        continue;
      }

      // STEP 3: acceptance test on corrected merit against model decrease.
      const double f_old = merit(db_[static_cast<std::size_t>(center_index_)],
                                 spec.active_index_set);
      const double f_new = merit(db_[static_cast<std::size_t>(trial_index)],
                                 spec.active_index_set);
      const double ratio = acceptance_ratio(f_old, f_new, m_old, m_new);
      if (ratio >= config_.eta0) {
        db_[static_cast<std::size_t>(trial_index)].accepted = true;
        center_index_ = trial_index;
        state_.x = trial;
        rejections_since_fit_ = 0;
        state_ = update_radius(state_, ratio >= config_.eta1 ? config_.gamma_inc : 1.0,
                               config_);
      } else {
        ++rejections_since_fit_;
        state_ = update_radius(state_, config_.gamma_shrink, config_);
        exploration_refresh();
      }
      if (!rebuild_models()) continue;
      recompute_mode();
    }
  } catch (const std::exception&) {
    return finish(Termination::BlackBoxFailure);
  }
}

RunResult Optimizer::finish(Termination why) {
  RunResult out;
  out.termination = why;
  out.iterations = iteration_;
  out.evaluations = evaluations();
  out.criticality_bound_hit = crit_bound_hit_;
  out.history = db_;
  out.trace = trace_;
  if (have_best_) {
    out.best_point = db_[static_cast<std::size_t>(best_index_)].point;
    out.best_objective = best_value_;
    out.best_constraints = best_constraints_;
    out.best_feasible = true;
    return out;
  }
  if (db_.empty()) return out;
  // Nothing satisfied the corrected constraints: report the least violating
  // record, breaking ties by the corrected objective.
  int pick = 0;
  double pick_viol = kInf;
  double pick_obj = kInf;
  for (std::size_t i = 0; i < db_.size(); ++i) {
    const auto& c = db_[i].corrected;
    double viol = 0.0;
    for (Eigen::Index j = 1; j < c.size(); ++j) viol = std::max(viol, std::max(c(j), 0.0));
    if (viol < pick_viol || (viol <= pick_viol && c(0) < pick_obj)) {
      pick = static_cast<int>(i);
      pick_viol = viol;
      pick_obj = c(0);
    }
  }
  const auto& rec = db_[static_cast<std::size_t>(pick)];
  out.best_point = rec.point;
  out.best_objective = rec.corrected(0);
  out.best_constraints = rec.corrected.tail(rec.corrected.size() - 1);
  out.best_feasible = false;
  return out;
}

RunResult optimize(const problems::RobustProblem& problem, const OptimizerConfig& config) {
  Optimizer optimizer(problem, config);
  return optimizer.run();
}

}  // namespace snowpac::engine
