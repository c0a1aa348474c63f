#include "snowpac/engine.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "snowpac/problems.hpp"
#include "snowpac/rng.hpp"

using namespace snowpac;

namespace {

Eigen::VectorXd vecd(std::initializer_list<double> entries) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(entries.size()));
  Eigen::Index i = 0;
  for (double v : entries) out(i++) = v;
  return out;
}

using ExactFn = std::function<double(const Eigen::VectorXd&)>;
using ExactVecFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// A noiseless black box built from exact objective and constraint callables;
// the robust estimates then coincide with the exact values and carry zero
// error bounds.
problems::StochasticBlackBox quiet_box(const std::string& name, int dim, ExactFn f,
                                       ExactVecFn c, const Eigen::VectorXd& start,
                                       int num_constraints) {
  problems::StochasticBlackBox box;
  box.name = name;
  box.dim = dim;
  box.num_constraints = num_constraints;
  box.theta_dim = 1;
  box.objective = [f](const Eigen::VectorXd& x, const Eigen::VectorXd&) { return f(x); };
  box.constraints = [c](const Eigen::VectorXd& x, const Eigen::VectorXd&) { return c(x); };
  box.sample_theta = [](RngStream&) { return Eigen::VectorXd::Zero(1).eval(); };
  box.start = start;
  box.domain_lo = Eigen::VectorXd::Constant(dim, -10.0);
  box.domain_hi = Eigen::VectorXd::Constant(dim, 10.0);
  box.deterministic_optimum = start;
  box.deterministic_value = f(start);
  box.exact_mean_objective = f;
  box.exact_mean_constraints = c;
  box.exact_quantile_constraints = [c](const Eigen::VectorXd& x, double) { return c(x); };
  box.exact_cvar_objective = [f](const Eigen::VectorXd& x, double gamma, double) {
    return std::max(gamma, f(x));
  };
  box.exact_objective_quantile = [f](const Eigen::VectorXd& x, double) { return f(x); };
  return box;
}

engine::OptimizerConfig quiet_config(int n_max, std::uint64_t seed) {
  engine::OptimizerConfig config;
  config.n_max = n_max;
  config.seed = seed;
  return config;
}

}  // namespace

TEST_CASE("configuration validation rejects inconsistent settings") {
  engine::OptimizerConfig config;
  CHECK_NOTHROW(config.validate());

  auto expect_invalid = [](engine::OptimizerConfig bad) {
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  };
  {
    auto bad = config;
    bad.eta0 = 0.8;  // >= eta1
    expect_invalid(bad);
  }
  {
    auto bad = config;
    bad.eta1 = 1.0;
    expect_invalid(bad);
  }
  {
    auto bad = config;
    bad.gamma_shrink = 1.0;
    expect_invalid(bad);
  }
  {
    auto bad = config;
    bad.gamma_inc = 0.9;
    expect_invalid(bad);
  }
  {
    auto bad = config;
    bad.omega = 0.0;
    expect_invalid(bad);
  }
  {
    auto bad = config;
    bad.theta_tr = 1.0;
    expect_invalid(bad);
  }
  {
    auto bad = config;
    bad.rho_min = bad.rho0;
    expect_invalid(bad);
  }
  {
    auto bad = config;
    bad.rho_max = 0.5 * bad.rho0;
    expect_invalid(bad);
  }
  {
    auto bad = config;
    bad.lambda_t = 0.0;
    expect_invalid(bad);
  }
  {
    auto bad = config;
    bad.lambda_max = 0.5;
    expect_invalid(bad);
  }
  {
    auto bad = config;
    bad.t_quantile = 0.0;
    expect_invalid(bad);
  }
  {
    auto bad = config;
    bad.crit_threshold = 0.0;
    expect_invalid(bad);
  }
  {
    auto bad = config;
    bad.gp_refit_every = 0;
    expect_invalid(bad);
  }
  {
    auto bad = config;
    bad.lambda_k = 0;
    expect_invalid(bad);
  }
  {
    auto bad = config;
    bad.n_max = -1;
    expect_invalid(bad);
  }
}

TEST_CASE("radius updates combine the factor, the noise floor, and the cap") {
  engine::OptimizerConfig config;
  engine::TrustRegionState state;
  state.rho = 1.0;

  SUBCASE("a plain contraction when the floor does not bind") {
    state.eps_max = 0.02;  // floor = sqrt(2) * sqrt(0.02) = 0.2
    const auto next = engine::update_radius(state, 0.5, config);
    CHECK(next.rho == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("the noise floor overrides an aggressive contraction") {
    state.eps_max = 0.5;  // floor = sqrt(2) * sqrt(0.5) = 1
    const auto next = engine::update_radius(state, 0.1, config);
    CHECK(next.rho == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("the cap limits expansion") {
    state.eps_max = 1e-8;
    auto capped = config;
    capped.rho_max = 2.0;
    const auto next = engine::update_radius(state, 10.0, capped);
    CHECK(next.rho == doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("zero noise leaves the pure factor update") {
    state.eps_max = 0.0;
    const auto next = engine::update_radius(state, 0.25, config);
    CHECK(next.rho == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("non-positive factors are rejected") {
    CHECK_THROWS_AS(engine::update_radius(state, 0.0, config), std::invalid_argument);
    CHECK_THROWS_AS(engine::update_radius(state, -1.0, config), std::invalid_argument);
  }
}

TEST_CASE("acceptance ratios guard against vanishing model decrease") {
  // 0.25 actual decrease against 0.5 predicted decrease.
  CHECK(engine::acceptance_ratio(1.0, 0.75, 1.0, 0.5) == doctest::Approx(0.5).epsilon(1e-15));
  // Perfect agreement.
  CHECK(engine::acceptance_ratio(2.0, 1.0, 2.0, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
  // An increase in the corrected value is a negative ratio.
  CHECK(engine::acceptance_ratio(1.0, 1.2, 1.0, 0.5) < 0.0);
  // Predicted decrease at rounding scale: the sentinel fires.
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(engine::acceptance_ratio(1.0, 0.5, 1.0, 1.0) == -inf);
  CHECK(engine::acceptance_ratio(1.0, 0.5, 1.0, 1.0 - 1e-15) == -inf);
  CHECK(engine::acceptance_ratio(1.0, 0.5, 100.0, 100.0 - 1e-13) == -inf);
  // Slightly above the guard: finite again.
  CHECK(std::isfinite(engine::acceptance_ratio(1.0, 0.5, 1.0, 1.0 - 1e-13)));
}

TEST_CASE("exploration points spread as documented") {
  const Eigen::VectorXd x = vecd({1.0, -2.0, 0.5});

  SUBCASE("unit radius gives per-coordinate variance 0.3") {
    RngStream rng(11, 5);
    const int draws = 100000;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(3);
    for (int i = 0; i < draws; ++i) {
      const Eigen::VectorXd p = engine::sample_exploration_point(x, 1.0, rng);
      sum += p - x;
      sumsq += (p - x).cwiseProduct(p - x);
    }
    for (int j = 0; j < 3; ++j) {
      const double mean = sum(j) / draws;
      const double var = sumsq(j) / draws - mean * mean;
      CHECK(std::abs(mean) <= 0.01);
      CHECK(std::abs(var - 0.3) <= 0.01);
    }
  }
  SUBCASE("the switch reads the width as a standard deviation") {
    RngStream rng(11, 5);
    const int draws = 100000;
    double sumsq = 0.0;
    for (int i = 0; i < draws; ++i) {
      const Eigen::VectorXd p = engine::sample_exploration_point(x, 1.0, rng, true);
      sumsq += (p(0) - x(0)) * (p(0) - x(0));
    }
    CHECK(std::abs(sumsq / draws - 0.09) <= 0.005);
  }
  SUBCASE("draws concentrate as the radius vanishes") {
    RngStream rng(3, 4);
    for (int i = 0; i < 100; ++i) {
      const Eigen::VectorXd p = engine::sample_exploration_point(x, 1e-8, rng);
      CHECK((p - x).lpNorm<Eigen::Infinity>() <= 1.0);
    }
  }
  SUBCASE("draws are reproducible for a fixed stream") {
    RngStream a(21, 9), b(21, 9);
    const Eigen::VectorXd pa = engine::sample_exploration_point(x, 0.7, a);
    const Eigen::VectorXd pb = engine::sample_exploration_point(x, 0.7, b);
    CHECK((pa - pb).lpNorm<Eigen::Infinity>() == 0.0);
  }
  SUBCASE("a non-positive radius is rejected") {
    RngStream rng(1);
    CHECK_THROWS_AS(engine::sample_exploration_point(x, 0.0, rng), std::invalid_argument);
  }
}

TEST_CASE("the criticality loop leaves a strongly critical state alone") {
  const auto box = quiet_box(
      "steep", 2, [](const Eigen::VectorXd& x) { return x(0) + x(1); },
      [](const Eigen::VectorXd& x) { return vecd({x(0) - 100.0}); }, vecd({0.0, 0.0}), 1);
  engine::Optimizer opt(problems::make_robust(box, problems::Formulation::MeanMean, 4, 1),
                        quiet_config(60, 1));
  opt.initialize();
  const int evals_before = opt.evaluations();
  const double rho_before = opt.state().rho;
  opt.criticality_step();
  CHECK(opt.evaluations() == evals_before);
  CHECK(opt.state().rho == rho_before);
  CHECK_FALSE(opt.criticality_bound_hit());
}

TEST_CASE("the criticality loop contracts a flat model onto the noise floor") {
  const auto box = quiet_box(
      "flat", 2, [](const Eigen::VectorXd&) { return 1.0; },
      [](const Eigen::VectorXd&) { return vecd({-1.0}); }, vecd({0.0, 0.0}), 1);
  engine::Optimizer opt(problems::make_robust(box, problems::Formulation::MeanMean, 4, 2),
                        quiet_config(400, 2));
  opt.initialize();
  REQUIRE(opt.state().mode == subsolver::Mode::M1);
  const int evals_before = opt.evaluations();
  opt.criticality_step();
  // A gradient-free model never satisfies the exit test, so the loop runs to
  // its repetition bound, spending one exploration evaluation per pass, and
  // parks the radius exactly on the noise floor.
  CHECK(opt.criticality_bound_hit());
  CHECK(opt.evaluations() >= evals_before + 50);
  const auto& state = opt.state();
  CHECK(state.mode == subsolver::Mode::M1);
  CHECK(state.rho < 0.1);
  const double floor = engine::OptimizerConfig{}.lambda_t * std::sqrt(state.eps_max);
  CHECK(state.rho >= floor - 1e-12);
  CHECK(state.rho <= 3.0 * floor + 1e-12);
}

TEST_CASE("the criticality loop keeps restoration mode at an infeasible center") {
  const auto box = quiet_box(
      "stuck", 2, [](const Eigen::VectorXd& x) { return x(0); },
      [](const Eigen::VectorXd&) { return vecd({1.0}); }, vecd({0.0, 0.0}), 1);
  engine::Optimizer opt(problems::make_robust(box, problems::Formulation::MeanMean, 4, 3),
                        quiet_config(400, 3));
  opt.initialize();
  REQUIRE(opt.state().mode == subsolver::Mode::M2);
  opt.criticality_step();
  CHECK(opt.state().mode == subsolver::Mode::M2);
  CHECK(opt.criticality_bound_hit());
}

TEST_CASE("the engine solves a noiseless convex quadratic with an active linear constraint") {
  // min (x-1)^2 + (y-2)^2 subject to x + y <= 2; the optimum sits at
  // (1/2, 3/2) with value 1/2.
  const auto box = quiet_box(
      "qp", 2,
      [](const Eigen::VectorXd& x) {
        return (x(0) - 1.0) * (x(0) - 1.0) + (x(1) - 2.0) * (x(1) - 2.0);
      },
      [](const Eigen::VectorXd& x) { return vecd({x(0) + x(1) - 2.0}); }, vecd({0.0, 0.0}),
      1);
  const auto problem = problems::make_robust(box, problems::Formulation::MeanMean, 2, 11);
  const auto result = engine::optimize(problem, quiet_config(160, 11));

  REQUIRE(result.best_point.size() == 2);
  const double f_best = (result.best_point(0) - 1.0) * (result.best_point(0) - 1.0) +
                        (result.best_point(1) - 2.0) * (result.best_point(1) - 2.0);
  const double c_best = result.best_point(0) + result.best_point(1) - 2.0;
  CHECK(c_best <= 1e-6);
  CHECK(std::abs(f_best - 0.5) <= 1e-3);
  CHECK(result.best_feasible);
  CHECK(result.evaluations <= 160);
  CHECK(result.evaluations == static_cast<int>(result.history.size()));
  CHECK((result.termination == engine::Termination::Budget ||
         result.termination == engine::Termination::RadiusFloor));
}

TEST_CASE("an infeasible start is restored before descending") {
  // min x^2 + y^2 subject to 1 - x <= 0; the start violates the constraint
  // and the constrained optimum is (1, 0).
  const auto box = quiet_box(
      "restore", 2,
      [](const Eigen::VectorXd& x) { return x(0) * x(0) + x(1) * x(1); },
      [](const Eigen::VectorXd& x) { return vecd({1.0 - x(0)}); }, vecd({0.0, 0.0}), 1);
  const auto problem = problems::make_robust(box, problems::Formulation::MeanMean, 2, 5);
  engine::Optimizer opt(problem, quiet_config(120, 5));
  opt.initialize();
  CHECK(opt.state().mode == subsolver::Mode::M2);
  const auto result = opt.run();
  REQUIRE(result.best_point.size() == 2);
  CHECK(result.best_feasible);
  CHECK(1.0 - result.best_point(0) <= 1e-6);
  const double f_best =
      result.best_point(0) * result.best_point(0) + result.best_point(1) * result.best_point(1);
  CHECK(f_best <= 1.05);
  // Restoration happened: some later trace entry runs in M1.
  bool saw_m1 = false;
  for (const auto& t : result.trace) saw_m1 = saw_m1 || t.mode == subsolver::Mode::M1;
  CHECK(saw_m1);
}

TEST_CASE("a zero budget returns the start point and its estimate") {
  const auto problem = problems::make_robust(problems::example_2d(),
                                             problems::Formulation::MeanMean, 10, 3);
  auto config = quiet_config(0, 3);
  const auto result = engine::optimize(problem, config);
  CHECK(result.evaluations == 1);
  CHECK(result.iterations == 0);
  CHECK(result.history.size() == 1);
  CHECK(result.trace.empty());
  CHECK((result.best_point - problem.start()).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(result.termination == engine::Termination::Budget);
  // The single record carries the raw estimate of the start point.
  CHECK(result.history[0].raw.size() == 1 + problem.num_constraints());
}

TEST_CASE("a budget below the simplex size still terminates cleanly") {
  const auto problem = problems::make_robust(problems::example_2d(),
                                             problems::Formulation::MeanMean, 10, 4);
  const auto result = engine::optimize(problem, quiet_config(2, 4));
  CHECK(result.evaluations == 2);
  CHECK(result.termination == engine::Termination::Budget);
  CHECK(result.iterations == 0);
}

TEST_CASE("runs are deterministic for a fixed seed") {
  const auto problem = problems::make_robust(problems::example_2d(),
                                             problems::Formulation::MeanMean, 20, 42);
  const auto first = engine::optimize(problem, quiet_config(40, 42));
  const auto second = engine::optimize(problem, quiet_config(40, 42));
  REQUIRE(first.history.size() == second.history.size());
  for (std::size_t i = 0; i < first.history.size(); ++i) {
    CHECK((first.history[i].point - second.history[i].point).lpNorm<Eigen::Infinity>() ==
          0.0);
    CHECK((first.history[i].raw - second.history[i].raw).lpNorm<Eigen::Infinity>() == 0.0);
  }
  CHECK((first.best_point - second.best_point).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(first.best_objective == second.best_objective);
  CHECK(first.iterations == second.iterations);
}

TEST_CASE("noisy runs respect the noise floor, the budget, and mode soundness") {
  const auto problem = problems::make_robust(problems::example_2d(),
                                             problems::Formulation::MeanMean, 25, 3);
  const auto config = quiet_config(60, 3);
  const auto result = engine::optimize(problem, config);

  CHECK(result.evaluations <= config.n_max);
  CHECK(result.evaluations == static_cast<int>(result.history.size()));
  REQUIRE(!result.trace.empty());
  for (const auto& t : result.trace) {
    CHECK(t.rho >= config.lambda_t * std::sqrt(t.eps_max) - 1e-12);
    CHECK(t.rho <= config.rho_max + 1e-12);
    const bool is_m2 = t.mode == subsolver::Mode::M2;
    CHECK(is_m2 == t.center_infeasible);
  }
  // Every evaluation is logged exactly once and tagged with a plausible
  // iteration index.
  for (const auto& rec : result.history) {
    CHECK(rec.iteration >= 0);
    CHECK(rec.iteration <= result.iterations);
  }
}

TEST_CASE("best-so-far values are monotone under the corrected estimates") {
  const auto problem = problems::make_robust(problems::example_2d(),
                                             problems::Formulation::MeanMean, 30, 8);
  // Track the reported best after each run length; a longer budget can only
  // improve the reported best objective.
  double previous = std::numeric_limits<double>::infinity();
  for (int budget : {10, 20, 40, 60}) {
    const auto result = engine::optimize(problem, quiet_config(budget, 8));
    if (!result.best_feasible) continue;
    CHECK(result.best_objective <= previous + 1e-12);
    previous = result.best_objective;
  }
}

TEST_CASE("black-box failures abort with the partial history") {
  auto calls = std::make_shared<int>(0);
  const int n_samples = 4;
  auto box = quiet_box(
      "fragile", 2,
      [](const Eigen::VectorXd& x) { return x(0) * x(0) + x(1) * x(1); },
      [](const Eigen::VectorXd&) { return vecd({-1.0}); }, vecd({1.0, 1.0}), 1);
  box.objective = [calls, n_samples](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    if ((*calls)++ >= 5 * n_samples) throw std::runtime_error("sensor dropout");
    return x(0) * x(0) + x(1) * x(1);
  };
  const auto problem =
      problems::make_robust(box, problems::Formulation::MeanMean, n_samples, 9);
  const auto result = engine::optimize(problem, quiet_config(60, 9));
  CHECK(result.termination == engine::Termination::BlackBoxFailure);
  CHECK(result.history.size() == 5);
  CHECK(result.evaluations == 5);
}
