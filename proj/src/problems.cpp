#include "snowpac/problems.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace snowpac::problems {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using Objective = std::function<double(const Eigen::VectorXd&)>;
using ConstraintFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

Eigen::VectorXd numeric_gradient(const Objective& f, const Eigen::VectorXd& x) {
  const int n = static_cast<int>(x.size());
  Eigen::VectorXd g(n);
  Eigen::VectorXd xp = x, xm = x;
  for (int i = 0; i < n; ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x(i)));
    xp(i) = x(i) + h;
    xm(i) = x(i) - h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
    xp(i) = x(i);
    xm(i) = x(i);
  }
  return g;
}

Eigen::VectorXd bfgs_minimize(const Objective& f, Eigen::VectorXd x, int max_iter = 150) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(n, n);
  double fx = f(x);
  if (!std::isfinite(fx)) return x;
  Eigen::VectorXd g = numeric_gradient(f, x);
  for (int iter = 0; iter < max_iter; ++iter) {
    if (!g.allFinite() || g.norm() <= 1e-9 * std::max(1.0, std::abs(fx))) break;
    Eigen::VectorXd d = -hinv * g;
    if (d.dot(g) >= 0.0) {
      hinv = identity;
      d = -g;
    }
    double t = 1.0;
    Eigen::VectorXd xn = x;
    double fn = fx;
    bool ok = false;
    for (int ls = 0; ls < 40; ++ls) {
      xn = x + t * d;
      fn = f(xn);
      if (std::isfinite(fn) && fn <= fx + 1e-4 * t * g.dot(d)) {
        ok = true;
        break;
      }
      t *= 0.5;
    }
    if (!ok) break;
    const Eigen::VectorXd gn = numeric_gradient(f, xn);
    const Eigen::VectorXd s = xn - x;
    const Eigen::VectorXd y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      hinv = (identity - rho * s * y.transpose()) * hinv *
                 (identity - rho * y * s.transpose()) +
             rho * s * s.transpose();
    }
    x = xn;
    fx = fn;
    g = gn;
    if (s.norm() <= 1e-12 * std::max(1.0, x.norm())) break;
    if (x.norm() > 1e4) break;  // runaway start, abandon
  }
  return x;
}

struct ConstrainedResult {
  Eigen::VectorXd x;
  double value = kInf;
  double violation = kInf;
};

// Gauss-Newton projection of the near-active constraints to a small margin
// inside the feasible set; cleans up the O(1e-8) feasibility error left by
// finite-difference gradient noise in the smooth solves.
Eigen::VectorXd restore_feasibility(const ConstraintFn& c, Eigen::VectorXd x) {
  const int n = static_cast<int>(x.size());
  for (int pass = 0; pass < 8; ++pass) {
    const Eigen::VectorXd cv = c(x);
    if (cv.maxCoeff() <= -1e-11) break;
    std::vector<int> active;
    for (int i = 0; i < cv.size(); ++i)
      if (cv(i) > -1e-6) active.push_back(static_cast<int>(i));
    if (active.empty()) break;
    const int m = static_cast<int>(active.size());
    Eigen::MatrixXd jac(m, n);
    Eigen::VectorXd xp = x, xm = x;
    for (int j = 0; j < n; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(x(j)));
      xp(j) = x(j) + h;
      xm(j) = x(j) - h;
      const Eigen::VectorXd cp = c(xp), cm = c(xm);
      for (int i = 0; i < m; ++i) jac(i, j) = (cp(active[i]) - cm(active[i])) / (2.0 * h);
      xp(j) = x(j);
      xm(j) = x(j);
    }
    Eigen::VectorXd residual(m);
    for (int i = 0; i < m; ++i) residual(i) = -1e-10 - cv(active[i]);
    Eigen::MatrixXd gram = jac * jac.transpose();
    gram.diagonal().array() += 1e-12 * std::max(1.0, gram.trace());
    const Eigen::VectorXd step = jac.transpose() * gram.ldlt().solve(residual);
    if (!step.allFinite() || step.norm() > 1e-3 * std::max(1.0, x.norm())) break;
    const Eigen::VectorXd candidate = x + step;
    if (std::max(0.0, c(candidate).maxCoeff()) >= std::max(0.0, cv.maxCoeff())) break;
    x = candidate;
  }
  return x;
}

// Augmented Lagrangian (inequalities c <= 0) with BFGS inner solves.
ConstrainedResult constrained_minimize(const Objective& f, const ConstraintFn& c,
                                       Eigen::VectorXd x) {
  const int r = static_cast<int>(c(x).size());
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(r);
  double mu = 10.0;
  double prev_viol = kInf;
  for (int outer = 0; outer < 15; ++outer) {
    auto al = [&](const Eigen::VectorXd& z) {
      double v = f(z);
      const Eigen::VectorXd cv = c(z);
      for (int i = 0; i < r; ++i) {
        const double t = std::max(0.0, lambda(i) + mu * cv(i));
        v += (t * t - lambda(i) * lambda(i)) / (2.0 * mu);
      }
      return v;
    };
    x = bfgs_minimize(al, x);
    const Eigen::VectorXd cv = c(x);
    const double viol = r > 0 ? std::max(0.0, cv.maxCoeff()) : 0.0;
    for (int i = 0; i < r; ++i) lambda(i) = std::max(0.0, lambda(i) + mu * cv(i));
    if (viol <= 1e-11 && outer >= 2) break;
    if (outer >= 4 && viol <= 1e-6 && viol > 0.9 * prev_viol) break;  // noise floor
    if (viol > 0.25 * prev_viol) mu = std::min(mu * 4.0, 1e9);
    prev_viol = std::max(viol, 1e-300);
  }
  if (r > 0) {
    const double viol = std::max(0.0, c(x).maxCoeff());
    if (viol > 0.0 && viol <= 1e-5) x = restore_feasibility(c, x);
  }
  const Eigen::VectorXd cv = c(x);
  return {x, f(x), r > 0 ? std::max(0.0, cv.maxCoeff()) : 0.0};
}

// beta-quantile of A*u + B*v with independent u, v ~ U[-1,1]: a symmetric
// trapezoidal distribution with corners at +-(A+B) and flat top on
// [-(B-A), B-A] for A <= B.
double two_uniform_quantile(double a, double b, double p) {
  if (a > b) std::swap(a, b);
  if (b <= 0.0) return 0.0;
  if (p < 0.5) return -two_uniform_quantile(a, b, 1.0 - p);
  if (a > 0.0 && 1.0 - p <= a / (2.0 * b)) return (a + b) - std::sqrt(8.0 * a * b * (1.0 - p));
  return b * (2.0 * p - 1.0);
}

// CVaR offset pieces for f(x) + theta with theta ~ U[-1,1]:
// E[(theta - a)^+] as a function of a = gamma - f(x).
double uniform_tail_mean(double a) {
  if (a >= 1.0) return 0.0;
  if (a <= -1.0) return -a;
  return (1.0 - a) * (1.0 - a) / 4.0;
}

using DetObjective = double (*)(const Eigen::VectorXd&);
using DetConstraints = Eigen::VectorXd (*)(const Eigen::VectorXd&);

// Wraps a deterministic problem with additive U[-1,1] noise on the
// objective and on each constraint; the robust measures of the noise are
// then analytic offsets.
StochasticBlackBox additive_noise_box(const std::string& name, int n, int r,
                                      DetObjective f, DetConstraints c) {
  StochasticBlackBox box;
  box.name = name;
  box.dim = n;
  box.num_constraints = r;
  box.theta_dim = 1 + r;
  box.objective = [f](const Eigen::VectorXd& x, const Eigen::VectorXd& theta) {
    return f(x) + theta(0);
  };
  box.constraints = [c, r](const Eigen::VectorXd& x,
                           const Eigen::VectorXd& theta) -> Eigen::VectorXd {
    return c(x) + theta.tail(r);
  };
  box.sample_theta = [dim = 1 + r](RngStream& rng) {
    Eigen::VectorXd t(dim);
    for (int i = 0; i < dim; ++i) t(i) = 2.0 * rng.uniform() - 1.0;
    return t;
  };
  box.exact_mean_objective = [f](const Eigen::VectorXd& x) { return f(x); };
  box.exact_mean_constraints = [c](const Eigen::VectorXd& x) { return c(x); };
  box.exact_quantile_constraints = [c](const Eigen::VectorXd& x, double beta) {
    return (c(x).array() + (2.0 * beta - 1.0)).matrix().eval();
  };
  box.exact_cvar_objective = [f](const Eigen::VectorXd& x, double gamma, double beta) {
    return gamma + uniform_tail_mean(gamma - f(x)) / (1.0 - beta);
  };
  box.exact_objective_quantile = [f](const Eigen::VectorXd& x, double beta) {
    return f(x) + (2.0 * beta - 1.0);
  };
  return box;
}

// ---- problem 29: min -x1*x2*x3 s.t. x1^2 + 2 x2^2 + 4 x3^2 <= 48 ----

double hs29_f(const Eigen::VectorXd& x) { return -x(0) * x(1) * x(2); }

Eigen::VectorXd hs29_c(const Eigen::VectorXd& x) {
  Eigen::VectorXd c(1);
  c(0) = x(0) * x(0) + 2.0 * x(1) * x(1) + 4.0 * x(2) * x(2) - 48.0;
  return c;
}

// ---- problem 43 (Rosen-Suzuki) ----

double hs43_f(const Eigen::VectorXd& x) {
  return x(0) * x(0) + x(1) * x(1) + 2.0 * x(2) * x(2) + x(3) * x(3) - 5.0 * x(0) -
         5.0 * x(1) - 21.0 * x(2) + 7.0 * x(3);
}

Eigen::VectorXd hs43_c(const Eigen::VectorXd& x) {
  Eigen::VectorXd c(3);
  c(0) = -(8.0 - x(0) * x(0) - x(1) * x(1) - x(2) * x(2) - x(3) * x(3) - x(0) + x(1) -
           x(2) + x(3));
  c(1) = -(10.0 - x(0) * x(0) - 2.0 * x(1) * x(1) - x(2) * x(2) - 2.0 * x(3) * x(3) +
           x(0) + x(3));
  c(2) = -(5.0 - 2.0 * x(0) * x(0) - x(1) * x(1) - x(2) * x(2) - 2.0 * x(0) + x(1) +
           x(3));
  return c;
}

// ---- problem 100 ----

double hs100_f(const Eigen::VectorXd& x) {
  return std::pow(x(0) - 10.0, 2) + 5.0 * std::pow(x(1) - 12.0, 2) + std::pow(x(2), 4) +
         3.0 * std::pow(x(3) - 11.0, 2) + 10.0 * std::pow(x(4), 6) + 7.0 * x(5) * x(5) +
         std::pow(x(6), 4) - 4.0 * x(5) * x(6) - 10.0 * x(5) - 8.0 * x(6);
}

Eigen::VectorXd hs100_c(const Eigen::VectorXd& x) {
  Eigen::VectorXd c(4);
  c(0) = -(127.0 - 2.0 * x(0) * x(0) - 3.0 * std::pow(x(1), 4) - x(2) -
           4.0 * x(3) * x(3) - 5.0 * x(4));
  c(1) = -(282.0 - 7.0 * x(0) - 3.0 * x(1) - 10.0 * x(2) * x(2) - x(3) + x(4));
  c(2) = -(196.0 - 23.0 * x(0) - x(1) * x(1) - 6.0 * x(5) * x(5) + 8.0 * x(6));
  c(3) = -(-4.0 * x(0) * x(0) - x(1) * x(1) + 3.0 * x(0) * x(1) - 2.0 * x(2) * x(2) -
           5.0 * x(5) + 11.0 * x(6));
  return c;
}

// ---- problem 113 ----

double hs113_f(const Eigen::VectorXd& x) {
  return x(0) * x(0) + x(1) * x(1) + x(0) * x(1) - 14.0 * x(0) - 16.0 * x(1) +
         std::pow(x(2) - 10.0, 2) + 4.0 * std::pow(x(3) - 5.0, 2) +
         std::pow(x(4) - 3.0, 2) + 2.0 * std::pow(x(5) - 1.0, 2) + 5.0 * x(6) * x(6) +
         7.0 * std::pow(x(7) - 11.0, 2) + 2.0 * std::pow(x(8) - 10.0, 2) +
         std::pow(x(9) - 7.0, 2) + 45.0;
}

Eigen::VectorXd hs113_c(const Eigen::VectorXd& x) {
  Eigen::VectorXd c(8);
  c(0) = -(105.0 - 4.0 * x(0) - 5.0 * x(1) + 3.0 * x(6) - 9.0 * x(7));
  c(1) = -(-10.0 * x(0) + 8.0 * x(1) + 17.0 * x(6) - 2.0 * x(7));
  c(2) = -(8.0 * x(0) - 2.0 * x(1) - 5.0 * x(8) + 2.0 * x(9) + 12.0);
  c(3) = -(-3.0 * std::pow(x(0) - 2.0, 2) - 4.0 * std::pow(x(1) - 3.0, 2) -
           2.0 * x(2) * x(2) + 7.0 * x(3) + 120.0);
  c(4) = -(-5.0 * x(0) * x(0) - 8.0 * x(1) - std::pow(x(2) - 6.0, 2) + 2.0 * x(3) + 40.0);
  c(5) = -(-x(0) * x(0) - 2.0 * std::pow(x(1) - 2.0, 2) + 2.0 * x(0) * x(1) -
           14.0 * x(4) + 6.0 * x(5));
  c(6) = -(-0.5 * std::pow(x(0) - 8.0, 2) - 2.0 * std::pow(x(1) - 4.0, 2) -
           3.0 * x(4) * x(4) + x(5) + 30.0);
  c(7) = -(3.0 * x(0) - 6.0 * x(1) - 12.0 * std::pow(x(8) - 8.0, 2) + 7.0 * x(9));
  return c;
}

// ---- problem 227 ----

double hs227_f(const Eigen::VectorXd& x) {
  return std::pow(x(0) - 2.0, 2) + std::pow(x(1) - 1.0, 2);
}

Eigen::VectorXd hs227_c(const Eigen::VectorXd& x) {
  Eigen::VectorXd c(2);
  c(0) = x(0) * x(0) - x(1);
  c(1) = x(1) * x(1) - x(0);
  return c;
}

// ---- problem 228 ----

double hs228_f(const Eigen::VectorXd& x) { return x(0) * x(0) + x(1); }

Eigen::VectorXd hs228_c(const Eigen::VectorXd& x) {
  Eigen::VectorXd c(2);
  c(0) = x(0) + x(1) - 1.0;
  c(1) = x(0) * x(0) + x(1) * x(1) - 9.0;
  return c;
}

// ---- problem 268: least-squares QP with five linear constraints ----

const Eigen::MatrixXd& hs268_dmat() {
  static const Eigen::MatrixXd d = [] {
    Eigen::MatrixXd m(6, 5);
    m << -74.0, 80.0, 18.0, -11.0, -4.0,   //
        14.0, -69.0, 21.0, 28.0, 0.0,      //
        66.0, -72.0, -5.0, 7.0, 1.0,       //
        -12.0, 66.0, -30.0, -23.0, 3.0,    //
        3.0, 8.0, -7.0, -4.0, 1.0,         //
        4.0, -12.0, 4.0, 4.0, 0.0;
    return m;
  }();
  return d;
}

const Eigen::VectorXd& hs268_dvec() {
  static const Eigen::VectorXd v = [] {
    Eigen::VectorXd d(6);
    d << 51.0, -61.0, -56.0, 69.0, 10.0, -12.0;
    return d;
  }();
  return v;
}

double hs268_f(const Eigen::VectorXd& x) {
  return (hs268_dmat() * x - hs268_dvec()).squaredNorm();
}

Eigen::VectorXd hs268_c(const Eigen::VectorXd& x) {
  Eigen::VectorXd c(5);
  c(0) = -(-x(0) - x(1) - x(2) - x(3) - x(4) + 5.0);
  c(1) = -(10.0 * x(0) + 10.0 * x(1) - 3.0 * x(2) + 5.0 * x(3) + 4.0 * x(4) - 20.0);
  c(2) = -(-8.0 * x(0) + x(1) - 2.0 * x(2) - 5.0 * x(3) + 3.0 * x(4) + 40.0);
  c(3) = -(8.0 * x(0) - x(1) + 2.0 * x(2) + 5.0 * x(3) - 3.0 * x(4) - 11.0);
  c(4) = -(-4.0 * x(0) - 2.0 * x(1) + 3.0 * x(2) - 5.0 * x(3) + x(4) + 30.0);
  return c;
}

// ---- problem 285: maximize c'x over ten ellipsoidal constraints ----

const Eigen::VectorXd& hs285_cvec() {
  static const Eigen::VectorXd v = [] {
    Eigen::VectorXd c(15);
    c << 486.0, 640.0, 758.0, 776.0, 477.0, 707.0, 175.0, 619.0, 627.0, 614.0, 475.0,
        377.0, 524.0, 468.0, 529.0;
    return c;
  }();
  return v;
}

const Eigen::MatrixXd& hs285_amat() {
  static const Eigen::MatrixXd m = [] {
    Eigen::MatrixXd a(10, 15);
    a << 100, 100, 10, 5, 10, 0, 0, 25, 0, 10, 55, 5, 45, 20, 0,     //
        90, 100, 10, 35, 20, 5, 0, 35, 55, 25, 20, 0, 40, 25, 10,    //
        70, 50, 0, 55, 25, 100, 40, 50, 0, 30, 60, 10, 30, 0, 40,    //
        50, 0, 0, 65, 35, 100, 35, 60, 0, 15, 0, 75, 35, 30, 65,     //
        50, 10, 70, 60, 45, 45, 0, 35, 65, 5, 75, 100, 75, 10, 0,    //
        40, 0, 50, 95, 50, 35, 10, 60, 0, 45, 15, 20, 0, 5, 5,       //
        30, 60, 30, 90, 0, 30, 5, 25, 0, 70, 20, 25, 70, 15, 15,     //
        20, 30, 40, 25, 40, 25, 15, 10, 80, 20, 30, 30, 5, 65, 20,   //
        10, 70, 10, 35, 25, 65, 0, 30, 0, 0, 25, 0, 15, 50, 55,      //
        5, 10, 100, 5, 20, 5, 10, 35, 95, 70, 20, 10, 35, 10, 30;
    return a;
  }();
  return m;
}

const Eigen::VectorXd& hs285_bvec() {
  static const Eigen::VectorXd v = [] {
    Eigen::VectorXd b(10);
    b << 385.0, 470.0, 560.0, 565.0, 645.0, 430.0, 485.0, 455.0, 390.0, 460.0;
    return b;
  }();
  return v;
}

double hs285_f(const Eigen::VectorXd& x) { return -hs285_cvec().dot(x); }

Eigen::VectorXd hs285_c(const Eigen::VectorXd& x) {
  return hs285_amat() * x.cwiseProduct(x) - hs285_bvec();
}

Eigen::VectorXd vec(std::initializer_list<double> values) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double value : values) v(i++) = value;
  return v;
}

// ---- the two-dimensional example ----

// Random part of the objective: both sine terms share theta_1.
double ex2d_g(double x1, double x2, double t) {
  const double s = std::sin(0.5 * x2 - 1.0 + t);
  return std::sin(x1 - 1.0 + t) + s * s;
}

double ex2d_det(double x1, double x2) {
  return 0.5 * (x1 + 0.5) * (x1 + 0.5) - x2;
}

constexpr int kEx2dQuad = 1025;  // trapezoid rule nodes over theta_1

// Trapezoid probability weights over U[-1,1].
double ex2d_weight(int j) {
  const double h = 2.0 / (kEx2dQuad - 1);
  return (j == 0 || j == kEx2dQuad - 1) ? 0.25 * h : 0.5 * h;
}

double ex2d_node(int j) { return -1.0 + 2.0 * j / (kEx2dQuad - 1.0); }

double ex2d_quantile(const Eigen::VectorXd& x, double beta) {
  std::vector<std::pair<double, double>> vw(kEx2dQuad);
  const double d = ex2d_det(x(0), x(1));
  for (int j = 0; j < kEx2dQuad; ++j)
    vw[static_cast<size_t>(j)] = {ex2d_g(x(0), x(1), ex2d_node(j)) + d, ex2d_weight(j)};
  std::sort(vw.begin(), vw.end());
  double cum = 0.0;
  for (const auto& [v, w] : vw) {
    cum += w;
    if (cum >= beta) return v;
  }
  return vw.back().first;
}

double ex2d_cvar(const Eigen::VectorXd& x, double gamma, double beta) {
  const double d = ex2d_det(x(0), x(1));
  double tail = 0.0;
  for (int j = 0; j < kEx2dQuad; ++j)
    tail += ex2d_weight(j) * std::max(ex2d_g(x(0), x(1), ex2d_node(j)) + d - gamma, 0.0);
  return gamma + tail / (1.0 - beta);
}

// ---- exact robust functions per formulation (over the base x-space) ----

struct ExactFunctions {
  Objective objective;
  ConstraintFn constraints;
};

ExactFunctions robust_exact_functions(const StochasticBlackBox& base,
                                      Formulation formulation, double beta) {
  ExactFunctions fns;
  switch (formulation) {
    case Formulation::MeanMean:
      fns.objective = base.exact_mean_objective;
      fns.constraints = base.exact_mean_constraints;
      break;
    case Formulation::MeanQuantile95:
      fns.objective = base.exact_mean_objective;
      fns.constraints = [&base, beta](const Eigen::VectorXd& x) {
        return base.exact_quantile_constraints(x, beta);
      };
      break;
    case Formulation::CVaR95Mean:
      fns.objective = [&base, beta](const Eigen::VectorXd& x) {
        return base.exact_cvar_objective(x, base.exact_objective_quantile(x, beta), beta);
      };
      fns.constraints = base.exact_mean_constraints;
      break;
  }
  return fns;
}

constexpr std::uint64_t kGammaStreamKey = 0xFFFFFFFFFFFFFFFFull;

}  // namespace

void StochasticBlackBox::validate() const {
  if (dim <= 0 || num_constraints < 0 || theta_dim <= 0)
    throw std::invalid_argument("black box dimensions must be positive");
  if (!objective || !constraints || !sample_theta)
    throw std::invalid_argument("black box evaluators missing");
  if (start.size() != dim || domain_lo.size() != dim || domain_hi.size() != dim ||
      deterministic_optimum.size() != dim)
    throw std::invalid_argument("black box metadata dimensions inconsistent");
  if (!exact_mean_objective || !exact_mean_constraints || !exact_quantile_constraints ||
      !exact_cvar_objective || !exact_objective_quantile)
    throw std::invalid_argument("black box exact measures missing");
}

std::string formulation_name(Formulation f) {
  switch (f) {
    case Formulation::MeanMean:
      return "mean-mean";
    case Formulation::MeanQuantile95:
      return "mean-q95";
    case Formulation::CVaR95Mean:
      return "cvar95-mean";
  }
  return "unknown";
}

Formulation parse_formulation(const std::string& name) {
  if (name == "mean-mean") return Formulation::MeanMean;
  if (name == "mean-q95") return Formulation::MeanQuantile95;
  if (name == "cvar95-mean") return Formulation::CVaR95Mean;
  throw std::invalid_argument("unknown formulation: " + name);
}

Eigen::VectorXd RobustProblem::start() const {
  if (!extended()) return base.start;
  Eigen::VectorXd z(base.dim + 1);
  z.head(base.dim) = base.start;
  RngStream rng(seed, kGammaStreamKey);
  std::vector<double> samples(static_cast<size_t>(n_samples));
  for (int j = 0; j < n_samples; ++j) {
    const Eigen::VectorXd theta = base.sample_theta(rng);
    samples[static_cast<size_t>(j)] = base.objective(base.start, theta);
  }
  const double u = rng.uniform();
  std::sort(samples.begin(), samples.end());
  const int idx = measures::quantile_index(n_samples, beta(), u);
  z(base.dim) = samples[static_cast<size_t>(idx - 1)];
  return z;
}

RobustEstimates RobustProblem::estimate(const Eigen::VectorXd& z,
                                        std::uint64_t eval_index) const {
  if (z.size() != dim()) throw std::invalid_argument("design dimension mismatch");
  const Eigen::VectorXd x = z.head(base.dim);
  RngStream rng(seed, eval_index);
  Eigen::VectorXd f_samples(n_samples);
  Eigen::MatrixXd c_samples(n_samples, base.num_constraints);
  for (int j = 0; j < n_samples; ++j) {
    const Eigen::VectorXd theta = base.sample_theta(rng);
    f_samples(j) = base.objective(x, theta);
    c_samples.row(j) = base.constraints(x, theta).transpose();
  }

  RobustEstimates out;
  out.constraints.reserve(static_cast<size_t>(base.num_constraints));
  switch (formulation) {
    case Formulation::MeanMean:
      out.objective = measures::estimate_mean(f_samples);
      for (int i = 0; i < base.num_constraints; ++i)
        out.constraints.push_back(measures::estimate_mean(c_samples.col(i)));
      break;
    case Formulation::MeanQuantile95:
      out.objective = measures::estimate_mean(f_samples);
      for (int i = 0; i < base.num_constraints; ++i) {
        const double u = rng.uniform();
        out.constraints.push_back(
            measures::estimate_quantile(c_samples.col(i), beta(), 0.95, u));
      }
      break;
    case Formulation::CVaR95Mean:
      out.objective = measures::estimate_cvar(f_samples, beta(), z(base.dim));
      for (int i = 0; i < base.num_constraints; ++i)
        out.constraints.push_back(measures::estimate_mean(c_samples.col(i)));
      break;
  }
  return out;
}

double RobustProblem::exact_objective(const Eigen::VectorXd& z) const {
  const Eigen::VectorXd x = z.head(base.dim);
  if (formulation == Formulation::CVaR95Mean)
    return base.exact_cvar_objective(x, z(base.dim), beta());
  return base.exact_mean_objective(x);
}

Eigen::VectorXd RobustProblem::exact_constraints(const Eigen::VectorXd& z) const {
  const Eigen::VectorXd x = z.head(base.dim);
  if (formulation == Formulation::MeanQuantile95)
    return base.exact_quantile_constraints(x, beta());
  return base.exact_mean_constraints(x);
}

RobustProblem make_robust(const StochasticBlackBox& base, Formulation formulation,
                          int n_samples, std::uint64_t seed) {
  base.validate();
  if (n_samples < 2) throw std::invalid_argument("at least two samples per estimate");
  RobustProblem problem;
  problem.base = base;
  problem.formulation = formulation;
  problem.n_samples = n_samples;
  problem.seed = seed;
  return problem;
}

StochasticBlackBox example_2d() {
  StochasticBlackBox box;
  box.name = "example2d";
  box.dim = 2;
  box.num_constraints = 2;
  box.theta_dim = 4;
  box.objective = [](const Eigen::VectorXd& x, const Eigen::VectorXd& theta) {
    return ex2d_g(x(0), x(1), theta(0)) + ex2d_det(x(0), x(1));
  };
  box.constraints = [](const Eigen::VectorXd& x, const Eigen::VectorXd& theta) {
    Eigen::VectorXd c(2);
    c(0) = -4.0 * x(0) * x(0) * (1.0 + theta(1)) - 10.0 * theta(2) - 25.0 + 10.0 * x(1);
    c(1) = -2.0 * x(1) * x(1) * (1.0 + theta(3)) - 10.0 * (theta(3) + theta(1)) -
           20.0 * x(0) + 15.0;
    return c;
  };
  box.sample_theta = [](RngStream& rng) {
    Eigen::VectorXd t(4);
    for (int i = 0; i < 4; ++i) t(i) = 2.0 * rng.uniform() - 1.0;
    return t;
  };
  box.start = vec({4.0, 3.0});
  box.domain_lo = vec({-6.0, -6.0});
  box.domain_hi = vec({6.0, 6.0});
  // Mean-formulation optimum (on the first constraint boundary); value and
  // point pinned by the dense-grid/multi-start oracle cross-check.
  box.deterministic_optimum = vec({0.12201873872573961, 2.5059554291322863});
  box.deterministic_value = -2.6588158254315268;

  box.exact_mean_objective = [](const Eigen::VectorXd& x) {
    // E[sin(a+theta)] = sin(1) sin(a); E[sin(b+theta)^2] = 1/2 - cos(2b) sin(2)/4.
    return std::sin(1.0) * std::sin(x(0) - 1.0) + 0.5 -
           0.25 * std::sin(2.0) * std::cos(x(1) - 2.0) + ex2d_det(x(0), x(1));
  };
  box.exact_mean_constraints = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd c(2);
    c(0) = -4.0 * x(0) * x(0) - 25.0 + 10.0 * x(1);
    c(1) = -2.0 * x(1) * x(1) - 20.0 * x(0) + 15.0;
    return c;
  };
  box.exact_quantile_constraints = [](const Eigen::VectorXd& x, double beta) {
    Eigen::VectorXd c(2);
    c(0) = -4.0 * x(0) * x(0) - 25.0 + 10.0 * x(1) +
           two_uniform_quantile(4.0 * x(0) * x(0), 10.0, beta);
    c(1) = -2.0 * x(1) * x(1) - 20.0 * x(0) + 15.0 +
           two_uniform_quantile(2.0 * x(1) * x(1) + 10.0, 10.0, beta);
    return c;
  };
  box.exact_cvar_objective = [](const Eigen::VectorXd& x, double gamma, double beta) {
    return ex2d_cvar(x, gamma, beta);
  };
  box.exact_objective_quantile = [](const Eigen::VectorXd& x, double beta) {
    return ex2d_quantile(x, beta);
  };
  return box;
}

std::vector<StochasticBlackBox> noisy_suite() {
  std::vector<StochasticBlackBox> suite;

  {
    StochasticBlackBox box = additive_noise_box("hs29", 3, 1, hs29_f, hs29_c);
    box.start = vec({1.0, 1.0, 1.0});
    box.domain_lo = Eigen::VectorXd::Constant(3, -6.0);
    box.domain_hi = Eigen::VectorXd::Constant(3, 6.0);
    box.deterministic_optimum = vec({4.0, 2.0 * std::sqrt(2.0), 2.0});
    box.deterministic_value = -16.0 * std::sqrt(2.0);
    suite.push_back(std::move(box));
  }
  {
    StochasticBlackBox box = additive_noise_box("hs43", 4, 3, hs43_f, hs43_c);
    box.start = Eigen::VectorXd::Zero(4);
    box.domain_lo = Eigen::VectorXd::Constant(4, -4.0);
    box.domain_hi = Eigen::VectorXd::Constant(4, 4.0);
    box.deterministic_optimum = vec({0.0, 1.0, 2.0, -1.0});
    box.deterministic_value = -44.0;
    suite.push_back(std::move(box));
  }
  {
    StochasticBlackBox box = additive_noise_box("hs100", 7, 4, hs100_f, hs100_c);
    box.start = vec({1.0, 2.0, 0.0, 4.0, 0.0, 1.0, 1.0});
    box.domain_lo = Eigen::VectorXd::Constant(7, -5.0);
    box.domain_hi = Eigen::VectorXd::Constant(7, 8.0);
    box.deterministic_optimum =
        vec({2.3304993598931367, 1.9513723480413818, -0.47754138804729945,
             4.3657263067416636, -0.62448701488081593, 1.0381310157555577,
             1.5942267019462535});
    box.deterministic_value = 680.6300573789389;
    suite.push_back(std::move(box));
  }
  {
    StochasticBlackBox box = additive_noise_box("hs113", 10, 8, hs113_f, hs113_c);
    box.start = vec({2.0, 3.0, 5.0, 5.0, 1.0, 2.0, 7.0, 3.0, 6.0, 10.0});
    box.domain_lo = Eigen::VectorXd::Constant(10, -2.0);
    box.domain_hi = Eigen::VectorXd::Constant(10, 12.0);
    box.deterministic_optimum =
        vec({2.1719963697732299, 2.3636829765780085, 8.7739257352998248,
             5.0959844866946638, 0.99065476590977686, 1.4305739803977411,
             1.3216442056198845, 9.8287257998206385, 8.2800916719307374,
             8.3759266839039626});
    box.deterministic_value = 24.306209199364723;
    suite.push_back(std::move(box));
  }
  {
    StochasticBlackBox box = additive_noise_box("hs227", 2, 2, hs227_f, hs227_c);
    box.start = vec({0.5, 0.5});
    box.domain_lo = Eigen::VectorXd::Constant(2, -4.0);
    box.domain_hi = Eigen::VectorXd::Constant(2, 4.0);
    box.deterministic_optimum = vec({1.0, 1.0});
    box.deterministic_value = 1.0;
    suite.push_back(std::move(box));
  }
  {
    StochasticBlackBox box = additive_noise_box("hs228", 2, 2, hs228_f, hs228_c);
    box.start = Eigen::VectorXd::Zero(2);
    box.domain_lo = Eigen::VectorXd::Constant(2, -4.0);
    box.domain_hi = Eigen::VectorXd::Constant(2, 4.0);
    box.deterministic_optimum = vec({0.0, -3.0});
    box.deterministic_value = -3.0;
    suite.push_back(std::move(box));
  }
  {
    StochasticBlackBox box = additive_noise_box("hs268", 5, 5, hs268_f, hs268_c);
    box.start = Eigen::VectorXd::Ones(5);
    box.domain_lo = Eigen::VectorXd::Constant(5, -6.0);
    box.domain_hi = Eigen::VectorXd::Constant(5, 6.0);
    box.deterministic_optimum = vec({1.0, 2.0, -1.0, 3.0, -4.0});
    box.deterministic_value = 0.0;
    suite.push_back(std::move(box));
  }
  {
    StochasticBlackBox box = additive_noise_box("hs285", 15, 10, hs285_f, hs285_c);
    box.start = Eigen::VectorXd::Zero(15);
    box.domain_lo = Eigen::VectorXd::Constant(15, -2.0);
    box.domain_hi = Eigen::VectorXd::Constant(15, 3.0);
    box.deterministic_optimum = Eigen::VectorXd::Ones(15);
    box.deterministic_value = -8252.0;
    suite.push_back(std::move(box));
  }
  return suite;
}

StochasticBlackBox problem_by_name(const std::string& name) {
  if (name == "example2d") return example_2d();
  for (auto& box : noisy_suite())
    if (box.name == name) return box;
  throw std::invalid_argument("unknown problem: " + name);
}

std::vector<std::string> problem_names() {
  std::vector<std::string> names{"example2d"};
  for (const auto& box : noisy_suite()) names.push_back(box.name);
  return names;
}

OracleReference oracle_reference(const StochasticBlackBox& base, Formulation formulation,
                                 int n_starts) {
  base.validate();
  const double beta = 0.95;
  const ExactFunctions fns = robust_exact_functions(base, formulation, beta);
  // The domain box delimits the benchmark search region (the dense-grid
  // cross-check only sees the box), so the local solves must honor it too.
  const ConstraintFn boxed = [&base, &fns](const Eigen::VectorXd& x) {
    const Eigen::VectorXd c = fns.constraints(x);
    Eigen::VectorXd out(c.size() + 2 * base.dim);
    out.head(c.size()) = c;
    out.segment(c.size(), base.dim) = x - base.domain_hi;
    out.tail(base.dim) = base.domain_lo - x;
    return out;
  };

  RngStream rng(0xfacade, 17);
  ConstrainedResult best;
  bool found = false;
  for (int s = 0; s < n_starts; ++s) {
    Eigen::VectorXd x0(base.dim);
    if (s == 0) {
      x0 = base.start;
    } else if (s == 1) {
      x0 = base.deterministic_optimum;
    } else {
      for (int i = 0; i < base.dim; ++i)
        x0(i) = base.domain_lo(i) +
                (base.domain_hi(i) - base.domain_lo(i)) * rng.uniform();
    }
    const ConstrainedResult result = constrained_minimize(fns.objective, boxed, x0);
    const bool feasible = result.violation <= 1e-8;
    const bool best_feasible = found && best.violation <= 1e-8;
    const bool better = !found ||
                        (feasible && (!best_feasible || result.value < best.value)) ||
                        (!feasible && !best_feasible && result.violation < best.violation);
    if (better) {
      best = result;
      found = true;
    }
  }

  OracleReference ref;
  ref.trusted = found && best.violation <= 1e-8;
  if (!found) return ref;

  if (ref.trusted && base.dim == 2) {
    const OracleReference grid = grid_reference(base, formulation, 401);
    if (!grid.trusted ||
        std::abs(grid.value - best.value) > 1e-3 * std::max(1.0, std::abs(best.value)))
      ref.trusted = false;
  }

  if (formulation == Formulation::CVaR95Mean) {
    ref.point.resize(base.dim + 1);
    ref.point.head(base.dim) = best.x;
    ref.point(base.dim) = base.exact_objective_quantile(best.x, beta);
  } else {
    ref.point = best.x;
  }
  ref.value = best.value;
  return ref;
}

OracleReference grid_reference(const StochasticBlackBox& base, Formulation formulation,
                               int resolution) {
  base.validate();
  if (base.dim != 2)
    throw std::invalid_argument("grid reference is available for 2-D problems only");
  if (resolution < 3) throw std::invalid_argument("grid resolution too small");
  const ExactFunctions fns = robust_exact_functions(base, formulation, 0.95);

  Eigen::Vector2d lo = base.domain_lo, hi = base.domain_hi;
  Eigen::Vector2d best_x;
  double best_v = kInf;
  bool found = false;
  for (int stage = 0; stage < 3; ++stage) {
    const int res = stage == 0 ? resolution : 241;
    for (int i = 0; i < res; ++i)
      for (int j = 0; j < res; ++j) {
        Eigen::Vector2d x(lo(0) + (hi(0) - lo(0)) * i / (res - 1.0),
                          lo(1) + (hi(1) - lo(1)) * j / (res - 1.0));
        if (fns.constraints(x).maxCoeff() > 0.0) continue;
        const double v = fns.objective(x);
        if (v < best_v) {
          best_v = v;
          best_x = x;
          found = true;
        }
      }
    if (!found) break;
    const Eigen::Vector2d step((hi(0) - lo(0)) / (res - 1.0), (hi(1) - lo(1)) / (res - 1.0));
    lo = best_x - 2.5 * step;
    hi = best_x + 2.5 * step;
  }

  OracleReference ref;
  if (!found) return ref;
  ref.trusted = true;
  if (formulation == Formulation::CVaR95Mean) {
    ref.point.resize(3);
    ref.point.head(2) = best_x;
    ref.point(2) = base.exact_objective_quantile(best_x, 0.95);
  } else {
    ref.point = best_x;
  }
  ref.value = best_v;
  return ref;
}

}  // namespace snowpac::problems
