#include "snowpac/measures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace snowpac::measures {

namespace {

void check_samples(const SampleSet& samples) {
  if (samples.size() < 2)
    throw std::invalid_argument("sample set needs at least 2 values");
  if (!samples.allFinite())
    throw std::invalid_argument("sample set contains non-finite values");
}

void check_probability(double p, const char* name) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument(std::string(name) + " must lie strictly in (0,1)");
}

}  // namespace

void MeasureSpec::validate() const {
  check_probability(confidence, "confidence");
  if (kind == MeasureKind::ChanceProb || kind == MeasureKind::Quantile ||
      kind == MeasureKind::CVaR)
    check_probability(beta, "beta");
  if (kind == MeasureKind::MeanVariance) {
    if (!(gamma_weight >= 0.0 && gamma_weight <= 1.0))
      throw std::invalid_argument("gamma_weight must lie in [0,1]");
    if (!(c1 > 0.0) || !(c2 > 0.0))
      throw std::invalid_argument("c1 and c2 must be positive");
  }
}

double integrand(const MeasureSpec& spec, double b_value, double mean_hint,
                 double cvar_gamma) {
  switch (spec.kind) {
    case MeasureKind::Mean:
      return b_value;
    case MeasureKind::Variance: {
      double d = b_value - mean_hint;
      return d * d;
    }
    case MeasureKind::MeanVariance: {
      double d = b_value - mean_hint;
      return spec.gamma_weight * spec.c1 * b_value +
             (1.0 - spec.gamma_weight) * spec.c2 * d * d;
    }
    case MeasureKind::ChanceProb:
      return (b_value >= 0.0 ? 1.0 : 0.0) - (1.0 - spec.beta);
    case MeasureKind::CVaR:
      return cvar_gamma + std::max(b_value - cvar_gamma, 0.0) / (1.0 - spec.beta);
    case MeasureKind::Quantile:
      throw std::invalid_argument(
          "quantile has no pointwise integrand; use estimate_quantile");
  }
  throw std::invalid_argument("unknown measure kind");
}

EstimateWithError estimate_mean(const SampleSet& samples, double t_quantile) {
  check_samples(samples);
  if (!(t_quantile > 0.0)) throw std::invalid_argument("t_quantile must be positive");
  const auto n = samples.size();
  const double mean = samples.mean();
  const double ss = (samples.array() - mean).square().sum();
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  EstimateWithError out;
  out.value = mean;
  out.err_bound = t_quantile * sd / std::sqrt(static_cast<double>(n));
  out.n_samples = static_cast<int>(n);
  out.confidence = 0.954;  // two-sigma nominal level implied by t = 2
  return out;
}

int quantile_index(int n_samples, double beta, double u_draw) {
  if (n_samples < 1) throw std::invalid_argument("need at least one sample");
  check_probability(beta, "beta");
  const double nb = static_cast<double>(n_samples) * beta;
  const double rounded = std::round(nb);
  const bool integral = std::abs(nb - rounded) <= 1e-9 * std::max(1.0, nb);
  int index;
  if (integral) {
    const int k = static_cast<int>(rounded);
    if (beta < 0.5)
      index = k;
    else if (beta > 0.5)
      index = k + 1;
    else
      index = n_samples / 2 + (u_draw <= 0.5 ? 1 : 0);
  } else {
    index = static_cast<int>(std::floor(nb)) + 1;
  }
  return std::clamp(index, 1, n_samples);
}

double binomial_coverage(int l, int u, int n_samples, double beta) {
  if (!(1 <= l && l < u && u <= n_samples))
    throw std::invalid_argument("binomial_coverage requires 1 <= l < u <= N");
  check_probability(beta, "beta");
  const int n = n_samples;
  const long double lb = std::log(static_cast<long double>(beta));
  const long double l1b = std::log1p(-static_cast<long double>(beta));
  // Anchor the sum at the largest term inside the window and accumulate
  // term ratios outward; this avoids overflow of C(N,i) and keeps full
  // relative accuracy even in far tails.
  int mode = static_cast<int>(std::floor((n + 1) * static_cast<long double>(beta)));
  mode = std::clamp(mode, l, u - 1);
  const long double log_anchor = std::lgamma(static_cast<long double>(n + 1)) -
                                 std::lgamma(static_cast<long double>(mode + 1)) -
                                 std::lgamma(static_cast<long double>(n - mode + 1)) +
                                 mode * lb + (n - mode) * l1b;
  const long double odds = static_cast<long double>(beta) / (1.0L - static_cast<long double>(beta));
  long double sum = 1.0L;  // anchor term, scaled to 1
  long double ratio = 1.0L;
  for (int i = mode; i + 1 <= u - 1; ++i) {
    ratio *= odds * static_cast<long double>(n - i) / static_cast<long double>(i + 1);
    sum += ratio;
    if (ratio < 1e-25L * sum) break;
  }
  ratio = 1.0L;
  for (int i = mode; i - 1 >= l; --i) {
    ratio *= static_cast<long double>(i) / (odds * static_cast<long double>(n - i + 1));
    sum += ratio;
    if (ratio < 1e-25L * sum) break;
  }
  const long double value = std::exp(log_anchor) * sum;
  return static_cast<double>(std::min(value, 1.0L));
}

EstimateWithError estimate_quantile(const SampleSet& samples, double beta,
                                    double confidence, double u_draw) {
  check_samples(samples);
  check_probability(beta, "beta");
  check_probability(confidence, "confidence");
  const int n = static_cast<int>(samples.size());
  std::vector<double> sorted(samples.data(), samples.data() + n);
  std::sort(sorted.begin(), sorted.end());
  const int center = quantile_index(n, beta, u_draw);
  const double value = sorted[center - 1];

  double best_coverage = 0.0;
  for (int i = 1; i <= n; ++i) {
    const int lo = std::max(1, center - i);
    const int hi = std::min(n, center + i);
    if (lo >= hi) continue;
    const double coverage = binomial_coverage(lo, hi, n, beta);
    best_coverage = std::max(best_coverage, coverage);
    if (coverage >= confidence) {
      EstimateWithError out;
      out.value = value;
      out.err_bound = std::max(value - sorted[lo - 1], sorted[hi - 1] - value);
      out.n_samples = n;
      out.confidence = coverage;
      return out;
    }
    if (lo == 1 && hi == n) break;  // widest window already inspected
  }
  throw CoverageError("confidence " + std::to_string(confidence) +
                          " unreachable with N=" + std::to_string(n) +
                          "; largest attainable coverage " +
                          std::to_string(best_coverage),
                      best_coverage);
}

EstimateWithError estimate_cvar(const SampleSet& samples, double beta, double gamma,
                                double t_quantile) {
  check_samples(samples);
  check_probability(beta, "beta");
  SampleSet transformed =
      gamma + (samples.array() - gamma).max(0.0) / (1.0 - beta);
  return estimate_mean(transformed, t_quantile);
}

}  // namespace snowpac::measures
