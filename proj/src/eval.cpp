#include "zapq/eval.hpp"

#include <algorithm>
#include <cmath>

namespace zapq {

std::int64_t default_horizon(double beta, double tol) {
  require(beta > 0.0 && beta < 1.0, "horizon: beta must lie in (0,1)");
  require(tol > 0.0 && tol < 1.0, "horizon: tol must lie in (0,1)");
  return static_cast<std::int64_t>(
             std::floor(std::log(tol) / std::log(beta))) +
         1;
}

PolicyValueEstimate mc_policy_value(const StoppingProblem& problem,
                                    const FeatureMap& features,
                                    const Vector& theta, const Vector& x0,
                                    std::int64_t n_runs, std::uint64_t seed,
                                    std::int64_t horizon) {
  require(n_runs >= 1, "mc_policy_value: n_runs must be >= 1");
  const double beta = problem.beta();
  if (horizon <= 0) horizon = default_horizon(beta);

  PolicyValueEstimate est;
  est.n_runs = n_runs;
  est.horizon = horizon;

  // Welford streaming moments: single pass, numerically stable.
  double mean = 0.0, m2 = 0.0;
  double max_abs_cs_at_horizon = 0.0;
  Vector psi(features.dim());

  for (std::int64_t run = 0; run < n_runs; ++run) {
    auto cursor =
        problem.make_cursor_at(x0, eval_seed(seed) + static_cast<std::uint64_t>(run));
    double value = 0.0;
    double discount = 1.0;
    bool stopped = false;
    for (std::int64_t n = 0; n <= horizon; ++n) {
      const Vector& x = cursor->state();
      features.evaluate_into(x, psi);
      const double q = theta.dot(psi);
      const double cs = problem.stop_cost(x);
      if (policy_stop(cs, q)) {
        value += discount * cs;
        stopped = true;
        break;
      }
      if (n == horizon) {
        // Truncated path: terminal value 0 beyond the horizon.
        max_abs_cs_at_horizon =
            std::max(max_abs_cs_at_horizon, std::abs(cs));
        break;
      }
      value += discount * problem.run_cost(x);
      discount *= beta;
      cursor->step();
    }
    if (!stopped) ++est.truncated_paths;
    const double delta = value - mean;
    mean += delta / static_cast<double>(run + 1);
    m2 += delta * (value - mean);
  }

  est.mean = mean;
  if (n_runs > 1)
    est.std_error = std::sqrt(m2 / static_cast<double>(n_runs - 1) /
                              static_cast<double>(n_runs));
  est.truncation_bound =
      std::pow(beta, static_cast<double>(horizon)) * max_abs_cs_at_horizon;
  return est;
}

HistogramData HistogramData::make(const std::vector<double>& values,
                                  int n_bins) {
  require(!values.empty(), "histogram: no values");
  require(n_bins >= 1, "histogram: need at least one bin");
  HistogramData h;
  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  if (hi <= lo) hi = lo + 1.0;  // degenerate single-value case: one wide bin
  h.edges.resize(static_cast<std::size_t>(n_bins) + 1);
  for (int i = 0; i <= n_bins; ++i)
    h.edges[static_cast<std::size_t>(i)] =
        lo + (hi - lo) * static_cast<double>(i) / n_bins;
  h.counts.assign(static_cast<std::size_t>(n_bins), 0);
  for (const double v : values) {
    int bin = static_cast<int>(std::floor((v - lo) / (hi - lo) * n_bins));
    bin = std::clamp(bin, 0, n_bins - 1);
    ++h.counts[static_cast<std::size_t>(bin)];
  }
  return h;
}

std::vector<PolicyValueEstimate> evaluate_policies(
    const StoppingProblem& problem, const FeatureMap& features,
    const std::vector<Vector>& thetas, const Vector& x0, std::int64_t n_runs,
    std::uint64_t base_seed, std::int64_t horizon, int n_threads) {
  require(!thetas.empty(), "evaluate_policies: empty parameter list");
  std::vector<PolicyValueEstimate> out(thetas.size());
  // Common random numbers: every policy sees the same evaluation paths, so
  // cross-policy comparisons are paired.
  parallel_for(static_cast<std::int64_t>(thetas.size()), n_threads,
               [&](std::int64_t i) {
                 out[static_cast<std::size_t>(i)] = mc_policy_value(
                     problem, features, thetas[static_cast<std::size_t>(i)],
                     x0, n_runs, base_seed, horizon);
               });
  return out;
}

}  // namespace zapq
