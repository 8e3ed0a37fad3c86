#ifndef ZAPQ_EVAL_HPP
#define ZAPQ_EVAL_HPP

#include <cstdint>
#include <vector>

#include "zapq/chain.hpp"
#include "zapq/common.hpp"
#include "zapq/features.hpp"

namespace zapq {

struct PolicyValueEstimate {
  double mean = 0.0;        // cost convention; negate for finance rewards
  double std_error = 0.0;
  std::int64_t n_runs = 0;
  std::int64_t horizon = 0;
  double truncation_bound = 0.0;  // beta^horizon * max |c_s| seen at horizon
  std::int64_t truncated_paths = 0;
};

// Smallest T with beta^T < tol.
std::int64_t default_horizon(double beta, double tol = 1e-6);

// Monte-Carlo value of the stopping policy phi^theta from x0:
// simulates tau = min{n : c_s(X_n) <= Q^theta(X_n)} and accumulates
// sum_{n<tau} beta^n c(X_n) + beta^tau c_s(X_tau), truncating at the horizon
// with terminal value 0 (counted in the truncation diagnostic).
// Evaluation seeds live in their own namespace, independent of training.
PolicyValueEstimate mc_policy_value(const StoppingProblem& problem,
                                    const FeatureMap& features,
                                    const Vector& theta, const Vector& x0,
                                    std::int64_t n_runs, std::uint64_t seed,
                                    std::int64_t horizon = 0 /* 0 = auto */);

struct HistogramData {
  std::vector<double> edges;        // n_bins + 1
  std::vector<std::int64_t> counts; // n_bins

  static HistogramData make(const std::vector<double>& values, int n_bins);
};

// Evaluates one policy per parameter vector; estimates are index-ordered and
// independent of scheduling.
std::vector<PolicyValueEstimate> evaluate_policies(
    const StoppingProblem& problem, const FeatureMap& features,
    const std::vector<Vector>& thetas, const Vector& x0, std::int64_t n_runs,
    std::uint64_t base_seed, std::int64_t horizon = 0, int n_threads = 0);

}  // namespace zapq

#endif  // ZAPQ_EVAL_HPP
