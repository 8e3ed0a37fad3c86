#ifndef ZAPQ_LEARNER_HPP
#define ZAPQ_LEARNER_HPP

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "zapq/chain.hpp"
#include "zapq/common.hpp"
#include "zapq/features.hpp"
#include "zapq/gains.hpp"

#include "json.hpp"

namespace zapq {

// Temporal difference d_{n+1} = c(X_n) + beta min(c_s(X'), Q(X')) - Q(X_n),
// expressed on evaluated quantities.
inline double td_term(double cost_n, double stop_cost_next, double q_next,
                      double q_n, double beta) {
  return cost_n + beta * std::min(stop_cost_next, q_next) - q_n;
}

double td_term(const StoppingProblem& problem, const FeatureMap& features,
               const Vector& theta, const Vector& x_n, const Vector& x_next);

struct SnapshotPlan {
  double ratio = 1.2;        // snapshot at n = ceil(ratio^k), plus n = 0 and N
  bool include_gain = false; // also record A_hat / Sigma_hat per snapshot
};

struct Snapshot {
  std::int64_t n = 0;
  Vector theta;
  std::optional<Matrix> gain_matrix;
};

struct RunDiagnostics {
  std::int64_t pinv_truncations = 0;
  double max_theta_norm = 0.0;
  bool aborted = false;
  std::int64_t abort_step = -1;
  std::string abort_reason;
};

struct RunConfig {
  GainStrategy strategy = GainStrategy::Zap;
  StepSizeSchedule alpha;         // parameter step size
  StepSizeSchedule gamma;         // matrix-estimate step size (Zap/Kalman)
  std::int64_t n_steps = 0;       // N >= 1
  std::uint64_t seed = 0;
  Vector theta0;                  // empty means zeros
  double a0_scale = 1.0;          // A_hat(0) = -a0_scale I for Zap
  double a_clamp_delta = 0.0;     // optional A_hat spectral clamp; 0 = off
  double pinv_rel_threshold = 1e-8;
  bool clamp_theta = false;       // optional norm clamp, off by default
  double clamp_radius = 1e6;
  SnapshotPlan snapshots;
  nlohmann::json echo;            // effective configuration, copied verbatim
                                  // into every produced record

  void validate() const;
};

// Seeded trajectory of parameter snapshots plus metadata.
struct RunRecord {
  nlohmann::json config_echo;
  std::uint64_t seed = 0;
  std::vector<Snapshot> snapshots;
  Vector theta_final;
  Matrix gain_matrix_final;  // A_hat (Zap) or Sigma_hat (Kalman); empty else
  std::int64_t n_steps = 0;
  RunDiagnostics diag;

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
  // Compact per-run CSV: header n,theta_0..theta_{d-1}, one row per snapshot.
  void write_csv(std::ostream& os) const;
};

// One matrix-gain Q-learning run.  Per step: sample the transition, form the
// temporal difference, update the gain state (before the parameter, matching
// the two-time-scale ordering), then
//   theta <- theta + alpha_{n+1} G_{n+1} psi(X_n) d_{n+1}.
// Fully deterministic given the configuration and seed.  A non-finite theta
// aborts the run with a diagnostic record rather than throwing.
RunRecord run_matrix_gain(const StoppingProblem& problem,
                          const FeatureMap& features, const RunConfig& config);

// M independent replicas, seeds base_seed + index, outputs ordered by index.
// Per-replica aborts are recorded without cancelling siblings.
std::vector<RunRecord> run_replicas(const StoppingProblem& problem,
                                    const FeatureMap& features,
                                    const RunConfig& config, int n_replicas,
                                    std::uint64_t base_seed,
                                    int n_threads = 0);

}  // namespace zapq

#endif  // ZAPQ_LEARNER_HPP
