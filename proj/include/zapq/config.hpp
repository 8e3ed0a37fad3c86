#ifndef ZAPQ_CONFIG_HPP
#define ZAPQ_CONFIG_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include "zapq/chain.hpp"
#include "zapq/features.hpp"
#include "zapq/learner.hpp"

#include "json.hpp"

namespace zapq {

// Configuration problems are usage errors (CLI exit code 1), distinct from
// numerical failures (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Flat key-value text with [section] headers and '#' comments.  Unknown
// sections or keys are rejected so typos fail loudly.
struct ExperimentConfig {
  // [chain]
  std::string chain_kind = "finite_random";  // finite_random|finite_json|gbm
  int n_states = 10;
  std::uint64_t chain_seed = 1;
  double beta = 0.95;
  std::string chain_path;  // finite_json
  GbmParams gbm;

  // [basis]
  std::string basis = "tabular";  // tabular|finance10|poly:<d>|custom:<file>

  // [algorithm]
  GainStrategy strategy = GainStrategy::Zap;
  StepSizeSchedule alpha = StepSizeSchedule::harmonic();
  StepSizeSchedule gamma = StepSizeSchedule::polynomial(0.85);
  double a0_scale = 1.0;
  double a_clamp_delta = 0.0;
  double pinv_threshold = 1e-8;
  bool clamp = false;
  double clamp_radius = 1e6;

  // [run]
  std::int64_t n_steps = 1000;
  int replicas = 1;
  std::uint64_t seed = 1;
  double snapshot_ratio = 1.2;
  bool snapshot_gain = false;

  // [eval]
  std::int64_t eval_runs = 200;
  std::uint64_t eval_seed_value = 9001;
  std::int64_t eval_horizon = 0;  // 0 = auto from beta
  int hist_bins = 30;
  std::string eval_start;  // "ones" | "index:<i>"; default depends on chain

  // [analysis]
  std::int64_t noise_steps = 1000000;
  int batches = 0;  // 0 = ceil(sqrt(noise_steps))
  std::uint64_t analysis_seed = 777;
  int coord = 8;  // 1-based coordinate for the scaled histogram
  double ode_window = 2.0;
  double ode_dt = 1e-3;

  // [output]
  std::string out_dir = "out";

  static ExperimentConfig load(const std::string& path);
  static ExperimentConfig parse(const std::string& text);

  // Effective values, echoed verbatim into every artifact.
  nlohmann::json to_json() const;

  std::unique_ptr<StoppingProblem> make_problem() const;
  std::shared_ptr<FeatureMap> make_basis(const StoppingProblem& problem) const;
  Vector eval_start_state(const StoppingProblem& problem) const;
  RunConfig run_config() const;
};

// Writes content to path via a temp file and an atomic rename.
void write_text_atomic(const std::string& path, const std::string& content);

}  // namespace zapq

#endif  // ZAPQ_CONFIG_HPP
