#ifndef ZAPQ_CHAIN_HPP
#define ZAPQ_CHAIN_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "zapq/common.hpp"

#include "json.hpp"

namespace zapq {

// ---------------------------------------------------------------------------
// Finite chains (exact oracle world)
// ---------------------------------------------------------------------------

// Explicit finite-state stopping problem: transition matrix P, per-stage cost
// c, stopping cost c_s, discount beta, stationary distribution pi.
struct FiniteChainModel {
  int n_states = 0;
  Matrix P;     // n x n, row stochastic
  Vector c;     // per-stage cost
  Vector c_s;   // stopping cost
  double beta = 0.0;
  Vector pi;    // stationary distribution of P

  // Throws std::invalid_argument on any violated invariant.
  void validate() const;

  nlohmann::json to_json() const;
  static FiniteChainModel from_json(const nlohmann::json& j);
};

// Unique stationary distribution of a row-stochastic matrix, solved as a
// linear system with one balance equation replaced by normalization.
// Throws std::runtime_error if the chain has no unique stationary law.
Vector stationary_distribution(const Matrix& P);

// Builds the model and computes pi exactly.
FiniteChainModel make_finite_chain(Matrix P, Vector c, Vector c_s, double beta);

// Strictly positive random transition matrix (hence irreducible and uniformly
// ergodic), costs c in [0,1], c_s in [0,2].  Deterministic in (n_states, seed).
FiniteChainModel random_finite_chain(int n_states, std::uint64_t seed,
                                     double beta);

// Finite-chain states travel as 1-dimensional vectors holding the index.
inline Vector finite_state(int index) {
  Vector x(1);
  x[0] = static_cast<double>(index);
  return x;
}

inline int state_index(const Vector& x) {
  return static_cast<int>(std::llround(x[0]));
}

// ---------------------------------------------------------------------------
// Sampling interface
// ---------------------------------------------------------------------------

// Per-path mutable cursor; owns its RNG.  One owner per cursor.
class PathCursor {
 public:
  virtual ~PathCursor() = default;
  virtual const Vector& state() const = 0;
  virtual void step() = 0;
};

// Immutable environment bundle: chain dynamics plus the stopping-problem
// costs and discount.  Cursors may be created and advanced concurrently.
class StoppingProblem {
 public:
  virtual ~StoppingProblem() = default;
  virtual int state_dim() const = 0;
  virtual double beta() const = 0;
  virtual double run_cost(const Vector& x) const = 0;
  virtual double stop_cost(const Vector& x) const = 0;
  // Training cursor (finance: warm-filled window, consuming the rng stream).
  virtual std::unique_ptr<PathCursor> make_cursor(std::uint64_t seed) const = 0;
  // Evaluation cursor started at an explicit state.
  virtual std::unique_ptr<PathCursor> make_cursor_at(
      const Vector& x0, std::uint64_t seed) const = 0;
  // True when results should be reported as rewards (finance convention,
  // c_s = -r); values are still computed in the cost convention internally.
  virtual bool reward_convention() const { return false; }
  virtual std::string describe() const = 0;
};

std::vector<Vector> sample_path(const StoppingProblem& problem, int n_steps,
                                std::uint64_t seed);

class FinitePathCursor final : public PathCursor {
 public:
  FinitePathCursor(const FiniteChainModel& model, int start,
                   std::uint64_t seed);
  const Vector& state() const override { return state_; }
  void step() override;

 private:
  const FiniteChainModel* model_;
  Matrix cdf_;  // per-row cumulative transition probabilities
  int index_;
  Vector state_;
  Rng rng_;
};

class FiniteStoppingProblem final : public StoppingProblem {
 public:
  explicit FiniteStoppingProblem(FiniteChainModel model, int start_state = 0)
      : model_(std::move(model)), start_state_(start_state) {}

  int state_dim() const override { return 1; }
  double beta() const override { return model_.beta; }
  double run_cost(const Vector& x) const override {
    return model_.c[state_index(x)];
  }
  double stop_cost(const Vector& x) const override {
    return model_.c_s[state_index(x)];
  }
  std::unique_ptr<PathCursor> make_cursor(std::uint64_t seed) const override {
    return std::make_unique<FinitePathCursor>(model_, start_state_, seed);
  }
  std::unique_ptr<PathCursor> make_cursor_at(const Vector& x0,
                                             std::uint64_t seed) const override {
    return std::make_unique<FinitePathCursor>(model_, state_index(x0), seed);
  }
  std::string describe() const override;

  const FiniteChainModel& model() const { return model_; }

 private:
  FiniteChainModel model_;
  int start_state_;
};

// ---------------------------------------------------------------------------
// Finance GBM ratio chain
// ---------------------------------------------------------------------------

struct GbmParams {
  int window = 100;       // L; emitted state dimension
  double sigma = 0.02;    // per-step volatility
  double drift = 0.0004;  // per-step price drift (log increment drift - s^2/2)
};

// State X_n has coordinate i equal to p_{n-L+i}/p_{n-L}, i = 1..L; the last
// coordinate is the ratio r(X_n) = p_n / p_{n-L}.
class GbmPathCursor final : public PathCursor {
 public:
  // Warm start: flat history (all prices 1) advanced L+1 steps.
  GbmPathCursor(const GbmParams& params, std::uint64_t seed);
  // Explicit start: log-price history of length L+1, oldest first.
  GbmPathCursor(const GbmParams& params, std::vector<double> log_prices,
                std::uint64_t seed);

  const Vector& state() const override { return state_; }
  void step() override;

  const std::vector<double>& log_prices() const { return log_prices_; }
  double oldest_log_price() const {
    return log_prices_[static_cast<std::size_t>(oldest_)];
  }
  double newest_log_price() const {
    return log_prices_[(static_cast<std::size_t>(oldest_) +
                        static_cast<std::size_t>(params_.window)) %
                       log_prices_.size()];
  }

 private:
  void recompute_state();

  GbmParams params_;
  std::vector<double> log_prices_;  // circular, size L+1
  int oldest_ = 0;                  // position of p_{n-L}
  Vector state_;
  Rng rng_;
};

class GbmStoppingProblem final : public StoppingProblem {
 public:
  GbmStoppingProblem(GbmParams params, double beta)
      : params_(params), beta_(beta) {
    require(beta > 0.0 && beta < 1.0, "gbm: beta must lie in (0,1)");
    require(params.window >= 1, "gbm: window must be positive");
    require(params.sigma >= 0.0, "gbm: sigma must be nonnegative");
  }

  int state_dim() const override { return params_.window; }
  double beta() const override { return beta_; }
  // Cost convention for the reward problem: c = 0, c_s = -r.
  double run_cost(const Vector&) const override { return 0.0; }
  double stop_cost(const Vector& x) const override {
    return -x[params_.window - 1];
  }
  std::unique_ptr<PathCursor> make_cursor(std::uint64_t seed) const override {
    return std::make_unique<GbmPathCursor>(params_, seed);
  }
  std::unique_ptr<PathCursor> make_cursor_at(const Vector& x0,
                                             std::uint64_t seed) const override;
  bool reward_convention() const override { return true; }
  std::string describe() const override;

  const GbmParams& params() const { return params_; }

 private:
  GbmParams params_;
  double beta_;
};

}  // namespace zapq

#endif  // ZAPQ_CHAIN_HPP
