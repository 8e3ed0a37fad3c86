#include "zapq/chain.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace zapq {

void FiniteChainModel::validate() const {
  require(n_states >= 1, "finite chain: n_states must be positive");
  require(P.rows() == n_states && P.cols() == n_states,
          "finite chain: P must be n_states x n_states");
  require(c.size() == n_states && c_s.size() == n_states,
          "finite chain: cost vectors must have length n_states");
  require(beta > 0.0 && beta < 1.0, "finite chain: beta must lie in (0,1)");
  require(pi.size() == n_states,
          "finite chain: pi must have length n_states");
  for (int i = 0; i < n_states; ++i) {
    require(P.row(i).minCoeff() >= 0.0,
            "finite chain: P entries must be nonnegative");
    require(std::abs(P.row(i).sum() - 1.0) <= 1e-12,
            "finite chain: P rows must sum to 1");
  }
  require(pi.minCoeff() >= 0.0, "finite chain: pi must be nonnegative");
  require(std::abs(pi.sum() - 1.0) <= 1e-10, "finite chain: pi must sum to 1");
  const double balance = ((pi.transpose() * P).transpose() - pi)
                             .cwiseAbs()
                             .maxCoeff();
  require(balance <= 1e-10, "finite chain: pi is not stationary for P");
}

nlohmann::json FiniteChainModel::to_json() const {
  std::vector<double> p_flat(static_cast<std::size_t>(n_states) *
                             static_cast<std::size_t>(n_states));
  for (int i = 0; i < n_states; ++i)
    for (int j = 0; j < n_states; ++j)
      p_flat[static_cast<std::size_t>(i) * n_states + j] = P(i, j);
  return nlohmann::json{
      {"n_states", n_states},
      {"P", p_flat},
      {"c", std::vector<double>(c.data(), c.data() + c.size())},
      {"c_s", std::vector<double>(c_s.data(), c_s.data() + c_s.size())},
      {"beta", beta}};
}

FiniteChainModel FiniteChainModel::from_json(const nlohmann::json& j) {
  const int n = j.at("n_states").get<int>();
  require(n >= 1, "finite chain json: n_states must be positive");
  const auto p_flat = j.at("P").get<std::vector<double>>();
  require(static_cast<int>(p_flat.size()) == n * n,
          "finite chain json: P has wrong size");
  Matrix P(n, n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k)
      P(i, k) = p_flat[static_cast<std::size_t>(i) * n + k];
  const auto cv = j.at("c").get<std::vector<double>>();
  const auto csv = j.at("c_s").get<std::vector<double>>();
  require(static_cast<int>(cv.size()) == n &&
              static_cast<int>(csv.size()) == n,
          "finite chain json: cost vectors have wrong size");
  Vector c = Eigen::Map<const Vector>(cv.data(), n);
  Vector c_s = Eigen::Map<const Vector>(csv.data(), n);
  return make_finite_chain(std::move(P), std::move(c), std::move(c_s),
                           j.at("beta").get<double>());
}

Vector stationary_distribution(const Matrix& P) {
  const int n = static_cast<int>(P.rows());
  require(P.cols() == n && n >= 1, "stationary: P must be square");
  // pi' P = pi'  <=>  (P' - I) pi = 0; swap the last equation for sum(pi)=1.
  Matrix M = P.transpose() - Matrix::Identity(n, n);
  M.row(n - 1).setOnes();
  Vector rhs = Vector::Zero(n);
  rhs[n - 1] = 1.0;
  Eigen::FullPivLU<Matrix> lu(M);
  if (!lu.isInvertible())
    throw std::runtime_error(
        "stationary_distribution: no unique stationary distribution "
        "(chain is reducible or P is not stochastic)");
  Vector pi = lu.solve(rhs);
  const double residual = ((pi.transpose() * P).transpose() - pi)
                              .cwiseAbs()
                              .maxCoeff();
  if (residual > 1e-10 || pi.minCoeff() < -1e-10)
    throw std::runtime_error(
        "stationary_distribution: solve failed to produce a distribution");
  // Clip roundoff-negative entries and renormalize.
  pi = pi.cwiseMax(0.0);
  pi /= pi.sum();
  return pi;
}

FiniteChainModel make_finite_chain(Matrix P, Vector c, Vector c_s,
                                   double beta) {
  FiniteChainModel m;
  m.n_states = static_cast<int>(P.rows());
  m.P = std::move(P);
  m.c = std::move(c);
  m.c_s = std::move(c_s);
  m.beta = beta;
  m.pi = stationary_distribution(m.P);
  m.validate();
  return m;
}

FiniteChainModel random_finite_chain(int n_states, std::uint64_t seed,
                                     double beta) {
  require(n_states >= 2, "random_finite_chain: n_states must be >= 2");
  Rng rng(seed);
  Matrix P(n_states, n_states);
  for (int i = 0; i < n_states; ++i) {
    for (int j = 0; j < n_states; ++j) P(i, j) = 0.05 + 0.95 * rng.uniform();
    P.row(i) /= P.row(i).sum();
  }
  Vector c(n_states), c_s(n_states);
  for (int i = 0; i < n_states; ++i) c[i] = rng.uniform();
  for (int i = 0; i < n_states; ++i) c_s[i] = 2.0 * rng.uniform();
  return make_finite_chain(std::move(P), std::move(c), std::move(c_s), beta);
}

std::vector<Vector> sample_path(const StoppingProblem& problem, int n_steps,
                                std::uint64_t seed) {
  require(n_steps >= 1, "sample_path: n_steps must be >= 1");
  auto cursor = problem.make_cursor(seed);
  std::vector<Vector> path;
  path.reserve(static_cast<std::size_t>(n_steps) + 1);
  path.push_back(cursor->state());
  for (int i = 0; i < n_steps; ++i) {
    cursor->step();
    path.push_back(cursor->state());
  }
  return path;
}

FinitePathCursor::FinitePathCursor(const FiniteChainModel& model, int start,
                                   std::uint64_t seed)
    : model_(&model), index_(start), state_(1), rng_(seed) {
  require(start >= 0 && start < model.n_states,
          "finite cursor: start state out of range");
  cdf_.resize(model.n_states, model.n_states);
  for (int i = 0; i < model.n_states; ++i) {
    double acc = 0.0;
    for (int j = 0; j < model.n_states; ++j) {
      acc += model.P(i, j);
      cdf_(i, j) = acc;
    }
  }
  state_[0] = static_cast<double>(index_);
}

void FinitePathCursor::step() {
  const double u = rng_.uniform();
  const int n = model_->n_states;
  int next = n - 1;
  for (int j = 0; j < n; ++j) {
    if (u < cdf_(index_, j)) {
      next = j;
      break;
    }
  }
  index_ = next;
  state_[0] = static_cast<double>(index_);
}

std::string FiniteStoppingProblem::describe() const {
  std::ostringstream os;
  os << "finite chain, n=" << model_.n_states << ", beta=" << model_.beta;
  return os.str();
}

GbmPathCursor::GbmPathCursor(const GbmParams& params, std::uint64_t seed)
    : params_(params),
      log_prices_(static_cast<std::size_t>(params.window) + 1, 0.0),
      state_(params.window),
      rng_(seed) {
  // Warm up from flat prices so X_0 is fully defined; consumes the stream.
  for (int i = 0; i < params_.window + 1; ++i) step();
}

GbmPathCursor::GbmPathCursor(const GbmParams& params,
                             std::vector<double> log_prices,
                             std::uint64_t seed)
    : params_(params),
      log_prices_(std::move(log_prices)),
      state_(params.window),
      rng_(seed) {
  require(static_cast<int>(log_prices_.size()) == params_.window + 1,
          "gbm cursor: history must have window+1 log-prices");
  recompute_state();
}

void GbmPathCursor::step() {
  const std::size_t newest =
      (oldest_ + static_cast<std::size_t>(params_.window)) %
      log_prices_.size();
  const double next = log_prices_[newest] + params_.drift -
                      0.5 * params_.sigma * params_.sigma +
                      params_.sigma * rng_.normal();
  log_prices_[static_cast<std::size_t>(oldest_)] = next;  // drop oldest
  oldest_ = static_cast<int>((static_cast<std::size_t>(oldest_) + 1) %
                             log_prices_.size());
  recompute_state();
}

void GbmPathCursor::recompute_state() {
  const double base = log_prices_[static_cast<std::size_t>(oldest_)];
  for (int i = 1; i <= params_.window; ++i) {
    const std::size_t pos =
        (static_cast<std::size_t>(oldest_) + static_cast<std::size_t>(i)) %
        log_prices_.size();
    state_[i - 1] = std::exp(log_prices_[pos] - base);
  }
}

std::unique_ptr<PathCursor> GbmStoppingProblem::make_cursor_at(
    const Vector& x0, std::uint64_t seed) const {
  require(x0.size() == params_.window,
          "gbm: start state has wrong dimension");
  require(x0.minCoeff() > 0.0, "gbm: ratios must be strictly positive");
  std::vector<double> logp(static_cast<std::size_t>(params_.window) + 1);
  logp[0] = 0.0;
  for (int i = 1; i <= params_.window; ++i) logp[i] = std::log(x0[i - 1]);
  return std::make_unique<GbmPathCursor>(params_, std::move(logp), seed);
}

std::string GbmStoppingProblem::describe() const {
  std::ostringstream os;
  os << "gbm ratio chain, L=" << params_.window << ", sigma=" << params_.sigma
     << ", drift=" << params_.drift << ", beta=" << beta_;
  return os.str();
}

}  // namespace zapq
