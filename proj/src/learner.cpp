#include "zapq/learner.hpp"

#include <cmath>

#include "zapq/csv.hpp"

namespace zapq {
namespace {

std::vector<std::int64_t> snapshot_steps(std::int64_t n_steps, double ratio) {
  std::vector<std::int64_t> steps{0};
  double v = 1.0;
  while (true) {
    const auto n = static_cast<std::int64_t>(std::ceil(v));
    if (n >= n_steps) break;
    if (n > steps.back()) steps.push_back(n);
    v *= ratio;
  }
  steps.push_back(n_steps);
  return steps;
}

std::vector<double> to_std(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Vector from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> mat_flat(const Matrix& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  return out;
}

Matrix mat_unflat(const std::vector<double>& v, Eigen::Index rows) {
  if (rows == 0) return Matrix();
  const Eigen::Index cols = static_cast<Eigen::Index>(v.size()) / rows;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      m(i, j) = v[static_cast<std::size_t>(i * cols + j)];
  return m;
}

}  // namespace

double td_term(const StoppingProblem& problem, const FeatureMap& features,
               const Vector& theta, const Vector& x_n, const Vector& x_next) {
  const double q_n = q_value(features, theta, x_n);
  const double q_next = q_value(features, theta, x_next);
  return td_term(problem.run_cost(x_n), problem.stop_cost(x_next), q_next, q_n,
                 problem.beta());
}

void RunConfig::validate() const {
  require(n_steps >= 1, "run config: N must be >= 1");
  require(snapshots.ratio > 1.0, "run config: snapshot ratio must exceed 1");
  require(pinv_rel_threshold >= 0.0,
          "run config: pinv threshold must be nonnegative");
  if (clamp_theta) require(clamp_radius > 0.0, "run config: clamp radius > 0");
  // Exercise both schedules so malformed parameters fail before the run.
  (void)alpha.at(1);
  if (strategy != GainStrategy::Identity) (void)gamma.at(1);
}

nlohmann::json RunRecord::to_json() const {
  nlohmann::json snaps = nlohmann::json::array();
  for (const auto& s : snapshots) {
    nlohmann::json js{{"n", s.n}, {"theta", to_std(s.theta)}};
    if (s.gain_matrix) js["gain_matrix"] = mat_flat(*s.gain_matrix);
    snaps.push_back(std::move(js));
  }
  nlohmann::json j{
      {"version", kVersion},
      {"config", config_echo},
      {"seed", seed},
      {"n_steps", n_steps},
      {"snapshots", std::move(snaps)},
      {"theta_final", to_std(theta_final)},
      {"diagnostics",
       {{"pinv_truncations", diag.pinv_truncations},
        {"max_theta_norm", diag.max_theta_norm},
        {"aborted", diag.aborted},
        {"abort_step", diag.abort_step},
        {"abort_reason", diag.abort_reason}}}};
  if (gain_matrix_final.size() > 0)
    j["gain_matrix_final"] = mat_flat(gain_matrix_final);
  return j;
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
  RunRecord r;
  r.config_echo = j.value("config", nlohmann::json::object());
  r.seed = j.at("seed").get<std::uint64_t>();
  r.n_steps = j.at("n_steps").get<std::int64_t>();
  r.theta_final = from_std(j.at("theta_final").get<std::vector<double>>());
  const Eigen::Index d = r.theta_final.size();
  for (const auto& js : j.at("snapshots")) {
    Snapshot s;
    s.n = js.at("n").get<std::int64_t>();
    s.theta = from_std(js.at("theta").get<std::vector<double>>());
    if (js.contains("gain_matrix"))
      s.gain_matrix =
          mat_unflat(js.at("gain_matrix").get<std::vector<double>>(), d);
    r.snapshots.push_back(std::move(s));
  }
  if (j.contains("gain_matrix_final"))
    r.gain_matrix_final =
        mat_unflat(j.at("gain_matrix_final").get<std::vector<double>>(), d);
  const auto& diag = j.at("diagnostics");
  r.diag.pinv_truncations = diag.at("pinv_truncations").get<std::int64_t>();
  r.diag.max_theta_norm = diag.at("max_theta_norm").get<double>();
  r.diag.aborted = diag.at("aborted").get<bool>();
  r.diag.abort_step = diag.at("abort_step").get<std::int64_t>();
  r.diag.abort_reason = diag.at("abort_reason").get<std::string>();
  return r;
}

void RunRecord::write_csv(std::ostream& os) const {
  const Eigen::Index d = theta_final.size();
  std::vector<std::string> header{"n"};
  for (Eigen::Index i = 0; i < d; ++i)
    header.push_back("theta_" + std::to_string(i));
  csv_row(os, header);
  for (const auto& s : snapshots) {
    std::vector<std::string> row{csv_num(static_cast<long long>(s.n))};
    for (Eigen::Index i = 0; i < d; ++i) row.push_back(csv_num(s.theta[i]));
    csv_row(os, row);
  }
}

RunRecord run_matrix_gain(const StoppingProblem& problem,
                          const FeatureMap& features,
                          const RunConfig& config) {
  config.validate();
  const int d = features.dim();
  Vector theta = config.theta0.size() == 0 ? Vector::Zero(d) : config.theta0;
  require(theta.size() == d, "run: theta0 dimension mismatch");

  RunRecord record;
  record.config_echo = config.echo;
  record.seed = config.seed;
  record.n_steps = config.n_steps;

  GainState gain(config.strategy, d, config.a0_scale,
                 config.pinv_rel_threshold, config.a_clamp_delta);
  auto cursor = problem.make_cursor(config.seed);

  const auto snap_steps =
      snapshot_steps(config.n_steps, config.snapshots.ratio);
  std::size_t next_snap = 0;
  const auto take_snapshot = [&](std::int64_t n) {
    Snapshot s;
    s.n = n;
    s.theta = theta;
    if (config.snapshots.include_gain &&
        config.strategy != GainStrategy::Identity)
      s.gain_matrix = gain.matrix();
    record.snapshots.push_back(std::move(s));
  };
  take_snapshot(0);
  ++next_snap;

  Vector psi_n(d), psi_next(d);
  Vector x_n = cursor->state();
  features.evaluate_into(x_n, psi_n);
  Matrix a_sample(d, d);
  Vector theta_prev = theta;
  record.diag.max_theta_norm = theta.norm();

  for (std::int64_t n = 0; n < config.n_steps; ++n) {
    const double cost_n = problem.run_cost(x_n);
    cursor->step();
    const Vector& x_next = cursor->state();
    features.evaluate_into(x_next, psi_next);

    const double q_n = theta.dot(psi_n);
    const double q_next = theta.dot(psi_next);
    const double stop_cost_next = problem.stop_cost(x_next);
    const double d_n1 = td_term(cost_n, stop_cost_next, q_next, q_n,
                                problem.beta());

    // Gain before parameter: the theta update uses the n+1 gain state.
    switch (config.strategy) {
      case GainStrategy::Zap: {
        const int cont = continue_indicator(stop_cost_next, q_next);
        a_sample_into(psi_n, psi_next, cont, problem.beta(), a_sample);
        gain.update_zap(a_sample, config.gamma.at(n + 1));
        break;
      }
      case GainStrategy::Kalman:
        gain.update_kalman(psi_n, config.gamma.at(n + 1));
        break;
      case GainStrategy::Identity:
        break;
    }

    const double alpha = config.alpha.at(n + 1);
    theta_prev = theta;
    if (config.strategy == GainStrategy::Identity) {
      theta.noalias() += alpha * d_n1 * psi_n;
    } else {
      theta.noalias() += alpha * d_n1 * (gain.gain() * psi_n);
    }

    if (!theta.allFinite()) {
      // Divergence is reportable, not silent; keep the last finite iterate.
      record.diag.aborted = true;
      record.diag.abort_step = n + 1;
      record.diag.abort_reason = "non-finite parameter vector";
      theta = theta_prev;
      break;
    }
    if (config.clamp_theta) {
      const double norm = theta.norm();
      if (norm > config.clamp_radius) theta *= config.clamp_radius / norm;
    }
    record.diag.max_theta_norm =
        std::max(record.diag.max_theta_norm, theta.norm());

    if (next_snap < snap_steps.size() && n + 1 == snap_steps[next_snap]) {
      take_snapshot(n + 1);
      ++next_snap;
    }

    x_n = x_next;
    psi_n.swap(psi_next);
  }

  record.theta_final = theta;
  record.diag.pinv_truncations = gain.truncation_events();
  if (config.strategy != GainStrategy::Identity)
    record.gain_matrix_final = gain.matrix();
  return record;
}

std::vector<RunRecord> run_replicas(const StoppingProblem& problem,
                                    const FeatureMap& features,
                                    const RunConfig& config, int n_replicas,
                                    std::uint64_t base_seed, int n_threads) {
  require(n_replicas >= 1, "run_replicas: M must be >= 1");
  std::vector<RunRecord> records(static_cast<std::size_t>(n_replicas));
  parallel_for(n_replicas, n_threads, [&](std::int64_t i) {
    RunConfig rc = config;
    rc.seed = base_seed + static_cast<std::uint64_t>(i);
    records[static_cast<std::size_t>(i)] =
        run_matrix_gain(problem, features, rc);
  });
  return records;
}

}  // namespace zapq
