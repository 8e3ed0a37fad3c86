#include "zapq/analysis.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

namespace zapq {

double max_real_eigenvalue(const Matrix& GA) {
  Eigen::EigenSolver<Matrix> es(GA, /*computeEigenvectors=*/false);
  return es.eigenvalues().real().maxCoeff();
}

Matrix lyapunov_covariance(const Matrix& G, const Matrix& A,
                           const Matrix& sigma_eps) {
  const Eigen::Index d = A.rows();
  require(G.rows() == d && G.cols() == d && A.cols() == d &&
              sigma_eps.rows() == d && sigma_eps.cols() == d,
          "lyapunov: dimension mismatch");
  const Matrix M = G * A + 0.5 * Matrix::Identity(d, d);
  if (max_real_eigenvalue(M) >= 0.0)
    throw InfiniteCovarianceError(
        "infinite asymptotic covariance: some eigenvalue of G A(theta*) is "
        ">= -1/2");
  // vec(M S) = (I (x) M) vec(S), vec(S M') = (M (x) I) vec(S) in
  // column-major vectorization.
  Matrix K = Matrix::Zero(d * d, d * d);
  for (Eigen::Index i = 0; i < d; ++i)
    K.block(i * d, i * d, d, d) += M;  // I (x) M
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      K.block(i * d, j * d, d, d) +=
          M(i, j) * Matrix::Identity(d, d);  // M (x) I
  const Matrix rhs_mat = -(G * sigma_eps * G.transpose());
  const Vector rhs = Eigen::Map<const Vector>(rhs_mat.data(), d * d);
  const Vector x = K.partialPivLu().solve(rhs);
  Matrix S = Eigen::Map<const Matrix>(x.data(), d, d);
  return 0.5 * (S + S.transpose());
}

Matrix optimal_covariance(const Matrix& A, const Matrix& sigma_eps) {
  const Eigen::Index d = A.rows();
  require(A.cols() == d && sigma_eps.rows() == d && sigma_eps.cols() == d,
          "optimal covariance: dimension mismatch");
  Eigen::FullPivLU<Matrix> lu(A);
  if (!lu.isInvertible())
    throw std::runtime_error("optimal covariance: A is singular");
  const Matrix a_inv = lu.inverse();
  Matrix S = a_inv * sigma_eps * a_inv.transpose();
  return 0.5 * (S + S.transpose());
}

Matrix batch_means_sigma(const std::vector<Vector>& samples, int n_batches) {
  require(n_batches >= 2, "batch means: need at least 2 batches");
  require(static_cast<std::int64_t>(samples.size()) >= n_batches,
          "batch means: too few samples");
  const std::int64_t batch_len =
      static_cast<std::int64_t>(samples.size()) / n_batches;
  BatchMeansAccumulator acc(static_cast<int>(samples.front().size()),
                            batch_len);
  // Trailing remainder (< one batch) is dropped.
  for (std::int64_t i = 0; i < batch_len * n_batches; ++i)
    acc.add(samples[static_cast<std::size_t>(i)]);
  return acc.sigma();
}

BatchMeansAccumulator::BatchMeansAccumulator(int dim,
                                             std::int64_t batch_length)
    : batch_length_(batch_length), current_(Vector::Zero(dim)) {
  require(dim >= 1, "batch means: dimension must be positive");
  require(batch_length >= 1, "batch means: batch length must be positive");
}

void BatchMeansAccumulator::add(const Vector& sample) {
  current_ += sample;
  if (++in_batch_ == batch_length_) {
    sums_.push_back(current_);
    current_.setZero();
    in_batch_ = 0;
  }
}

Matrix BatchMeansAccumulator::sigma() const {
  const int k = static_cast<int>(sums_.size());
  require(k >= 2, "batch means: need at least 2 completed batches");
  const Eigen::Index d = current_.size();
  Vector mean = Vector::Zero(d);
  for (const auto& s : sums_) mean += s;
  mean /= static_cast<double>(k);
  Matrix cov = Matrix::Zero(d, d);
  for (const auto& s : sums_) {
    const Vector centered = s - mean;
    cov.noalias() += centered * centered.transpose();
  }
  // Sample covariance of S_k / sqrt(batch length).
  return cov / (static_cast<double>(k - 1) *
                static_cast<double>(batch_length_));
}

NoiseStream::NoiseStream(const StoppingProblem& problem,
                         const FeatureMap& features, Vector theta_star,
                         Matrix a_star, Vector b_bar_star, std::uint64_t seed,
                         std::int64_t burn_in)
    : problem_(&problem),
      features_(&features),
      theta_star_(std::move(theta_star)),
      a_star_(std::move(a_star)),
      b_bar_star_(std::move(b_bar_star)),
      cursor_(problem.make_cursor(seed)),
      psi_n_(features.dim()),
      psi_next_(features.dim()),
      eps_(features.dim()) {
  require(theta_star_.size() == features.dim(),
          "noise stream: theta* dimension mismatch");
  for (std::int64_t i = 0; i < burn_in; ++i) cursor_->step();
  x_n_ = cursor_->state();
  features_->evaluate_into(x_n_, psi_n_);
}

const Vector& NoiseStream::next() {
  const double cost_n = problem_->run_cost(x_n_);
  cursor_->step();
  const Vector& x_next = cursor_->state();
  features_->evaluate_into(x_next, psi_next_);
  const double q_next = theta_star_.dot(psi_next_);
  const double stop_cost_next = problem_->stop_cost(x_next);
  const double beta = problem_->beta();

  // A_{n+1} theta* + b_{n+1} = psi(X_n) d_{n+1} at theta = theta*.
  const double q_n = theta_star_.dot(psi_n_);
  const double d_n1 =
      cost_n + beta * std::min(stop_cost_next, q_next) - q_n;
  eps_ = d_n1 * psi_n_ - a_star_ * theta_star_ - b_bar_star_;

  x_n_ = x_next;
  psi_n_.swap(psi_next_);
  return eps_;
}

NoiseStream oracle_noise_stream(const FiniteStoppingProblem& problem,
                                const FeatureMap& features,
                                const Vector& theta_star, std::uint64_t seed) {
  const auto& model = problem.model();
  const Matrix a_star = exact_a_matrix(model, features, theta_star);
  const Vector b_bar = exact_b_star(model, features) +
                       model.beta * exact_cbar_s(model, features, theta_star);
  return NoiseStream(problem, features, theta_star, a_star, b_bar, seed);
}

std::vector<Vector> noise_trajectory(const StoppingProblem& problem,
                                     const FeatureMap& features,
                                     const Vector& theta_star,
                                     const Matrix& a_star,
                                     const Vector& b_bar_star, std::int64_t T,
                                     std::uint64_t seed) {
  NoiseStream stream(problem, features, theta_star, a_star, b_bar_star, seed);
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(T));
  for (std::int64_t i = 0; i < T; ++i) out.push_back(stream.next());
  return out;
}

std::vector<Vector> noise_trajectory(const FiniteStoppingProblem& problem,
                                     const FeatureMap& features,
                                     const Vector& theta_star, std::int64_t T,
                                     std::uint64_t seed) {
  auto stream = oracle_noise_stream(problem, features, theta_star, seed);
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(T));
  for (std::int64_t i = 0; i < T; ++i) out.push_back(stream.next());
  return out;
}

Matrix noise_sigma_batch_means(NoiseStream& stream, std::int64_t T,
                               int n_batches) {
  require(n_batches >= 2 && T >= n_batches,
          "noise sigma: need T >= n_batches >= 2");
  BatchMeansAccumulator acc(stream.dim(), T / n_batches);
  for (std::int64_t i = 0; i < (T / n_batches) * n_batches; ++i)
    acc.add(stream.next());
  return acc.sigma();
}

MonteCarloMoments estimate_moments(const StoppingProblem& problem,
                                   const FeatureMap& features,
                                   const Vector& theta, std::int64_t T,
                                   std::uint64_t seed, std::int64_t burn_in) {
  require(T >= 1, "estimate_moments: T must be >= 1");
  const int d = features.dim();
  MonteCarloMoments m;
  m.a_matrix = Matrix::Zero(d, d);
  m.b_bar = Vector::Zero(d);
  m.sigma_psi = Matrix::Zero(d, d);

  auto cursor = problem.make_cursor(seed);
  for (std::int64_t i = 0; i < burn_in; ++i) cursor->step();
  Vector psi_n(d), psi_next(d);
  Vector x_n = cursor->state();
  features.evaluate_into(x_n, psi_n);
  Matrix a_sample(d, d);
  const double beta = problem.beta();
  for (std::int64_t i = 0; i < T; ++i) {
    const double cost_n = problem.run_cost(x_n);
    cursor->step();
    const Vector& x_next = cursor->state();
    features.evaluate_into(x_next, psi_next);
    const double q_next = theta.dot(psi_next);
    const double stop_cost_next = problem.stop_cost(x_next);
    const int cont = continue_indicator(stop_cost_next, q_next);
    a_sample_into(psi_n, psi_next, cont, beta, a_sample);
    m.a_matrix += a_sample;
    m.b_bar += psi_n * (cost_n + beta * (1 - cont) * stop_cost_next);
    m.sigma_psi.noalias() += psi_n * psi_n.transpose();
    x_n = x_next;
    psi_n.swap(psi_next);
  }
  const double inv_t = 1.0 / static_cast<double>(T);
  m.a_matrix *= inv_t;
  m.b_bar *= inv_t;
  m.sigma_psi *= inv_t;
  return m;
}

Matrix empirical_scaled_covariance(const std::vector<Vector>& theta_finals,
                                   const Vector& theta_star, double N) {
  require(theta_finals.size() >= 2,
          "empirical covariance: M >= 2 replicas required");
  const Eigen::Index d = theta_star.size();
  Matrix cov = Matrix::Zero(d, d);
  for (const auto& th : theta_finals) {
    const Vector err = th - theta_star;
    cov.noalias() += err * err.transpose();
  }
  return cov * (N / static_cast<double>(theta_finals.size()));
}

OdeSystem oracle_ode_system(const FiniteChainModel& model,
                            const FeatureMap& features) {
  OdeSystem sys;
  sys.a_map = [&model, &features](const Vector& w) {
    return exact_a_matrix(model, features, w);
  };
  sys.b_map = [&model, &features](const Vector& w) {
    return exact_b_of_theta(model, features, w);
  };
  sys.b_star = exact_b_star(model, features);
  const Matrix table = feature_table(model, features);
  const Vector c_s = model.c_s;
  sys.flip_signature = [table, c_s](const Vector& w) {
    const Vector q = table * w;
    std::uint64_t sig = 1469598103934665603ULL;  // FNV, works for any n
    for (Eigen::Index y = 0; y < q.size(); ++y)
      sig = (sig ^ (q[y] < c_s[y] ? 1u : 0u)) * 1099511628211ULL;
    return sig;
  };
  return sys;
}

namespace {

Vector ode_rhs(const OdeSystem& sys, const Vector& w) {
  const Matrix A = sys.a_map(w);
  Eigen::FullPivLU<Matrix> lu(A);
  if (!lu.isInvertible())
    throw std::runtime_error("ode: A(w) is singular along the trajectory");
  return -lu.solve(sys.b_star - sys.b_map(w));
}

// One RK4 step.  When the system carries a flip signature, *clean is set
// to false if any internal stage or the endpoint leaves the indicator
// region of w: such steps mix the two vector fields and deserve refinement.
Vector rk4_step(const OdeSystem& sys, const Vector& w, double dt,
                bool* clean) {
  const Vector k1 = ode_rhs(sys, w);
  const Vector s2 = w + 0.5 * dt * k1;
  const Vector k2 = ode_rhs(sys, s2);
  const Vector s3 = w + 0.5 * dt * k2;
  const Vector k3 = ode_rhs(sys, s3);
  const Vector s4 = w + dt * k3;
  const Vector k4 = ode_rhs(sys, s4);
  Vector next = w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (clean) {
    *clean = true;
    if (sys.flip_signature) {
      const std::uint64_t sig = sys.flip_signature(w);
      *clean = sys.flip_signature(s2) == sig &&
               sys.flip_signature(s3) == sig &&
               sys.flip_signature(s4) == sig &&
               sys.flip_signature(next) == sig;
    }
  }
  return next;
}

}  // namespace

std::vector<OdePoint> ode_integrate(const OdeSystem& system, const Vector& w0,
                                    double t_horizon) {
  require(system.dt > 0.0 && system.dt_min > 0.0 &&
              system.dt_min <= system.dt,
          "ode: invalid step sizes");
  require(t_horizon >= 0.0, "ode: horizon must be nonnegative");
  std::vector<OdePoint> out;
  Vector w = w0;
  double t = 0.0;
  out.push_back({t, w, system.b_map(w)});
  while (t < t_horizon - 1e-15) {
    double dt = std::min(system.dt, t_horizon - t);
    bool clean = true;
    Vector next = rk4_step(system, w, dt, &clean);
    // Shrink the step near an indicator flip for accuracy, then accept.
    while (!clean && dt > system.dt_min) {
      dt *= 0.5;
      next = rk4_step(system, w, dt, &clean);
    }
    if (!next.allFinite())
      throw std::runtime_error("ode: non-finite state during integration");
    w = next;
    t += dt;
    out.push_back({t, w, system.b_map(w)});
  }
  return out;
}

double fitted_decay_rate(const std::vector<OdePoint>& trajectory,
                         const Vector& b_star) {
  require(trajectory.size() >= 2, "decay fit: need at least 2 points");
  // Least squares of log residual on t.
  double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
  std::int64_t n = 0;
  for (const auto& p : trajectory) {
    const double r = (p.b - b_star).norm();
    if (r <= 0.0) continue;
    const double y = std::log(r);
    st += p.t;
    sy += y;
    stt += p.t * p.t;
    sty += p.t * y;
    ++n;
  }
  require(n >= 2, "decay fit: residual vanished everywhere");
  const double denom = n * stt - st * st;
  require(std::abs(denom) > 0.0, "decay fit: degenerate time grid");
  return (n * sty - st * sy) / denom;
}

namespace {

// Piecewise-linear interpolation through (t_k, v_k) with clamped ends.
Vector interp(const std::vector<double>& ts, const std::vector<Vector>& vs,
              double t) {
  if (t <= ts.front()) return vs.front();
  if (t >= ts.back()) return vs.back();
  const auto it = std::upper_bound(ts.begin(), ts.end(), t);
  const std::size_t hi = static_cast<std::size_t>(it - ts.begin());
  const std::size_t lo = hi - 1;
  const double span = ts[hi] - ts[lo];
  const double u = span > 0.0 ? (t - ts[lo]) / span : 0.0;
  return (1.0 - u) * vs[lo] + u * vs[hi];
}

}  // namespace

std::vector<DeviationPoint> sa_vs_ode_deviation(
    const RunRecord& record, const StepSizeSchedule& alpha,
    const OdeSystem& system, const std::vector<double>& start_times,
    double T) {
  require(T >= 0.0, "deviation: T must be nonnegative");
  require(record.snapshots.size() >= 2, "deviation: insufficient snapshots");

  // Exact partial sums of the step-size clock at the snapshot indices.
  std::vector<double> ts;
  std::vector<Vector> ws;
  ts.reserve(record.snapshots.size());
  ws.reserve(record.snapshots.size());
  {
    double t = 0.0;
    std::int64_t n = 0;
    for (const auto& snap : record.snapshots) {
      for (; n < snap.n; ++n) t += alpha.at(n + 1);
      ts.push_back(t);
      ws.push_back(snap.theta);
    }
  }

  std::vector<DeviationPoint> profile;
  profile.reserve(start_times.size());
  for (const double s : start_times) {
    require(s >= ts.front() && s + T <= ts.back() + 1e-9,
            "deviation: window [s, s+T] outside the snapshot clock");
    if (T == 0.0) {
      profile.push_back({s, 0.0});
      continue;
    }
    const Vector w_start = interp(ts, ws, s);
    const auto ode = ode_integrate(system, w_start, T);
    std::vector<double> ode_ts;
    std::vector<Vector> ode_ws;
    ode_ts.reserve(ode.size());
    ode_ws.reserve(ode.size());
    for (const auto& p : ode) {
      ode_ts.push_back(s + p.t);
      ode_ws.push_back(p.w);
    }
    // Compare on the union of both grids restricted to [s, s+T].
    double dev = 0.0;
    const auto consider = [&](double t) {
      if (t < s || t > s + T) return;
      dev = std::max(dev, (interp(ts, ws, t) - interp(ode_ts, ode_ws, t))
                              .norm());
    };
    for (const double t : ode_ts) consider(t);
    for (const double t : ts) consider(t);
    profile.push_back({s, dev});
  }
  return profile;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) return Matrix();
  Matrix m(static_cast<Eigen::Index>(rows.size()),
           static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          rows[i][k];
  return m;
}

nlohmann::json CovarianceReport::to_json() const {
  nlohmann::json j{{"finite", finite},
                   {"max_re_eig_ga", max_re_eig_ga},
                   {"cond_a", cond_a},
                   {"cond_flag", cond_flag},
                   {"note", note}};
  if (sigma_theory.size() > 0) j["sigma_theory"] = matrix_to_json(sigma_theory);
  if (sigma_optimal.size() > 0)
    j["sigma_optimal"] = matrix_to_json(sigma_optimal);
  if (sigma_empirical.size() > 0) {
    j["sigma_empirical"] = matrix_to_json(sigma_empirical);
    j["trace_empirical"] = sigma_empirical.trace();
  }
  if (sigma_theory.size() > 0) {
    j["trace_theory"] = sigma_theory.trace();
    j["trace_ratio"] = trace_ratio;
    j["diag_ratios"] =
        std::vector<double>(diag_ratios.data(),
                            diag_ratios.data() + diag_ratios.size());
  }
  return j;
}

CovarianceReport make_covariance_report(
    const Matrix& G, const Matrix& a_star, const Matrix& sigma_eps,
    const std::vector<Vector>& theta_finals, const Vector& theta_star,
    double N) {
  CovarianceReport report;
  const Matrix GA = G * a_star;
  report.max_re_eig_ga = max_real_eigenvalue(GA);
  report.sigma_empirical =
      empirical_scaled_covariance(theta_finals, theta_star, N);
  report.sigma_optimal = optimal_covariance(a_star, sigma_eps);
  {
    Eigen::JacobiSVD<Matrix> svd(a_star);
    const auto& sv = svd.singularValues();
    report.cond_a = sv[0] / sv[sv.size() - 1];
    report.cond_flag = report.cond_a > 1e3;
  }
  try {
    report.sigma_theory = lyapunov_covariance(G, a_star, sigma_eps);
    report.finite = true;
    const Eigen::Index d = a_star.rows();
    report.diag_ratios.resize(d);
    for (Eigen::Index i = 0; i < d; ++i)
      report.diag_ratios[i] =
          report.sigma_empirical(i, i) / report.sigma_theory(i, i);
    report.trace_ratio =
        report.sigma_empirical.trace() / report.sigma_theory.trace();
  } catch (const InfiniteCovarianceError& e) {
    report.finite = false;
    report.note = e.what();
  }
  return report;
}

}  // namespace zapq
