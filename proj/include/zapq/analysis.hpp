#ifndef ZAPQ_ANALYSIS_HPP
#define ZAPQ_ANALYSIS_HPP

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "zapq/chain.hpp"
#include "zapq/common.hpp"
#include "zapq/features.hpp"
#include "zapq/gains.hpp"
#include "zapq/learner.hpp"
#include "zapq/oracle.hpp"

#include "json.hpp"

namespace zapq {

// Raised when some eigenvalue of G A + I/2 fails the stability condition and
// the asymptotic covariance is therefore not finite.
class InfiniteCovarianceError : public std::runtime_error {
 public:
  explicit InfiniteCovarianceError(const std::string& what)
      : std::runtime_error(what) {}
};

// Largest real part among eigenvalues of G*A.
double max_real_eigenvalue(const Matrix& GA);

// Solves (GA + I/2) S + S (GA + I/2)' + G Se G' = 0 by d^2 vectorization.
// Requires all eigenvalues of GA + I/2 to have negative real part; throws
// InfiniteCovarianceError otherwise.  Result is symmetrized.
Matrix lyapunov_covariance(const Matrix& G, const Matrix& A,
                           const Matrix& sigma_eps);

// Minimum asymptotic covariance A^{-1} Se A^{-T}, attained at G = -A^{-1}.
Matrix optimal_covariance(const Matrix& A, const Matrix& sigma_eps);

// Batch-means estimate of the long-run covariance of a correlated sequence:
// contiguous batches, batch sums centered at their sample mean, scaled by
// the batch length.
Matrix batch_means_sigma(const std::vector<Vector>& samples, int n_batches);

// Streaming variant for long trajectories.
class BatchMeansAccumulator {
 public:
  BatchMeansAccumulator(int dim, std::int64_t batch_length);
  void add(const Vector& sample);
  int completed_batches() const { return static_cast<int>(sums_.size()); }
  Matrix sigma() const;  // requires >= 2 completed batches

 private:
  std::int64_t batch_length_;
  std::int64_t in_batch_ = 0;
  Vector current_;
  std::vector<Vector> sums_;
};

inline int default_batch_count(std::int64_t T) {
  return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(T))));
}

// ---------------------------------------------------------------------------
// Noise sequence at theta*
// ---------------------------------------------------------------------------

// eps_n = (A_{n+1} - A*) theta* + (b_{n+1} - b_bar*), where
//   b_{n+1} = psi(X_n) [ c(X_n) + beta I{c_s <= Q^theta*}(X_{n+1})
//                        c_s(X_{n+1}) ]
// and b_bar* = E_pi[b_{n+1}] = b* + beta cbar_s(theta*), so the sequence is
// centered and equals psi(X_n) d_{n+1} when theta* solves the projected
// equation exactly.  A* and b_bar* come from the oracle on finite chains and
// from Monte-Carlo on the finance chain.
class NoiseStream {
 public:
  NoiseStream(const StoppingProblem& problem, const FeatureMap& features,
              Vector theta_star, Matrix a_star, Vector b_bar_star,
              std::uint64_t seed, std::int64_t burn_in = 1000);

  const Vector& next();  // eps_n for successive n
  int dim() const { return static_cast<int>(theta_star_.size()); }

 private:
  const StoppingProblem* problem_;
  const FeatureMap* features_;
  Vector theta_star_;
  Matrix a_star_;
  Vector b_bar_star_;
  std::unique_ptr<PathCursor> cursor_;
  Vector psi_n_, psi_next_, eps_;
  Vector x_n_;
};

// Convenience: exact centering quantities from the oracle.
NoiseStream oracle_noise_stream(const FiniteStoppingProblem& problem,
                                const FeatureMap& features,
                                const Vector& theta_star, std::uint64_t seed);

std::vector<Vector> noise_trajectory(const StoppingProblem& problem,
                                     const FeatureMap& features,
                                     const Vector& theta_star,
                                     const Matrix& a_star,
                                     const Vector& b_bar_star, std::int64_t T,
                                     std::uint64_t seed);

std::vector<Vector> noise_trajectory(const FiniteStoppingProblem& problem,
                                     const FeatureMap& features,
                                     const Vector& theta_star, std::int64_t T,
                                     std::uint64_t seed);

// Streams T noise samples into a batch-means estimate without storing them.
Matrix noise_sigma_batch_means(NoiseStream& stream, std::int64_t T,
                               int n_batches);

// Monte-Carlo estimates of A(theta), E[b_{n+1}] and Sigma_psi along one long
// trajectory; the finance-side stand-in for the oracle quantities.
struct MonteCarloMoments {
  Matrix a_matrix;
  Vector b_bar;
  Matrix sigma_psi;
};
MonteCarloMoments estimate_moments(const StoppingProblem& problem,
                                   const FeatureMap& features,
                                   const Vector& theta, std::int64_t T,
                                   std::uint64_t seed,
                                   std::int64_t burn_in = 1000);

// (1/M) sum_m N (theta_m - theta*)(theta_m - theta*)'.
Matrix empirical_scaled_covariance(const std::vector<Vector>& theta_finals,
                                   const Vector& theta_star, double N);

// ---------------------------------------------------------------------------
// ODE limit
// ---------------------------------------------------------------------------

struct OdePoint {
  double t;
  Vector w;
  Vector b;  // b(w(t))
};

// dw/dt = -A(w)^{-1} [b* - b(w)], integrated with fixed-step RK4.  When a
// flip signature is supplied (finite chains), a step that crosses an
// indicator boundary is retried with halved dt down to dt_min.
struct OdeSystem {
  std::function<Matrix(const Vector&)> a_map;
  std::function<Vector(const Vector&)> b_map;
  Vector b_star;
  double dt = 1e-3;
  double dt_min = 1e-6;
  std::function<std::uint64_t(const Vector&)> flip_signature;  // optional
};

// Oracle-exact maps for a finite chain.
OdeSystem oracle_ode_system(const FiniteChainModel& model,
                            const FeatureMap& features);

std::vector<OdePoint> ode_integrate(const OdeSystem& system, const Vector& w0,
                                    double t_horizon);

// Least-squares slope of log ||b(w(t)) - b*|| over the trajectory.
double fitted_decay_rate(const std::vector<OdePoint>& trajectory,
                         const Vector& b_star);

struct DeviationPoint {
  double s;
  double deviation;  // sup over [s, s+T] of ||wbar(t) - w^s(t)||
};

// Piecewise-linear interpolation of the snapshots on the t_n = sum alpha_i
// clock, re-solving the ODE from wbar(s) at each requested start time.
std::vector<DeviationPoint> sa_vs_ode_deviation(
    const RunRecord& record, const StepSizeSchedule& alpha,
    const OdeSystem& system, const std::vector<double>& start_times, double T);

// ---------------------------------------------------------------------------
// Covariance report
// ---------------------------------------------------------------------------

struct CovarianceReport {
  bool finite = false;          // eigenvalue condition for the gain
  double max_re_eig_ga = 0.0;   // max Re lambda(G A(theta*))
  Matrix sigma_theory;          // Lyapunov solution (empty when not finite)
  Matrix sigma_optimal;         // A^{-1} Se A^{-T}
  Matrix sigma_empirical;       // scaled replica covariance
  Vector diag_ratios;           // empirical/theory per coordinate
  double trace_ratio = 0.0;     // tr empirical / tr theory
  double cond_a = 0.0;          // condition number of A(theta*)
  bool cond_flag = false;       // cond_a > 1e3
  std::string note;

  nlohmann::json to_json() const;
};

// Theory-versus-empirical report for a constant-gain reading of an algorithm:
// G is the effective gain (step-size multiplier folded in).
CovarianceReport make_covariance_report(const Matrix& G, const Matrix& a_star,
                                        const Matrix& sigma_eps,
                                        const std::vector<Vector>& theta_finals,
                                        const Vector& theta_star, double N);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

}  // namespace zapq

#endif  // ZAPQ_ANALYSIS_HPP
