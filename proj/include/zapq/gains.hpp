#ifndef ZAPQ_GAINS_HPP
#define ZAPQ_GAINS_HPP

#include <cstdint>
#include <string>

#include "zapq/common.hpp"

namespace zapq {

// ---------------------------------------------------------------------------
// Step-size schedules
// ---------------------------------------------------------------------------

enum class ScheduleKind {
  Harmonic,        // 1/n
  Scaled,          // g/(b+n)
  Polynomial,      // 1/n^rho, rho in (0.5, 1)
  ScaledHarmonic,  // g/n
};

struct StepSizeSchedule {
  ScheduleKind kind = ScheduleKind::Harmonic;
  double g = 1.0;
  double b = 0.0;
  double rho = 0.85;

  double at(std::int64_t n) const;  // n >= 1; throws otherwise

  // Asymptotic multiplier of the 1/n envelope (n * at(n) as n -> inf);
  // NaN for the polynomial kind, which decays slower than 1/n.
  double harmonic_multiplier() const;

  static StepSizeSchedule harmonic() { return {ScheduleKind::Harmonic}; }
  static StepSizeSchedule scaled(double g, double b) {
    return {ScheduleKind::Scaled, g, b};
  }
  static StepSizeSchedule polynomial(double rho);
  static StepSizeSchedule scaled_harmonic(double g) {
    return {ScheduleKind::ScaledHarmonic, g};
  }

  // Text forms: "harmonic" | "1/n", "scaled:<g>:<b>", "poly:<rho>",
  // "scaled-harmonic:<g>".
  static StepSizeSchedule parse(const std::string& text);
  std::string describe() const;
};

// ---------------------------------------------------------------------------
// Per-sample matrix and guarded pseudo-inverse
// ---------------------------------------------------------------------------

// Rank-one term psi(X_n) [beta * ind * psi(X_{n+1}) - psi(X_n)]' with
// ind = I{Q^theta(X_{n+1}) < c_s(X_{n+1})}.
void a_sample_into(const Vector& psi_n, const Vector& psi_next,
                   int continue_ind, double beta, Matrix& out);
Matrix a_sample(const Vector& psi_n, const Vector& psi_next, int continue_ind,
                double beta);

// SVD pseudo-inverse zeroing singular values below
// rel_threshold * sigma_max.  Total function: the zero matrix maps to zero.
// If truncated is non-null it receives the number of zeroed singular values.
Matrix guarded_pinv(const Matrix& M, double rel_threshold = 1e-8,
                    int* truncated = nullptr);

// ---------------------------------------------------------------------------
// Gain state
// ---------------------------------------------------------------------------

enum class GainStrategy { Identity, Kalman, Zap };

std::string to_string(GainStrategy s);
GainStrategy gain_strategy_from_string(const std::string& s);

// Matrix-gain machinery owned by exactly one learner run.
//
//   Identity: G = I for every n.
//   Kalman:   Sigma_hat <- Sigma_hat + alpha (psi psi' - Sigma_hat),
//             G = pinv(Sigma_hat).
//   Zap:      A_hat <- A_hat + gamma (A_sample - A_hat), G = -pinv(A_hat);
//             A_hat starts negative definite (-a0_scale * I).
//
// clamp_delta > 0 enables the optional spectral clamp for Zap: after each
// update the eigenvalues of A_hat are projected onto {Re lambda <= -delta}
// via the real Schur form.  Off by default; the guard is otherwise
// singular-value truncation only.
class GainState {
 public:
  GainState(GainStrategy strategy, int d, double a0_scale = 1.0,
            double rel_threshold = 1e-8, double clamp_delta = 0.0);

  void update_zap(const Matrix& a_sample, double gamma);
  void update_kalman(const Vector& psi, double alpha);

  GainStrategy strategy() const { return strategy_; }
  // Current gain G_{n+1}; identity gain for the Identity strategy.
  const Matrix& gain() const { return gain_; }
  // The tracked matrix (A_hat for Zap, Sigma_hat for Kalman).
  const Matrix& matrix() const { return tracked_; }
  std::int64_t truncation_events() const { return truncation_events_; }
  std::int64_t update_count() const { return update_count_; }
  double rel_threshold() const { return rel_threshold_; }

 private:
  void refresh_gain(double sign);
  void clamp_spectrum();

  GainStrategy strategy_;
  Matrix tracked_;
  Matrix gain_;
  double rel_threshold_;
  double clamp_delta_;
  std::int64_t truncation_events_ = 0;
  std::int64_t update_count_ = 0;
  Eigen::JacobiSVD<Matrix> svd_;
};

}  // namespace zapq

#endif  // ZAPQ_GAINS_HPP
