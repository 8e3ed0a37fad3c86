#include "zapq/gains.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace zapq {

double StepSizeSchedule::at(std::int64_t n) const {
  require(n >= 1, "step size: n must be >= 1");
  const double nn = static_cast<double>(n);
  switch (kind) {
    case ScheduleKind::Harmonic:
      return 1.0 / nn;
    case ScheduleKind::Scaled:
      return g / (b + nn);
    case ScheduleKind::Polynomial:
      return std::pow(nn, -rho);
    case ScheduleKind::ScaledHarmonic:
      return g / nn;
  }
  throw std::logic_error("step size: unknown kind");
}

double StepSizeSchedule::harmonic_multiplier() const {
  switch (kind) {
    case ScheduleKind::Harmonic:
      return 1.0;
    case ScheduleKind::Scaled:
      return g;
    case ScheduleKind::ScaledHarmonic:
      return g;
    case ScheduleKind::Polynomial:
      return std::numeric_limits<double>::quiet_NaN();
  }
  return std::numeric_limits<double>::quiet_NaN();
}

StepSizeSchedule StepSizeSchedule::polynomial(double rho) {
  require(rho > 0.5 && rho < 1.0, "step size: polynomial rho must be in (0.5,1)");
  StepSizeSchedule s;
  s.kind = ScheduleKind::Polynomial;
  s.rho = rho;
  return s;
}

StepSizeSchedule StepSizeSchedule::parse(const std::string& text) {
  if (text == "harmonic" || text == "1/n") return harmonic();
  const auto split = [](const std::string& s) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (true) {
      const std::size_t next = s.find(':', pos);
      parts.push_back(s.substr(pos, next - pos));
      if (next == std::string::npos) break;
      pos = next + 1;
    }
    return parts;
  };
  const auto parts = split(text);
  try {
    if (parts[0] == "scaled" && parts.size() == 3)
      return scaled(std::stod(parts[1]), std::stod(parts[2]));
    if (parts[0] == "poly" && parts.size() == 2)
      return polynomial(std::stod(parts[1]));
    if (parts[0] == "scaled-harmonic" && parts.size() == 2)
      return scaled_harmonic(std::stod(parts[1]));
  } catch (const std::invalid_argument&) {
    // fall through to the common error below
  }
  throw std::invalid_argument("step size: cannot parse schedule '" + text +
                              "' (expected harmonic | scaled:<g>:<b> | "
                              "poly:<rho> | scaled-harmonic:<g>)");
}

std::string StepSizeSchedule::describe() const {
  std::ostringstream os;
  switch (kind) {
    case ScheduleKind::Harmonic:
      return "harmonic";
    case ScheduleKind::Scaled:
      os << "scaled:" << g << ":" << b;
      return os.str();
    case ScheduleKind::Polynomial:
      os << "poly:" << rho;
      return os.str();
    case ScheduleKind::ScaledHarmonic:
      os << "scaled-harmonic:" << g;
      return os.str();
  }
  return "?";
}

void a_sample_into(const Vector& psi_n, const Vector& psi_next,
                   int continue_ind, double beta, Matrix& out) {
  require(psi_n.size() == psi_next.size(),
          "a_sample: feature dimension mismatch");
  require(continue_ind == 0 || continue_ind == 1,
          "a_sample: indicator must be 0 or 1");
  const double scale = beta * continue_ind;
  out.resize(psi_n.size(), psi_n.size());
  out.noalias() = psi_n * (scale * psi_next - psi_n).transpose();
}

Matrix a_sample(const Vector& psi_n, const Vector& psi_next, int continue_ind,
                double beta) {
  Matrix out;
  a_sample_into(psi_n, psi_next, continue_ind, beta, out);
  return out;
}

Matrix guarded_pinv(const Matrix& M, double rel_threshold, int* truncated) {
  Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cutoff = sv.size() > 0 ? rel_threshold * sv[0] : 0.0;
  Vector inv_sv(sv.size());
  int dropped = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] > cutoff && sv[i] > 0.0) {
      inv_sv[i] = 1.0 / sv[i];
    } else {
      inv_sv[i] = 0.0;
      ++dropped;
    }
  }
  if (truncated) *truncated = dropped;
  return svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose();
}

std::string to_string(GainStrategy s) {
  switch (s) {
    case GainStrategy::Identity:
      return "identity";
    case GainStrategy::Kalman:
      return "kalman";
    case GainStrategy::Zap:
      return "zap";
  }
  return "?";
}

GainStrategy gain_strategy_from_string(const std::string& s) {
  if (s == "identity") return GainStrategy::Identity;
  if (s == "kalman") return GainStrategy::Kalman;
  if (s == "zap") return GainStrategy::Zap;
  throw std::invalid_argument("unknown gain strategy '" + s +
                              "' (expected identity | kalman | zap)");
}

GainState::GainState(GainStrategy strategy, int d, double a0_scale,
                     double rel_threshold, double clamp_delta)
    : strategy_(strategy),
      rel_threshold_(rel_threshold),
      clamp_delta_(clamp_delta) {
  require(d >= 1, "gain state: dimension must be positive");
  require(rel_threshold >= 0.0, "gain state: threshold must be nonnegative");
  require(clamp_delta >= 0.0, "gain state: clamp delta must be nonnegative");
  switch (strategy_) {
    case GainStrategy::Identity:
      tracked_ = Matrix::Identity(d, d);
      gain_ = Matrix::Identity(d, d);
      break;
    case GainStrategy::Kalman:
      tracked_ = Matrix::Zero(d, d);
      gain_ = Matrix::Zero(d, d);
      break;
    case GainStrategy::Zap:
      require(a0_scale > 0.0, "gain state: A_hat(0) must be negative definite");
      tracked_ = -a0_scale * Matrix::Identity(d, d);
      gain_ = (1.0 / a0_scale) * Matrix::Identity(d, d);  // -pinv(A_hat)
      break;
  }
}

void GainState::update_zap(const Matrix& a_sample, double gamma) {
  require(strategy_ == GainStrategy::Zap, "gain state: not a Zap gain");
  require(gamma > 0.0 && gamma <= 1.0, "gain state: gamma must be in (0,1]");
  tracked_ += gamma * (a_sample - tracked_);
  if (clamp_delta_ > 0.0) clamp_spectrum();
  ++update_count_;
  refresh_gain(-1.0);
}

void GainState::clamp_spectrum() {
  // Project eigenvalues onto {Re lambda <= -delta} in the real Schur form:
  // shift 1x1 blocks directly and 2x2 (complex-pair) blocks by their trace.
  Eigen::RealSchur<Matrix> schur(tracked_);
  Matrix T = schur.matrixT();
  const Matrix& U = schur.matrixU();
  const Eigen::Index d = T.rows();
  bool changed = false;
  for (Eigen::Index i = 0; i < d;) {
    if (i + 1 < d && T(i + 1, i) != 0.0) {
      const double re = 0.5 * (T(i, i) + T(i + 1, i + 1));
      if (re > -clamp_delta_) {
        const double shift = re + clamp_delta_;
        T(i, i) -= shift;
        T(i + 1, i + 1) -= shift;
        changed = true;
      }
      i += 2;
    } else {
      if (T(i, i) > -clamp_delta_) {
        T(i, i) = -clamp_delta_;
        changed = true;
      }
      ++i;
    }
  }
  if (changed) tracked_ = U * T * U.transpose();
}

void GainState::update_kalman(const Vector& psi, double alpha) {
  require(strategy_ == GainStrategy::Kalman, "gain state: not a Kalman gain");
  require(alpha > 0.0 && alpha <= 1.0, "gain state: alpha must be in (0,1]");
  tracked_ *= (1.0 - alpha);
  tracked_.noalias() += alpha * psi * psi.transpose();
  ++update_count_;
  refresh_gain(1.0);
}

void GainState::refresh_gain(double sign) {
  svd_.compute(tracked_, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd_.singularValues();
  const double cutoff = sv.size() > 0 ? rel_threshold_ * sv[0] : 0.0;
  Vector inv_sv(sv.size());
  bool dropped = false;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] > cutoff && sv[i] > 0.0) {
      inv_sv[i] = sign / sv[i];
    } else {
      inv_sv[i] = 0.0;
      dropped = true;
    }
  }
  if (dropped) ++truncation_events_;
  gain_.noalias() =
      svd_.matrixV() * inv_sv.asDiagonal() * svd_.matrixU().transpose();
}

}  // namespace zapq
