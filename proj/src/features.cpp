#include "zapq/features.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "zapq/chain.hpp"

namespace zapq {

void TabularBasis::evaluate_into(const Vector& x, Vector& out) const {
  const int i = state_index(x);
  require(i >= 0 && i < n_states_, "tabular basis: state index out of range");
  out.setZero(n_states_);
  out[i] = 1.0;
}

std::string TabularBasis::label() const {
  return "tabular one-hot basis on " + std::to_string(n_states_) + " states";
}

void PolynomialBasis::evaluate_into(const Vector& x, Vector& out) const {
  const int i = state_index(x);
  require(i >= 0 && i < n_states_, "poly basis: state index out of range");
  const double t = 2.0 * (static_cast<double>(i) + 0.5) / n_states_ - 1.0;
  out.resize(d_);
  out[0] = 1.0;
  if (d_ > 1) out[1] = t;
  for (int k = 1; k + 1 < d_; ++k)
    out[k + 1] = ((2 * k + 1) * t * out[k] - k * out[k - 1]) / (k + 1);
}

std::string PolynomialBasis::label() const {
  std::ostringstream os;
  os << "shifted Legendre basis of rank " << d_ << " on " << n_states_
     << " states";
  return os.str();
}

void FinanceBasis::evaluate_into(const Vector& x, Vector& out) const {
  require(static_cast<int>(x.size()) == window_,
          "finance basis: state has wrong dimension");
  const int L = window_;
  out.resize(10);
  out[0] = 1.0;
  out[1] = x[L - 1];  // r(x)
  out[2] = x.minCoeff();
  out[3] = x.maxCoeff();
  const int q = L / 4;
  for (int k = 0; k < 4; ++k) out[4 + k] = x.segment(k * q, q).mean();
  // Linear-slope statistic sum_i (i - (L+1)/2) x_i / L with i = 1..L.
  const double mid = 0.5 * (L + 1);
  double slope = 0.0;
  for (int i = 1; i <= L; ++i) slope += (i - mid) * x[i - 1];
  out[8] = slope / L;
  // Exponentially weighted mean, newest weighted highest.
  const double decay = 0.97;
  double ew = 0.0, w = 1.0 - decay;
  for (int i = L; i >= 1; --i) {
    ew += w * x[i - 1];
    w *= decay;
  }
  out[9] = ew;
}

std::string FinanceBasis::label() const {
  return "finance10: price-window summary statistics (d=10)";
}

CustomBasis::CustomBasis(std::shared_ptr<const FeatureMap> primitives,
                         Matrix coeffs)
    : primitives_(std::move(primitives)), coeffs_(std::move(coeffs)) {
  require(primitives_ != nullptr, "custom basis: null primitive map");
  require(coeffs_.rows() >= 1, "custom basis: empty coefficient table");
  require(coeffs_.cols() == primitives_->dim(),
          "custom basis: coefficient columns must match primitive dimension");
}

void CustomBasis::evaluate_into(const Vector& x, Vector& out) const {
  Vector prim(primitives_->dim());
  primitives_->evaluate_into(x, prim);
  out.noalias() = coeffs_ * prim;
}

std::string CustomBasis::label() const {
  std::ostringstream os;
  os << "custom basis (d=" << coeffs_.rows() << ") over "
     << primitives_->label();
  return os.str();
}

CustomBasis CustomBasis::load(const std::string& path,
                              std::shared_ptr<const FeatureMap> primitives) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("custom basis: cannot open " + path);
  nlohmann::json j;
  in >> j;
  const auto rows = j.at("coeffs").get<std::vector<std::vector<double>>>();
  require(!rows.empty(), "custom basis: coeffs must be nonempty");
  const int cols = static_cast<int>(rows.front().size());
  Matrix coeffs(static_cast<int>(rows.size()), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(static_cast<int>(rows[r].size()) == cols,
            "custom basis: ragged coefficient table");
    for (int c = 0; c < cols; ++c) coeffs(static_cast<int>(r), c) = rows[r][c];
  }
  return CustomBasis(std::move(primitives), std::move(coeffs));
}

double q_value(const FeatureMap& features, const Vector& theta,
               const Vector& x) {
  require(theta.size() == features.dim(),
          "q_value: theta dimension mismatch");
  return theta.dot(features.evaluate(x));
}

}  // namespace zapq
