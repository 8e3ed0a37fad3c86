#ifndef ZAPQ_FEATURES_HPP
#define ZAPQ_FEATURES_HPP

#include <memory>
#include <string>

#include "zapq/common.hpp"

#include "json.hpp"

namespace zapq {

// Basis psi defining the linear family Q^theta(x) = theta' psi(x).
// Immutable and shareable across workers; evaluation is pure.
class FeatureMap {
 public:
  virtual ~FeatureMap() = default;
  virtual int dim() const = 0;
  virtual void evaluate_into(const Vector& x, Vector& out) const = 0;
  virtual std::string label() const = 0;

  Vector evaluate(const Vector& x) const {
    Vector out(dim());
    evaluate_into(x, out);
    return out;
  }
};

// One-hot basis on a finite chain: Q^theta ranges over all functions.
class TabularBasis final : public FeatureMap {
 public:
  explicit TabularBasis(int n_states) : n_states_(n_states) {
    require(n_states >= 1, "tabular basis: n_states must be positive");
  }
  int dim() const override { return n_states_; }
  void evaluate_into(const Vector& x, Vector& out) const override;
  std::string label() const override;

 private:
  int n_states_;
};

// Shifted Legendre polynomials of the normalized state index u = (i+1/2)/n.
// A compact, well-conditioned rank-d non-tabular basis for finite-chain
// studies.
class PolynomialBasis final : public FeatureMap {
 public:
  PolynomialBasis(int n_states, int degree_count)
      : n_states_(n_states), d_(degree_count) {
    require(n_states >= 1, "poly basis: n_states must be positive");
    require(degree_count >= 1 && degree_count <= n_states,
            "poly basis: need 1 <= d <= n_states");
  }
  int dim() const override { return d_; }
  void evaluate_into(const Vector& x, Vector& out) const override;
  std::string label() const override;

 private:
  int n_states_;
  int d_;
};

// Ten summary statistics of the 100-ratio price window: constant, the ratio
// r(x) = x(L), min, max, quartile-window means, a linear-slope statistic and
// an exponentially weighted mean.  Contains 1 and r(x), so c_s - 1 = -r - 1
// lies in the span.
class FinanceBasis final : public FeatureMap {
 public:
  explicit FinanceBasis(int window = 100) : window_(window) {
    require(window_ >= 4 && window_ % 4 == 0,
            "finance basis: window must be a positive multiple of 4");
  }
  int dim() const override { return 10; }
  void evaluate_into(const Vector& x, Vector& out) const override;
  std::string label() const override;

 private:
  int window_;
};

// Linear recombination of a base map: psi_j(x) = sum_k coeffs(j,k) prim_k(x).
class CustomBasis final : public FeatureMap {
 public:
  CustomBasis(std::shared_ptr<const FeatureMap> primitives, Matrix coeffs);
  int dim() const override { return static_cast<int>(coeffs_.rows()); }
  void evaluate_into(const Vector& x, Vector& out) const override;
  std::string label() const override;

  // File format: {"base": "<primitive basis name>", "coeffs": [[...], ...]}.
  static CustomBasis load(const std::string& path,
                          std::shared_ptr<const FeatureMap> primitives);

 private:
  std::shared_ptr<const FeatureMap> primitives_;
  Matrix coeffs_;
};

// Q^theta(x) = theta' psi(x).
double q_value(const FeatureMap& features, const Vector& theta,
               const Vector& x);

// Stopping policy phi^theta(x) = I{c_s(x) <= Q^theta(x)}; ties stop.
inline int policy_stop(double stop_cost_x, double q_x) {
  return stop_cost_x <= q_x ? 1 : 0;
}

// Continuation indicator I{Q^theta(x) < c_s(x)} = 1 - policy.
inline int continue_indicator(double stop_cost_x, double q_x) {
  return q_x < stop_cost_x ? 1 : 0;
}

}  // namespace zapq

#endif  // ZAPQ_FEATURES_HPP
