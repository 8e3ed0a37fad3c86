#ifndef ZAPQ_ORACLE_HPP
#define ZAPQ_ORACLE_HPP

#include "zapq/chain.hpp"
#include "zapq/common.hpp"
#include "zapq/features.hpp"

#include "json.hpp"

namespace zapq {

// Exact computations on finite chains: every expectation below is a finite
// sum over states weighted by pi and P.  These are the independent ground
// truth against which the stochastic-approximation side is checked.

// n x d table with row x equal to psi(x)'.
Matrix feature_table(const FiniteChainModel& model, const FeatureMap& features);

// pi-weighted L2 norm of a state function.
double pi_norm(const FiniteChainModel& model, const Vector& f);

// Dynamic programming operator (F Q)(x) = c(x) + beta E[min(c_s, Q)(X_1)|x].
Vector bellman_operator(const FiniteChainModel& model, const Vector& Q);

// F^theta Q = c + beta P H^theta Q, where H^theta keeps Q on the continuation
// region {Q^theta < c_s} and substitutes c_s elsewhere.  Contraction helper
// used by tests; not part of the learner path.
Vector bellman_operator_theta(const FiniteChainModel& model,
                              const FeatureMap& features, const Vector& theta,
                              const Vector& Q);

// Value iteration from Q = 0 until the sup-norm residual is <= tol.
Vector solve_q_star(const FiniteChainModel& model, double tol = 1e-12);

// Sigma_psi(i,j) = E_pi[psi_i psi_j].
Matrix exact_sigma_psi(const FiniteChainModel& model,
                       const FeatureMap& features);

// A(theta) = E[psi(X_n) (beta I{Q^theta(X_{n+1}) < c_s} psi(X_{n+1}) -
//                         psi(X_n))'].
Matrix exact_a_matrix(const FiniteChainModel& model, const FeatureMap& features,
                      const Vector& theta);

// b* = E_pi[psi(X_n) c(X_n)].
Vector exact_b_star(const FiniteChainModel& model, const FeatureMap& features);

// cbar_s(theta) = E[psi(X_n) I{c_s <= Q^theta}(X_{n+1}) c_s(X_{n+1})].
Vector exact_cbar_s(const FiniteChainModel& model, const FeatureMap& features,
                    const Vector& theta);

// b(theta) = -A(theta) theta - beta cbar_s(theta)
//          = E_pi[psi(X) c^theta(X)]  (projection identity).
Vector exact_b_of_theta(const FiniteChainModel& model,
                        const FeatureMap& features, const Vector& theta);

// Galerkin residual vector <F Q^theta - Q^theta, psi_i>_pi.
Vector galerkin_residual(const FiniteChainModel& model,
                         const FeatureMap& features, const Vector& theta);

// Projected value iteration theta <- Sigma_psi^{-1} <F Q^theta, psi>_pi,
// run until the parameter increment is <= tol.  Throws on rank-deficient
// Sigma_psi.
Vector solve_theta_star(const FiniteChainModel& model,
                        const FeatureMap& features, double tol = 1e-10);

struct ExactQuantities {
  Vector theta_star;
  Vector q_star;
  Matrix sigma_psi;
  Matrix a_star;    // A(theta_star)
  Vector b_star;
  Vector cbar_star; // cbar_s(theta_star)

  nlohmann::json to_json() const;
};

ExactQuantities compute_exact(const FiniteChainModel& model,
                              const FeatureMap& features,
                              double vi_tol = 1e-12, double proj_tol = 1e-10);

}  // namespace zapq

#endif  // ZAPQ_ORACLE_HPP
