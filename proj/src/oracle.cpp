#include "zapq/oracle.hpp"

#include <cmath>

namespace zapq {

Matrix feature_table(const FiniteChainModel& model,
                     const FeatureMap& features) {
  Matrix table(model.n_states, features.dim());
  Vector psi(features.dim());
  for (int x = 0; x < model.n_states; ++x) {
    features.evaluate_into(finite_state(x), psi);
    table.row(x) = psi.transpose();
  }
  return table;
}

double pi_norm(const FiniteChainModel& model, const Vector& f) {
  require(f.size() == model.n_states, "pi_norm: dimension mismatch");
  return std::sqrt(f.cwiseProduct(f).dot(model.pi));
}

Vector bellman_operator(const FiniteChainModel& model, const Vector& Q) {
  require(Q.size() == model.n_states, "bellman: Q has wrong length");
  return model.c + model.beta * (model.P * Q.cwiseMin(model.c_s));
}

Vector bellman_operator_theta(const FiniteChainModel& model,
                              const FeatureMap& features, const Vector& theta,
                              const Vector& Q) {
  require(Q.size() == model.n_states, "bellman theta: Q has wrong length");
  const Vector q_theta = feature_table(model, features) * theta;
  Vector h(model.n_states);
  for (int y = 0; y < model.n_states; ++y)
    h[y] = q_theta[y] < model.c_s[y] ? Q[y] : model.c_s[y];
  return model.c + model.beta * (model.P * h);
}

Vector solve_q_star(const FiniteChainModel& model, double tol) {
  require(tol > 0.0, "solve_q_star: tol must be positive");
  Vector Q = Vector::Zero(model.n_states);
  // Sup-norm contraction with modulus beta; residuals decay geometrically.
  const int max_iter = 1000000;
  for (int k = 0; k < max_iter; ++k) {
    Vector next = bellman_operator(model, Q);
    const double res = (next - Q).cwiseAbs().maxCoeff();
    Q.swap(next);
    if (res <= tol) return Q;
  }
  throw std::runtime_error("solve_q_star: iteration cap exceeded");
}

Matrix exact_sigma_psi(const FiniteChainModel& model,
                       const FeatureMap& features) {
  const Matrix table = feature_table(model, features);
  const Matrix weighted =
      model.pi.cwiseSqrt().asDiagonal() * table;  // Sigma = W' W
  Matrix sigma = Matrix::Zero(features.dim(), features.dim());
  sigma.selfadjointView<Eigen::Lower>().rankUpdate(weighted.transpose());
  sigma.triangularView<Eigen::StrictlyUpper>() =
      sigma.transpose().triangularView<Eigen::StrictlyUpper>();
  return sigma;
}

Matrix exact_a_matrix(const FiniteChainModel& model,
                      const FeatureMap& features, const Vector& theta) {
  const Matrix table = feature_table(model, features);
  const Vector q_theta = table * theta;
  Vector cont(model.n_states);  // I{Q^theta(y) < c_s(y)}
  for (int y = 0; y < model.n_states; ++y)
    cont[y] = q_theta[y] < model.c_s[y] ? 1.0 : 0.0;
  const Matrix sigma = table.transpose() * model.pi.asDiagonal() * table;
  return model.beta * table.transpose() * model.pi.asDiagonal() * model.P *
             cont.asDiagonal() * table -
         sigma;
}

Vector exact_b_star(const FiniteChainModel& model,
                    const FeatureMap& features) {
  const Matrix table = feature_table(model, features);
  return table.transpose() * model.pi.cwiseProduct(model.c);
}

Vector exact_cbar_s(const FiniteChainModel& model, const FeatureMap& features,
                    const Vector& theta) {
  const Matrix table = feature_table(model, features);
  const Vector q_theta = table * theta;
  Vector stopped_cs(model.n_states);  // I{c_s(y) <= Q^theta(y)} c_s(y)
  for (int y = 0; y < model.n_states; ++y)
    stopped_cs[y] = model.c_s[y] <= q_theta[y] ? model.c_s[y] : 0.0;
  return table.transpose() * model.pi.cwiseProduct(model.P * stopped_cs);
}

Vector exact_b_of_theta(const FiniteChainModel& model,
                        const FeatureMap& features, const Vector& theta) {
  return -exact_a_matrix(model, features, theta) * theta -
         model.beta * exact_cbar_s(model, features, theta);
}

Vector galerkin_residual(const FiniteChainModel& model,
                         const FeatureMap& features, const Vector& theta) {
  const Matrix table = feature_table(model, features);
  const Vector q_theta = table * theta;
  const Vector bellman_error = bellman_operator(model, q_theta) - q_theta;
  return table.transpose() * model.pi.cwiseProduct(bellman_error);
}

Vector solve_theta_star(const FiniteChainModel& model,
                        const FeatureMap& features, double tol) {
  require(tol > 0.0, "solve_theta_star: tol must be positive");
  const Matrix table = feature_table(model, features);
  const Matrix sigma = table.transpose() * model.pi.asDiagonal() * table;
  Eigen::JacobiSVD<Matrix> svd(sigma,
                               Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv[sv.size() - 1] <= 1e-10 * sv[0])
    throw std::runtime_error(
        "solve_theta_star: Sigma_psi is rank deficient (basis not linearly "
        "independent under pi)");
  Eigen::LDLT<Matrix> solver(sigma);
  Vector theta = Vector::Zero(features.dim());
  // The pi-projected Bellman operator inherits the beta contraction, so the
  // iteration converges geometrically from any start.  Each solution is
  // verified post hoc against the orthogonality conditions.
  const int max_iter = 1000000;
  for (int k = 0; k < max_iter; ++k) {
    const Vector fq = bellman_operator(model, table * theta);
    const Vector v = table.transpose() * model.pi.cwiseProduct(fq);
    const Vector next = solver.solve(v);
    const double step = (next - theta).norm();
    theta = next;
    if (step <= tol &&
        galerkin_residual(model, features, theta).cwiseAbs().maxCoeff() <=
            10.0 * tol)
      return theta;
  }
  throw std::runtime_error("solve_theta_star: iteration cap exceeded");
}

nlohmann::json ExactQuantities::to_json() const {
  const auto vec = [](const Vector& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  const auto mat = [](const Matrix& m) {
    std::vector<std::vector<double>> rows;
    rows.reserve(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      std::vector<double> row(static_cast<std::size_t>(m.cols()));
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        row[static_cast<std::size_t>(j)] = m(i, j);
      rows.push_back(std::move(row));
    }
    return rows;
  };
  return nlohmann::json{{"theta_star", vec(theta_star)},
                        {"q_star", vec(q_star)},
                        {"sigma_psi", mat(sigma_psi)},
                        {"a_star", mat(a_star)},
                        {"b_star", vec(b_star)},
                        {"cbar_star", vec(cbar_star)}};
}

ExactQuantities compute_exact(const FiniteChainModel& model,
                              const FeatureMap& features, double vi_tol,
                              double proj_tol) {
  ExactQuantities out;
  out.theta_star = solve_theta_star(model, features, proj_tol);
  out.q_star = solve_q_star(model, vi_tol);
  out.sigma_psi = exact_sigma_psi(model, features);
  out.a_star = exact_a_matrix(model, features, out.theta_star);
  out.b_star = exact_b_star(model, features);
  out.cbar_star = exact_cbar_s(model, features, out.theta_star);
  return out;
}

}  // namespace zapq
