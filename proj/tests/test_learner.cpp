#include "doctest.h"

#include <cmath>
#include <sstream>

#include "zapq/learner.hpp"
#include "zapq/oracle.hpp"

using namespace zapq;

namespace {

RunConfig zap_config(std::int64_t n_steps, std::uint64_t seed) {
  RunConfig rc;
  rc.strategy = GainStrategy::Zap;
  rc.alpha = StepSizeSchedule::harmonic();
  rc.gamma = StepSizeSchedule::polynomial(0.85);
  rc.n_steps = n_steps;
  rc.seed = seed;
  return rc;
}

}  // namespace

TEST_CASE("td_term basics") {
  CHECK(td_term(0.0, 2.0, -1.0, 0.0, 0.9) ==
        doctest::Approx(0.9 * -1.0));  // min(c_s, q') = q'
  CHECK(td_term(0.0, -2.0, -1.0, 0.0, 0.9) == doctest::Approx(0.9 * -2.0));
  // beta = 0 leaves c(X_n) - Q(X_n).
  CHECK(td_term(1.5, 7.0, 3.0, 0.25, 0.0) == doctest::Approx(1.25));
}

TEST_CASE("td_term satisfies galerkin orthogonality at theta*") {
  const auto model = random_finite_chain(8, 41, 0.9);
  const FiniteStoppingProblem problem(model);
  PolynomialBasis basis(8, 3);
  const Vector theta_star = solve_theta_star(model, basis, 1e-12);

  // Exact summation of E_pi[psi(X_n) d_{n+1}] over all transitions.
  Vector acc = Vector::Zero(3);
  for (int x = 0; x < 8; ++x) {
    const Vector psi_x = basis.evaluate(finite_state(x));
    for (int y = 0; y < 8; ++y) {
      const double d = td_term(problem, basis, theta_star, finite_state(x),
                               finite_state(y));
      acc += model.pi[x] * model.P(x, y) * d * psi_x;
    }
  }
  CHECK(acc.cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("single-step unrolling matches the recursion by hand") {
  const auto model = random_finite_chain(6, 52, 0.9);
  const FiniteStoppingProblem problem(model);
  PolynomialBasis basis(6, 3);

  // Replay the first transition with the same seed.
  auto cursor = problem.make_cursor(7);
  const Vector x0 = cursor->state();
  cursor->step();
  const Vector x1 = cursor->state();
  const Vector psi0 = basis.evaluate(x0);
  const Vector psi1 = basis.evaluate(x1);
  const double d1 = td_term(problem, basis, Vector::Zero(3), x0, x1);

  SUBCASE("identity") {
    auto rc = zap_config(1, 7);
    rc.strategy = GainStrategy::Identity;
    const auto record = run_matrix_gain(problem, basis, rc);
    const Vector expected = rc.alpha.at(1) * d1 * psi0;
    CHECK((record.theta_final - expected).cwiseAbs().maxCoeff() < 1e-14);
  }

  SUBCASE("zap") {
    const auto rc = zap_config(1, 7);
    const auto record = run_matrix_gain(problem, basis, rc);
    const int cont =
        continue_indicator(problem.stop_cost(x1), 0.0 /* q at theta0 = 0 */);
    const Matrix a1 = a_sample(psi0, psi1, cont, model.beta);
    const Matrix a_hat =
        -Matrix::Identity(3, 3) + rc.gamma.at(1) * (a1 + Matrix::Identity(3, 3));
    const Vector expected =
        rc.alpha.at(1) * d1 * (-guarded_pinv(a_hat) * psi0);
    CHECK((record.theta_final - expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((record.gain_matrix_final - a_hat).cwiseAbs().maxCoeff() < 1e-14);
  }

  SUBCASE("kalman") {
    auto rc = zap_config(1, 7);
    rc.strategy = GainStrategy::Kalman;
    rc.gamma = StepSizeSchedule::harmonic();
    const auto record = run_matrix_gain(problem, basis, rc);
    const Matrix sigma1 = psi0 * psi0.transpose();  // alpha_1 = 1 overwrites
    const Vector expected =
        rc.alpha.at(1) * d1 * (guarded_pinv(sigma1) * psi0);
    CHECK((record.theta_final - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("runs are bit-deterministic in (config, seed)") {
  const auto model = random_finite_chain(6, 3, 0.95);
  const FiniteStoppingProblem problem(model);
  PolynomialBasis basis(6, 3);
  const auto rc = zap_config(5000, 99);
  const auto a = run_matrix_gain(problem, basis, rc);
  const auto b = run_matrix_gain(problem, basis, rc);
  REQUIRE(a.snapshots.size() == b.snapshots.size());
  for (std::size_t i = 0; i < a.snapshots.size(); ++i) {
    CHECK(a.snapshots[i].n == b.snapshots[i].n);
    CHECK((a.snapshots[i].theta - b.snapshots[i].theta)
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
  CHECK((a.theta_final - b.theta_final).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.to_json().dump() == b.to_json().dump());
}

TEST_CASE("snapshot plan is strictly increasing and ends at N") {
  const auto model = random_finite_chain(5, 4, 0.9);
  const FiniteStoppingProblem problem(model);
  TabularBasis basis(5);
  auto rc = zap_config(1000, 1);
  const auto record = run_matrix_gain(problem, basis, rc);
  REQUIRE(record.snapshots.size() >= 3);
  CHECK(record.snapshots.front().n == 0);
  CHECK(record.snapshots.back().n == 1000);
  for (std::size_t i = 1; i < record.snapshots.size(); ++i) {
    CHECK(record.snapshots[i].n > record.snapshots[i - 1].n);
    CHECK(record.snapshots[i].theta.allFinite());
  }
}

TEST_CASE("divergence aborts with a diagnostic record") {
  const auto model = random_finite_chain(5, 8, 0.9);
  const FiniteStoppingProblem problem(model);
  TabularBasis basis(5);
  RunConfig rc;
  rc.strategy = GainStrategy::Identity;
  rc.alpha = StepSizeSchedule::scaled_harmonic(1e155);  // absurd on purpose
  rc.gamma = StepSizeSchedule::harmonic();
  rc.n_steps = 50;
  rc.seed = 2;
  const auto record = run_matrix_gain(problem, basis, rc);
  CHECK(record.diag.aborted);
  CHECK(record.diag.abort_step >= 1);
  CHECK(record.diag.abort_reason == "non-finite parameter vector");
  CHECK(record.theta_final.allFinite());
}

TEST_CASE("optional norm clamp keeps the iterates bounded") {
  const auto model = random_finite_chain(5, 8, 0.9);
  const FiniteStoppingProblem problem(model);
  TabularBasis basis(5);
  RunConfig rc;
  rc.strategy = GainStrategy::Identity;
  rc.alpha = StepSizeSchedule::scaled_harmonic(50.0);
  rc.gamma = StepSizeSchedule::harmonic();
  rc.n_steps = 2000;
  rc.seed = 2;
  rc.clamp_theta = true;
  rc.clamp_radius = 1.0;
  const auto record = run_matrix_gain(problem, basis, rc);
  CHECK_FALSE(record.diag.aborted);
  CHECK(record.theta_final.norm() <= 1.0 + 1e-12);
}

TEST_CASE("run record json and csv round trip") {
  const auto model = random_finite_chain(5, 6, 0.9);
  const FiniteStoppingProblem problem(model);
  TabularBasis basis(5);
  auto rc = zap_config(100, 5);
  rc.snapshots.include_gain = true;
  rc.echo = {{"note", "test"}};
  const auto record = run_matrix_gain(problem, basis, rc);

  const auto j = record.to_json();
  const auto back = RunRecord::from_json(j);
  CHECK(back.seed == record.seed);
  CHECK(back.n_steps == record.n_steps);
  CHECK((back.theta_final - record.theta_final).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.gain_matrix_final - record.gain_matrix_final)
            .cwiseAbs()
            .maxCoeff() == 0.0);
  REQUIRE(back.snapshots.size() == record.snapshots.size());
  CHECK(back.snapshots.back().gain_matrix.has_value());
  CHECK(back.config_echo.at("note") == "test");

  std::ostringstream csv;
  record.write_csv(csv);
  const std::string text = csv.str();
  CHECK(text.rfind("n,theta_0,theta_1,theta_2,theta_3,theta_4", 0) == 0);
  // Header plus one line per snapshot.
  std::size_t lines = 0;
  for (char ch : text)
    if (ch == '\n') ++lines;
  CHECK(lines == record.snapshots.size() + 1);
}

TEST_CASE("replicas: ordering, distinctness, abort propagation") {
  const auto model = random_finite_chain(5, 10, 0.9);
  const FiniteStoppingProblem problem(model);
  TabularBasis basis(5);
  const auto rc = zap_config(500, 0);

  const auto records = run_replicas(problem, basis, rc, 4, 100, 2);
  REQUIRE(records.size() == 4);
  for (std::size_t i = 0; i < records.size(); ++i)
    CHECK(records[i].seed == 100 + i);

  // M = 1 equals a direct run with the base seed.
  auto rc1 = rc;
  rc1.seed = 100;
  const auto direct = run_matrix_gain(problem, basis, rc1);
  CHECK((records[0].theta_final - direct.theta_final)
            .cwiseAbs()
            .maxCoeff() == 0.0);

  // Distinct seeds give pairwise distinct finals.
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t j = i + 1; j < records.size(); ++j)
      CHECK((records[i].theta_final - records[j].theta_final)
                .cwiseAbs()
                .maxCoeff() > 0.0);

  // A diverging configuration aborts every replica without throwing.
  RunConfig bad;
  bad.strategy = GainStrategy::Identity;
  bad.alpha = StepSizeSchedule::scaled_harmonic(1e155);
  bad.gamma = StepSizeSchedule::harmonic();
  bad.n_steps = 50;
  const auto bad_records = run_replicas(problem, basis, bad, 3, 7, 2);
  for (const auto& r : bad_records) CHECK(r.diag.aborted);
}

TEST_CASE("default schedules keep alpha below gamma on every step") {
  const auto alpha = StepSizeSchedule::harmonic();
  const auto gamma = StepSizeSchedule::polynomial(0.85);
  for (std::int64_t n = 1; n <= 1000; ++n)
    CHECK(alpha.at(n) <= gamma.at(n));
  for (std::int64_t n : {10000, 1000000, 100000000})
    CHECK(alpha.at(n) <= gamma.at(n));
  CHECK(alpha.at(1000000) / gamma.at(1000000) < 0.2);
}

TEST_CASE("zap converges to the oracle fixed point on a tabular chain") {
  // 5-state oracle chain, tabular features, N = 1e6.
  const auto model = random_finite_chain(5, 77, 0.9);
  const FiniteStoppingProblem problem(model);
  TabularBasis basis(5);
  const Vector theta_star = solve_theta_star(model, basis, 1e-12);

  const auto record = run_matrix_gain(problem, basis, zap_config(1000000, 1));
  CHECK_FALSE(record.diag.aborted);
  const double rel_err =
      (record.theta_final - theta_star).norm() / theta_star.norm();
  CHECK(rel_err <= 0.05);

  // Gain consistency: the tracked matrix approximates A(theta_N).
  const Matrix a_exact = exact_a_matrix(model, basis, record.theta_final);
  CHECK((record.gain_matrix_final - a_exact).norm() / a_exact.norm() <= 0.05);
}

TEST_CASE("identity gain converges to the same fixed point, slower") {
  const auto model = random_finite_chain(5, 77, 0.9);
  const FiniteStoppingProblem problem(model);
  TabularBasis basis(5);
  const Vector theta_star = solve_theta_star(model, basis, 1e-12);

  // Rescale the harmonic step so the slowest mode of A(theta*) still decays
  // at a useful rate (g |Re lambda| >= 1).
  const Matrix a_star = exact_a_matrix(model, basis, theta_star);
  Eigen::EigenSolver<Matrix> es(a_star);
  const double slowest = es.eigenvalues().real().cwiseAbs().minCoeff();
  RunConfig rc;
  rc.strategy = GainStrategy::Identity;
  rc.alpha = StepSizeSchedule::scaled(1.0 / slowest, 100.0);
  rc.gamma = StepSizeSchedule::harmonic();
  rc.n_steps = 10000000;
  rc.seed = 3;
  const auto record = run_matrix_gain(problem, basis, rc);
  CHECK_FALSE(record.diag.aborted);
  const double rel_err =
      (record.theta_final - theta_star).norm() / theta_star.norm();
  CHECK(rel_err <= 0.05);
}
