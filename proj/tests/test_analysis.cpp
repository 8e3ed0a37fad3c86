#include "doctest.h"

#include <cmath>

#include "zapq/analysis.hpp"

using namespace zapq;

namespace {

Matrix random_matrix(Rng& rng, int n, double scale = 1.0) {
  Matrix m(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) m(r, c) = scale * rng.uniform(-1, 1);
  return m;
}

}  // namespace

TEST_CASE("lyapunov covariance examples") {
  const Matrix I3 = Matrix::Identity(3, 3);

  SUBCASE("G = I, A = -I, Se = I has solution I") {
    const Matrix S = lyapunov_covariance(I3, -I3, I3);
    CHECK((S - I3).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("boundary eigenvalue raises the infinite-covariance error") {
    CHECK_THROWS_AS(lyapunov_covariance(I3, -0.5 * I3, I3),
                    InfiniteCovarianceError);
  }

  SUBCASE("random stable instance satisfies the equation") {
    Rng rng(11);
    const int d = 5;
    Matrix A = random_matrix(rng, d);
    A -= (max_real_eigenvalue(A) + 2.0) * Matrix::Identity(d, d);
    const Matrix G = Matrix::Identity(d, d);
    Matrix noise = random_matrix(rng, d);
    const Matrix Se = noise * noise.transpose() + Matrix::Identity(d, d);
    const Matrix S = lyapunov_covariance(G, A, Se);

    const Matrix M = G * A + 0.5 * Matrix::Identity(d, d);
    const Matrix residual =
        M * S + S * M.transpose() + G * Se * G.transpose();
    CHECK(residual.norm() < 1e-10);
    CHECK((S - S.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Matrix> es(S);
    CHECK(es.eigenvalues().minCoeff() > -1e-12);
  }
}

TEST_CASE("optimal covariance") {
  const Matrix I2 = Matrix::Identity(2, 2);

  SUBCASE("A = -2I, Se = I gives I/4") {
    const Matrix S = optimal_covariance(-2.0 * I2, I2);
    CHECK((S - 0.25 * I2).cwiseAbs().maxCoeff() < 1e-14);
  }

  SUBCASE("matches the lyapunov solution at G = -A^{-1}") {
    Rng rng(12);
    const int d = 4;
    Matrix A = random_matrix(rng, d);
    A -= (max_real_eigenvalue(A) + 1.0) * Matrix::Identity(d, d);
    Matrix noise = random_matrix(rng, d);
    const Matrix Se = noise * noise.transpose() + Matrix::Identity(d, d);
    const Matrix direct = optimal_covariance(A, Se);
    const Matrix via_lyap =
        lyapunov_covariance(-A.inverse(), A, Se);
    CHECK((direct - via_lyap).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("any stable constant gain dominates the optimum") {
    Rng rng(13);
    const int d = 3;
    Matrix A = random_matrix(rng, d);
    A -= (max_real_eigenvalue(A) + 1.5) * Matrix::Identity(d, d);
    Matrix noise = random_matrix(rng, d);
    const Matrix Se = noise * noise.transpose() + Matrix::Identity(d, d);
    const Matrix best = optimal_covariance(A, Se);

    int accepted = 0;
    while (accepted < 20) {
      const Matrix G =
          -A.inverse() + 0.3 * random_matrix(rng, d);
      if (max_real_eigenvalue(G * A + 0.5 * Matrix::Identity(d, d)) >= 0.0)
        continue;
      ++accepted;
      const Matrix S = lyapunov_covariance(G, A, Se);
      Eigen::SelfAdjointEigenSolver<Matrix> es(S - best);
      CHECK(es.eigenvalues().minCoeff() >= -1e-8);
    }
  }

  SUBCASE("singular A is rejected") {
    Matrix A = Matrix::Zero(2, 2);
    A(0, 0) = 1.0;
    CHECK_THROWS_AS(optimal_covariance(A, I2), std::runtime_error);
  }
}

TEST_CASE("batch means estimator") {
  SUBCASE("iid standard normals give the identity") {
    Rng rng(21);
    std::vector<Vector> samples;
    const int T = 1000000;
    samples.reserve(T);
    for (int i = 0; i < T; ++i) {
      Vector v(3);
      for (int k = 0; k < 3; ++k) v[k] = rng.normal();
      samples.push_back(std::move(v));
    }
    const Matrix S = batch_means_sigma(samples, 1000);
    CHECK((S - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 0.15);
  }

  SUBCASE("zero noise gives the zero matrix") {
    std::vector<Vector> samples(100, Vector::Zero(2));
    CHECK(batch_means_sigma(samples, 10).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("ar(1) long-run variance matches 1/(1-phi)^2") {
    Rng rng(22);
    const double phi = 0.5;
    std::vector<Vector> samples;
    const int T = 1000000;
    samples.reserve(T);
    double x = 0.0;
    for (int i = 0; i < T; ++i) {
      x = phi * x + rng.normal();
      Vector v(1);
      v[0] = x;
      samples.push_back(std::move(v));
    }
    const Matrix S = batch_means_sigma(samples, default_batch_count(T));
    const double expected = 1.0 / ((1.0 - phi) * (1.0 - phi));
    CHECK(std::abs(S(0, 0) - expected) < 0.15 * expected);
  }

  SUBCASE("too few samples are rejected") {
    std::vector<Vector> samples(3, Vector::Zero(1));
    CHECK_THROWS_AS(batch_means_sigma(samples, 4), std::invalid_argument);
    CHECK_THROWS_AS(batch_means_sigma(samples, 1), std::invalid_argument);
  }

  SUBCASE("streaming accumulator agrees with the batch version") {
    Rng rng(23);
    std::vector<Vector> samples;
    for (int i = 0; i < 1000; ++i) {
      Vector v(2);
      v << rng.normal(), rng.uniform(-1, 1);
      samples.push_back(std::move(v));
    }
    const Matrix direct = batch_means_sigma(samples, 10);
    BatchMeansAccumulator acc(2, 100);
    for (const auto& s : samples) acc.add(s);
    CHECK((acc.sigma() - direct).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("noise trajectory at theta*") {
  SUBCASE("zero cost and nonnegative stopping cost give zero noise") {
    auto model = random_finite_chain(6, 31, 0.9);
    model.c.setZero();
    const FiniteStoppingProblem problem(model);
    TabularBasis basis(6);
    const Vector theta_star = Vector::Zero(6);  // Q* = 0
    const auto eps = noise_trajectory(problem, basis, theta_star, 200, 5);
    for (const auto& e : eps) CHECK(e.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("two-state cycle noise enumerated by hand") {
    Matrix P(2, 2);
    P << 0, 1, 1, 0;
    Vector c(2), c_s(2);
    c << 0.3, 0.8;
    c_s << 0.5, 1.4;
    const auto model = make_finite_chain(P, c, c_s, 0.9);
    const FiniteStoppingProblem problem(model);
    TabularBasis basis(2);
    const Vector theta_star = solve_theta_star(model, basis, 1e-13);

    // Per-transition samples: A^x and b^x for the transition x -> 1-x.
    const auto sample_for = [&](int x) {
      const int y = 1 - x;
      Vector ex = Vector::Zero(2), ey = Vector::Zero(2);
      ex[x] = 1.0;
      ey[y] = 1.0;
      const int cont = theta_star[y] < c_s[y] ? 1 : 0;
      const Matrix A = ex * (model.beta * cont * ey - ex).transpose();
      const Vector b =
          ex * (c[x] + model.beta * (1 - cont) * c_s[y]);
      return std::make_pair(A, b);
    };
    const auto [A0, b0] = sample_for(0);
    const auto [A1, b1] = sample_for(1);
    const Matrix a_mean = 0.5 * (A0 + A1);
    const Vector b_mean = 0.5 * (b0 + b1);
    const Vector eps0 = (A0 - a_mean) * theta_star + (b0 - b_mean);
    const Vector eps1 = (A1 - a_mean) * theta_star + (b1 - b_mean);

    const auto eps = noise_trajectory(problem, basis, theta_star, 10, 3);
    // Burn-in is even, so the stream starts with the 0 -> 1 transition.
    for (std::size_t i = 0; i < eps.size(); ++i) {
      const Vector& expected = (i % 2 == 0) ? eps0 : eps1;
      CHECK((eps[i] - expected).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  SUBCASE("noise has near-zero mean under stationarity") {
    const auto model = random_finite_chain(10, 33, 0.95);
    const FiniteStoppingProblem problem(model);
    PolynomialBasis basis(10, 4);
    const Vector theta_star = solve_theta_star(model, basis, 1e-12);
    const std::int64_t T = 1000000;
    auto stream = oracle_noise_stream(problem, basis, theta_star, 17);
    Vector mean = Vector::Zero(4);
    Matrix second = Matrix::Zero(4, 4);
    for (std::int64_t i = 0; i < T; ++i) {
      const Vector& e = stream.next();
      mean += e;
      second.noalias() += e * e.transpose();
    }
    mean /= static_cast<double>(T);
    second /= static_cast<double>(T);
    // Conservative iid-style standard error per coordinate.
    for (int k = 0; k < 4; ++k) {
      const double se = std::sqrt(second(k, k) / static_cast<double>(T));
      CHECK(std::abs(mean[k]) <= 5.0 * se);
    }
  }
}

TEST_CASE("monte-carlo moments approach the oracle values") {
  const auto model = random_finite_chain(8, 34, 0.9);
  const FiniteStoppingProblem problem(model);
  PolynomialBasis basis(8, 3);
  const Vector theta = solve_theta_star(model, basis, 1e-12);
  const auto mc = estimate_moments(problem, basis, theta, 2000000, 9);
  CHECK((mc.a_matrix - exact_a_matrix(model, basis, theta)).norm() < 2e-2);
  CHECK((mc.sigma_psi - exact_sigma_psi(model, basis)).norm() < 2e-2);
  const Vector b_bar = exact_b_star(model, basis) +
                       model.beta * exact_cbar_s(model, basis, theta);
  CHECK((mc.b_bar - b_bar).norm() < 2e-2);
}

TEST_CASE("empirical scaled covariance") {
  Vector theta_star(3);
  theta_star << 1.0, -2.0, 0.5;

  SUBCASE("all finals at theta* give zero") {
    std::vector<Vector> finals(5, theta_star);
    CHECK(empirical_scaled_covariance(finals, theta_star, 1e6)
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }

  SUBCASE("single replica is rejected") {
    std::vector<Vector> finals(1, theta_star);
    CHECK_THROWS_AS(empirical_scaled_covariance(finals, theta_star, 100),
                    std::invalid_argument);
  }

  SUBCASE("synthetic gaussian finals recover the covariance") {
    Rng rng(41);
    Matrix root(3, 3);
    root << 1.0, 0.0, 0.0, 0.4, 0.8, 0.0, -0.2, 0.1, 0.5;
    const Matrix target = root * root.transpose();
    const double N = 1e6;
    std::vector<Vector> finals;
    for (int m = 0; m < 500; ++m) {
      Vector z(3);
      for (int k = 0; k < 3; ++k) z[k] = rng.normal();
      finals.push_back(theta_star + (root * z) / std::sqrt(N));
    }
    const Matrix S = empirical_scaled_covariance(finals, theta_star, N);
    CHECK((S - target).cwiseAbs().maxCoeff() < 0.25);
  }
}

TEST_CASE("ode integration on the oracle maps") {
  const auto model = random_finite_chain(8, 47, 0.9);
  PolynomialBasis basis(8, 3);
  const auto system = oracle_ode_system(model, basis);
  const Vector theta_star = solve_theta_star(model, basis, 1e-12);

  SUBCASE("theta* is a stationary point") {
    const auto traj = ode_integrate(system, theta_star, 2.0);
    for (const auto& p : traj)
      CHECK((p.w - theta_star).cwiseAbs().maxCoeff() < 1e-9);
  }

  SUBCASE("projected cost decays exponentially at unit rate") {
    const Vector w0 = Vector::Zero(3);
    const auto traj = ode_integrate(system, w0, 5.0);
    const double rate = fitted_decay_rate(traj, system.b_star);
    CHECK(rate == doctest::Approx(-1.0).epsilon(0.05));
  }

  SUBCASE("finite differences match the cost derivative identity") {
    const Vector w0 = Vector::Constant(3, 0.4);
    const auto traj = ode_integrate(system, w0, 2.0);
    int checked = 0;
    for (std::size_t i = 1; i + 1 < traj.size(); ++i) {
      const double h1 = traj[i].t - traj[i - 1].t;
      const double h2 = traj[i + 1].t - traj[i].t;
      if (std::abs(h1 - 1e-3) > 1e-12 || std::abs(h2 - 1e-3) > 1e-12)
        continue;  // skip flip-refined steps
      if (system.flip_signature(traj[i - 1].w) !=
          system.flip_signature(traj[i + 1].w))
        continue;
      const Vector fd = (traj[i + 1].b - traj[i - 1].b) / (h1 + h2);
      const Vector identity = system.b_star - traj[i].b;  // -A(w) dw/dt
      CHECK((fd - identity).cwiseAbs().maxCoeff() < 1e-4);
      ++checked;
    }
    CHECK(checked > 100);
  }

  SUBCASE("zero horizon emits only the start point") {
    const auto traj = ode_integrate(system, theta_star, 0.0);
    CHECK(traj.size() == 1);
  }
}

TEST_CASE("covariance report") {
  const auto model = random_finite_chain(6, 53, 0.9);
  PolynomialBasis basis(6, 3);
  const auto exact = compute_exact(model, basis);
  const FiniteStoppingProblem problem(model);
  auto stream = oracle_noise_stream(problem, basis, exact.theta_star, 7);
  const Matrix sigma_eps = noise_sigma_batch_means(stream, 2000000, 1000);

  // Synthetic replica finals drawn from the optimal covariance.
  Rng rng(8);
  const double N = 1e6;
  const Matrix best = optimal_covariance(exact.a_star, sigma_eps);
  Eigen::SelfAdjointEigenSolver<Matrix> es(best);
  const Matrix root = es.operatorSqrt();
  std::vector<Vector> finals;
  for (int m = 0; m < 400; ++m) {
    Vector z(3);
    for (int k = 0; k < 3; ++k) z[k] = rng.normal();
    finals.push_back(exact.theta_star + (root * z) / std::sqrt(N));
  }

  SUBCASE("optimal gain: finite, ratios near one") {
    const Matrix G = -exact.a_star.inverse();
    const auto report = make_covariance_report(G, exact.a_star, sigma_eps,
                                               finals, exact.theta_star, N);
    CHECK(report.finite);
    CHECK(report.max_re_eig_ga == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(report.trace_ratio == doctest::Approx(1.0).epsilon(0.25));
    CHECK(report.cond_a > 0.0);
    const auto j = report.to_json();
    CHECK(j.at("finite").get<bool>());
  }

  SUBCASE("understrength gain is flagged infinite") {
    const Matrix G = -0.1 * exact.a_star.inverse();  // eigenvalues -0.1
    const auto report = make_covariance_report(G, exact.a_star, sigma_eps,
                                               finals, exact.theta_star, N);
    CHECK_FALSE(report.finite);
    CHECK(report.note.find("infinite asymptotic covariance") !=
          std::string::npos);
    CHECK(report.sigma_empirical.size() > 0);
  }
}

TEST_CASE("sa vs ode deviation") {
  const auto model = random_finite_chain(6, 61, 0.9);
  const FiniteStoppingProblem problem(model);
  PolynomialBasis basis(6, 3);
  const auto system = oracle_ode_system(model, basis);

  RunConfig rc;
  rc.strategy = GainStrategy::Zap;
  rc.alpha = StepSizeSchedule::harmonic();
  rc.gamma = StepSizeSchedule::polynomial(0.85);
  rc.n_steps = 200000;
  rc.seed = 4;
  const auto record = run_matrix_gain(problem, basis, rc);

  SUBCASE("T = 0 gives zero deviation") {
    const auto profile =
        sa_vs_ode_deviation(record, rc.alpha, system, {2.0, 5.0}, 0.0);
    for (const auto& p : profile) CHECK(p.deviation == 0.0);
  }

  SUBCASE("profile decays along a converged run") {
    // t_N = H_{200000} ~ 12.2; start grid leaves room for T = 2.
    const std::vector<double> starts{2.0, 4.0, 6.0, 8.0, 10.0};
    const auto profile =
        sa_vs_ode_deviation(record, rc.alpha, system, starts, 2.0);
    REQUIRE(profile.size() == starts.size());
    for (std::size_t i = 1; i < profile.size(); ++i)
      CHECK(profile[i].deviation <= 1.2 * profile[i - 1].deviation);
    CHECK(profile.back().deviation < profile.front().deviation);
  }

  SUBCASE("window outside the clock is rejected") {
    CHECK_THROWS_AS(
        sa_vs_ode_deviation(record, rc.alpha, system, {100.0}, 2.0),
        std::invalid_argument);
  }
}

TEST_CASE("deterministic cycle tracks the ode at step-size accuracy") {
  Matrix P(2, 2);
  P << 0, 1, 1, 0;
  Vector c(2), c_s(2);
  c << 0.2, 0.6;
  c_s << 1.0, 0.9;
  const auto model = make_finite_chain(P, c, c_s, 0.8);
  const FiniteStoppingProblem problem(model);
  TabularBasis basis(2);
  const auto system = oracle_ode_system(model, basis);

  RunConfig rc;
  rc.strategy = GainStrategy::Zap;
  rc.alpha = StepSizeSchedule::harmonic();
  rc.gamma = StepSizeSchedule::polynomial(0.85);
  rc.n_steps = 100000;
  rc.seed = 1;
  const auto record = run_matrix_gain(problem, basis, rc);

  const std::vector<double> starts{3.0, 5.0, 7.0, 9.0};
  const auto profile =
      sa_vs_ode_deviation(record, rc.alpha, system, starts, 1.5);
  // With deterministic transitions the only noise is the period-2 dither,
  // so the deviation shrinks like the step size alpha_n ~ e^{-s}.
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const double alpha_at_s = std::exp(-starts[i]);
    CHECK(profile[i].deviation <= 20.0 * alpha_at_s);
  }
}
