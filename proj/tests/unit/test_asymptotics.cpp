#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "oracles.hpp"
#include "saarisk/asymptotics.hpp"
#include "saarisk/error.hpp"

using namespace saarisk;

namespace {

Vec v1(double x) {
  Vec v(1);
  v << x;
  return v;
}

Eigen::MatrixXd m2(double a, double b, double c, double d) {
  Eigen::MatrixXd M(2, 2);
  M << a, b, c, d;
  return M;
}

double frob_rel(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  return (A - B).norm() / B.norm();
}

const BuiltinModel& model(const char* name) { return *find_model(name); }

// E over Uniform(-1, 1) by composite Gauss-Legendre.
double e_uniform(const std::function<double(double)>& f) {
  return 0.5 * oracle::gauss3(f, -1, 1, 200000);
}

}  // namespace

TEST_CASE("rate exponent") {
  CHECK(rate_exponent(1.0) == 0.5);
  CHECK(rate_exponent(0.5) == doctest::Approx(1.0 / 3));
}

TEST_CASE("predict_covariance examples") {
  CHECK(predict_covariance(Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2), 1)(0, 0) ==
        doctest::Approx(1.0));
  const auto c = predict_covariance(m2(2, 0, 0, 1), m2(4, 0, 0, 9), 1);
  REQUIRE(c.rows() == 1);
  CHECK(c(0, 0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(predict_covariance(m2(1, 0, 0, 1), m2(1, 0, 0, 1), 2), Error);
  try {
    predict_covariance(m2(1, 1, 1, 1), m2(1, 0, 0, 1), 1);
    FAIL("expected a positive-definiteness failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kHessianNotPositiveDefinite);
  }
}

TEST_CASE("predict_covariance is scale consistent and matches explicit inverses") {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> n01;
  for (int k = 0; k < 50; ++k) {
    Eigen::MatrixXd A(3, 3), B(3, 3);
    for (int i = 0; i < 9; ++i) {
      A(i / 3, i % 3) = n01(gen);
      B(i / 3, i % 3) = n01(gen);
    }
    const Eigen::MatrixXd H = A * A.transpose() + Eigen::MatrixXd::Identity(3, 3);
    const Eigen::MatrixXd S = B * B.transpose();
    const Eigen::MatrixXd C = predict_covariance(H, S, 2);
    const double c = 0.1 + 5 * std::abs(n01(gen));
    CHECK(frob_rel(predict_covariance(c * H, c * c * S, 2), C) < 1e-12);
    const Eigen::MatrixXd Hi = H.inverse();
    CHECK(frob_rel(C, (Hi * S * Hi).topLeftCorner(2, 2)) < 1e-10);
    CHECK(C == C.transpose());
  }
}

TEST_CASE("Hessian: deterministic goal violates (A 4)") {
  const BuiltinModel& det = model("aux_deterministic");
  const ZSample nodes = population_nodes(det.goal, 1000);
  // Analytic: gamma exp(gamma(theta* + x*)) [[1, 1], [1, 1]], singular.
  try {
    estimate_hessian(det.goal, det.risk, v1(0.0), 0.0, kHessianStep, nodes);
    FAIL("expected (A 4) failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kHessianNotPositiveDefinite);
    CHECK(std::string(e.what()).find("(A 4)") != std::string::npos);
  }
}

TEST_CASE("Hessian: modelA against quadrature differentiation") {
  const BuiltinModel& a = model("modelA_quad_entropic");
  const double x = a.goal.truth->x;
  const ZSample nodes = population_nodes(a.goal, 100000);
  const Eigen::MatrixXd H = estimate_hessian(a.goal, a.risk, v1(0.0), x, kHessianStep, nodes);
  CHECK(H == H.transpose());
  CHECK(H == estimate_hessian(a.goal, a.risk, v1(0.0), x, kHessianStep, nodes));

  // Differentiate exp((theta - z)^2 + x) - 1 under the integral, theta = 0.
  const double h11 = e_uniform([&](double z) { return std::exp(z * z + x) * (2 + 4 * z * z); });
  const double h12 = e_uniform([&](double z) { return -2 * z * std::exp(z * z + x); });
  const double h22 = e_uniform([&](double z) { return std::exp(z * z + x); });
  CHECK(h22 == doctest::Approx(1.0).epsilon(1e-12));
  const Eigen::MatrixXd ref = m2(h11, h12, h12, h22);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double scale = std::max(std::abs(ref(i, j)), std::sqrt(ref(i, i) * ref(j, j)));
      CHECK(std::abs(H(i, j) - ref(i, j)) <= 1e-3 * scale);
    }
  }
}

TEST_CASE("Hessian: x-x entry is a nonnegative second difference") {
  for (const BuiltinModel* m : {&model("modelB_newsvendor_avar"), &model("modelC_twopiece_pl")}) {
    const ZSample nodes = population_nodes(m->goal, 20000);
    try {
      const auto H = estimate_hessian(m->goal, m->risk, m->goal.truth->theta, m->goal.truth->x,
                                      kHessianStep, nodes);
      CHECK(H(1, 1) >= 0.0);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kHessianNotPositiveDefinite);
    }
  }
}

TEST_CASE("sigma_fd: affine goal and constant goal") {
  const BuiltinModel& aff = model("aux_affine_pl");
  const double th = 0.1, x = -0.4, c = th + x;
  RandomStream rng(17);
  const auto S = estimate_sigma_fd(aff.goal, aff.risk, v1(th), x, kGradientStep, 1000000, rng);
  // Var(exp(Z + c)) for Z ~ U(-1, 1).
  const double var = std::exp(2 * c) * (std::sinh(2.0) / 2 - std::sinh(1.0) * std::sinh(1.0));
  CHECK(frob_rel(S, m2(var, var, var, var)) < 0.02);

  GoalModel cst = aff.goal;
  cst.evaluate = [](const Vec&, const Vec& z) { return 0.5 + 0.0 * z[0]; };
  RandomStream r2(2);
  const auto S0 = estimate_sigma_fd(cst, aff.risk, v1(0.0), 0.0, kGradientStep, 10000, r2);
  CHECK(S0(0, 0) == 0.0);
}

TEST_CASE("sigma_fd: modelA against the hand gradient") {
  const BuiltinModel& a = model("modelA_quad_entropic");
  const double x = a.goal.truth->x;
  RandomStream rng(23);
  const auto S = estimate_sigma_fd(a.goal, a.risk, v1(0.0), x, kGradientStep, 1000000, rng);
  // Mdot(z) = exp(z^2 + x) (2z, 1) at theta = 0.
  const double m2nd = e_uniform([&](double z) { return std::exp(z * z + x); });
  const double s11 = e_uniform([&](double z) { return 4 * z * z * std::exp(2 * (z * z + x)); });
  const double s22 = e_uniform([&](double z) { return std::exp(2 * (z * z + x)); }) - m2nd * m2nd;
  CHECK(S(0, 0) == doctest::Approx(s11).epsilon(0.02));
  CHECK(S(1, 1) == doctest::Approx(s22).epsilon(0.02));
  CHECK(std::abs(S(0, 1)) < 0.02 * std::sqrt(s11 * s22));

  // End-to-end sandwich: C = Sigma_11 / H_11^2 by symmetry.
  const double h11 = e_uniform([&](double z) { return std::exp(z * z + x) * (2 + 4 * z * z); });
  const double c_ref = s11 / (h11 * h11);
  CHECK(c_ref == doctest::Approx(0.170001490679323884).epsilon(1e-9));
  const ZSample nodes = population_nodes(a.goal, 100000);
  const auto H = estimate_hessian(a.goal, a.risk, v1(0.0), x, kHessianStep, nodes);
  const auto pred = make_prediction(H, S, 1, 1.0);
  CHECK(pred.C_pred(0, 0) == doctest::Approx(c_ref).epsilon(0.01));
  CHECK(pred.rate_exponent == 0.5);
}

TEST_CASE("sigma_pl") {
  const BuiltinModel& aff = model("aux_affine_pl");
  const double x = aff.goal.truth->x;
  RandomStream r1(5), r2(6);
  const auto pl = sigma_pl(aff.goal, aff.risk, v1(0.0), x, 1000000, r1);
  const auto fd = estimate_sigma_fd(aff.goal, aff.risk, v1(0.0), x, kGradientStep, 1000000, r2);
  CHECK(frob_rel(pl.sigma, fd) < 0.02);
  CHECK(pl.rejected == 0);
  CHECK(pl.accepted == 1000000);

  // All active arguments negative under avar.
  RandomStream r3(7);
  const auto z = sigma_pl(aff.goal, DivergencePair::avar(0.5), v1(0.0), -5.0, 10000, r3);
  CHECK(z.sigma.isZero());

  const BuiltinModel& c = model("modelC_twopiece_pl");
  const Vec th = c.goal.truth->theta;
  RandomStream r4(8), r5(9);
  const auto spl = sigma_pl(c.goal, c.risk, th, c.goal.truth->x, 1000000, r4);
  const auto sfd = estimate_sigma_fd_away_from_boundaries(c.goal, c.risk, th, c.goal.truth->x,
                                                          kGradientStep, 1000000, r5);
  CHECK(frob_rel(spl.sigma, sfd) < 0.05);
  CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(spl.sigma).eigenvalues().minCoeff() >= -1e-12);

  // Point mass on the avar kink: every draw is flagged.
  GoalModel atom = aff.goal;
  PointMixture pm;
  pm.points = {v1(0.0), v1(0.5)};
  pm.weights = {1, 1};
  atom.sampler = Sampler(pm);
  RandomStream r6(10);
  try {
    sigma_pl(atom, DivergencePair::avar(0.5), v1(0.0), 0.0, 1000, r6);
    FAIL("expected C5 violation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kC5Violated);
  }
}

TEST_CASE("KS distance and its 1% critical constant") {
  CHECK(normal_cdf(0.0) == 0.5);
  CHECK(ks_distance_normal({0.0}) == 0.5);
  // Simulated null distribution of sqrt(R) D at R = 500.
  std::mt19937_64 gen(31);
  std::normal_distribution<double> n01;
  const int trials = 4000;
  const std::size_t R = 500;
  int exceed = 0;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> xs(R);
    for (double& x : xs) x = n01(gen);
    exceed += ks_distance_normal(xs) > kKsCriticalConstant / std::sqrt(static_cast<double>(R));
  }
  const double rate = static_cast<double>(exceed) / trials;
  MESSAGE("simulated exceedance rate at 1.63/sqrt(R): " << rate);
  CHECK(rate > 0.003);
  CHECK(rate < 0.02);
}

namespace {

ReplicationTable synthetic(const std::vector<std::size_t>& ns, std::size_t R,
                           const std::function<double(std::size_t, std::size_t)>& err) {
  ReplicationTable t;
  for (std::size_t n : ns) {
    for (std::size_t r = 0; r < R; ++r) {
      t.rows.push_back({n, r, r, v1(0.25 + err(n, r)), 0.0, 0.0, true});
    }
  }
  return t;
}

}  // namespace

TEST_CASE("rate_diagnostic on synthetic power laws") {
  const std::vector<std::size_t> ns{250, 500, 1000, 2000, 4000};
  for (double a : {0.5, 1.0 / 3}) {
    const auto t = synthetic(ns, 25, [&](std::size_t n, std::size_t r) {
      // Scatter above and below keeps the median exactly on the law.
      const double e = std::pow(static_cast<double>(n), -a);
      return r == 12 ? e : (r < 12 ? 0.5 * e : 2 * e);
    });
    const auto d = rate_diagnostic(t, v1(0.25), 1.0);
    CHECK(d.slope == doctest::Approx(-a).epsilon(1e-12));
    CHECK(d.slope_se < 1e-10);
    CHECK(d.expected_slope == -0.5);
  }
  CHECK(rate_diagnostic(synthetic(ns, 25, [](auto, auto) { return 0.1; }), v1(0.25), 0.5)
            .expected_slope == doctest::Approx(-1.0 / 3));
  CHECK_THROWS_AS(rate_diagnostic(synthetic({250, 500}, 25, [](auto, auto) { return 0.1; }), v1(0.25), 1.0),
                  Error);
  CHECK_THROWS_AS(rate_diagnostic(synthetic(ns, 10, [](auto, auto) { return 0.1; }), v1(0.25), 1.0),
                  Error);
}

TEST_CASE("coverage_normality") {
  Eigen::MatrixXd C(1, 1);
  C << 0.8;
  const std::size_t n = 4000;
  std::mt19937_64 gen(4);
  std::normal_distribution<double> n01;
  double prev = 1e9;
  for (std::size_t R : {200u, 20000u}) {
    const auto t = synthetic({n}, R, [&](auto, auto) {
      return std::sqrt(0.8) * n01(gen) / std::sqrt(static_cast<double>(n));
    });
    const auto cov = coverage_normality(t, v1(0.25), C);
    CHECK(cov.replications == R);
    CHECK(cov.ks[0] < cov.ks_critical);
    CHECK(cov.ks_critical == doctest::Approx(1.63 / std::sqrt(static_cast<double>(R))));
    CHECK(cov.frob_rel_err < prev);
    prev = cov.frob_rel_err;
  }
  CHECK(prev < 0.03);

  const auto flat = coverage_normality(synthetic({n}, 150, [](auto, auto) { return 0.0; }), v1(0.25), C);
  CHECK(flat.emp_cov(0, 0) == 0.0);
  CHECK(flat.frob_rel_err == 1.0);

  Eigen::MatrixXd bad(1, 1);
  bad << 0.0;
  CHECK_THROWS_AS(coverage_normality(synthetic({n}, 150, [](auto, auto) { return 0.0; }), v1(0.25), bad),
                  Error);
}

TEST_CASE("run_replications: layout, determinism, parallelism") {
  const BuiltinModel& a = model("modelA_quad_entropic");
  SolveConfig cfg;
  cfg.grid_points_per_dim = 9;
  const std::vector<std::size_t> one{100};
  const auto t3 = run_replications(a.goal, a.risk, one, 3, 1, cfg);
  REQUIRE(t3.rows.size() == 3);
  CHECK(t3.rows[0].seed != t3.rows[1].seed);
  CHECK(t3.rows[1].seed != t3.rows[2].seed);
  CHECK(t3.rows[0].seed == mix64(1, 0, 0));

  const std::vector<std::size_t> ns{50, 80, 120};
  const auto serial = run_replications(a.goal, a.risk, ns, 6, 9, cfg, 1);
  const auto again = run_replications(a.goal, a.risk, ns, 6, 9, cfg, 1);
  const auto parallel = run_replications(a.goal, a.risk, ns, 6, 9, cfg, 4);
  CHECK(serial.to_csv() == again.to_csv());
  CHECK(serial.to_csv() == parallel.to_csv());
  for (std::size_t i = 0; i < serial.rows.size(); ++i) {
    CHECK(serial.rows[i].n == ns[i / 6]);
    CHECK(serial.rows[i].rep == i % 6);
    CHECK(serial.rows[i].solve_ok);
  }
  const std::string csv = serial.to_csv();
  CHECK(csv.rfind("n,rep,seed,theta_1,x_hat,value,solve_ok\n", 0) == 0);
  CHECK_THROWS_AS(run_replications(a.goal, a.risk, one, 1, 1, cfg), Error);
}

TEST_CASE("stream ids are collision free over a design grid") {
  std::set<std::uint64_t> ids;
  for (std::uint64_t i = 0; i < 8; ++i) {
    for (std::uint64_t r = 0; r < 2000; ++r) ids.insert(mix64(42, i, r));
  }
  CHECK(ids.size() == 16000);
}
