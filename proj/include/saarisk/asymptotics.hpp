#pragma once

// Asymptotic predictions for the SAA minimizer and the replication
// experiments that test them.
//
// For beta = 1 the scaled error sqrt(n) (theta_hat - theta*) is predicted to
// be centered normal with covariance E H^{-1} Sigma H^{-1} E^T, where H is the
// Hessian of (theta, x) -> E[phi*(G(theta, Z) + x)] - x at (theta*, x*),
// Sigma the covariance of its score, and E keeps the first m coordinates.
// For general beta only the rate n^{1/(4 - 2 beta)} is predicted.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "saarisk/divergence.hpp"
#include "saarisk/goal_models.hpp"
#include "saarisk/saa_solver.hpp"

namespace saarisk {

struct AsymptoticPrediction {
  Eigen::MatrixXd H;
  Eigen::MatrixXd Sigma;
  Eigen::MatrixXd C_pred;
  double beta = 1.0;
  double rate_exponent = 0.5;
};

constexpr double rate_exponent(double beta) { return 1.0 / (4.0 - 2.0 * beta); }

// E_nodes[phi*(G(theta, z) + x)] - x with equal node weights.
double population_phi(const GoalModel& goal, const DivergencePair& spec,
                      std::span<const Vec> nodes, const Vec& theta, double x);

inline constexpr double kHessianStep = 1e-3;
inline constexpr double kGradientStep = 1e-5;
inline constexpr double kMinHessianEigenvalue = 1e-8;

// Central second differences of population_phi on the (m+1)-dimensional
// stencil; every stencil point uses the same nodes. Steps are
// step * (1 + |coordinate|). Throws kHessianNotPositiveDefinite when the
// smallest eigenvalue is <= 1e-8.
Eigen::MatrixXd estimate_hessian(const GoalModel& goal, const DivergencePair& spec,
                                 const Vec& theta_star, double x_star, double step,
                                 std::span<const Vec> nodes);

// Sample covariance of the central-difference gradient of
// (theta, x) -> phi*(G(theta, z) + x) at (theta*, x*) over n_mc draws.
Eigen::MatrixXd estimate_sigma_fd(const GoalModel& goal, const DivergencePair& spec,
                                  const Vec& theta_star, double x_star, double step,
                                  std::size_t n_mc, RandomStream& rng);

// Same, restricted to draws whose stencil does not straddle a selector
// boundary of a PL goal. Used to cross-check sigma_pl on kinked models.
Eigen::MatrixXd estimate_sigma_fd_away_from_boundaries(
    const GoalModel& goal, const DivergencePair& spec, const Vec& theta_star,
    double x_star, double step, std::size_t n_mc, RandomStream& rng);

struct SigmaPlResult {
  Eigen::MatrixXd sigma;
  std::size_t accepted = 0;
  std::size_t rejected = 0;  // draws flagged as C5 violations
};

inline constexpr double kMaxC5Fraction = 1e-3;

// Monte Carlo covariance of the closed-form PL score. Flagged draws are
// replaced; more than a 1e-3 fraction of them throws kC5Violated.
SigmaPlResult sigma_pl(const GoalModel& goal, const DivergencePair& spec,
                       const Vec& theta_star, double x_star, std::size_t n_mc,
                       RandomStream& rng);

// E H^{-1} Sigma H^{-1} E^T for the first m coordinates, via Cholesky solves.
Eigen::MatrixXd predict_covariance(const Eigen::MatrixXd& H, const Eigen::MatrixXd& Sigma,
                                   int m);

AsymptoticPrediction make_prediction(const Eigen::MatrixXd& H, const Eigen::MatrixXd& Sigma,
                                     int m, double beta);

// Centered sample covariance (divisor N - 1) of the rows of `draws`.
Eigen::MatrixXd sample_covariance(const std::vector<Vec>& draws);

// ---------------------------------------------------------------------------
// Replications

struct ReplicationRow {
  std::size_t n = 0;
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  Vec theta_hat;
  double x_hat = 0.0;
  double value = 0.0;
  bool solve_ok = false;
};

struct ReplicationTable {
  int m = 1;
  std::vector<ReplicationRow> rows;  // sorted by (n, rep)

  // Header `n,rep,seed,theta_1..theta_m,x_hat,value,solve_ok`.
  std::string to_csv() const;
};

// One independent stream per (n, rep), derived by mix64. Output does not
// depend on the number of worker threads.
ReplicationTable run_replications(const GoalModel& goal, const DivergencePair& spec,
                                  std::span<const std::size_t> n_list, std::size_t R,
                                  std::uint64_t base_seed, const SolveConfig& cfg,
                                  unsigned threads = 1);

struct RateDiagnostic {
  std::vector<std::size_t> ns;
  std::vector<double> medians;
  double slope = 0.0;
  double slope_se = 0.0;
  double expected_slope = -0.5;
};

// OLS of log median ||theta_hat - theta*|| on log n.
RateDiagnostic rate_diagnostic(const ReplicationTable& table, const Vec& theta_star,
                               double beta);

struct CoverageResult {
  std::size_t n = 0;
  std::size_t replications = 0;
  Eigen::MatrixXd emp_cov;
  double frob_rel_err = 0.0;
  std::vector<double> ks;
  double ks_critical = 0.0;
};

inline constexpr double kKsCriticalConstant = 1.63;

// Compares sqrt(n)(theta_hat - theta*) at the largest n in the table with
// N(0, C_pred): Frobenius error of the covariance and per-coordinate KS.
CoverageResult coverage_normality(const ReplicationTable& table, const Vec& theta_star,
                                  const Eigen::MatrixXd& C_pred);

double normal_cdf(double x);
// sup |F_emp - Phi| for the given values.
double ks_distance_normal(std::vector<double> values);

}  // namespace saarisk
