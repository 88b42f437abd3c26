#include "saarisk/asymptotics.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "saarisk/error.hpp"

namespace saarisk {

double population_phi(const GoalModel& goal, const DivergencePair& spec,
                      std::span<const Vec> nodes, const Vec& theta, double x) {
  if (nodes.empty()) throw Error(ErrorCode::kEmptySample, "population_phi: no nodes");
  double acc = 0.0;
  for (const Vec& z : nodes) acc += spec.phi_star(goal.evaluate(theta, z) + x);
  return acc / static_cast<double>(nodes.size()) - x;
}

Eigen::MatrixXd estimate_hessian(const GoalModel& goal, const DivergencePair& spec,
                                 const Vec& theta_star, double x_star, double step,
                                 std::span<const Vec> nodes) {
  if (!(step > 0.0)) throw Error(ErrorCode::kInvalidArgument, "estimate_hessian: step must be > 0");
  const int m = static_cast<int>(theta_star.size());
  const int dim = m + 1;
  Vec center(dim);
  center << theta_star, x_star;
  Vec h(dim);
  for (int p = 0; p < dim; ++p) h[p] = step * (1.0 + std::abs(center[p]));

  auto f = [&](const Vec& point) {
    return population_phi(goal, spec, nodes, point.head(m), point[m]);
  };
  auto shifted = [&](int p, double sp, int q, double sq) {
    Vec point = center;
    point[p] += sp * h[p];
    point[q] += sq * h[q];
    return f(point);
  };

  const double f0 = f(center);
  Eigen::MatrixXd H(dim, dim);
  for (int p = 0; p < dim; ++p) {
    Vec plus = center;
    Vec minus = center;
    plus[p] += h[p];
    minus[p] -= h[p];
    H(p, p) = (f(plus) - 2.0 * f0 + f(minus)) / (h[p] * h[p]);
    for (int q = p + 1; q < dim; ++q) {
      const double v = (shifted(p, 1, q, 1) - shifted(p, 1, q, -1) - shifted(p, -1, q, 1) +
                        shifted(p, -1, q, -1)) /
                       (4.0 * h[p] * h[q]);
      H(p, q) = v;
      H(q, p) = v;
    }
  }
  H = 0.5 * (H + H.transpose()).eval();

  const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H).eigenvalues().minCoeff();
  if (!(min_eig > kMinHessianEigenvalue)) {
    throw Error(ErrorCode::kHessianNotPositiveDefinite,
                fmt::format("Hessian not positive definite (min eigenvalue {:.3e}) - (A 4) "
                            "fails for this instance",
                            min_eig));
  }
  return H;
}

namespace {

Vec fd_gradient(const GoalModel& goal, const DivergencePair& spec, const Vec& theta_star,
                double x_star, double step, const Vec& z) {
  const int m = static_cast<int>(theta_star.size());
  Vec grad(m + 1);
  for (int k = 0; k < m; ++k) {
    Vec plus = theta_star;
    Vec minus = theta_star;
    plus[k] += step;
    minus[k] -= step;
    grad[k] = (spec.phi_star(goal.evaluate(plus, z) + x_star) -
               spec.phi_star(goal.evaluate(minus, z) + x_star)) /
              (2.0 * step);
  }
  const double g0 = goal.evaluate(theta_star, z);
  grad[m] = (spec.phi_star(g0 + x_star + step) - spec.phi_star(g0 + x_star - step)) / (2.0 * step);
  return grad;
}

bool stencil_crosses_boundary(const PLGoal& pl, const Vec& theta_star, double step,
                              const Vec& z) {
  const auto base = pl_selectors(pl, theta_star, z);
  for (Eigen::Index k = 0; k < theta_star.size(); ++k) {
    for (double sign : {1.0, -1.0}) {
      Vec shifted = theta_star;
      shifted[k] += sign * step;
      if (pl_selectors(pl, shifted, z) != base) return true;
    }
  }
  return false;
}

}  // namespace

Eigen::MatrixXd sample_covariance(const std::vector<Vec>& draws) {
  if (draws.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "sample covariance needs at least two draws");
  }
  const Eigen::Index dim = draws.front().size();
  Vec mean = Vec::Zero(dim);
  for (const Vec& v : draws) mean += v;
  mean /= static_cast<double>(draws.size());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  for (const Vec& v : draws) {
    const Vec c = v - mean;
    cov.noalias() += c * c.transpose();
  }
  cov /= static_cast<double>(draws.size() - 1);
  return 0.5 * (cov + cov.transpose());
}

Eigen::MatrixXd estimate_sigma_fd(const GoalModel& goal, const DivergencePair& spec,
                                  const Vec& theta_star, double x_star, double step,
                                  std::size_t n_mc, RandomStream& rng) {
  std::vector<Vec> grads;
  grads.reserve(n_mc);
  for (std::size_t i = 0; i < n_mc; ++i) {
    const Vec z = goal.sampler.draw(rng);
    grads.push_back(fd_gradient(goal, spec, theta_star, x_star, step, z));
  }
  return sample_covariance(grads);
}

Eigen::MatrixXd estimate_sigma_fd_away_from_boundaries(
    const GoalModel& goal, const DivergencePair& spec, const Vec& theta_star,
    double x_star, double step, std::size_t n_mc, RandomStream& rng) {
  if (!goal.pl) return estimate_sigma_fd(goal, spec, theta_star, x_star, step, n_mc, rng);
  std::vector<Vec> grads;
  grads.reserve(n_mc);
  while (grads.size() < n_mc) {
    const Vec z = goal.sampler.draw(rng);
    if (stencil_crosses_boundary(*goal.pl, theta_star, step, z)) continue;
    grads.push_back(fd_gradient(goal, spec, theta_star, x_star, step, z));
  }
  return sample_covariance(grads);
}

SigmaPlResult sigma_pl(const GoalModel& goal, const DivergencePair& spec,
                       const Vec& theta_star, double x_star, std::size_t n_mc,
                       RandomStream& rng) {
  if (!goal.pl) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("sigma_pl: model '{}' has no PL representation", goal.name));
  }
  SigmaPlResult out;
  std::vector<Vec> scores;
  scores.reserve(n_mc);
  while (scores.size() < n_mc) {
    const Vec z = goal.sampler.draw(rng);
    MdotResult r = pl_mdot(*goal.pl, spec, theta_star, x_star, z);
    if (r.c5_violation) {
      ++out.rejected;
      if (out.rejected > n_mc) break;
      continue;
    }
    scores.push_back(std::move(r.value));
  }
  out.accepted = scores.size();
  const double drawn = static_cast<double>(out.accepted + out.rejected);
  if (static_cast<double>(out.rejected) > kMaxC5Fraction * drawn) {
    throw Error(ErrorCode::kC5Violated,
                fmt::format("C5 empirically violated: {} of {} draws hit a kink of phi*",
                            out.rejected, out.accepted + out.rejected));
  }
  out.sigma = sample_covariance(scores);
  return out;
}

Eigen::MatrixXd predict_covariance(const Eigen::MatrixXd& H, const Eigen::MatrixXd& Sigma,
                                   int m) {
  if (H.rows() != H.cols() || Sigma.rows() != H.rows() || Sigma.cols() != H.cols() ||
      m < 1 || m + 1 != H.rows()) {
    throw Error(ErrorCode::kInvalidArgument, "predict_covariance: inconsistent dimensions");
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kHessianNotPositiveDefinite,
                "Hessian not positive definite - (A 4) fails for this instance");
  }
  // H^{-1} Sigma H^{-1} = H^{-1} (H^{-1} Sigma)^T for symmetric Sigma.
  const Eigen::MatrixXd left = llt.solve(Sigma);
  const Eigen::MatrixXd full = llt.solve(left.transpose());
  const Eigen::MatrixXd block = full.topLeftCorner(m, m);
  return 0.5 * (block + block.transpose());
}

AsymptoticPrediction make_prediction(const Eigen::MatrixXd& H, const Eigen::MatrixXd& Sigma,
                                     int m, double beta) {
  AsymptoticPrediction p;
  p.H = H;
  p.Sigma = Sigma;
  p.C_pred = predict_covariance(H, Sigma, m);
  p.beta = beta;
  p.rate_exponent = rate_exponent(beta);
  return p;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double ks_distance_normal(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "KS distance of an empty set");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double d = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double cdf = normal_cdf(values[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - cdf, cdf - static_cast<double>(i) / n});
  }
  return d;
}

}  // namespace saarisk
