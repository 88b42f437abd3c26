#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <thread>

#include <fmt/format.h>

#include "saarisk/asymptotics.hpp"
#include "saarisk/error.hpp"

namespace saarisk {

std::string ReplicationTable::to_csv() const {
  std::string out = "n,rep,seed";
  for (int j = 1; j <= m; ++j) out += fmt::format(",theta_{}", j);
  out += ",x_hat,value,solve_ok\n";
  for (const ReplicationRow& row : rows) {
    out += fmt::format("{},{},{}", row.n, row.rep, row.seed);
    for (int j = 0; j < m; ++j) {
      out += fmt::format(",{}", j < row.theta_hat.size() ? row.theta_hat[j]
                                                         : std::numeric_limits<double>::quiet_NaN());
    }
    out += fmt::format(",{},{},{}\n", row.x_hat, row.value, row.solve_ok ? 1 : 0);
  }
  return out;
}

ReplicationTable run_replications(const GoalModel& goal, const DivergencePair& spec,
                                  std::span<const std::size_t> n_list, std::size_t R,
                                  std::uint64_t base_seed, const SolveConfig& cfg,
                                  unsigned threads) {
  if (R < 2) throw Error(ErrorCode::kInvalidArgument, "run_replications: need R >= 2");
  if (n_list.empty()) throw Error(ErrorCode::kInvalidArgument, "run_replications: empty n_list");
  cfg.validate();

  ReplicationTable table;
  table.m = goal.m;
  table.rows.resize(n_list.size() * R);
  for (std::size_t i = 0; i < n_list.size(); ++i) {
    for (std::size_t rep = 0; rep < R; ++rep) {
      ReplicationRow& row = table.rows[i * R + rep];
      row.n = n_list[i];
      row.rep = rep;
      row.seed = mix64(base_seed, i, rep);
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t t = next++; t < table.rows.size(); t = next++) {
      ReplicationRow& row = table.rows[t];
      try {
        RandomStream rng(row.seed);
        const ZSample sample = goal.sampler.draw_n(rng, row.n);
        const SaaSolution sol = solve_saa(goal, spec, sample, cfg);
        row.theta_hat = sol.theta_hat;
        row.x_hat = sol.x_hat;
        row.value = sol.value;
        row.solve_ok = true;
      } catch (const std::exception&) {
        row.theta_hat = Vec::Constant(goal.m, std::numeric_limits<double>::quiet_NaN());
        row.x_hat = row.value = std::numeric_limits<double>::quiet_NaN();
        row.solve_ok = false;
      }
    }
  };

  const unsigned workers = std::max(1u, threads);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  return table;
}

RateDiagnostic rate_diagnostic(const ReplicationTable& table, const Vec& theta_star,
                               double beta) {
  std::map<std::size_t, std::vector<double>> errors;
  for (const ReplicationRow& row : table.rows) {
    if (!row.solve_ok) continue;
    errors[row.n].push_back((row.theta_hat - theta_star).norm());
  }
  if (errors.size() < 3) {
    throw Error(ErrorCode::kInsufficientRows,
                "rate_diagnostic: need at least three distinct sample sizes");
  }

  RateDiagnostic out;
  out.expected_slope = -rate_exponent(beta);
  std::vector<double> lx;
  std::vector<double> ly;
  for (auto& [n, e] : errors) {
    if (e.size() < 20) {
      throw Error(ErrorCode::kInsufficientRows,
                  fmt::format("rate_diagnostic: only {} successful rows at n={}", e.size(), n));
    }
    std::sort(e.begin(), e.end());
    const std::size_t k = e.size();
    const double median = k % 2 ? e[k / 2] : 0.5 * (e[k / 2 - 1] + e[k / 2]);
    out.ns.push_back(n);
    out.medians.push_back(median);
    lx.push_back(std::log(static_cast<double>(n)));
    ly.push_back(std::log(median));
  }

  const double k = static_cast<double>(lx.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= k;
  my /= k;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  out.slope = sxy / sxx;
  const double intercept = my - out.slope * mx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double r = ly[i] - intercept - out.slope * lx[i];
    ssr += r * r;
  }
  out.slope_se = std::sqrt(ssr / (k - 2.0) / sxx);
  return out;
}

CoverageResult coverage_normality(const ReplicationTable& table, const Vec& theta_star,
                                  const Eigen::MatrixXd& C_pred) {
  const int m = static_cast<int>(theta_star.size());
  if (C_pred.rows() != m || C_pred.cols() != m) {
    throw Error(ErrorCode::kInvalidArgument, "coverage_normality: C_pred must be m x m");
  }
  for (int j = 0; j < m; ++j) {
    if (!(C_pred(j, j) > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("coverage_normality: predicted variance {} is not positive", j + 1));
    }
  }

  CoverageResult out;
  for (const ReplicationRow& row : table.rows) out.n = std::max(out.n, row.n);
  std::vector<Vec> scaled;
  const double root_n = std::sqrt(static_cast<double>(out.n));
  for (const ReplicationRow& row : table.rows) {
    if (row.n == out.n && row.solve_ok) scaled.push_back(root_n * (row.theta_hat - theta_star));
  }
  out.replications = scaled.size();
  if (scaled.size() < 100) {
    throw Error(ErrorCode::kInsufficientRows,
                fmt::format("coverage_normality: need >= 100 rows at n={}, have {}", out.n,
                            scaled.size()));
  }

  out.emp_cov = sample_covariance(scaled);
  out.frob_rel_err = (out.emp_cov - C_pred).norm() / C_pred.norm();
  for (int j = 0; j < m; ++j) {
    const double sd = std::sqrt(C_pred(j, j));
    std::vector<double> standardized;
    standardized.reserve(scaled.size());
    for (const Vec& v : scaled) standardized.push_back(v[j] / sd);
    out.ks.push_back(ks_distance_normal(std::move(standardized)));
  }
  out.ks_critical = kKsCriticalConstant / std::sqrt(static_cast<double>(out.replications));
  return out;
}

}  // namespace saarisk
