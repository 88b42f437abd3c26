#include "saarisk/saa_solver.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "saarisk/error.hpp"

namespace saarisk {

namespace {

constexpr double kTieTol = 1e-12;
constexpr double kAgreeTol = 1e-6;
constexpr double kXWidthTol = 1e-6;

bool lex_less(const Vec& a, const Vec& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) return true;
    if (a[i] > b[i]) return false;
  }
  return false;
}

// Strict ordering by value, ties (within kTieTol) by lexicographic theta.
bool better(double va, const Vec& a, double vb, const Vec& b) {
  if (std::abs(va - vb) <= kTieTol) return lex_less(a, b);
  return va < vb;
}

struct Candidate {
  Vec theta;
  ObjectiveValue eval;
};

std::vector<Vec> tensor_grid(const ParamBox& box, std::size_t per_dim) {
  const int m = box.dim();
  std::vector<std::vector<double>> axes(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    auto& axis = axes[static_cast<std::size_t>(j)];
    const double lo = box.lower[j];
    const double hi = box.upper[j];
    if (lo == hi) {
      axis.push_back(lo);
      continue;
    }
    for (std::size_t k = 0; k < per_dim; ++k) {
      // Endpoints hit exactly.
      axis.push_back(k + 1 == per_dim
                         ? hi
                         : lo + (hi - lo) * static_cast<double>(k) /
                                    static_cast<double>(per_dim - 1));
    }
  }
  std::vector<Vec> grid;
  std::vector<std::size_t> idx(static_cast<std::size_t>(m), 0);
  while (true) {
    Vec theta(m);
    for (int j = 0; j < m; ++j) {
      theta[j] = axes[static_cast<std::size_t>(j)][idx[static_cast<std::size_t>(j)]];
    }
    grid.push_back(std::move(theta));
    int j = m - 1;
    while (j >= 0) {
      auto& i = idx[static_cast<std::size_t>(j)];
      if (++i < axes[static_cast<std::size_t>(j)].size()) break;
      i = 0;
      --j;
    }
    if (j < 0) break;
  }
  return grid;
}

}  // namespace

void SolveConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kConfig, what); };
  if (grid_points_per_dim < 3) fail("solver: grid_points_per_dim must be >= 3");
  if (multistart_k < 1) fail("solver: multistart_k must be >= 1");
  if (pattern_iters < 1) fail("solver: pattern_iters must be >= 1");
  if (!(pattern_tol > 0.0)) fail("solver: pattern_tol must be > 0");
  if (!(inner_tol > 0.0)) fail("solver: inner_tol must be > 0");
}

ObjectiveValue saa_objective(const GoalModel& goal, const DivergencePair& spec,
                             std::span<const Vec> sample, const Vec& theta,
                             double inner_tol) {
  if (sample.empty()) throw Error(ErrorCode::kEmptySample, "empty sample");
  std::vector<double> y;
  y.reserve(sample.size());
  for (const Vec& z : sample) y.push_back(goal.evaluate(theta, z));
  const OceResult r = evaluate_risk(EmpiricalSample(std::move(y)), spec, inner_tol);
  return {r.value, r.x_mid(), r.x_lo, r.x_hi};
}

SaaSolution minimize_over_box(const ParamBox& box, const ThetaObjective& objective,
                              const SolveConfig& cfg) {
  cfg.validate();
  SaaSolution out;
  std::size_t evals = 0;
  auto eval = [&](const Vec& theta) {
    ++evals;
    return objective(theta);
  };

  // Stage one: the full tensor grid.
  std::vector<Candidate> grid;
  for (Vec& theta : tensor_grid(box, cfg.grid_points_per_dim)) {
    ObjectiveValue v = eval(theta);
    grid.push_back({std::move(theta), v});
  }
  std::sort(grid.begin(), grid.end(), [](const Candidate& a, const Candidate& b) {
    return better(a.eval.value, a.theta, b.eval.value, b.theta);
  });
  out.grid_best = grid.front().eval.value;

  // Stage two: coordinate pattern search from the best grid points.
  const int m = box.dim();
  Vec cell(m);
  for (int j = 0; j < m; ++j) {
    cell[j] = (box.upper[j] - box.lower[j]) / static_cast<double>(cfg.grid_points_per_dim - 1);
  }
  const std::size_t starts = std::min(cfg.multistart_k, grid.size());
  std::vector<Candidate> refined;
  for (std::size_t s = 0; s < starts; ++s) {
    Candidate cur = grid[s];
    Vec step = cell;
    for (std::size_t it = 0; it < cfg.pattern_iters; ++it) {
      if (step.maxCoeff() < cfg.pattern_tol) break;
      bool improved = false;
      for (int j = 0; j < m; ++j) {
        if (step[j] == 0.0) continue;
        for (double sign : {1.0, -1.0}) {
          Vec trial = cur.theta;
          trial[j] = std::clamp(cur.theta[j] + sign * step[j], box.lower[j], box.upper[j]);
          if (trial[j] == cur.theta[j]) continue;
          ObjectiveValue v = eval(trial);
          if (v.value < cur.eval.value) {
            cur = {std::move(trial), v};
            improved = true;
            break;
          }
        }
      }
      if (!improved) step *= 0.5;
    }
    out.starts.push_back({grid[s].theta, grid[s].eval.value, cur.theta, cur.eval.value});
    refined.push_back(std::move(cur));
  }

  const auto best = std::min_element(
      refined.begin(), refined.end(), [](const Candidate& a, const Candidate& b) {
        return better(a.eval.value, a.theta, b.eval.value, b.theta);
      });
  out.theta_hat = best->theta;
  out.value = best->eval.value;
  out.x_hat = best->eval.x_hat;
  out.x_lo = best->eval.x_lo;
  out.x_hi = best->eval.x_hi;
  out.restarts_agree = std::all_of(refined.begin(), refined.end(), [&](const Candidate& c) {
    return std::abs(c.eval.value - out.value) <= kAgreeTol;
  });
  out.evals = evals;
  return out;
}

SaaSolution solve_saa(const GoalModel& goal, const DivergencePair& spec,
                      std::span<const Vec> sample, const SolveConfig& cfg) {
  if (sample.empty()) throw Error(ErrorCode::kEmptySample, "empty sample");
  SaaSolution out = minimize_over_box(
      goal.theta_box,
      [&](const Vec& theta) { return saa_objective(goal, spec, sample, theta, cfg.inner_tol); },
      cfg);
  out.x_unique = out.x_hi - out.x_lo <= kXWidthTol;
  return out;
}

ZSample population_nodes(const GoalModel& goal, std::size_t quadrature_nodes,
                         std::size_t mega_sample, std::uint64_t seed) {
  if (goal.sampler.has_quantile()) {
    if (quadrature_nodes == 0) {
      throw Error(ErrorCode::kInvalidArgument, "population: need at least one node");
    }
    ZSample nodes;
    nodes.reserve(quadrature_nodes);
    const double width = 1.0 / static_cast<double>(quadrature_nodes);
    for (std::size_t k = 0; k < quadrature_nodes; ++k) {
      Vec z(1);
      z[0] = goal.sampler.quantile((static_cast<double>(k) + 0.5) * width);
      nodes.push_back(std::move(z));
    }
    return nodes;
  }
  RandomStream rng(seed);
  return goal.sampler.draw_n(rng, mega_sample);
}

PopulationSolution solve_population(const GoalModel& goal, const DivergencePair& spec,
                                    std::size_t nodes, const SolveConfig& cfg) {
  const ZSample z = population_nodes(goal, nodes);
  PopulationSolution out;
  out.search = solve_saa(goal, spec, z, cfg);
  out.theta = out.search.theta_hat;
  out.x = out.search.x_hat;
  out.value = out.search.value;
  for (const RefinedStart& s : out.search.starts) {
    if ((s.theta - out.theta).norm() > 1e-3 && std::abs(s.value - out.value) < 1e-9) {
      out.unique = false;
    }
  }
  return out;
}

}  // namespace saarisk
