#pragma once

// Sample average approximation of
//
//   inf_{theta in box} inf_x  (1/n) sum_i phi*(G(theta, Z_i) + x) - x
//
// by an exhaustive grid over the box followed by coordinate pattern search
// from the best grid points. The inner x-problem is solved exactly by the
// divergence routines, so the search runs over theta only.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "saarisk/divergence.hpp"
#include "saarisk/goal_models.hpp"

namespace saarisk {

struct SolveConfig {
  std::size_t grid_points_per_dim = 33;
  std::size_t multistart_k = 5;
  std::size_t pattern_iters = 200;
  double pattern_tol = 1e-8;
  double inner_tol = kDefaultInnerTol;

  // Throws kConfig when a field is out of range.
  void validate() const;
};

struct ObjectiveValue {
  double value = 0.0;
  double x_hat = 0.0;  // midpoint of the minimizer interval
  double x_lo = 0.0;
  double x_hi = 0.0;
};

struct RefinedStart {
  Vec seed;
  double seed_value = 0.0;
  Vec theta;
  double value = 0.0;
};

struct SaaSolution {
  Vec theta_hat;
  double x_hat = 0.0;
  double value = 0.0;
  double x_lo = 0.0;
  double x_hi = 0.0;
  std::size_t evals = 0;
  // All refined starts reached the best value within 1e-6.
  bool restarts_agree = true;
  // False when the x-minimizer interval at the optimum is wider than 1e-6
  // (possible under AVaR); asymptotics over x are then meaningless.
  bool x_unique = true;
  // Smallest grid value seen in stage one.
  double grid_best = 0.0;
  std::vector<RefinedStart> starts;
};

using ThetaObjective = std::function<ObjectiveValue(const Vec& theta)>;

// R(F_hat_{n,theta}) on the transformed sample {G(theta, z_i)}.
ObjectiveValue saa_objective(const GoalModel& goal, const DivergencePair& spec,
                             std::span<const Vec> sample, const Vec& theta,
                             double inner_tol = kDefaultInnerTol);

// Grid + pattern-search minimization of an arbitrary theta objective over a
// box. Deterministic; ties within 1e-12 go to the lexicographically smallest
// theta.
SaaSolution minimize_over_box(const ParamBox& box, const ThetaObjective& objective,
                              const SolveConfig& cfg);

SaaSolution solve_saa(const GoalModel& goal, const DivergencePair& spec,
                      std::span<const Vec> sample, const SolveConfig& cfg = {});

// Evaluation nodes standing in for the law of Z: midpoint quantile nodes when
// Z is one-dimensional, otherwise a frozen sample of `mega_sample` draws.
ZSample population_nodes(const GoalModel& goal, std::size_t quadrature_nodes,
                         std::size_t mega_sample = 1'000'000,
                         std::uint64_t seed = 0x5eed5eedULL);

struct PopulationSolution {
  Vec theta;
  double x = 0.0;
  double value = 0.0;
  // False when two refined optima differ in theta by > 1e-3 but in value by
  // < 1e-9.
  bool unique = true;
  SaaSolution search;
};

PopulationSolution solve_population(const GoalModel& goal, const DivergencePair& spec,
                                    std::size_t nodes, const SolveConfig& cfg = {});

}  // namespace saarisk
