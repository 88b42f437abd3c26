#pragma once

// Config-driven experiment front end shared by the command-line tool and the
// test suites. Each cmd_* returns the process exit code:
//
//   0  success (experiment verdicts live in the summary, not the exit code)
//   2  usage, config or I/O error
//   3  (A 4) violated: Hessian not positive definite
//   4  PL partition violations found

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "saarisk/asymptotics.hpp"
#include "saarisk/config.hpp"
#include "saarisk/divergence.hpp"
#include "saarisk/goal_models.hpp"
#include "saarisk/saa_solver.hpp"

namespace saarisk {

inline constexpr const char* kToolVersion = "saarisk 0.1.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitHessian = 3,
  kExitPartition = 4,
};

struct DesignSpec {
  std::vector<std::size_t> n_list;
  std::size_t R = 200;
  std::uint64_t base_seed = 1;
};

struct PredictionSpec {
  double hessian_step = kHessianStep;
  double gradient_step = kGradientStep;
  std::size_t sigma_n_mc = 1'000'000;
  std::size_t quadrature_nodes = 100'000;
  // "fd", "pl", or "auto" (pl for PL models, fd otherwise)
  std::string sigma_method = "auto";
};

struct Thresholds {
  double slope_lo = -0.62;
  double slope_hi = -0.38;
  double frob_max = 0.25;
  double ks_constant = kKsCriticalConstant;
};

struct ValidateSpec {
  std::size_t z_samples = 1'000'000;
  std::size_t theta_points = 1;
  std::vector<double> deltas{0.2, 0.1, 0.05, 0.02};
  std::optional<Vec> theta_star;
};

struct ExperimentConfig {
  std::shared_ptr<const GoalModel> model;
  std::optional<DivergencePair> risk;
  bool inline_pl = false;
  DesignSpec design;
  SolveConfig solver;
  PredictionSpec prediction;
  Thresholds thresholds;
  ValidateSpec validate;
  std::string output_dir = "out";
  unsigned threads = 1;
  std::string config_hash;  // hex FNV-1a of the config text plus overrides

  // Throws kConfig when no risk was configured (allowed for validate-only
  // inline PL configs).
  const DivergencePair& risk_spec() const;
};

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<unsigned> threads;
};

// Throws kConfig on unknown keys, out-of-range risk parameters, an
// unresolvable model, or a non-increasing n_list.
ExperimentConfig load_experiment(const Config& cfg, const CliOverrides& overrides = {});

DivergencePair parse_risk(const std::string& kind, double parameter);

// Inline PL models: parse from / write to the config format.
GoalModel parse_inline_pl(const Config& cfg, const std::string& name);
std::string pl_model_to_config(const GoalModel& model);

// Ground truth: stored truth when present, otherwise solve_population.
Truth resolve_truth(const ExperimentConfig& exp, std::string* source = nullptr);

struct PredictOverrides {
  std::optional<Eigen::MatrixXd> H;
  std::optional<Eigen::MatrixXd> Sigma;
};

// Full prediction pipeline; throws kHessianNotPositiveDefinite on (A 4)
// failure. `doc` receives the JSON document when non-null.
AsymptoticPrediction compute_prediction(const ExperimentConfig& exp, const Truth& truth,
                                        const PredictOverrides& overrides = {},
                                        std::string* doc = nullptr);

int cmd_rho(const std::string& sample_path, const std::string& risk_kind,
            std::optional<double> alpha, std::optional<double> gamma, std::optional<double> p,
            std::ostream& out, std::ostream& err);
int cmd_solve(const std::string& config_path, const CliOverrides& overrides, std::ostream& out,
              std::ostream& err);
int cmd_predict(const std::string& config_path, const CliOverrides& overrides, std::ostream& out,
                std::ostream& err, const PredictOverrides& hooks = {});
int cmd_experiment(const std::string& config_path, const CliOverrides& overrides,
                   std::ostream& out, std::ostream& err);
int cmd_validate_pl(const std::string& config_path, const CliOverrides& overrides,
                    std::ostream& out, std::ostream& err);

}  // namespace saarisk
