// saarisk: command-line front end for risk evaluation, SAA solves and
// replication experiments. See README.md for the config format.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "saarisk/experiment.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> threads;

  saarisk::CliOverrides overrides() const { return {seed, out, threads}; }
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "experiment config file")->required();
  sub->add_option("--seed", f.seed, "override design.base_seed");
  sub->add_option("--out", f.out, "override output.dir");
  sub->add_option("--threads", f.threads, "worker threads for replications")
      ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{saarisk::kToolVersion};
  app.set_version_flag("--version", std::string(saarisk::kToolVersion));
  app.require_subcommand(1);

  std::string sample_path;
  std::string risk = "avar";
  std::optional<double> alpha, gamma, p;
  auto* rho = app.add_subcommand("rho", "risk of a sample file (one value per line)");
  rho->add_option("sample", sample_path, "sample file")->required();
  rho->add_option("--risk", risk, "avar | entropic | polynomial");
  rho->add_option("--alpha", alpha, "AVaR level");
  rho->add_option("--gamma", gamma, "entropic risk aversion");
  rho->add_option("--p", p, "polynomial exponent");

  CommonFlags solve_f, predict_f, experiment_f, validate_f;
  auto* solve = app.add_subcommand("solve", "solve one SAA instance at the largest n");
  add_common(solve, solve_f);
  auto* predict = app.add_subcommand("predict", "Hessian, score covariance and sandwich");
  add_common(predict, predict_f);
  auto* experiment = app.add_subcommand("experiment", "replications, rate and coverage checks");
  add_common(experiment, experiment_f);
  auto* validate = app.add_subcommand("validate-pl", "partition and boundary diagnostics");
  add_common(validate, validate_f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : saarisk::kExitUsage;
  }

  if (*rho) return saarisk::cmd_rho(sample_path, risk, alpha, gamma, p, std::cout, std::cerr);
  if (*solve) {
    return saarisk::cmd_solve(solve_f.config, solve_f.overrides(), std::cout, std::cerr);
  }
  if (*predict) {
    return saarisk::cmd_predict(predict_f.config, predict_f.overrides(), std::cout, std::cerr);
  }
  if (*experiment) {
    return saarisk::cmd_experiment(experiment_f.config, experiment_f.overrides(), std::cout,
                                   std::cerr);
  }
  return saarisk::cmd_validate_pl(validate_f.config, validate_f.overrides(), std::cout,
                                  std::cerr);
}
