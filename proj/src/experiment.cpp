#include "saarisk/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "saarisk/error.hpp"

namespace saarisk {

namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::kConfig, what); }

Vec to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> from_vec(const Vec& v) { return {v.data(), v.data() + v.size()}; }

std::vector<double> row_major(const Eigen::MatrixXd& M) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(M.size()));
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) out.push_back(M(i, j));
  }
  return out;
}

json matrix_json(const Eigen::MatrixXd& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vec_json(const Vec& v) { return json(from_vec(v)); }

std::size_t as_count(double v, const std::string& key, double min_value = 0.0) {
  if (!(v >= min_value) || v != std::floor(v) || v > 1e15) {
    config_error(fmt::format("{}: expected an integer >= {}", key, min_value));
  }
  return static_cast<std::size_t>(v);
}

std::size_t get_count(const Config& cfg, const std::string& key, std::size_t fallback,
                      double min_value = 0.0) {
  if (!cfg.has(key)) return fallback;
  return as_count(cfg.get_double(key), key, min_value);
}

std::vector<double> get_exact(const Config& cfg, const std::string& key, std::size_t size) {
  std::vector<double> v = cfg.get_doubles(key);
  if (v.size() != size) {
    config_error(fmt::format("{}: expected {} values, got {}", key, size, v.size()));
  }
  return v;
}

Eigen::RowVectorXd to_row(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Sampler sections share one layout for builtin and inline models.
Sampler parse_sampler(const Config& cfg, int d) {
  const std::string kind = cfg.get_string("sampler.kind");
  const auto sd = static_cast<std::size_t>(d);
  if (kind == "uniform") {
    return Sampler(UniformBox{to_vec(get_exact(cfg, "sampler.lower", sd)),
                              to_vec(get_exact(cfg, "sampler.upper", sd))});
  }
  if (kind == "truncated_normal") {
    return Sampler(TruncatedNormal{to_vec(get_exact(cfg, "sampler.mean", sd)),
                                   to_vec(get_exact(cfg, "sampler.sd", sd)),
                                   to_vec(get_exact(cfg, "sampler.lower", sd)),
                                   to_vec(get_exact(cfg, "sampler.upper", sd))});
  }
  if (kind == "mixture") {
    const std::vector<double> weights = cfg.get_doubles("sampler.weights");
    const std::vector<double> flat = get_exact(cfg, "sampler.points", weights.size() * sd);
    PointMixture mix;
    mix.weights = weights;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      mix.points.push_back(to_vec({flat.begin() + static_cast<std::ptrdiff_t>(k * sd),
                                   flat.begin() + static_cast<std::ptrdiff_t>((k + 1) * sd)}));
    }
    return Sampler(std::move(mix));
  }
  config_error(fmt::format("sampler.kind: unknown sampler '{}'", kind));
}

void write_sampler(ConfigWriter& w, const Sampler& sampler) {
  w.section("sampler");
  std::visit(
      [&w](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, UniformBox>) {
          w.scalar("kind", std::string("uniform"));
          w.array("lower", from_vec(s.lower));
          w.array("upper", from_vec(s.upper));
        } else if constexpr (std::is_same_v<S, TruncatedNormal>) {
          w.scalar("kind", std::string("truncated_normal"));
          w.array("mean", from_vec(s.mean));
          w.array("sd", from_vec(s.sd));
          w.array("lower", from_vec(s.lower));
          w.array("upper", from_vec(s.upper));
        } else {
          w.scalar("kind", std::string("mixture"));
          std::vector<double> flat;
          for (const Vec& p : s.points) {
            for (Eigen::Index j = 0; j < p.size(); ++j) flat.push_back(p[j]);
          }
          w.array("points", flat);
          w.array("weights", s.weights);
        }
      },
      sampler.spec());
}

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

// Slope acceptance windows by smoothness exponent.
std::pair<double, double> default_slope_window(double beta) {
  if (beta == 1.0) return {-0.62, -0.38};
  if (beta == 0.5) return {-0.48, -0.20};
  const double expected = -rate_exponent(beta);
  return {expected - 0.12, expected + 0.12};
}

std::uint64_t sigma_stream(std::uint64_t base_seed) { return mix64(base_seed, 0xfffffffeULL, 0); }
std::uint64_t validate_stream(std::uint64_t base_seed) { return mix64(base_seed, 0xfffffffdULL, 0); }
std::uint64_t nodes_stream(std::uint64_t base_seed) { return mix64(base_seed, 0xfffffffcULL, 0); }

json header(const ExperimentConfig& exp) {
  json doc;
  doc["version"] = kToolVersion;
  doc["config_hash"] = exp.config_hash;
  doc["model"] = exp.model->name;
  doc["risk"] = exp.risk ? json(exp.risk->describe()) : json(nullptr);
  return doc;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) {
    throw Error(ErrorCode::kIo,
                fmt::format("cannot create directory '{}': {}", path.parent_path().string(),
                            ec.message()));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write '{}'", path.string()));
  out << bytes;
  if (!out) throw Error(ErrorCode::kIo, fmt::format("write to '{}' failed", path.string()));
}

ExperimentConfig load_from_path(const std::string& path, const CliOverrides& overrides) {
  return load_experiment(Config::load(path), overrides);
}

int report(const Error& e, std::ostream& err) {
  err << "error: " << e.what() << '\n';
  return kExitUsage;
}

}  // namespace

const DivergencePair& ExperimentConfig::risk_spec() const {
  if (!risk) config_error("risk.kind is required for inline models");
  return *risk;
}

DivergencePair parse_risk(const std::string& kind, double parameter) {
  try {
    if (kind == "avar") {
      if (!(parameter > 0.0 && parameter < 1.0)) config_error("avar: alpha must lie in (0, 1)");
      return DivergencePair::avar(parameter);
    }
    if (kind == "entropic") {
      if (!(parameter > 0.0) || !std::isfinite(parameter)) config_error("entropic: gamma must be > 0");
      return DivergencePair::entropic(parameter);
    }
    if (kind == "polynomial") {
      if (!(parameter > 1.0) || !std::isfinite(parameter)) config_error("polynomial: p must be > 1");
      return DivergencePair::polynomial(parameter);
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfig) throw;
    config_error(e.what());
  }
  config_error(fmt::format("unknown risk kind '{}' (avar, entropic, polynomial)", kind));
}

GoalModel parse_inline_pl(const Config& cfg, const std::string& name) {
  const std::size_t m = get_count(cfg, "pl.m", 0, 1);
  const std::size_t d = get_count(cfg, "pl.d", 0, 1);
  if (m == 0 || d == 0) config_error("pl: m and d are required");
  const std::size_t r = get_count(cfg, "pl.pieces", 0, 1);
  if (r == 0) config_error("pl.pieces: at least one piece is required");

  PLGoal pl;
  const std::vector<double> t = get_exact(cfg, "pl.T", d * m);
  pl.T = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      t.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(m));
  for (std::size_t i = 1; i <= r; ++i) {
    const std::string sec = fmt::format("pl.piece{}", i);
    if (!cfg.has_section(sec)) config_error(fmt::format("missing section [{}]", sec));
    PlPiece piece;
    piece.lambda = to_row(get_exact(cfg, sec + ".lambda", d));
    piece.b = cfg.get_double(sec + ".b", 0.0);
    const std::size_t s = get_count(cfg, sec + ".selectors", 0);
    for (std::size_t l = 1; l <= s; ++l) {
      const std::string ssec = fmt::format("{}.selector{}", sec, l);
      if (!cfg.has_section(ssec)) config_error(fmt::format("missing section [{}]", ssec));
      PlSelector sel;
      sel.L = to_row(get_exact(cfg, ssec + ".L", d));
      sel.a = cfg.get_double(ssec + ".a", 0.0);
      const std::string kind = cfg.get_string(ssec + ".kind", "closed");
      if (kind == "closed") {
        sel.kind = IntervalKind::kClosed;
      } else if (kind == "open") {
        sel.kind = IntervalKind::kOpen;
      } else {
        config_error(fmt::format("{}.kind: expected \"closed\" or \"open\"", ssec));
      }
      piece.selectors.push_back(std::move(sel));
    }
    pl.pieces.push_back(std::move(piece));
  }

  ParamBox box(to_vec(get_exact(cfg, "pl.theta_lower", m)),
               to_vec(get_exact(cfg, "pl.theta_upper", m)));
  Sampler sampler = parse_sampler(cfg, static_cast<int>(d));
  GoalModel model = [&] {
    try {
      return make_pl_model(cfg.get_string("pl.name", name), std::move(pl), std::move(box),
                           std::move(sampler));
    } catch (const Error& e) {
      config_error(e.what());
    }
  }();
  if (cfg.has_section("truth")) {
    model.truth = Truth{to_vec(get_exact(cfg, "truth.theta", m)), cfg.get_double("truth.x")};
  }
  return model;
}

std::string pl_model_to_config(const GoalModel& model) {
  if (!model.pl) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("model '{}' has no PL representation", model.name));
  }
  const PLGoal& pl = *model.pl;
  ConfigWriter w;
  w.section("pl");
  w.scalar("name", model.name);
  w.scalar("m", static_cast<std::int64_t>(pl.m()));
  w.scalar("d", static_cast<std::int64_t>(pl.d()));
  w.array("T", row_major(pl.T));
  w.array("theta_lower", from_vec(model.theta_box.lower));
  w.array("theta_upper", from_vec(model.theta_box.upper));
  w.scalar("pieces", static_cast<std::int64_t>(pl.r()));
  for (std::size_t i = 0; i < pl.pieces.size(); ++i) {
    const PlPiece& piece = pl.pieces[i];
    const std::string sec = fmt::format("pl.piece{}", i + 1);
    w.section(sec);
    w.array("lambda", row_major(piece.lambda));
    w.scalar("b", piece.b);
    w.scalar("selectors", static_cast<std::int64_t>(piece.selectors.size()));
    for (std::size_t l = 0; l < piece.selectors.size(); ++l) {
      const PlSelector& s = piece.selectors[l];
      w.section(fmt::format("{}.selector{}", sec, l + 1));
      w.array("L", row_major(s.L));
      w.scalar("a", s.a);
      w.scalar("kind", std::string(s.kind == IntervalKind::kClosed ? "closed" : "open"));
    }
  }
  write_sampler(w, model.sampler);
  if (model.truth) {
    w.section("truth");
    w.array("theta", from_vec(model.truth->theta));
    w.scalar("x", model.truth->x);
  }
  return w.str();
}

ExperimentConfig load_experiment(const Config& cfg, const CliOverrides& overrides) {
  ExperimentConfig exp;

  // Model: a catalog name, or an inline PL definition.
  const BuiltinModel* builtin = nullptr;
  if (cfg.has_section("pl")) {
    exp.inline_pl = true;
    exp.model = std::make_shared<const GoalModel>(
        parse_inline_pl(cfg, cfg.get_string("model.name", "inline_pl")));
  } else {
    const std::string name = cfg.get_string("model.name");
    builtin = find_model(name);
    if (!builtin) config_error(fmt::format("model.name: unknown model '{}'", name));
    exp.model = std::make_shared<const GoalModel>(builtin->goal);
  }

  if (cfg.has("risk.kind")) {
    const std::string kind = cfg.get_string("risk.kind");
    const char* key = kind == "avar" ? "risk.alpha" : kind == "entropic" ? "risk.gamma" : "risk.p";
    if (!cfg.has(key)) config_error(fmt::format("{} is required for risk kind '{}'", key, kind));
    exp.risk = parse_risk(kind, cfg.get_double(key));
  } else if (builtin) {
    exp.risk = builtin->risk;
  }

  // Design.
  if (cfg.has("design.n_list")) {
    for (double v : cfg.get_doubles("design.n_list")) {
      exp.design.n_list.push_back(as_count(v, "design.n_list", 1));
    }
  } else {
    exp.design.n_list = {250, 500, 1000, 2000, 4000};
  }
  if (exp.design.n_list.empty()) config_error("design.n_list: at least one sample size");
  for (std::size_t i = 1; i < exp.design.n_list.size(); ++i) {
    if (exp.design.n_list[i] <= exp.design.n_list[i - 1]) {
      config_error("design.n_list: must be strictly increasing");
    }
  }
  exp.design.R = get_count(cfg, "design.R", exp.design.R);
  if (exp.design.R < 2) config_error("design.R: at least 2 replications are required");
  exp.design.base_seed =
      static_cast<std::uint64_t>(get_count(cfg, "design.base_seed", exp.design.base_seed));

  SolveConfig& s = exp.solver;
  s.grid_points_per_dim = get_count(cfg, "solver.grid_points_per_dim", s.grid_points_per_dim);
  s.multistart_k = get_count(cfg, "solver.multistart_k", s.multistart_k);
  s.pattern_iters = get_count(cfg, "solver.pattern_iters", s.pattern_iters);
  s.pattern_tol = cfg.get_double("solver.pattern_tol", s.pattern_tol);
  s.inner_tol = cfg.get_double("solver.inner_tol", s.inner_tol);
  s.validate();

  PredictionSpec& p = exp.prediction;
  p.hessian_step = cfg.get_double("prediction.hessian_step", p.hessian_step);
  p.gradient_step = cfg.get_double("prediction.gradient_step", p.gradient_step);
  p.sigma_n_mc = get_count(cfg, "prediction.sigma_n_mc", p.sigma_n_mc, 2);
  p.quadrature_nodes = get_count(cfg, "prediction.quadrature_nodes", p.quadrature_nodes, 1);
  p.sigma_method = cfg.get_string("prediction.sigma_method", p.sigma_method);
  if (!(p.hessian_step > 0.0) || !(p.gradient_step > 0.0)) {
    config_error("prediction: finite-difference steps must be > 0");
  }
  if (p.sigma_method != "auto" && p.sigma_method != "fd" && p.sigma_method != "pl") {
    config_error("prediction.sigma_method: expected auto, fd or pl");
  }
  if (p.sigma_method == "pl" && !exp.model->pl) {
    config_error("prediction.sigma_method = pl needs a PL model");
  }

  const auto [lo, hi] = default_slope_window(exp.model->beta());
  Thresholds& t = exp.thresholds;
  t.slope_lo = cfg.get_double("thresholds.slope_lo", lo);
  t.slope_hi = cfg.get_double("thresholds.slope_hi", hi);
  t.frob_max = cfg.get_double("thresholds.frob_max", t.frob_max);
  t.ks_constant = cfg.get_double("thresholds.ks_constant", t.ks_constant);
  if (!(t.slope_lo < t.slope_hi)) config_error("thresholds: slope_lo must be < slope_hi");

  ValidateSpec& v = exp.validate;
  v.z_samples = get_count(cfg, "validate.z_samples", v.z_samples);
  v.theta_points = get_count(cfg, "validate.theta_points", v.theta_points, 1);
  if (cfg.has("validate.deltas")) v.deltas = cfg.get_doubles("validate.deltas");
  for (double d : v.deltas) {
    if (!(d > 0.0)) config_error("validate.deltas: must be > 0");
  }
  if (cfg.has("validate.theta_star")) {
    v.theta_star = to_vec(
        get_exact(cfg, "validate.theta_star", static_cast<std::size_t>(exp.model->m)));
  }

  exp.output_dir = cfg.get_string("output.dir", exp.output_dir);
  exp.threads = static_cast<unsigned>(get_count(cfg, "run.threads", 1, 1));

  const std::vector<std::string> unknown = cfg.unconsumed();
  if (!unknown.empty()) {
    config_error(fmt::format("unknown config key(s): {}", fmt::join(unknown, ", ")));
  }

  // Overrides. Output directory and thread count do not change results and
  // stay out of the hash.
  std::string hashed = cfg.text();
  if (overrides.seed) {
    exp.design.base_seed = *overrides.seed;
    hashed += fmt::format("\n#override seed={}\n", *overrides.seed);
  }
  if (overrides.out_dir) exp.output_dir = *overrides.out_dir;
  if (overrides.threads) {
    if (*overrides.threads < 1) config_error("--threads must be >= 1");
    exp.threads = *overrides.threads;
  }
  exp.config_hash = hex64(fnv1a64(hashed));
  return exp;
}

Truth resolve_truth(const ExperimentConfig& exp, std::string* source) {
  const GoalModel& g = *exp.model;
  if (g.truth) {
    if (source) *source = "pinned";
    return *g.truth;
  }
  const PopulationSolution pop =
      solve_population(g, exp.risk_spec(), exp.prediction.quadrature_nodes, exp.solver);
  if (source) {
    *source = pop.unique ? "solve_population" : "solve_population (non-unique minimizer)";
  }
  return Truth{pop.theta, pop.x};
}

AsymptoticPrediction compute_prediction(const ExperimentConfig& exp, const Truth& truth,
                                        const PredictOverrides& overrides, std::string* doc) {
  const GoalModel& g = *exp.model;
  const DivergencePair& spec = exp.risk_spec();
  const PredictionSpec& ps = exp.prediction;
  const double beta = g.beta();
  json settings;
  settings["hessian_step"] = ps.hessian_step;
  settings["quadrature_nodes"] = ps.quadrature_nodes;
  settings["node_rule"] = g.sampler.has_quantile() ? "midpoint quantile" : "frozen sample";

  Eigen::MatrixXd H;
  if (overrides.H) {
    H = *overrides.H;
    settings["hessian_source"] = "injected";
  } else {
    const ZSample nodes =
        population_nodes(g, ps.quadrature_nodes, ps.quadrature_nodes,
                         nodes_stream(exp.design.base_seed));
    H = estimate_hessian(g, spec, truth.theta, truth.x, ps.hessian_step, nodes);
    settings["hessian_source"] = "central differences";
  }

  // The sandwich is only claimed for beta = 1.
  const bool sandwich = beta == 1.0 || (overrides.H && overrides.Sigma);
  AsymptoticPrediction pred;
  pred.H = H;
  pred.beta = beta;
  pred.rate_exponent = rate_exponent(beta);
  std::size_t rejected = 0;
  std::string method = "none";
  if (sandwich) {
    Eigen::MatrixXd Sigma;
    if (overrides.Sigma) {
      Sigma = *overrides.Sigma;
      method = "injected";
    } else {
      method = ps.sigma_method == "auto" ? (g.pl ? "pl" : "fd") : ps.sigma_method;
      RandomStream rng(sigma_stream(exp.design.base_seed));
      if (method == "pl") {
        SigmaPlResult r = sigma_pl(g, spec, truth.theta, truth.x, ps.sigma_n_mc, rng);
        Sigma = std::move(r.sigma);
        rejected = r.rejected;
      } else {
        Sigma = estimate_sigma_fd(g, spec, truth.theta, truth.x, ps.gradient_step,
                                  ps.sigma_n_mc, rng);
      }
    }
    pred = make_prediction(H, Sigma, g.m, beta);
  }
  settings["sigma_method"] = method;
  if (method == "fd") settings["gradient_step"] = ps.gradient_step;
  if (method == "pl" || method == "fd") {
    settings["sigma_n_mc"] = ps.sigma_n_mc;
    settings["sigma_stream"] = sigma_stream(exp.design.base_seed);
  }
  if (method == "pl") settings["c5_rejected"] = rejected;

  if (doc) {
    json d = header(exp);
    d["theta_star"] = vec_json(truth.theta);
    d["x_star"] = truth.x;
    d["H"] = matrix_json(pred.H);
    if (sandwich) {
      d["Sigma"] = matrix_json(pred.Sigma);
      d["C_pred"] = matrix_json(pred.C_pred);
    } else {
      d["Sigma"] = nullptr;
      d["C_pred"] = nullptr;
      d["note"] = "beta < 1: only the rate exponent is predicted";
    }
    d["beta"] = pred.beta;
    d["rate_exponent"] = pred.rate_exponent;
    d["settings"] = std::move(settings);
    *doc = d.dump(2) + "\n";
  }
  return pred;
}

int cmd_rho(const std::string& sample_path, const std::string& risk_kind,
            std::optional<double> alpha, std::optional<double> gamma, std::optional<double> p,
            std::ostream& out, std::ostream& err) {
  try {
    std::optional<double> param = risk_kind == "avar"       ? alpha
                                  : risk_kind == "entropic" ? gamma
                                                            : p;
    if (!param) {
      config_error(fmt::format("risk '{}' needs its parameter flag (--alpha, --gamma or --p)",
                               risk_kind));
    }
    const DivergencePair spec = parse_risk(risk_kind, *param);

    std::ifstream in(sample_path);
    if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot read '{}'", sample_path));
    std::vector<double> values;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::istringstream ls(line);
      double v = 0.0;
      std::string rest;
      if (!(ls >> v)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        throw Error(ErrorCode::kIo, fmt::format("{}:{}: not a number", sample_path, lineno));
      }
      if (ls >> rest) {
        throw Error(ErrorCode::kIo,
                    fmt::format("{}:{}: expected one value per line", sample_path, lineno));
      }
      values.push_back(v);
    }
    if (values.empty()) throw Error(ErrorCode::kEmptySample, fmt::format("'{}' is empty", sample_path));

    const OceResult r = evaluate_risk(EmpiricalSample(std::move(values)), spec);
    out << fmt::format("value={}\nx_lo={}\nx_hi={}\nmethod={}\n", r.value, r.x_lo, r.x_hi,
                       r.method);
    return kExitOk;
  } catch (const Error& e) {
    return report(e, err);
  }
}

int cmd_solve(const std::string& config_path, const CliOverrides& overrides, std::ostream& out,
              std::ostream& err) {
  try {
    const ExperimentConfig exp = load_from_path(config_path, overrides);
    const GoalModel& g = *exp.model;
    const std::size_t idx = exp.design.n_list.size() - 1;
    const std::size_t n = exp.design.n_list[idx];
    const std::uint64_t seed = mix64(exp.design.base_seed, idx, 0);
    RandomStream rng(seed);
    const ZSample sample = g.sampler.draw_n(rng, n);
    const SaaSolution sol = solve_saa(g, exp.risk_spec(), sample, exp.solver);

    json d = header(exp);
    d["n"] = n;
    d["seed"] = seed;
    d["theta_hat"] = vec_json(sol.theta_hat);
    d["x_hat"] = sol.x_hat;
    d["x_lo"] = sol.x_lo;
    d["x_hi"] = sol.x_hi;
    d["value"] = sol.value;
    d["x_unique"] = sol.x_unique;
    d["restarts_agree"] = sol.restarts_agree;
    d["risk_unique_minimizer"] = exp.risk_spec().unique_minimizer_flag();
    d["grid_best"] = sol.grid_best;
    d["evals"] = sol.evals;
    json starts = json::array();
    for (const RefinedStart& s : sol.starts) {
      starts.push_back({{"seed", vec_json(s.seed)},
                        {"seed_value", s.seed_value},
                        {"theta", vec_json(s.theta)},
                        {"value", s.value}});
    }
    d["starts"] = std::move(starts);
    const auto path = std::filesystem::path(exp.output_dir) / "solution.json";
    write_file(path, d.dump(2) + "\n");
    out << fmt::format("theta_hat=[{}] value={} -> {}\n", fmt::join(from_vec(sol.theta_hat), ", "),
                       sol.value, path.string());
    return kExitOk;
  } catch (const Error& e) {
    return report(e, err);
  }
}

int cmd_predict(const std::string& config_path, const CliOverrides& overrides, std::ostream& out,
                std::ostream& err, const PredictOverrides& hooks) {
  try {
    const ExperimentConfig exp = load_from_path(config_path, overrides);
    std::string source;
    const Truth truth = resolve_truth(exp, &source);
    if (!exp.model->theta_box.contains(truth.theta)) {
      throw Error(ErrorCode::kInvalidArgument, "theta* lies outside the parameter box");
    }
    std::string doc;
    const AsymptoticPrediction pred = compute_prediction(exp, truth, hooks, &doc);
    // Splice the truth source into the document without reparsing the numbers.
    json d = json::parse(doc);
    d["truth_source"] = source;
    const auto path = std::filesystem::path(exp.output_dir) / "prediction.json";
    write_file(path, d.dump(2) + "\n");
    if (pred.C_pred.size() > 0) {
      out << fmt::format("C_pred=[{}] -> {}\n", fmt::join(row_major(pred.C_pred), ", "),
                         path.string());
    } else {
      out << fmt::format("rate_exponent={} -> {}\n", pred.rate_exponent, path.string());
    }
    return kExitOk;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kHessianNotPositiveDefinite) {
      err << "error: (A 4) violated: " << e.what() << '\n';
      return kExitHessian;
    }
    return report(e, err);
  }
}

int cmd_experiment(const std::string& config_path, const CliOverrides& overrides,
                   std::ostream& out, std::ostream& err) {
  try {
    const ExperimentConfig exp = load_from_path(config_path, overrides);
    const GoalModel& g = *exp.model;
    const ReplicationTable table =
        run_replications(g, exp.risk_spec(), exp.design.n_list, exp.design.R,
                         exp.design.base_seed, exp.solver, exp.threads);
    const std::filesystem::path dir(exp.output_dir);
    write_file(dir / "replications.csv", table.to_csv());

    std::string source;
    const Truth truth = resolve_truth(exp, &source);
    json d = header(exp);
    d["truth_source"] = source;
    d["theta_star"] = vec_json(truth.theta);
    d["beta"] = g.beta();
    std::size_t failed = 0;
    for (const ReplicationRow& row : table.rows) failed += !row.solve_ok;
    d["failed_solves"] = failed;

    json pass;
    try {
      const RateDiagnostic rate = rate_diagnostic(table, truth.theta, g.beta());
      d["ns"] = rate.ns;
      d["medians"] = rate.medians;
      d["slope"] = rate.slope;
      d["slope_se"] = rate.slope_se;
      d["expected_slope"] = rate.expected_slope;
      d["slope_window"] = {exp.thresholds.slope_lo, exp.thresholds.slope_hi};
      pass["slope"] = rate.slope >= exp.thresholds.slope_lo && rate.slope <= exp.thresholds.slope_hi;
    } catch (const Error& e) {
      d["slope"] = nullptr;
      d["slope_note"] = e.what();
      pass["slope"] = false;
    }

    if (g.beta() == 1.0) {
      try {
        const AsymptoticPrediction pred = compute_prediction(exp, truth);
        const CoverageResult cov = coverage_normality(table, truth.theta, pred.C_pred);
        const double ks_critical = exp.thresholds.ks_constant / std::sqrt(static_cast<double>(cov.replications));
        d["coverage_n"] = cov.n;
        d["C_pred"] = matrix_json(pred.C_pred);
        d["emp_cov"] = matrix_json(cov.emp_cov);
        d["frob_rel_err"] = cov.frob_rel_err;
        d["ks"] = cov.ks;
        d["ks_critical"] = ks_critical;
        pass["frob"] = cov.frob_rel_err <= exp.thresholds.frob_max;
        pass["ks"] = std::all_of(cov.ks.begin(), cov.ks.end(),
                                 [&](double k) { return k < ks_critical; });
      } catch (const Error& e) {
        d["frob_rel_err"] = nullptr;
        d["ks"] = nullptr;
        d["ks_critical"] = nullptr;
        d["coverage_note"] = e.what();
        pass["frob"] = false;
        pass["ks"] = false;
      }
    }
    d["pass"] = pass;
    write_file(dir / "summary.json", d.dump(2) + "\n");
    out << fmt::format("{} rows -> {}\n", table.rows.size(), (dir / "replications.csv").string());
    out << pass.dump() << '\n';
    return kExitOk;
  } catch (const Error& e) {
    return report(e, err);
  }
}

int cmd_validate_pl(const std::string& config_path, const CliOverrides& overrides,
                    std::ostream& out, std::ostream& err) {
  try {
    const Config cfg = Config::load(config_path);
    const ExperimentConfig exp = load_experiment(cfg, overrides);
    const GoalModel& g = *exp.model;
    if (!g.pl) config_error(fmt::format("model '{}' has no PL definition", g.name));
    const ValidateSpec& v = exp.validate;

    Vec theta_ref;
    std::string ref_source;
    if (v.theta_star) {
      theta_ref = *v.theta_star;
      ref_source = "config";
    } else if (g.truth) {
      theta_ref = g.truth->theta;
      ref_source = "model truth";
    } else {
      theta_ref = 0.5 * (g.theta_box.lower + g.theta_box.upper);
      ref_source = "box center";
    }

    std::vector<Vec> theta_grid;
    if (v.theta_points == 1) {
      theta_grid.push_back(theta_ref);
    } else {
      // Tensor grid over the box, endpoints included.
      const int m = g.m;
      std::vector<std::size_t> idx(static_cast<std::size_t>(m), 0);
      while (true) {
        Vec th(m);
        for (int j = 0; j < m; ++j) {
          const double u = static_cast<double>(idx[static_cast<std::size_t>(j)]) /
                           static_cast<double>(v.theta_points - 1);
          th[j] = g.theta_box.lower[j] + u * (g.theta_box.upper[j] - g.theta_box.lower[j]);
        }
        theta_grid.push_back(std::move(th));
        int j = m - 1;
        while (j >= 0 && ++idx[static_cast<std::size_t>(j)] == v.theta_points) {
          idx[static_cast<std::size_t>(j)] = 0;
          --j;
        }
        if (j < 0) break;
      }
    }

    RandomStream rng(validate_stream(exp.design.base_seed));
    const ZSample z = g.sampler.draw_n(rng, v.z_samples);
    const PartitionReport rep = validate_partition(*g.pl, theta_grid, z);
    const CDiagnostics diag = c_diagnostics(*g.pl, theta_ref, z, v.deltas);

    out << fmt::format("model {}  ({} theta points x {} z draws)\n", g.name, theta_grid.size(),
                       z.size());
    out << fmt::format("partition: points={} sum_violations={} disjoint_violations={} -> {}\n",
                       rep.points, rep.sum_violations, rep.disjoint_violations,
                       rep.accepted() ? "accepted" : "REJECTED");
    if (rep.first_offender) {
      out << fmt::format("first offender: theta=[{}] z=[{}]\n",
                         fmt::join(from_vec(rep.first_offender->first), ", "),
                         fmt::join(from_vec(rep.first_offender->second), ", "));
    }
    out << fmt::format("boundary ratios #{{|W|<=d, |W'|<=d}}/(N d^2) at theta=[{}] ({})\n",
                       fmt::join(from_vec(theta_ref), ", "), ref_source);
    std::string head = fmt::format("{:<14}", "pair");
    for (double delta : diag.deltas) head += fmt::format("{:>12}", fmt::format("d={}", delta));
    out << head << fmt::format("  {}\n", "trend");
    for (const CDiagnosticRow& row : diag.rows) {
      std::string line = fmt::format("{:<14}", fmt::format("({},{})x({},{})", row.piece + 1,
                                                          row.selector + 1, row.other_piece + 1,
                                                          row.other_selector + 1));
      for (double ratio : row.ratios) line += fmt::format("{:>12.5g}", ratio);
      out << line << "  " << to_string(row.trend) << '\n';
    }
    if (diag.rows.empty()) out << "(no selector pairs across pieces)\n";
    return rep.accepted() ? kExitOk : kExitPartition;
  } catch (const Error& e) {
    return report(e, err);
  }
}

}  // namespace saarisk
