#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>
#include <unistd.h>

#include "saarisk/config.hpp"
#include "saarisk/error.hpp"
#include "saarisk/experiment.hpp"

using namespace saarisk;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& leaf) {
  const fs::path p =
      fs::temp_directory_path() / ("saarisk_unit_" + std::to_string(::getpid())) / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string write(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
  return path.string();
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

template <class F>
Run run(F&& f) {
  std::ostringstream out, err;
  const int code = f(out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("config parser") {
  const Config c = Config::parse(R"(# leading comment
top = 1
[solver]
grid_points_per_dim = 17   # trailing comment
name = "two words # not a comment"
bare = word
[design.inner]
list = [1, 2.5, -3e2]
names = ["a", b]
flag = true
)");
  CHECK(c.get_int("top") == 1);
  CHECK(c.get_double("solver.grid_points_per_dim") == 17.0);
  CHECK(c.get_string("solver.name") == "two words # not a comment");
  CHECK(c.get_string("solver.bare") == "word");
  CHECK(c.get_doubles("design.inner.list") == std::vector<double>{1, 2.5, -300});
  CHECK(c.get_strings("design.inner.names") == std::vector<std::string>{"a", "b"});
  CHECK(c.has_section("design"));
  CHECK(c.has_section("design.inner"));
  CHECK_FALSE(c.has_section("output"));
  CHECK(c.get_double("missing", 4.0) == 4.0);
  CHECK(c.unconsumed() == std::vector<std::string>{"design.inner.flag"});
  CHECK(c.get_bool("design.inner.flag", false));
  CHECK(c.unconsumed().empty());

  for (const char* bad : {"[unterminated\n", "novalue\n", "a = 1\na = 2\n", "x = [1, 2\n",
                          "x = \"open\n", "[a..b]\n"}) {
    CAPTURE(bad);
    CHECK(code_of([&] { Config::parse(bad); }) == ErrorCode::kConfig);
  }
  try {
    Config::parse("a = 1\n\nb c\n");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK(code_of([] { Config::parse("a = x").get_double("a"); }) == ErrorCode::kConfig);
  CHECK(code_of([] { Config::load("/nonexistent/file.cfg"); }) == ErrorCode::kIo);
}

TEST_CASE("fnv1a64 reference vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("experiment config: defaults and validation") {
  const ExperimentConfig e = load_experiment(Config::parse("[model]\nname = modelA_quad_entropic\n"));
  CHECK(e.model->name == "modelA_quad_entropic");
  CHECK(e.risk_spec().kind() == DivergenceKind::kEntropic);
  CHECK(e.design.n_list == std::vector<std::size_t>{250, 500, 1000, 2000, 4000});
  CHECK(e.thresholds.slope_lo == -0.62);
  CHECK(e.thresholds.slope_hi == -0.38);
  CHECK(e.thresholds.frob_max == 0.25);
  CHECK(e.config_hash.size() == 16);

  const ExperimentConfig d = load_experiment(Config::parse("[model]\nname = modelD_holder_half\n"));
  CHECK(d.thresholds.slope_lo == -0.48);
  CHECK(d.thresholds.slope_hi == -0.20);

  const ExperimentConfig r = load_experiment(
      Config::parse("[model]\nname = modelA_quad_entropic\n[risk]\nkind = avar\nalpha = 0.8\n"));
  CHECK(r.risk_spec().kind() == DivergenceKind::kAvar);
  CHECK(r.risk_spec().parameter() == 0.8);

  const std::string base = "[model]\nname = modelA_quad_entropic\n";
  for (const std::string& bad :
       {base + "[design]\nn_list = [100, 100]\n", base + "[design]\nn_list = [200, 100]\n",
        base + "[design]\nR = 1\n", base + "[risk]\nkind = avar\nalpha = 1.0\n",
        base + "[risk]\nkind = entropic\ngamma = -1\n", base + "[risk]\nkind = polynomial\np = 1\n",
        base + "[risk]\nkind = avar\n", base + "[solver]\ngrid_points_per_dim = 2\n",
        base + "[design]\nunknown_key = 3\n", std::string("[model]\nname = nope\n"),
        base + "[design]\nn_list = [10.5]\n"}) {
    CAPTURE(bad);
    CHECK(code_of([&] { load_experiment(Config::parse(bad)); }) == ErrorCode::kConfig);
  }

  // The seed override changes the hash, output redirection does not.
  const Config c = Config::parse(base);
  const auto h0 = load_experiment(c).config_hash;
  CHECK(load_experiment(c, {std::nullopt, "elsewhere", 4u}).config_hash == h0);
  CHECK(load_experiment(c, {7u, std::nullopt, std::nullopt}).config_hash != h0);
  CHECK(load_experiment(c, {7u, std::nullopt, std::nullopt}).design.base_seed == 7);
}

TEST_CASE("inline PL round trip") {
  const GoalModel& c = find_model("modelC_twopiece_pl")->goal;
  const std::string text = pl_model_to_config(c);
  const GoalModel back = parse_inline_pl(Config::parse(text), "x");
  CHECK(back.name == c.name);
  CHECK(back.pl->T == c.pl->T);
  REQUIRE(back.pl->r() == 2);
  CHECK(back.pl->pieces[1].selectors[0].kind == IntervalKind::kOpen);
  CHECK(back.truth->theta == c.truth->theta);
  CHECK(back.truth->x == c.truth->x);
  CHECK(pl_model_to_config(back) == text);
  CHECK(code_of([] { pl_model_to_config(find_model("modelA_quad_entropic")->goal); }) ==
        ErrorCode::kInvalidArgument);

  // Random instances, including awkward doubles, survive the text form exactly.
  std::mt19937_64 gen(77);
  std::normal_distribution<double> n01;
  std::uniform_int_distribution<int> dims(1, 3);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = dims(gen), d = dims(gen), r = dims(gen);
    PLGoal pl;
    pl.T = Eigen::MatrixXd(d, m);
    for (int i = 0; i < d * m; ++i) pl.T(i / m, i % m) = n01(gen) / 3.0;
    for (int i = 0; i < r; ++i) {
      PlPiece p;
      p.lambda = Eigen::RowVectorXd(d);
      for (int j = 0; j < d; ++j) p.lambda[j] = n01(gen) * 1e-7 + n01(gen);
      p.b = n01(gen);
      for (int l = 0; l <= i % 2; ++l) {
        PlSelector s;
        s.L = Eigen::RowVectorXd(d);
        for (int j = 0; j < d; ++j) s.L[j] = n01(gen);
        s.a = n01(gen);
        s.kind = (l + i) % 2 ? IntervalKind::kOpen : IntervalKind::kClosed;
        p.selectors.push_back(s);
      }
      pl.pieces.push_back(p);
    }
    GoalModel g = make_pl_model("rand", pl, ParamBox(Vec::Constant(m, -1), Vec::Constant(m, 1)),
                                Sampler(TruncatedNormal{Vec::Zero(d), Vec::Constant(d, 0.7),
                                                        Vec::Constant(d, -1.3), Vec::Constant(d, 2)}));
    const GoalModel b = parse_inline_pl(Config::parse(pl_model_to_config(g)), "rand");
    CHECK(b.pl->T == g.pl->T);
    for (int i = 0; i < r; ++i) {
      const auto& p = g.pl->pieces[static_cast<std::size_t>(i)];
      const auto& q = b.pl->pieces[static_cast<std::size_t>(i)];
      CHECK(p.lambda == q.lambda);
      CHECK(p.b == q.b);
      REQUIRE(p.selectors.size() == q.selectors.size());
      for (std::size_t l = 0; l < p.selectors.size(); ++l) {
        CHECK(p.selectors[l].L == q.selectors[l].L);
        CHECK(p.selectors[l].a == q.selectors[l].a);
        CHECK(p.selectors[l].kind == q.selectors[l].kind);
      }
    }
  }
}

TEST_CASE("cmd_rho") {
  const fs::path dir = scratch("rho");
  const std::string four = write(dir / "four.txt", "1\n2\n3\n4\n");
  auto r = run([&](auto& o, auto& e) { return cmd_rho(four, "avar", 0.5, {}, {}, o, e); });
  CHECK(r.code == 0);
  CHECK(r.out.rfind("value=3.5\n", 0) == 0);
  CHECK(r.out.find("x_lo=-3\n") != std::string::npos);
  CHECK(r.out.find("x_hi=-2\n") != std::string::npos);
  CHECK(r.out.find("method=closed-form") != std::string::npos);

  const std::string c = write(dir / "c.txt", "-1.25\n");
  r = run([&](auto& o, auto& e) { return cmd_rho(c, "entropic", {}, 1.0, {}, o, e); });
  CHECK(r.code == 0);
  CHECK(r.out.rfind("value=-1.25\n", 0) == 0);

  r = run([&](auto& o, auto& e) { return cmd_rho(four, "polynomial", {}, {}, 2.0, o, e); });
  CHECK(r.code == 0);
  CHECK(r.out.find("method=generic") != std::string::npos);

  const std::string empty = write(dir / "empty.txt", "");
  CHECK(run([&](auto& o, auto& e) { return cmd_rho(empty, "entropic", {}, 1.0, {}, o, e); }).code == 2);
  CHECK(run([&](auto& o, auto& e) { return cmd_rho((dir / "none").string(), "avar", 0.5, {}, {}, o, e); })
            .code == 2);
  const std::string junk = write(dir / "junk.txt", "1\nabc\n");
  CHECK(run([&](auto& o, auto& e) { return cmd_rho(junk, "avar", 0.5, {}, {}, o, e); }).code == 2);
  r = run([&](auto& o, auto& e) { return cmd_rho(four, "avar", 1.5, {}, {}, o, e); });
  CHECK(r.code == 2);
  CHECK(r.err.find("alpha") != std::string::npos);
  CHECK(run([&](auto& o, auto& e) { return cmd_rho(four, "avar", {}, {}, {}, o, e); }).code == 2);
  CHECK(run([&](auto& o, auto& e) { return cmd_rho(four, "cvar", 0.5, {}, {}, o, e); }).code == 2);
}

TEST_CASE("cmd_solve") {
  const fs::path dir = scratch("solve");
  const std::string cfg = write(dir / "a.cfg",
                                "[model]\nname = modelA_quad_entropic\n[design]\nn_list = [100, 400]\n"
                                "base_seed = 1\n[output]\ndir = \"" + (dir / "out").string() + "\"\n");
  CHECK(run([&](auto& o, auto& e) { return cmd_solve(cfg, {}, o, e); }).code == 0);
  const std::string first = slurp(dir / "out" / "solution.json");
  CHECK(run([&](auto& o, auto& e) { return cmd_solve(cfg, {}, o, e); }).code == 0);
  CHECK(slurp(dir / "out" / "solution.json") == first);
  const auto doc = nlohmann::json::parse(first);
  CHECK(doc["version"] == kToolVersion);
  CHECK(doc["n"] == 400);
  CHECK(doc["seed"] == mix64(1, 1, 0));
  CHECK(doc["config_hash"].get<std::string>().size() == 16);

  const std::string b = write(dir / "b.cfg", "[model]\nname = modelB_newsvendor_avar\n[design]\nn_list = [300]\n");
  CHECK(run([&](auto& o, auto& e) { return cmd_solve(b, {std::nullopt, (dir / "b").string(), {}}, o, e); })
            .code == 0);
  const auto bdoc = nlohmann::json::parse(slurp(dir / "b" / "solution.json"));
  const double th = bdoc["theta_hat"][0];
  CHECK(th >= 0.0);
  CHECK(th <= 1.0);

  const std::string bad = write(dir / "bad.cfg", "[model]\nname = modelA_quad_entropic\nnmae = 3\n");
  auto r = run([&](auto& o, auto& e) { return cmd_solve(bad, {}, o, e); });
  CHECK(r.code == 2);
  CHECK(r.err.find("model.nmae") != std::string::npos);
  CHECK(run([&](auto& o, auto& e) { return cmd_solve((dir / "missing.cfg").string(), {}, o, e); }).code == 2);
}

TEST_CASE("cmd_predict") {
  const fs::path dir = scratch("predict");
  const std::string a = write(dir / "a.cfg", "[model]\nname = modelA_quad_entropic\n");
  const CliOverrides out{std::nullopt, dir.string(), std::nullopt};
  CHECK(run([&](auto& o, auto& e) { return cmd_predict(a, out, o, e); }).code == 0);
  const auto doc = nlohmann::json::parse(slurp(dir / "prediction.json"));
  CHECK(doc["C_pred"][0][0].get<double>() == doctest::Approx(0.170001490679323884).epsilon(0.01));
  CHECK(doc["rate_exponent"] == 0.5);
  CHECK(doc["settings"]["sigma_method"] == "fd");
  CHECK(doc["settings"]["quadrature_nodes"] == 100000);
  CHECK(doc["truth_source"] == "pinned");

  const std::string det = write(dir / "det.cfg", "[model]\nname = aux_deterministic\n");
  auto r = run([&](auto& o, auto& e) { return cmd_predict(det, out, o, e); });
  CHECK(r.code == 3);
  CHECK(r.err.find("(A 4) violated") != std::string::npos);

  PredictOverrides hooks;
  hooks.H = Eigen::MatrixXd::Identity(2, 2);
  hooks.Sigma = Eigen::MatrixXd::Identity(2, 2);
  CHECK(run([&](auto& o, auto& e) { return cmd_predict(a, out, o, e, hooks); }).code == 0);
  const auto inj = nlohmann::json::parse(slurp(dir / "prediction.json"));
  CHECK(inj["C_pred"][0][0] == 1.0);
  CHECK(inj["settings"]["sigma_method"] == "injected");

  // modelD: only the exponent is predicted.
  const std::string d = write(dir / "d.cfg", "[model]\nname = modelD_holder_half\n");
  CHECK(run([&](auto& o, auto& e) { return cmd_predict(d, out, o, e); }).code == 0);
  const auto ddoc = nlohmann::json::parse(slurp(dir / "prediction.json"));
  CHECK(ddoc["C_pred"].is_null());
  CHECK(ddoc["rate_exponent"].get<double>() == doctest::Approx(1.0 / 3));
}

TEST_CASE("cmd_experiment") {
  const fs::path dir = scratch("experiment");
  const std::string text =
      "[model]\nname = modelA_quad_entropic\n[design]\nn_list = [40, 80, 160]\nR = 24\n"
      "[solver]\ngrid_points_per_dim = 9\n[prediction]\nsigma_n_mc = 20000\n";
  const std::string cfg = write(dir / "a.cfg", text);
  CHECK(run([&](auto& o, auto& e) { return cmd_experiment(cfg, {std::nullopt, (dir / "s").string(), 1u}, o, e); })
            .code == 0);
  CHECK(run([&](auto& o, auto& e) { return cmd_experiment(cfg, {std::nullopt, (dir / "p").string(), 4u}, o, e); })
            .code == 0);
  CHECK(slurp(dir / "s" / "replications.csv") == slurp(dir / "p" / "replications.csv"));
  CHECK(slurp(dir / "s" / "summary.json") == slurp(dir / "p" / "summary.json"));
  const auto sum = nlohmann::json::parse(slurp(dir / "s" / "summary.json"));
  for (const char* key : {"slope", "slope_se", "expected_slope", "frob_rel_err", "ks", "ks_critical", "pass"}) {
    CHECK(sum.contains(key));
  }
  CHECK(sum["pass"].contains("slope"));
  CHECK(sum["pass"].contains("frob"));
  CHECK(sum["pass"].contains("ks"));
  // Too few replications for coverage: recorded, not fatal.
  CHECK(sum["frob_rel_err"].is_null());

  const std::string r1 = write(dir / "r1.cfg", "[model]\nname = modelA_quad_entropic\n[design]\nR = 1\n");
  CHECK(run([&](auto& o, auto& e) { return cmd_experiment(r1, {}, o, e); }).code == 2);
}

TEST_CASE("cmd_validate_pl") {
  const fs::path dir = scratch("validate");
  const std::string c_text = pl_model_to_config(find_model("modelC_twopiece_pl")->goal);
  const std::string c = write(dir / "c.cfg", c_text + "\n[validate]\nz_samples = 20000\n");
  auto r = run([&](auto& o, auto& e) { return cmd_validate_pl(c, {}, o, e); });
  CHECK(r.code == 0);
  CHECK(r.out.find("sum_violations=0") != std::string::npos);
  CHECK(r.out.find("d=0.02") != std::string::npos);

  // Both selectors closed, with an atom where w = 0.
  const std::string both_closed = R"([pl]
m = 1
d = 1
T = [1]
theta_lower = [-1]
theta_upper = [1]
pieces = 2
[pl.piece1]
lambda = [1]
selectors = 1
[pl.piece1.selector1]
L = [1]
kind = closed
[pl.piece2]
lambda = [-0.5]
selectors = 1
[pl.piece2.selector1]
L = [-1]
kind = closed
[sampler]
kind = mixture
points = [-0.5, 0, 0.5]
weights = [1, 1, 1]
[validate]
z_samples = 3000
theta_star = [0]
)";
  r = run([&](auto& o, auto& e) { return cmd_validate_pl(write(dir / "bc.cfg", both_closed), {}, o, e); });
  CHECK(r.code == 4);
  CHECK(r.out.find("REJECTED") != std::string::npos);

  const std::string empty = write(dir / "e.cfg", c_text + "\n[validate]\nz_samples = 0\n");
  r = run([&](auto& o, auto& e) { return cmd_validate_pl(empty, {}, o, e); });
  CHECK(r.code == 0);
  CHECK(r.out.find("points=0") != std::string::npos);

  std::string malformed = c_text;
  malformed.replace(malformed.find("kind = \"open\""), 13, "kind = \"half\"");
  CHECK(run([&](auto& o, auto& e) { return cmd_validate_pl(write(dir / "m.cfg", malformed), {}, o, e); }).code == 2);
  CHECK(run([&](auto& o, auto& e) {
          return cmd_validate_pl(write(dir / "a.cfg", "[model]\nname = modelA_quad_entropic\n"), {}, o, e);
        }).code == 2);
}
