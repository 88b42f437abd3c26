#include <cmath>
#include <numbers>

#include "saarisk/goal_models.hpp"

namespace saarisk {

namespace {

Vec vec1(double v) {
  Vec out(1);
  out << v;
  return out;
}

Eigen::RowVectorXd row1(double v) {
  Eigen::RowVectorXd out(1);
  out << v;
  return out;
}

// Ground truths below were computed offline with 30-digit adaptive quadrature
// and are re-derived at lower precision by the test suite.

// ln int_0^1 exp(z^2) dz
constexpr double kModelAValue = 0.38025105262664982571;
// modelC: golden-section search on the exact AVaR of g(theta + Z)
constexpr double kModelCTheta = -0.46894592234630066316;
constexpr double kModelCX = -0.43945423508483528298;

BuiltinModel model_a() {
  GoalModel g{
      .name = "modelA_quad_entropic",
      .m = 1,
      .d = 1,
      .theta_box = ParamBox(vec1(-2.0), vec1(2.0)),
      .evaluate = [](const Vec& theta, const Vec& z) {
        const double r = theta[0] - z[0];
        return r * r;
      },
      .sampler = Sampler(UniformBox{vec1(-1.0), vec1(1.0)}),
      .smoothness = Smoothness::holder(1.0),
      .truth = Truth{vec1(0.0), -kModelAValue},
      .pl = nullptr,
  };
  return {std::move(g), DivergencePair::entropic(1.0),
          "theta*=0 by symmetry; x*=-ln E exp(Z^2) by adaptive quadrature"};
}

BuiltinModel model_b() {
  constexpr double c = 1.0;
  constexpr double p = 3.0;
  GoalModel g{
      .name = "modelB_newsvendor_avar",
      .m = 1,
      .d = 1,
      .theta_box = ParamBox(vec1(0.0), vec1(1.0)),
      .evaluate = [](const Vec& theta, const Vec& z) {
        return c * theta[0] - p * std::min(theta[0], z[0]);
      },
      .sampler = Sampler(UniformBox{vec1(0.0), vec1(1.0)}),
      .smoothness = Smoothness::holder(1.0),
      // AVaR_0.9 = 15 theta^2 - 2 theta on [0, 0.1], theta - 0.15 beyond.
      .truth = Truth{vec1(1.0 / 15.0), 2.0 / 15.0},
      .pl = nullptr,
  };
  return {std::move(g), DivergencePair::avar(0.9),
          "piecewise closed form of the population AVaR; checked by a theta-grid oracle"};
}

BuiltinModel model_c() {
  // Continuous two-piece goal g(w) = w for w >= 0, -w/2 for w < 0, w = theta + z.
  PLGoal pl;
  pl.T = Eigen::MatrixXd::Identity(1, 1);
  pl.pieces.push_back(PlPiece{row1(1.0), 0.0, {PlSelector{row1(1.0), 0.0, IntervalKind::kClosed}}});
  pl.pieces.push_back(PlPiece{row1(-0.5), 0.0, {PlSelector{row1(-1.0), 0.0, IntervalKind::kOpen}}});
  GoalModel g = make_pl_model(
      "modelC_twopiece_pl", std::move(pl), ParamBox(vec1(-1.5), vec1(1.5)),
      Sampler(TruncatedNormal{vec1(0.0), vec1(1.0), vec1(-2.0), vec1(2.0)}));
  g.truth = Truth{vec1(kModelCTheta), kModelCX};
  return {std::move(g), DivergencePair::avar(0.5),
          "golden-section search on the exact population AVaR (adaptive quadrature)"};
}

BuiltinModel model_d() {
  GoalModel g{
      .name = "modelD_holder_half",
      .m = 1,
      .d = 1,
      .theta_box = ParamBox(vec1(-1.0), vec1(1.0)),
      .evaluate = [](const Vec& theta, const Vec& z) {
        return std::sqrt(std::abs(theta[0] - z[0])) + 0.25 * theta[0] * theta[0];
      },
      .sampler = Sampler(UniformBox{vec1(-1.0), vec1(1.0)}),
      .smoothness = Smoothness::holder(0.5),
      // E exp(sqrt|Z|) = int_0^1 exp(sqrt z) dz = 2.
      .truth = Truth{vec1(0.0), -std::numbers::ln2},
      .pl = nullptr,
  };
  return {std::move(g), DivergencePair::entropic(1.0),
          "theta*=0 by symmetry; x*=-ln 2 in closed form"};
}

BuiltinModel aux_affine_pl() {
  PLGoal pl;
  pl.T = Eigen::MatrixXd::Identity(1, 1);
  pl.pieces.push_back(PlPiece{row1(1.0), 0.0, {PlSelector{row1(0.0), 0.0, IntervalKind::kClosed}}});
  GoalModel g = make_pl_model("aux_affine_pl", std::move(pl), ParamBox(vec1(-2.0), vec1(2.0)),
                              Sampler(UniformBox{vec1(-1.0), vec1(1.0)}));
  // Reference point for score comparisons: theta = 0 with its inner minimizer.
  g.truth = Truth{vec1(0.0), -std::log(std::sinh(1.0))};
  return {std::move(g), DivergencePair::entropic(1.0), "x = -ln E exp(Z) = -ln sinh(1)"};
}

BuiltinModel aux_deterministic() {
  GoalModel g{
      .name = "aux_deterministic",
      .m = 1,
      .d = 1,
      .theta_box = ParamBox(vec1(-1.0), vec1(1.0)),
      .evaluate = [](const Vec& theta, const Vec&) { return theta[0]; },
      .sampler = Sampler(UniformBox{vec1(-1.0), vec1(1.0)}),
      .smoothness = Smoothness::holder(1.0),
      .truth = Truth{vec1(0.0), 0.0},
      .pl = nullptr,
  };
  return {std::move(g), DivergencePair::entropic(1.0), "G(theta,z)=theta; x*=-theta*"};
}

BuiltinModel aux_translation() {
  GoalModel g{
      .name = "aux_translation",
      .m = 1,
      .d = 1,
      .theta_box = ParamBox(vec1(-1.0), vec1(1.0)),
      .evaluate = [](const Vec& theta, const Vec& z) { return theta[0] * theta[0] + z[0]; },
      .sampler = Sampler(UniformBox{vec1(-1.0), vec1(1.0)}),
      .smoothness = Smoothness::holder(1.0),
      .truth = Truth{vec1(0.0), -std::log(std::sinh(1.0))},
      .pl = nullptr,
  };
  return {std::move(g), DivergencePair::entropic(1.0),
          "objective theta^2 + rho(Z); x*=-ln sinh(1)"};
}

}  // namespace

const std::vector<BuiltinModel>& builtin_models() {
  static const std::vector<BuiltinModel> catalog{model_a(), model_b(), model_c(), model_d()};
  return catalog;
}

const std::vector<BuiltinModel>& auxiliary_models() {
  static const std::vector<BuiltinModel> catalog{aux_affine_pl(), aux_deterministic(),
                                                 aux_translation()};
  return catalog;
}

const BuiltinModel* find_model(const std::string& name) {
  for (const auto* catalog : {&builtin_models(), &auxiliary_models()}) {
    for (const BuiltinModel& m : *catalog) {
      if (m.goal.name == name) return &m;
    }
  }
  return nullptr;
}

}  // namespace saarisk
