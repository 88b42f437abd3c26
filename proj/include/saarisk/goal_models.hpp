#pragma once

// Parametric goal functions G(theta, z), the bounded-support samplers for Z,
// and the piecewise-linear (PL) family
//
//   G(theta, z) = sum_i f^i(theta, z) * (Lambda_i(T theta + z) + b_i),
//   f^i(theta, z) = min_l 1_{I_il}( L^i_l(T theta + z) + a^i_l ),
//
// whose selectors f^i must form an exact partition of unity.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "saarisk/divergence.hpp"
#include "saarisk/rng.hpp"

namespace saarisk {

using Vec = Eigen::VectorXd;
using ZSample = std::vector<Vec>;

struct ParamBox {
  Vec lower;
  Vec upper;

  ParamBox() = default;
  ParamBox(Vec lo, Vec hi);

  int dim() const noexcept { return static_cast<int>(lower.size()); }
  bool contains(const Vec& theta) const;
  bool has_interior() const;
  Vec clamp(const Vec& theta) const;
};

// ---------------------------------------------------------------------------
// Samplers

struct UniformBox {
  Vec lower;
  Vec upper;
};

// Independent coordinates, each N(mean, sd^2) truncated to [lower, upper].
struct TruncatedNormal {
  Vec mean;
  Vec sd;
  Vec lower;
  Vec upper;
};

struct PointMixture {
  std::vector<Vec> points;
  std::vector<double> weights;
};

class Sampler {
 public:
  using Spec = std::variant<UniformBox, TruncatedNormal, PointMixture>;

  explicit Sampler(Spec spec);

  const Spec& spec() const noexcept { return spec_; }
  int dim() const noexcept { return dim_; }
  std::string kind_name() const;

  Vec draw(RandomStream& rng) const;
  ZSample draw_n(RandomStream& rng, std::size_t n) const;

  // Bounding box of the support.
  std::pair<Vec, Vec> support() const;
  bool in_support(const Vec& z) const;

  // Quantile function, available for one-dimensional Z only.
  bool has_quantile() const noexcept { return dim_ == 1; }
  double quantile(double u) const;

 private:
  double coordinate_quantile(int j, double u) const;

  Spec spec_;
  int dim_ = 0;
  // PointMixture: points sorted by value (d == 1) and cumulative weights.
  std::vector<double> cumulative_;
  std::vector<std::size_t> order_;
};

// ---------------------------------------------------------------------------
// PL goals

enum class IntervalKind { kClosed, kOpen };  // [0, inf) or (0, inf)

struct PlSelector {
  Eigen::RowVectorXd L;
  double a = 0.0;
  IntervalKind kind = IntervalKind::kClosed;
};

struct PlPiece {
  Eigen::RowVectorXd lambda;
  double b = 0.0;
  std::vector<PlSelector> selectors;
};

struct PLGoal {
  Eigen::MatrixXd T;  // d x m
  std::vector<PlPiece> pieces;

  int m() const noexcept { return static_cast<int>(T.cols()); }
  int d() const noexcept { return static_cast<int>(T.rows()); }
  int r() const noexcept { return static_cast<int>(pieces.size()); }
  // Throws kInvalidArgument on inconsistent dimensions or an empty piece list.
  void check_shapes() const;
};

inline bool interval_contains(IntervalKind kind, double w) {
  return kind == IntervalKind::kClosed ? w >= 0.0 : w > 0.0;
}

// f^1..f^r at (theta, z). Exact comparisons, no epsilon.
std::vector<std::uint8_t> pl_selectors(const PLGoal& g, const Vec& theta, const Vec& z);

// Value of the single active piece. Throws kInvalidPlInstance when zero or
// several selectors are active at (theta, z).
double pl_evaluate(const PLGoal& g, const Vec& theta, const Vec& z);

struct PartitionReport {
  std::size_t points = 0;
  std::size_t sum_violations = 0;       // sum_i f^i != 1
  std::size_t disjoint_violations = 0;  // f^i f^j != 0 for some i != j
  std::optional<std::pair<Vec, Vec>> first_offender;

  bool accepted() const noexcept { return sum_violations == 0 && disjoint_violations == 0; }
};

PartitionReport validate_partition(const PLGoal& g, std::span<const Vec> theta_grid,
                                   std::span<const Vec> z_sample);

struct MdotResult {
  Vec value;  // length m + 1
  bool c5_violation = false;
};

// Closed-form score of (theta, x) -> phi*(G(theta, z) + x) at (theta*, x*)
// for a PL goal; only the active piece contributes.
MdotResult pl_mdot(const PLGoal& g, const DivergencePair& spec, const Vec& theta_star,
                   double x_star, const Vec& z);

// W_il(z) = L^i_l(z) + L^i_l(T theta*) + a^i_l.
double pl_w(const PLGoal& g, int piece, int selector, const Vec& theta_star, const Vec& z);

enum class CTrend { kDecreasing, kBounded, kDiverging };
std::string to_string(CTrend trend);

struct CDiagnosticRow {
  int piece = 0;
  int selector = 0;
  int other_piece = 0;
  int other_selector = 0;
  std::vector<double> ratios;  // aligned with CDiagnostics::deltas
  CTrend trend = CTrend::kDecreasing;
};

struct CDiagnostics {
  std::vector<double> deltas;  // sorted descending
  std::size_t sample_size = 0;
  std::vector<CDiagnosticRow> rows;

  bool all_decreasing() const;
};

// Empirical #{|W_il| <= d and |W_i'l'| <= d} / (N d^2) for every cross pair
// of selectors belonging to different pieces.
CDiagnostics c_diagnostics(const PLGoal& g, const Vec& theta_star,
                           std::span<const Vec> z_sample, std::span<const double> deltas);

// ---------------------------------------------------------------------------
// Goal models

struct Smoothness {
  enum class Kind { kHolder, kPiecewiseLinear };
  Kind kind = Kind::kHolder;
  double beta = 1.0;

  static Smoothness holder(double beta) { return {Kind::kHolder, beta}; }
  static Smoothness piecewise_linear() { return {Kind::kPiecewiseLinear, 1.0}; }
};

struct Truth {
  Vec theta;
  double x = 0.0;
};

using GoalFn = std::function<double(const Vec& theta, const Vec& z)>;

struct GoalModel {
  std::string name;
  int m = 1;
  int d = 1;
  ParamBox theta_box;
  GoalFn evaluate;
  Sampler sampler;
  Smoothness smoothness;
  std::optional<Truth> truth;
  std::shared_ptr<const PLGoal> pl;  // set for PL goals

  double beta() const noexcept { return smoothness.beta; }
};

GoalModel make_pl_model(std::string name, PLGoal pl, ParamBox box, Sampler sampler);

struct BuiltinModel {
  GoalModel goal;
  DivergencePair risk;
  // How the stored truth was obtained.
  std::string truth_oracle;
};

// The four reference models (modelA..modelD).
const std::vector<BuiltinModel>& builtin_models();
// Small helper instances used in tests and CLI configs: aux_affine_pl,
// aux_deterministic, aux_translation.
const std::vector<BuiltinModel>& auxiliary_models();
// Looks in both catalogs; nullptr if absent.
const BuiltinModel* find_model(const std::string& name);

}  // namespace saarisk
