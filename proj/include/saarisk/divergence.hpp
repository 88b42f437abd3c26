#pragma once

// Divergence risk measures evaluated through their optimized certainty
// equivalent (OCE) representation
//
//   rho(Y) = inf_x  E[ phi*(Y + x) ] - x,
//
// where phi* is the Fenchel-Legendre transform of a convex generator phi.
// The set of minimizing x is a compact interval; every routine here returns
// that interval together with the value.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace saarisk {

enum class DivergenceKind { kAvar, kEntropic, kPolynomial, kCustom };

// A point (x0, phi(x0)) with x0 > 1 in the effective domain of phi. Needed
// for the explicit minimizer bracket.
struct Anchor {
  double x0 = 2.0;
  double phi_x0 = 0.0;
};

class DivergencePair {
 public:
  using ScalarFn = std::function<double(double)>;

  // phi = 0 on [0, 1/(1-alpha)], +inf beyond; phi*(y) = y+ / (1-alpha).
  static DivergencePair avar(double alpha);
  // phi(x) = (x ln x - x + 1)/gamma; phi*(y) = (exp(gamma y) - 1)/gamma.
  static DivergencePair entropic(double gamma);
  // phi(x) = x^p / p; phi*(y) = (p-1)/p * (y+)^(p/(p-1)).
  static DivergencePair polynomial(double p);

  struct CustomParts {
    std::string name;
    ScalarFn phi;
    ScalarFn phi_star;
    ScalarFn phi_star_dplus;
    ScalarFn phi_star_dminus;
    double phi_at_zero = 0.0;
    std::optional<Anchor> anchor;
    bool strictly_convex_on_positive = false;
  };
  static DivergencePair custom(CustomParts parts);

  DivergenceKind kind() const noexcept { return kind_; }
  // alpha, gamma or p for the built-ins; NaN for custom pairs.
  double parameter() const noexcept { return param_; }
  const std::string& name() const noexcept { return name_; }

  double phi(double x) const;
  double phi_star(double y) const;
  double phi_star_dplus(double y) const;
  double phi_star_dminus(double y) const;
  double phi_at_zero() const noexcept { return phi_at_zero_; }
  const std::optional<Anchor>& anchor() const noexcept { return anchor_; }

  // phi(0) = 0 and phi* strictly convex on (0, inf): sufficient for a unique
  // OCE minimizer for every distribution.
  bool unique_minimizer_flag() const noexcept { return unique_flag_; }

  std::string describe() const;

 private:
  DivergencePair() = default;

  DivergenceKind kind_ = DivergenceKind::kCustom;
  double param_ = 0.0;
  std::string name_;
  double phi_at_zero_ = 0.0;
  std::optional<Anchor> anchor_;
  bool unique_flag_ = false;
  // Only populated for custom pairs; built-ins dispatch on kind_.
  ScalarFn phi_fn_, phi_star_fn_, dplus_fn_, dminus_fn_;
};

// Finite sample of transformed observations y_j = G(theta, Z_j), kept sorted.
class EmpiricalSample {
 public:
  explicit EmpiricalSample(std::vector<double> values);

  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double min() const noexcept { return values_.front(); }
  double max() const noexcept { return values_.back(); }
  double mean() const noexcept { return mean_; }

 private:
  std::vector<double> values_;
  double mean_ = 0.0;
};

struct OceResult {
  double value = 0.0;
  double x_lo = 0.0;
  double x_hi = 0.0;
  std::pair<double, double> bracket{0.0, 0.0};
  std::size_t evals = 0;
  // "closed-form" or "generic"
  std::string method;

  double x_mid() const noexcept { return 0.5 * (x_lo + x_hi); }
  double width() const noexcept { return x_hi - x_lo; }
};

struct Subgradient {
  double left = 0.0;
  double right = 0.0;
};

inline constexpr double kDefaultInnerTol = 1e-10;
inline constexpr int kBisectionCap = 200;
// exp() argument beyond which the generic entropic path refuses to work.
inline constexpr double kEntropicExpLimit = 700.0;

// (1/n) sum phi*(y_j + x) - x.
double oce_objective(const EmpiricalSample& sample, const DivergencePair& spec,
                     double x);

// One-sided derivatives of oce_objective in x.
Subgradient oce_subgradient(const EmpiricalSample& sample,
                            const DivergencePair& spec, double x);

// Interval guaranteed to contain every minimizer of oce_objective. Throws
// kBracketUnavailable for custom pairs without an anchor.
std::pair<double, double> minimizer_bracket(const EmpiricalSample& sample,
                                            const DivergencePair& spec);

// Generic minimization by bisection on the sign of the subgradient. Works for
// any pair; for custom pairs without an anchor the bracket is found by
// doubling [-1, 1].
OceResult oce_minimize(const EmpiricalSample& sample, const DivergencePair& spec,
                       double tol = kDefaultInnerTol);

// Exact tail average on the sorted sample. The minimizer interval is the
// negated alpha-quantile interval [-F^->(alpha), -F^<-(alpha)].
OceResult avar_closed_form(const EmpiricalSample& sample, double alpha);

// (1/gamma) log mean exp(gamma y) via a max-shifted log-sum-exp.
OceResult entropic_closed_form(const EmpiricalSample& sample, double gamma);

// Closed form when one exists for spec, generic bisection otherwise.
OceResult evaluate_risk(const EmpiricalSample& sample, const DivergencePair& spec,
                        double tol = kDefaultInnerTol);

struct QuadratureConfig {
  std::size_t nodes = 100000;
};

// inf_x  int_0^1 phi*(F^<-(u) + x) du - x with the u-integral taken by the
// midpoint rule. Throws kUnboundedSupport when the quantile function is not
// finite at a node.
double population_oce(const std::function<double(double)>& quantile_fn,
                      const DivergencePair& spec, QuadratureConfig grid = {},
                      double tol = kDefaultInnerTol);

// Same as population_oce, returning the full result (minimizer interval).
OceResult population_oce_result(const std::function<double(double)>& quantile_fn,
                                const DivergencePair& spec,
                                QuadratureConfig grid = {},
                                double tol = kDefaultInnerTol);

}  // namespace saarisk
