#include "saarisk/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "saarisk/error.hpp"

namespace saarisk {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::kInvalidArgument, what);
}

// Sums f(y_j + x) over the sample with the kind switch hoisted out of the loop.
template <typename F>
double mean_of(const EmpiricalSample& sample, double x, F&& f) {
  double acc = 0.0;
  for (double y : sample.values()) acc += f(y + x);
  return acc / static_cast<double>(sample.size());
}

bool entropic_overflows(const EmpiricalSample& sample, double gamma, double x) {
  return gamma * (sample.max() + x) > kEntropicExpLimit;
}

// One-sided derivatives; when `saturate` is set an entropic overflow is
// reported as +inf instead of thrown, which is all the bisection needs.
Subgradient subgradient_impl(const EmpiricalSample& sample,
                             const DivergencePair& spec, double x,
                             bool saturate) {
  switch (spec.kind()) {
    case DivergenceKind::kAvar: {
      const double scale = 1.0 / (1.0 - spec.parameter());
      std::size_t nonneg = 0;
      std::size_t pos = 0;
      for (double y : sample.values()) {
        const double arg = y + x;
        nonneg += arg >= 0.0;
        pos += arg > 0.0;
      }
      const double n = static_cast<double>(sample.size());
      return {static_cast<double>(pos) / n * scale - 1.0,
              static_cast<double>(nonneg) / n * scale - 1.0};
    }
    case DivergenceKind::kEntropic: {
      const double gamma = spec.parameter();
      if (entropic_overflows(sample, gamma, x)) {
        if (saturate) return {kInf, kInf};
        throw Error(ErrorCode::kObjectiveOverflow,
                    "objective overflow: entropic exponent exceeds range; use "
                    "the log-sum-exp closed form");
      }
      const double d =
          mean_of(sample, x, [gamma](double a) { return std::exp(gamma * a); });
      return {d - 1.0, d - 1.0};
    }
    case DivergenceKind::kPolynomial:
    case DivergenceKind::kCustom: {
      double left = 0.0;
      double right = 0.0;
      for (double y : sample.values()) {
        left += spec.phi_star_dminus(y + x);
        right += spec.phi_star_dplus(y + x);
      }
      const double n = static_cast<double>(sample.size());
      left = left / n - 1.0;
      right = right / n - 1.0;
      if (!std::isfinite(left) || !std::isfinite(right)) {
        if (saturate) return {kInf, kInf};
        throw Error(ErrorCode::kObjectiveOverflow, "objective overflow in subgradient");
      }
      return {left, right};
    }
  }
  return {};
}

// Doubles [-1, 1] until the right derivative is negative at the lower end and
// the left derivative positive at the upper end.
std::pair<double, double> expand_bracket(const EmpiricalSample& sample,
                                         const DivergencePair& spec,
                                         std::size_t& evals) {
  double lo = -1.0;
  double hi = 1.0;
  for (int i = 0; i < 60; ++i) {
    const bool lo_ok = subgradient_impl(sample, spec, lo, true).right < 0.0;
    const bool hi_ok = subgradient_impl(sample, spec, hi, true).left > 0.0;
    evals += 2;
    if (lo_ok && hi_ok) return {lo, hi};
    if (!lo_ok) lo *= 2.0;
    if (!hi_ok) hi *= 2.0;
  }
  throw Error(ErrorCode::kBracketUnavailable,
              "bracket unavailable: no sign change after 60 doublings");
}

std::size_t ceil_index(double a) {
  return static_cast<std::size_t>(std::ceil(a));
}

}  // namespace

// ---------------------------------------------------------------------------
// DivergencePair

DivergencePair DivergencePair::avar(double alpha) {
  require(alpha > 0.0 && alpha < 1.0, "avar: alpha must lie in (0,1)");
  DivergencePair d;
  d.kind_ = DivergenceKind::kAvar;
  d.param_ = alpha;
  d.name_ = "avar";
  d.phi_at_zero_ = 0.0;
  d.anchor_ = Anchor{1.0 / (1.0 - alpha), 0.0};
  d.unique_flag_ = false;  // phi* is linear on (0, inf)
  return d;
}

DivergencePair DivergencePair::entropic(double gamma) {
  require(gamma > 0.0 && std::isfinite(gamma), "entropic: gamma must be > 0");
  DivergencePair d;
  d.kind_ = DivergenceKind::kEntropic;
  d.param_ = gamma;
  d.name_ = "entropic";
  d.phi_at_zero_ = 1.0 / gamma;
  d.anchor_ = Anchor{2.0, (2.0 * std::log(2.0) - 1.0) / gamma};
  d.unique_flag_ = false;  // phi(0) = 1/gamma != 0
  return d;
}

DivergencePair DivergencePair::polynomial(double p) {
  require(p > 1.0 && std::isfinite(p), "polynomial: p must be > 1");
  DivergencePair d;
  d.kind_ = DivergenceKind::kPolynomial;
  d.param_ = p;
  d.name_ = "polynomial";
  d.phi_at_zero_ = 0.0;
  d.anchor_ = Anchor{2.0, std::pow(2.0, p) / p};
  d.unique_flag_ = true;
  return d;
}

DivergencePair DivergencePair::custom(CustomParts parts) {
  require(static_cast<bool>(parts.phi_star) && static_cast<bool>(parts.phi_star_dplus) &&
              static_cast<bool>(parts.phi_star_dminus),
          "custom divergence needs phi*, and both one-sided derivatives");
  require(std::isfinite(parts.phi_at_zero) && parts.phi_at_zero >= 0.0,
          "custom divergence: phi(0) must be finite and >= 0");
  if (parts.anchor) {
    require(parts.anchor->x0 > 1.0 && std::isfinite(parts.anchor->phi_x0),
            "custom divergence: anchor needs x0 > 1 and finite phi(x0)");
  }
  DivergencePair d;
  d.kind_ = DivergenceKind::kCustom;
  d.param_ = std::numeric_limits<double>::quiet_NaN();
  d.name_ = parts.name.empty() ? "custom" : std::move(parts.name);
  d.phi_at_zero_ = parts.phi_at_zero;
  d.anchor_ = parts.anchor;
  d.unique_flag_ = parts.phi_at_zero == 0.0 && parts.strictly_convex_on_positive;
  d.phi_fn_ = std::move(parts.phi);
  d.phi_star_fn_ = std::move(parts.phi_star);
  d.dplus_fn_ = std::move(parts.phi_star_dplus);
  d.dminus_fn_ = std::move(parts.phi_star_dminus);
  return d;
}

double DivergencePair::phi(double x) const {
  if (x < 0.0) return kInf;
  switch (kind_) {
    case DivergenceKind::kAvar:
      return x <= 1.0 / (1.0 - param_) ? 0.0 : kInf;
    case DivergenceKind::kEntropic:
      if (x == 0.0) return 1.0 / param_;
      return (x * std::log(x) - x + 1.0) / param_;
    case DivergenceKind::kPolynomial:
      return std::pow(x, param_) / param_;
    case DivergenceKind::kCustom:
      return phi_fn_ ? phi_fn_(x) : std::numeric_limits<double>::quiet_NaN();
  }
  return kInf;
}

double DivergencePair::phi_star(double y) const {
  switch (kind_) {
    case DivergenceKind::kAvar:
      return y > 0.0 ? y / (1.0 - param_) : 0.0;
    case DivergenceKind::kEntropic:
      return std::expm1(param_ * y) / param_;
    case DivergenceKind::kPolynomial:
      return y > 0.0 ? (param_ - 1.0) / param_ * std::pow(y, param_ / (param_ - 1.0))
                     : 0.0;
    case DivergenceKind::kCustom:
      return phi_star_fn_(y);
  }
  return kInf;
}

double DivergencePair::phi_star_dplus(double y) const {
  switch (kind_) {
    case DivergenceKind::kAvar:
      return y >= 0.0 ? 1.0 / (1.0 - param_) : 0.0;
    case DivergenceKind::kEntropic:
      return std::exp(param_ * y);
    case DivergenceKind::kPolynomial:
      return y > 0.0 ? std::pow(y, 1.0 / (param_ - 1.0)) : 0.0;
    case DivergenceKind::kCustom:
      return dplus_fn_(y);
  }
  return kInf;
}

double DivergencePair::phi_star_dminus(double y) const {
  switch (kind_) {
    case DivergenceKind::kAvar:
      return y > 0.0 ? 1.0 / (1.0 - param_) : 0.0;
    case DivergenceKind::kEntropic:
    case DivergenceKind::kPolynomial:
      return phi_star_dplus(y);
    case DivergenceKind::kCustom:
      return dminus_fn_(y);
  }
  return kInf;
}

std::string DivergencePair::describe() const {
  switch (kind_) {
    case DivergenceKind::kAvar:
      return fmt::format("avar(alpha={})", param_);
    case DivergenceKind::kEntropic:
      return fmt::format("entropic(gamma={})", param_);
    case DivergenceKind::kPolynomial:
      return fmt::format("polynomial(p={})", param_);
    case DivergenceKind::kCustom:
      return name_;
  }
  return name_;
}

// ---------------------------------------------------------------------------
// EmpiricalSample

EmpiricalSample::EmpiricalSample(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw Error(ErrorCode::kEmptySample, "empty sample");
  for (double v : values_) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kInvalidArgument, "sample contains a non-finite value");
    }
  }
  std::sort(values_.begin(), values_.end());
  mean_ = std::accumulate(values_.begin(), values_.end(), 0.0) /
          static_cast<double>(values_.size());
}

// ---------------------------------------------------------------------------
// Objective, subgradient, bracket

double oce_objective(const EmpiricalSample& sample, const DivergencePair& spec,
                     double x) {
  double mean = 0.0;
  switch (spec.kind()) {
    case DivergenceKind::kAvar: {
      const double scale = 1.0 / (1.0 - spec.parameter());
      mean = mean_of(sample, x, [scale](double a) { return a > 0.0 ? a * scale : 0.0; });
      break;
    }
    case DivergenceKind::kEntropic: {
      const double gamma = spec.parameter();
      if (entropic_overflows(sample, gamma, x)) {
        throw Error(ErrorCode::kObjectiveOverflow,
                    "objective overflow: entropic exponent exceeds range; use "
                    "the log-sum-exp closed form");
      }
      mean = mean_of(sample, x,
                     [gamma](double a) { return std::expm1(gamma * a) / gamma; });
      break;
    }
    case DivergenceKind::kPolynomial:
    case DivergenceKind::kCustom:
      mean = mean_of(sample, x, [&spec](double a) { return spec.phi_star(a); });
      break;
  }
  if (!std::isfinite(mean)) {
    throw Error(ErrorCode::kObjectiveOverflow, "objective overflow: non-finite value");
  }
  return mean - x;
}

Subgradient oce_subgradient(const EmpiricalSample& sample, const DivergencePair& spec,
                            double x) {
  return subgradient_impl(sample, spec, x, false);
}

std::pair<double, double> minimizer_bracket(const EmpiricalSample& sample,
                                            const DivergencePair& spec) {
  if (!spec.anchor()) {
    throw Error(ErrorCode::kBracketUnavailable,
                "bracket unavailable: divergence has no anchor (x0, phi(x0))");
  }
  const Anchor& anchor = *spec.anchor();
  double mean_star = 0.0;
  double mean_shifted = 0.0;
  for (double y : sample.values()) {
    const double s = spec.phi_star(y);
    mean_star += s;
    mean_shifted += s - anchor.x0 * y;
  }
  const double n = static_cast<double>(sample.size());
  mean_star /= n;
  mean_shifted /= n;
  const double lb = std::min(0.0, -spec.phi_at_zero() - mean_star);
  const double ub = std::max(0.0, (mean_shifted + anchor.phi_x0) / (anchor.x0 - 1.0));
  return {lb, ub};
}

// ---------------------------------------------------------------------------
// Minimization

OceResult oce_minimize(const EmpiricalSample& sample, const DivergencePair& spec,
                       double tol) {
  require(tol > 0.0, "oce_minimize: tol must be > 0");
  OceResult out;
  out.method = "generic";
  std::size_t evals = 0;

  std::pair<double, double> bracket;
  bool have_bracket = false;
  if (spec.anchor()) {
    bracket = minimizer_bracket(sample, spec);
    have_bracket = std::isfinite(bracket.first) && std::isfinite(bracket.second);
    evals += 1;
  }
  if (!have_bracket) bracket = expand_bracket(sample, spec, evals);
  out.bracket = bracket;

  auto right_nonneg = [&](double x) {
    ++evals;
    return subgradient_impl(sample, spec, x, true).right >= 0.0;
  };
  auto left_pos = [&](double x) {
    ++evals;
    return subgradient_impl(sample, spec, x, true).left > 0.0;
  };

  // Lower end: smallest x with right derivative >= 0.
  double a = bracket.first;
  double b = bracket.second;
  double x_lo;
  if (right_nonneg(a)) {
    x_lo = a;
  } else {
    for (int i = 0; i < 60 && !right_nonneg(b); ++i) {
      a = b;
      b = b + std::max(1.0, std::abs(b));
    }
    for (int it = 0; it < kBisectionCap && b - a > tol; ++it) {
      const double mid = 0.5 * (a + b);
      if (mid <= a || mid >= b) break;
      (right_nonneg(mid) ? b : a) = mid;
    }
    x_lo = b;
  }

  // Upper end: largest x with left derivative <= 0.
  double x_hi;
  a = x_lo;
  b = std::max(bracket.second, x_lo);
  if (left_pos(a)) {
    x_hi = x_lo;
  } else if (!left_pos(b)) {
    x_hi = b;
  } else {
    for (int it = 0; it < kBisectionCap && b - a > tol; ++it) {
      const double mid = 0.5 * (a + b);
      if (mid <= a || mid >= b) break;
      (left_pos(mid) ? b : a) = mid;
    }
    x_hi = a;
  }

  out.x_lo = x_lo;
  out.x_hi = x_hi;
  out.value = oce_objective(sample, spec, out.x_mid());
  out.evals = evals + 1;
  return out;
}

OceResult avar_closed_form(const EmpiricalSample& sample, double alpha) {
  require(alpha > 0.0 && alpha < 1.0, "avar: alpha must lie in (0,1)");
  const auto y = sample.values();
  const std::size_t n = y.size();
  const double a = alpha * static_cast<double>(n);
  const double rounded = std::round(a);
  const bool integral = std::abs(a - rounded) <= 1e-9 * std::max(1.0, a);

  // 1-based order statistic indices of the left/right alpha-quantiles.
  std::size_t k_left;
  std::size_t k_right;
  double tail = 0.0;
  if (integral) {
    k_left = static_cast<std::size_t>(rounded);
    k_right = k_left + 1;
    for (std::size_t j = k_left; j < n; ++j) tail += y[j];
  } else {
    k_left = k_right = ceil_index(a);
    tail = (static_cast<double>(k_left) - a) * y[k_left - 1];
    for (std::size_t j = k_left; j < n; ++j) tail += y[j];
  }

  OceResult out;
  out.method = "closed-form";
  out.value = tail / (static_cast<double>(n) * (1.0 - alpha));
  out.x_lo = -y[k_right - 1];
  out.x_hi = -y[k_left - 1];
  out.bracket = {out.x_lo, out.x_hi};
  out.evals = 1;
  return out;
}

OceResult entropic_closed_form(const EmpiricalSample& sample, double gamma) {
  require(gamma > 0.0, "entropic: gamma must be > 0");
  const double top = sample.max();
  double acc = 0.0;
  for (double y : sample.values()) acc += std::exp(gamma * (y - top));
  const double value = top + std::log(acc / static_cast<double>(sample.size())) / gamma;

  OceResult out;
  out.method = "closed-form";
  out.value = value;
  out.x_lo = out.x_hi = -value;
  out.bracket = {-value, -value};
  out.evals = 1;
  return out;
}

OceResult evaluate_risk(const EmpiricalSample& sample, const DivergencePair& spec,
                        double tol) {
  switch (spec.kind()) {
    case DivergenceKind::kAvar:
      return avar_closed_form(sample, spec.parameter());
    case DivergenceKind::kEntropic:
      return entropic_closed_form(sample, spec.parameter());
    default:
      return oce_minimize(sample, spec, tol);
  }
}

OceResult population_oce_result(const std::function<double(double)>& quantile_fn,
                                const DivergencePair& spec, QuadratureConfig grid,
                                double tol) {
  require(grid.nodes >= 1, "population_oce: need at least one quadrature node");
  std::vector<double> nodes(grid.nodes);
  const double width = 1.0 / static_cast<double>(grid.nodes);
  for (std::size_t k = 0; k < grid.nodes; ++k) {
    const double v = quantile_fn((static_cast<double>(k) + 0.5) * width);
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kUnboundedSupport,
                  fmt::format("unbounded support: quantile not finite at u={}",
                              (static_cast<double>(k) + 0.5) * width));
    }
    nodes[k] = v;
  }
  return evaluate_risk(EmpiricalSample(std::move(nodes)), spec, tol);
}

double population_oce(const std::function<double(double)>& quantile_fn,
                      const DivergencePair& spec, QuadratureConfig grid, double tol) {
  return population_oce_result(quantile_fn, spec, grid, tol).value;
}

}  // namespace saarisk
