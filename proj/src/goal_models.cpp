#include "saarisk/goal_models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

#include "saarisk/error.hpp"

namespace saarisk {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::kInvalidArgument, what);
}

std::string format_vec(const Vec& v) {
  std::string out = "(";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += fmt::format("{}", v[i]);
  }
  return out + ")";
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamBox

ParamBox::ParamBox(Vec lo, Vec hi) : lower(std::move(lo)), upper(std::move(hi)) {
  require(lower.size() == upper.size() && lower.size() > 0,
          "parameter box: bounds must be non-empty and of equal length");
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    require(std::isfinite(lower[i]) && std::isfinite(upper[i]) && lower[i] <= upper[i],
            "parameter box: need finite lower <= upper");
  }
}

bool ParamBox::contains(const Vec& theta) const {
  if (theta.size() != lower.size()) return false;
  return (theta.array() >= lower.array()).all() && (theta.array() <= upper.array()).all();
}

bool ParamBox::has_interior() const { return (lower.array() < upper.array()).all(); }

Vec ParamBox::clamp(const Vec& theta) const {
  return theta.cwiseMax(lower).cwiseMin(upper);
}

// ---------------------------------------------------------------------------
// Sampler

Sampler::Sampler(Spec spec) : spec_(std::move(spec)) {
  if (const auto* u = std::get_if<UniformBox>(&spec_)) {
    require(u->lower.size() > 0 && u->lower.size() == u->upper.size(),
            "uniform sampler: bounds must have equal, positive length");
    require((u->lower.array() <= u->upper.array()).all() && u->lower.allFinite() &&
                u->upper.allFinite(),
            "uniform sampler: need finite lower <= upper");
    dim_ = static_cast<int>(u->lower.size());
  } else if (const auto* t = std::get_if<TruncatedNormal>(&spec_)) {
    const auto n = t->mean.size();
    require(n > 0 && t->sd.size() == n && t->lower.size() == n && t->upper.size() == n,
            "truncated normal sampler: inconsistent dimensions");
    require((t->sd.array() > 0.0).all(), "truncated normal sampler: sd must be > 0");
    require((t->lower.array() < t->upper.array()).all() && t->lower.allFinite() &&
                t->upper.allFinite(),
            "truncated normal sampler: bounded support with lower < upper required");
    dim_ = static_cast<int>(n);
  } else {
    const auto& p = std::get<PointMixture>(spec_);
    require(!p.points.empty() && p.points.size() == p.weights.size(),
            "point mixture: need one weight per point");
    dim_ = static_cast<int>(p.points.front().size());
    double total = 0.0;
    for (std::size_t i = 0; i < p.points.size(); ++i) {
      require(p.points[i].size() == dim_ && p.points[i].allFinite(),
              "point mixture: points must be finite and of equal dimension");
      require(p.weights[i] >= 0.0, "point mixture: weights must be >= 0");
      total += p.weights[i];
    }
    require(total > 0.0, "point mixture: total weight must be positive");
    order_.resize(p.points.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (dim_ == 1) {
      std::stable_sort(order_.begin(), order_.end(), [&p](std::size_t a, std::size_t b) {
        return p.points[a][0] < p.points[b][0];
      });
    }
    cumulative_.resize(order_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < order_.size(); ++i) {
      acc += p.weights[order_[i]] / total;
      cumulative_[i] = acc;
    }
    cumulative_.back() = 1.0;
  }
}

std::string Sampler::kind_name() const {
  switch (spec_.index()) {
    case 0: return "uniform";
    case 1: return "truncated_normal";
    default: return "point_mixture";
  }
}

double Sampler::coordinate_quantile(int j, double u) const {
  if (const auto* b = std::get_if<UniformBox>(&spec_)) {
    return b->lower[j] + u * (b->upper[j] - b->lower[j]);
  }
  const auto& t = std::get<TruncatedNormal>(spec_);
  const boost::math::normal_distribution<double> stdnorm;
  const double lo = boost::math::cdf(stdnorm, (t.lower[j] - t.mean[j]) / t.sd[j]);
  const double hi = boost::math::cdf(stdnorm, (t.upper[j] - t.mean[j]) / t.sd[j]);
  const double p = std::clamp(lo + u * (hi - lo), lo, hi);
  double z = t.mean[j];
  if (p > 0.0 && p < 1.0) z = t.mean[j] + t.sd[j] * boost::math::quantile(stdnorm, p);
  return std::clamp(z, t.lower[j], t.upper[j]);
}

Vec Sampler::draw(RandomStream& rng) const {
  if (const auto* p = std::get_if<PointMixture>(&spec_)) {
    const double u = rng.uniform();
    const auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
    const auto k = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
        it - cumulative_.begin(), static_cast<std::ptrdiff_t>(cumulative_.size()) - 1));
    return p->points[order_[k]];
  }
  Vec z(dim_);
  for (int j = 0; j < dim_; ++j) z[j] = coordinate_quantile(j, rng.uniform());
  return z;
}

ZSample Sampler::draw_n(RandomStream& rng, std::size_t n) const {
  ZSample out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw(rng));
  return out;
}

std::pair<Vec, Vec> Sampler::support() const {
  if (const auto* b = std::get_if<UniformBox>(&spec_)) return {b->lower, b->upper};
  if (const auto* t = std::get_if<TruncatedNormal>(&spec_)) return {t->lower, t->upper};
  const auto& p = std::get<PointMixture>(spec_);
  Vec lo = p.points.front();
  Vec hi = p.points.front();
  for (const Vec& v : p.points) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  return {lo, hi};
}

bool Sampler::in_support(const Vec& z) const {
  if (z.size() != dim_) return false;
  if (const auto* p = std::get_if<PointMixture>(&spec_)) {
    for (std::size_t i = 0; i < p->points.size(); ++i) {
      if (p->weights[i] > 0.0 && p->points[i] == z) return true;
    }
    return false;
  }
  const auto [lo, hi] = support();
  return (z.array() >= lo.array()).all() && (z.array() <= hi.array()).all();
}

double Sampler::quantile(double u) const {
  require(dim_ == 1, "quantile is only available for one-dimensional Z");
  require(u > 0.0 && u < 1.0, "quantile: u must lie in (0,1)");
  if (const auto* p = std::get_if<PointMixture>(&spec_)) {
    const auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
    const auto k = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
        it - cumulative_.begin(), static_cast<std::ptrdiff_t>(cumulative_.size()) - 1));
    return p->points[order_[k]][0];
  }
  return coordinate_quantile(0, u);
}

// ---------------------------------------------------------------------------
// PL goals

void PLGoal::check_shapes() const {
  require(T.rows() > 0 && T.cols() > 0, "PL goal: T must be a non-empty d x m matrix");
  require(!pieces.empty(), "PL goal: need at least one piece");
  for (const PlPiece& piece : pieces) {
    require(piece.lambda.size() == T.rows(), "PL goal: Lambda_i must have length d");
    require(!piece.selectors.empty(), "PL goal: every piece needs at least one selector");
    for (const PlSelector& s : piece.selectors) {
      require(s.L.size() == T.rows(), "PL goal: L^i_l must have length d");
    }
  }
}

std::vector<std::uint8_t> pl_selectors(const PLGoal& g, const Vec& theta, const Vec& z) {
  const Vec arg = g.T * theta + z;
  std::vector<std::uint8_t> active(g.pieces.size(), 0);
  for (std::size_t i = 0; i < g.pieces.size(); ++i) {
    bool on = true;
    for (const PlSelector& s : g.pieces[i].selectors) {
      if (!interval_contains(s.kind, s.L.dot(arg) + s.a)) {
        on = false;
        break;
      }
    }
    active[i] = on ? 1 : 0;
  }
  return active;
}

double pl_evaluate(const PLGoal& g, const Vec& theta, const Vec& z) {
  const Vec arg = g.T * theta + z;
  int active = -1;
  int count = 0;
  for (std::size_t i = 0; i < g.pieces.size(); ++i) {
    bool on = true;
    for (const PlSelector& s : g.pieces[i].selectors) {
      if (!interval_contains(s.kind, s.L.dot(arg) + s.a)) {
        on = false;
        break;
      }
    }
    if (on) {
      active = static_cast<int>(i);
      ++count;
    }
  }
  if (count != 1) {
    throw Error(ErrorCode::kInvalidPlInstance,
                fmt::format("invalid PL instance: {} active selectors at theta={}, z={}",
                            count, format_vec(theta), format_vec(z)));
  }
  const PlPiece& piece = g.pieces[static_cast<std::size_t>(active)];
  return piece.lambda.dot(arg) + piece.b;
}

PartitionReport validate_partition(const PLGoal& g, std::span<const Vec> theta_grid,
                                   std::span<const Vec> z_sample) {
  PartitionReport report;
  for (const Vec& theta : theta_grid) {
    for (const Vec& z : z_sample) {
      const auto f = pl_selectors(g, theta, z);
      ++report.points;
      const int total = std::accumulate(f.begin(), f.end(), 0);
      const bool bad_sum = total != 1;
      // Selectors are 0/1, so a nonzero pairwise product means two are on.
      const bool bad_disjoint = total > 1;
      report.sum_violations += bad_sum;
      report.disjoint_violations += bad_disjoint;
      if ((bad_sum || bad_disjoint) && !report.first_offender) {
        report.first_offender = std::make_pair(theta, z);
      }
    }
  }
  return report;
}

MdotResult pl_mdot(const PLGoal& g, const DivergencePair& spec, const Vec& theta_star,
                   double x_star, const Vec& z) {
  const int m = g.m();
  MdotResult out;
  out.value = Vec::Zero(m + 1);
  const auto f = pl_selectors(g, theta_star, z);
  const Vec t_theta = g.T * theta_star;
  for (std::size_t i = 0; i < g.pieces.size(); ++i) {
    if (!f[i]) continue;
    const PlPiece& piece = g.pieces[i];
    const double arg = piece.lambda.dot(z) + piece.lambda.dot(t_theta) + x_star + piece.b;
    const double dplus = spec.phi_star_dplus(arg);
    if (dplus != spec.phi_star_dminus(arg)) out.c5_violation = true;
    // (Lambda_i T e_1, ..., Lambda_i T e_m, 1)
    const Eigen::RowVectorXd grad_theta = piece.lambda * g.T;
    for (int k = 0; k < m; ++k) out.value[k] += dplus * grad_theta[k];
    out.value[m] += dplus;
  }
  return out;
}

double pl_w(const PLGoal& g, int piece, int selector, const Vec& theta_star, const Vec& z) {
  const PlSelector& s =
      g.pieces.at(static_cast<std::size_t>(piece)).selectors.at(static_cast<std::size_t>(selector));
  return s.L.dot(z) + s.L.dot(g.T * theta_star) + s.a;
}

std::string to_string(CTrend trend) {
  switch (trend) {
    case CTrend::kDecreasing: return "decreasing";
    case CTrend::kBounded: return "bounded";
    case CTrend::kDiverging: return "diverging";
  }
  return "?";
}

bool CDiagnostics::all_decreasing() const {
  return std::all_of(rows.begin(), rows.end(),
                     [](const CDiagnosticRow& r) { return r.trend == CTrend::kDecreasing; });
}

CDiagnostics c_diagnostics(const PLGoal& g, const Vec& theta_star,
                           std::span<const Vec> z_sample, std::span<const double> deltas) {
  CDiagnostics out;
  out.deltas.assign(deltas.begin(), deltas.end());
  for (double d : out.deltas) require(d > 0.0, "c_diagnostics: deltas must be positive");
  std::sort(out.deltas.begin(), out.deltas.end(), std::greater<>());
  out.sample_size = z_sample.size();

  // |W_il(z)| for every selector, computed once per draw.
  struct Slot {
    int piece;
    int selector;
  };
  std::vector<Slot> slots;
  for (int i = 0; i < g.r(); ++i) {
    for (int l = 0; l < static_cast<int>(g.pieces[static_cast<std::size_t>(i)].selectors.size()); ++l) {
      slots.push_back({i, l});
    }
  }
  const std::size_t s = slots.size();
  std::vector<double> w(z_sample.size() * s);
  for (std::size_t k = 0; k < z_sample.size(); ++k) {
    for (std::size_t j = 0; j < s; ++j) {
      w[k * s + j] = std::abs(pl_w(g, slots[j].piece, slots[j].selector, theta_star, z_sample[k]));
    }
  }

  const double n = static_cast<double>(z_sample.size());
  for (std::size_t a = 0; a < s; ++a) {
    for (std::size_t b = a + 1; b < s; ++b) {
      if (slots[a].piece == slots[b].piece) continue;
      CDiagnosticRow row{slots[a].piece, slots[a].selector, slots[b].piece, slots[b].selector,
                         {}, CTrend::kDecreasing};
      for (double delta : out.deltas) {
        std::size_t hits = 0;
        for (std::size_t k = 0; k < z_sample.size(); ++k) {
          hits += w[k * s + a] <= delta && w[k * s + b] <= delta;
        }
        row.ratios.push_back(n > 0 ? static_cast<double>(hits) / (n * delta * delta) : 0.0);
      }
      // Ratios are listed for shrinking delta.
      bool nonincreasing = true;
      for (std::size_t j = 1; j < row.ratios.size(); ++j) {
        nonincreasing = nonincreasing && row.ratios[j] <= row.ratios[j - 1];
      }
      const double first = row.ratios.empty() ? 0.0 : row.ratios.front();
      const double last = row.ratios.empty() ? 0.0 : row.ratios.back();
      if (nonincreasing && (last < first || last == 0.0)) {
        row.trend = CTrend::kDecreasing;
      } else if (last <= 2.0 * first) {
        row.trend = CTrend::kBounded;
      } else {
        row.trend = CTrend::kDiverging;
      }
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

GoalModel make_pl_model(std::string name, PLGoal pl, ParamBox box, Sampler sampler) {
  pl.check_shapes();
  require(box.dim() == pl.m(), "PL model: box dimension must equal m");
  require(sampler.dim() == pl.d(), "PL model: sampler dimension must equal d");
  auto shared = std::make_shared<const PLGoal>(std::move(pl));
  GoalModel model{
      .name = std::move(name),
      .m = shared->m(),
      .d = shared->d(),
      .theta_box = std::move(box),
      .evaluate = [shared](const Vec& theta, const Vec& z) {
        return pl_evaluate(*shared, theta, z);
      },
      .sampler = std::move(sampler),
      .smoothness = Smoothness::piecewise_linear(),
      .truth = std::nullopt,
      .pl = shared,
  };
  return model;
}

}  // namespace saarisk
