#include "mcot/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mcot {

std::string_view to_string(RowKind kind) {
  switch (kind) {
  case RowKind::tracking_upper: return "tracking_upper";
  case RowKind::tracking_lower: return "tracking_lower";
  case RowKind::cap: return "cap";
  case RowKind::ramp_upper: return "ramp_upper";
  case RowKind::ramp_lower: return "ramp_lower";
  }
  return "?";
}

RowKind row_kind_from_string(std::string_view name) {
  for (RowKind k : {RowKind::tracking_upper, RowKind::tracking_lower, RowKind::cap,
                    RowKind::ramp_upper, RowKind::ramp_lower}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown constraint row kind '" + std::string(name) + "'");
}

namespace {

bool is_ramp(RowKind k) { return k == RowKind::ramp_upper || k == RowKind::ramp_lower; }

bool row_less(const ConstraintRow& a, const ConstraintRow& b) {
  if (a.kind != b.kind) return static_cast<int>(a.kind) < static_cast<int>(b.kind);
  return a.t < b.t;
}

} // namespace

ConstraintSet::ConstraintSet(int horizon, Index n_agents) : horizon_(horizon), n_agents_(n_agents) {
  if (horizon <= 0) throw ConfigError("ConstraintSet: horizon must be > 0");
  if (n_agents <= 0) throw ConfigError("ConstraintSet: n_agents must be > 0");
}

void ConstraintSet::insert_sorted(ConstraintRow row) {
  const int lo = is_ramp(row.kind) ? 0 : 1;
  const int hi = is_ramp(row.kind) ? horizon_ - 1 : horizon_;
  if (row.t < lo || row.t > hi) {
    throw ConfigError("constraint row " + std::string(to_string(row.kind)) + " at t=" +
                      std::to_string(row.t) + " outside the horizon");
  }
  if (!std::isfinite(row.threshold)) throw ConfigError("constraint threshold must be finite");
  auto it = std::lower_bound(rows_.begin(), rows_.end(), row, row_less);
  if (it != rows_.end() && it->kind == row.kind && it->t == row.t) {
    throw ConfigError("duplicate constraint row " + std::string(to_string(row.kind)) + " at t=" +
                      std::to_string(row.t));
  }
  rows_.insert(it, row);
}

ConstraintSet& ConstraintSet::add_row(ConstraintRow row) {
  insert_sorted(row);
  return *this;
}

ConstraintSet& ConstraintSet::add_tracking(const Vector& signal) {
  if (signal.size() != horizon_) throw ConfigError("tracking signal length must equal the horizon");
  for (int k = 0; k < horizon_; ++k) insert_sorted({RowKind::tracking_upper, k + 1, signal[k]});
  for (int k = 0; k < horizon_; ++k) insert_sorted({RowKind::tracking_lower, k + 1, signal[k]});
  return *this;
}

ConstraintSet& ConstraintSet::add_cap(const Vector& bound) {
  if (bound.size() != horizon_) throw ConfigError("cap bound length must equal the horizon");
  for (int k = 0; k < horizon_; ++k) {
    if (!std::isnan(bound[k])) insert_sorted({RowKind::cap, k + 1, bound[k]});
  }
  return *this;
}

ConstraintSet& ConstraintSet::add_ramp(const Vector& up, const Vector& down) {
  if (up.size() != horizon_ - 1 || down.size() != horizon_ - 1) {
    throw ConfigError("ramp bounds must have horizon - 1 entries");
  }
  for (int k = 0; k + 1 < horizon_; ++k) {
    if (!std::isnan(up[k])) insert_sorted({RowKind::ramp_upper, k + 1, up[k]});
  }
  for (int k = 0; k + 1 < horizon_; ++k) {
    if (!std::isnan(down[k])) insert_sorted({RowKind::ramp_lower, k + 1, down[k]});
  }
  return *this;
}

double ConstraintSet::evaluate_row(const ConstraintRow& row, const Eigen::Ref<const Vector>& m) const {
  switch (row.kind) {
  case RowKind::tracking_upper: return m[row.t] - row.threshold;
  case RowKind::tracking_lower: return row.threshold - m[row.t];
  case RowKind::cap: return m[row.t] - row.threshold;
  case RowKind::ramp_upper: return m[row.t + 1] - m[row.t] - row.threshold;
  case RowKind::ramp_lower: return m[row.t] - m[row.t + 1] - row.threshold;
  }
  return 0.0;
}

Vector ConstraintSet::evaluate_modes(const Eigen::Ref<const Vector>& modes) const {
  if (modes.size() != horizon_ + 1) {
    throw std::invalid_argument("evaluate_f: trajectory length does not match the constraint horizon");
  }
  Vector f(size());
  for (Index a = 0; a < size(); ++a) f[a] = evaluate_row(rows_[a], modes);
  return f;
}

Vector ConstraintSet::evaluate(const Trajectory& traj) const { return evaluate_modes(traj.modes()); }

MomentMap ConstraintSet::moment_map() const {
  MomentMap map{Matrix::Zero(size(), horizon_ + 1), Vector::Zero(size())};
  for (Index a = 0; a < size(); ++a) {
    const ConstraintRow& r = rows_[a];
    switch (r.kind) {
    case RowKind::tracking_upper:
    case RowKind::cap:
      map.coefficients(a, r.t) = 1.0;
      map.offset[a] = -r.threshold;
      break;
    case RowKind::tracking_lower:
      map.coefficients(a, r.t) = -1.0;
      map.offset[a] = r.threshold;
      break;
    case RowKind::ramp_upper:
      map.coefficients(a, r.t + 1) = 1.0;
      map.coefficients(a, r.t) = -1.0;
      map.offset[a] = -r.threshold;
      break;
    case RowKind::ramp_lower:
      map.coefficients(a, r.t + 1) = -1.0;
      map.coefficients(a, r.t) = 1.0;
      map.offset[a] = -r.threshold;
      break;
    }
  }
  return map;
}

ConstraintSet ConstraintSet::shifted(int t0, std::vector<Index>* origin) const {
  if (t0 < 0 || t0 >= horizon_) throw std::invalid_argument("shifted: t0 outside the horizon");
  ConstraintSet out(horizon_ - t0, n_agents_);
  if (origin) origin->clear();
  for (Index a = 0; a < size(); ++a) {
    ConstraintRow r = rows_[a];
    const bool keep = is_ramp(r.kind) ? r.t >= t0 : r.t > t0;
    if (!keep) continue;
    r.t -= t0;
    out.rows_.push_back(r); // already in canonical order
    if (origin) origin->push_back(a);
  }
  return out;
}

std::optional<Vector> ConstraintSet::tracking_signal() const {
  Vector r = Vector::Constant(horizon_, std::numeric_limits<double>::quiet_NaN());
  bool any = false;
  for (const ConstraintRow& row : rows_) {
    if (row.kind == RowKind::tracking_upper) {
      r[row.t - 1] = row.threshold;
      any = true;
    }
  }
  if (!any) return std::nullopt;
  return r;
}

Vector ConstraintSet::max_violation_by_time(const Vector& mean_f) const {
  Vector v = Vector::Zero(horizon_);
  for (Index a = 0; a < size(); ++a) {
    const ConstraintRow& r = rows_[a];
    const int t = is_ramp(r.kind) ? r.t + 1 : r.t;
    v[t - 1] = std::max(v[t - 1], mean_f[a]);
  }
  return v;
}

std::string_view to_string(CostKind kind) {
  switch (kind) {
  case CostKind::zero_one: return "zero_one";
  case CostKind::switch_count: return "switch_count";
  case CostKind::energy_difference: return "energy_difference";
  case CostKind::final_temperature_gap: return "final_temperature_gap";
  }
  return "?";
}

CostKind cost_kind_from_string(std::string_view name) {
  for (CostKind k : {CostKind::zero_one, CostKind::switch_count, CostKind::energy_difference,
                     CostKind::final_temperature_gap}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown local cost '" + std::string(name) + "'");
}

double local_cost(const Trajectory& x, const Trajectory& y, const LocalCost& cost) {
  if (x.states.size() != y.states.size()) {
    throw std::invalid_argument("local_cost: trajectories differ in length");
  }
  switch (cost.kind) {
  case CostKind::zero_one:
    return x.states == y.states ? 0.0 : 1.0;
  case CostKind::switch_count:
    return std::abs(static_cast<double>(y.effective.size()) - static_cast<double>(x.effective.size()));
  case CostKind::energy_difference: {
    double on_x = 0.0, on_y = 0.0;
    for (std::size_t t = 0; t + 1 < x.states.size(); ++t) {
      on_x += x.states[t].mode;
      on_y += y.states[t].mode;
    }
    return std::abs(on_y - on_x) / std::max<double>(1.0, static_cast<double>(x.states.size() - 1));
  }
  case CostKind::final_temperature_gap:
    return std::abs(y.states.back().theta - x.states.back().theta);
  }
  return 0.0;
}

Vector aggregate_consumption(std::span<const Trajectory> trajs) {
  if (trajs.empty()) throw std::invalid_argument("aggregate_consumption: empty population");
  const int horizon = trajs.front().horizon();
  Vector g = Vector::Zero(horizon);
  for (const Trajectory& tr : trajs) {
    if (tr.horizon() != horizon) throw std::invalid_argument("aggregate_consumption: unequal lengths");
    for (int k = 0; k < horizon; ++k) g[k] += tr.states[k + 1].mode;
  }
  return g / static_cast<double>(trajs.size());
}

double quantile(Vector v, double q) {
  if (v.size() == 0) throw std::invalid_argument("quantile of an empty vector");
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<Index>(std::floor(pos));
  const Index hi = std::min<Index>(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

Vector make_tracking_signal(const Vector& nominal, double clip_quantile) {
  if (nominal.size() == 0) throw std::invalid_argument("make_tracking_signal: empty signal");
  if (!(clip_quantile >= 0.0 && clip_quantile <= 1.0)) {
    throw ConfigError("clip_quantile must lie in [0, 1]");
  }
  const double cap = quantile(nominal, clip_quantile);
  Vector r = nominal.cwiseMin(cap);
  const double excess = (nominal - r).sum();
  r.array() += excess / static_cast<double>(nominal.size());
  return r;
}

} // namespace mcot
