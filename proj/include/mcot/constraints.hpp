#pragma once

#include "mcot/moments.hpp"
#include "mcot/types.hpp"
#include "mcot/whmodel.hpp"

#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace mcot {

// Row families in canonical order. All thresholds are per-agent shares: the aggregate
// bound divided by the population size, i.e. a fraction of maximum consumption.
enum class RowKind { tracking_upper, tracking_lower, cap, ramp_upper, ramp_lower };

std::string_view to_string(RowKind kind);
RowKind row_kind_from_string(std::string_view name);

// One moment row evaluated on a single trajectory:
//   tracking_upper(t):  m_t - threshold          tracking_lower(t): threshold - m_t
//   cap(t):             m_t - threshold
//   ramp_upper(t):      m_{t+1} - m_t - threshold   ramp_lower(t): m_t - m_{t+1} - threshold
// Tracking and cap rows use t in [1, T]; ramp rows use t in [1, T-1] (a re-rooted set
// may also hold a ramp row at t = 0, anchored on the known current mode).
struct ConstraintRow {
  RowKind kind;
  int t;
  double threshold;

  bool operator==(const ConstraintRow&) const = default;
};

class ConstraintSet {
public:
  ConstraintSet() = default;
  explicit ConstraintSet(int horizon, Index n_agents = 1);

  // `signal[k]` is the target at time k + 1 (fraction of maximum consumption).
  ConstraintSet& add_tracking(const Vector& signal);
  // NaN entries are skipped, so windowed caps leave the rest of the day free.
  ConstraintSet& add_cap(const Vector& bound);
  // `up[k]`, `down[k]` bound m_{k+2} - m_{k+1} and its negation, k in [0, T-2].
  ConstraintSet& add_ramp(const Vector& up, const Vector& down);
  ConstraintSet& add_row(ConstraintRow row);

  Index size() const noexcept { return static_cast<Index>(rows_.size()); }
  int horizon() const noexcept { return horizon_; }
  Index n_agents() const noexcept { return n_agents_; }
  const std::vector<ConstraintRow>& rows() const noexcept { return rows_; }

  double evaluate_row(const ConstraintRow& row, const Eigen::Ref<const Vector>& modes) const;
  // `modes` holds m_0..m_T.
  Vector evaluate_modes(const Eigen::Ref<const Vector>& modes) const;
  Vector evaluate(const Trajectory& traj) const;

  // f(y) as an affine map of the mode vector m_0..m_T.
  MomentMap moment_map() const;

  // Sub-problem re-rooted at absolute time t0: rows that involve only times < t0 are
  // dropped (ramp rows anchored at t0 are kept since m_{t0} is known) and the rest are
  // re-indexed relative to t0. `origin`, when given, receives each kept row's index here.
  ConstraintSet shifted(int t0, std::vector<Index>* origin = nullptr) const;

  // Target signal from the tracking rows (NaN where a time has no tracking row).
  std::optional<Vector> tracking_signal() const;

  // Largest positive per-agent violation among rows touching time t (1..T), 0 if none.
  Vector max_violation_by_time(const Vector& mean_f) const;

private:
  void insert_sorted(ConstraintRow row);

  int horizon_ = 0;
  Index n_agents_ = 1;
  std::vector<ConstraintRow> rows_;
};

// Local cost between a nominal trajectory x and a controlled counterpart y.
enum class CostKind { zero_one, switch_count, energy_difference, final_temperature_gap };

std::string_view to_string(CostKind kind);
CostKind cost_kind_from_string(std::string_view name);

struct LocalCost {
  CostKind kind = CostKind::zero_one;
};

double local_cost(const Trajectory& x, const Trajectory& y, const LocalCost& cost);

// G_t = (1/N) sum_i m_t^i for t = 1..T, returned with G[k] = G_{k+1}.
Vector aggregate_consumption(std::span<const Trajectory> trajs);

// Caps `nominal` at its `clip_quantile` quantile and spreads the removed mass uniformly
// over the day, so the mean is preserved and peaks are attenuated.
Vector make_tracking_signal(const Vector& nominal, double clip_quantile);

// Linear-interpolation quantile of the values in v, q in [0, 1].
double quantile(Vector v, double q);

} // namespace mcot
