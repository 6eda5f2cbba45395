#pragma once

#include "mcot/constraints.hpp"
#include "mcot/dual.hpp"
#include "mcot/whmodel.hpp"

#include <cstdint>
#include <vector>

namespace mcot {

// Everything needed to sample one heater's controlled trajectories over a horizon.
struct AgentSetup {
  WhParams params;
  WhState start;
  std::vector<double> drains; // one entry per interval of the horizon
  int budget = 2;
};

// Draws Z switch sets per agent from the proposal and simulates them from the agent's
// own initial state, so all samples of an agent share Y_0 = X_0. Features are the modes
// m_0..m_H; the cost compares each sample with the agent's nominal trajectory.
class WhBatchSampler final : public BatchSampler {
public:
  WhBatchSampler(std::vector<AgentSetup> agents, int samples, SwitchProposal proposal,
                 LocalCost cost, std::uint64_t seed, std::uint64_t stream_tag = 0);

  Index agents() const override { return static_cast<Index>(agents_.size()); }
  Index feature_dim() const override { return horizon_ + 1; }
  void draw(std::uint64_t iteration, std::vector<AgentBatch>& batches) override;

  int horizon() const noexcept { return horizon_; }
  int samples() const noexcept { return samples_; }
  const AgentSetup& setup(Index agent) const { return agents_[static_cast<std::size_t>(agent)]; }
  const Trajectory& nominal(Index agent) const { return nominal_[static_cast<std::size_t>(agent)]; }
  // Switch set of sample z from the most recent draw.
  SwitchSet switch_set(Index agent, Index z) const;

private:
  void draw_agent(Index agent, std::uint64_t iteration, AgentBatch& batch);

  std::vector<AgentSetup> agents_;
  int horizon_ = 0;
  int samples_ = 0;
  SwitchProposal proposal_;
  LocalCost cost_;
  std::uint64_t seed_;
  std::uint64_t tag_;
  int max_budget_ = 0;
  std::vector<Trajectory> nominal_;
  std::vector<double> nominal_energy_;
  // cumulative[b][k]: P(|S| <= k) for an agent with budget b.
  std::vector<std::vector<double>> cumulative_;
  std::vector<int> sets_;           // agents x samples x max_budget
  std::vector<std::uint16_t> counts_; // agents x samples
};

// ell_0 for a concrete pair of trajectories.
double ell0(const Trajectory& x, const Trajectory& y, const Vector& lambda, const ConstraintSet& cs,
            const LocalCost& cost);

} // namespace mcot
