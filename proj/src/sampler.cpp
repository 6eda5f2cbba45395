#include "mcot/sampler.hpp"

#include <algorithm>
#include <cmath>

namespace mcot {

WhBatchSampler::WhBatchSampler(std::vector<AgentSetup> agents, int samples, SwitchProposal proposal,
                               LocalCost cost, std::uint64_t seed, std::uint64_t stream_tag)
    : agents_(std::move(agents)), samples_(samples), proposal_(std::move(proposal)), cost_(cost),
      seed_(seed), tag_(stream_tag) {
  if (agents_.empty()) throw ConfigError("sampler: empty population");
  if (samples_ < 1) throw ConfigError("sampler: samples must be >= 1");
  horizon_ = static_cast<int>(agents_.front().drains.size());
  if (horizon_ < 1) throw ConfigError("sampler: horizon must be >= 1");
  nominal_.reserve(agents_.size());
  nominal_energy_.reserve(agents_.size());
  for (const AgentSetup& a : agents_) {
    if (static_cast<int>(a.drains.size()) != horizon_) {
      throw ConfigError("sampler: all agents must share the horizon");
    }
    if (a.budget < 0) throw ConfigError("sampler: negative switch budget");
    max_budget_ = std::max(max_budget_, std::min(a.budget, horizon_));
    nominal_.push_back(simulate(a.start, a.params, a.drains));
    double on = 0.0;
    for (int t = 0; t < horizon_; ++t) on += nominal_.back().states[t].mode;
    nominal_energy_.push_back(on);
  }
  cumulative_.resize(static_cast<std::size_t>(max_budget_) + 1);
  for (int b = 0; b <= max_budget_; ++b) {
    double acc = 0.0;
    for (int k = 0; k <= b; ++k) {
      acc += proposal_.cardinality_probability(k, horizon_, b);
      cumulative_[b].push_back(acc);
    }
  }
  sets_.assign(agents_.size() * static_cast<std::size_t>(samples_) * std::max(1, max_budget_), 0);
  counts_.assign(agents_.size() * static_cast<std::size_t>(samples_), 0);
}

SwitchSet WhBatchSampler::switch_set(Index agent, Index z) const {
  const std::size_t slot = static_cast<std::size_t>(agent) * samples_ + static_cast<std::size_t>(z);
  const int* first = sets_.data() + slot * std::max(1, max_budget_);
  return SwitchSet(first, first + counts_[slot]);
}

void WhBatchSampler::draw(std::uint64_t iteration, std::vector<AgentBatch>& batches) {
  batches.resize(agents_.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (Index i = 0; i < agents(); ++i) {
    draw_agent(i, iteration, batches[static_cast<std::size_t>(i)]);
  }
}

void WhBatchSampler::draw_agent(Index i, std::uint64_t iteration, AgentBatch& batch) {
  const AgentSetup& a = agents_[static_cast<std::size_t>(i)];
  const Trajectory& nom = nominal_[static_cast<std::size_t>(i)];
  const int budget = std::min(a.budget, horizon_);
  const std::vector<double>& cdf = cumulative_[static_cast<std::size_t>(budget)];
  const WhParams& p = a.params;
  const Index dim = horizon_ + 1;
  if (batch.features.rows() != samples_ || batch.features.cols() != dim) {
    batch.resize(samples_, dim);
  }
  Stream rng = Stream::derive(seed_, {static_cast<std::uint64_t>(StreamPurpose::solver), tag_,
                                      static_cast<std::uint64_t>(i), iteration});
  const int stride = std::max(1, max_budget_);
  int times[256];

  for (int z = 0; z < samples_; ++z) {
    // Size, then distinct uniform times (Floyd), as in SwitchProposal::draw.
    int k = 0;
    if (budget > 0) {
      const double u = rng.uniform();
      while (k < budget && u >= cdf[static_cast<std::size_t>(k)]) ++k;
    }
    k = std::min(k, 256);
    int n = 0;
    for (int j = horizon_ - k; j < horizon_; ++j) {
      const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(j) + 1));
      const bool seen = std::find(times, times + n, t) != times + n;
      times[n++] = seen ? j : t;
    }
    std::sort(times, times + n);
    const std::size_t slot = static_cast<std::size_t>(i) * samples_ + static_cast<std::size_t>(z);
    std::copy(times, times + n, sets_.begin() + static_cast<std::ptrdiff_t>(slot * stride));
    counts_[slot] = static_cast<std::uint16_t>(n);

    double* row = batch.features.row(z).data();
    const int first = n > 0 ? times[0] : horizon_;
    for (int t = 0; t <= first; ++t) row[t] = nom.states[static_cast<std::size_t>(t)].mode;

    int flips = 0;
    WhState s = nom.states[static_cast<std::size_t>(first)];
    int next_switch = 0;
    for (int t = first; t < horizon_; ++t) {
      bool flip = false;
      if (next_switch < n && times[next_switch] == t) {
        flip = true;
        ++next_switch;
      }
      bool flipped = false;
      s = controlled_step(s, p, a.drains[static_cast<std::size_t>(t)], flip, &flipped);
      flips += flipped ? 1 : 0;
      row[t + 1] = s.mode;
    }
    double c = 0.0;
    switch (cost_.kind) {
    case CostKind::zero_one: c = flips > 0 ? 1.0 : 0.0; break;
    case CostKind::switch_count: c = flips; break;
    case CostKind::energy_difference: {
      double on = 0.0;
      for (int t = 0; t < horizon_; ++t) on += row[t];
      c = std::abs(on - nominal_energy_[static_cast<std::size_t>(i)]) / horizon_;
      break;
    }
    case CostKind::final_temperature_gap:
      c = n > 0 ? std::abs(s.theta - nom.states.back().theta) : 0.0;
      break;
    }
    batch.cost[z] = c;
  }
  batch.log_mass.setConstant(samples_, -std::log(static_cast<double>(samples_)));
}

double ell0(const Trajectory& x, const Trajectory& y, const Vector& lambda, const ConstraintSet& cs,
            const LocalCost& cost) {
  if (x.states.front() != y.states.front()) {
    throw std::invalid_argument("ell0: trajectories must share their initial state");
  }
  return ell0(lambda, cs.evaluate(y), local_cost(x, y, cost));
}

} // namespace mcot
