#pragma once

#include "mcot/types.hpp"

#include <span>
#include <string>
#include <vector>

namespace mcot {

// Daily draw-off profile. `mean_loss` holds the average temperature drop (degC on a tank
// with `reference_sigma`) caused by drains in each 10-minute slot of the day.
struct DrainProfile {
  std::vector<double> mean_loss;
  double event_mean = 2.0;       // mean degC lost per draw event
  double reference_sigma = 0.0;  // degC/J
  double amplitude = 1.0;

  // Bimodal profile: sharp morning peak near 7:00 and a broad evening rise.
  static DrainProfile standard();

  // Mean degC loss over interval t of length dt minutes.
  double mean_loss_at(int t, double dt) const;
  void validate() const;
};

enum class DrainSplit { training, validation };

// Per-agent, per-interval drain energies (J). Rows are agents, columns are intervals.
struct DrainScenario {
  RowMatrix drains;
  DrainSplit split = DrainSplit::training;

  Index agents() const noexcept { return drains.rows(); }
  int horizon() const noexcept { return static_cast<int>(drains.cols()); }
  std::span<const double> row(Index agent) const {
    return {drains.data() + agent * drains.cols(), static_cast<std::size_t>(drains.cols())};
  }
};

// Poisson draw events with a time-of-day intensity following `profile`; event sizes
// are exponential. Deterministic in `seed`; the two splits use independent streams.
DrainScenario generate_drains(const DrainProfile& profile, Index n_agents, int horizon, double dt,
                              std::uint64_t seed, DrainSplit split);

// CSV with header `agent,t,eps`, values printed with 17 significant digits.
void save_drains_csv(const DrainScenario& scenario, const std::string& path);

// Throws ConfigError on malformed or empty files, or when the shape differs from the
// expected one (pass a negative value to accept any).
DrainScenario load_drains_csv(const std::string& path, Index expected_agents = -1,
                              int expected_horizon = -1, DrainSplit split = DrainSplit::training);

} // namespace mcot
