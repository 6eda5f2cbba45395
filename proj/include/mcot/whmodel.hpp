#pragma once

#include "mcot/rng.hpp"
#include "mcot/types.hpp"

#include <optional>
#include <span>
#include <vector>

namespace mcot {

// Geometry and power of a cylindrical tank.
struct PhysicalSpec {
  double volume = 0.2;                 // m^3
  double height = 1.4;                 // m
  double insulation_thickness = 0.035; // m
  double resistance_power = 2200.0;    // W
};

struct MaterialConstants {
  double insulation_conductivity = 0.04; // W/(m K)
  double water_heat_capacity = 4186.0;   // J/(kg K)
  double water_density = 1000.0;         // kg/m^3
};

struct DerivedParams {
  double rho;   // 1/min
  double sigma; // degC/J
  double p_max; // W
};

// sigma = 1/(rho_w c_w V), rho = U A sigma * 60 with U = k/thickness and A the
// closed-cylinder surface of a tank of volume V and height h.
DerivedParams derive_params(const PhysicalSpec& spec, const MaterialConstants& constants = {});

struct WhParams {
  double rho = 0.0;          // heat-loss fraction per minute
  double sigma = 0.0;        // degC per joule
  double p_max = 0.0;        // W
  double theta_amb = 20.0;   // degC
  double theta_min = 50.0;   // degC
  double theta_max = 65.0;   // degC
  double dt = 10.0;          // minutes
  std::optional<PhysicalSpec> physical;

  static WhParams from_physical(const PhysicalSpec& spec, const MaterialConstants& constants = {});

  // Joule heating over one interval when On (the power term integrates over dt in seconds).
  double heating_per_interval() const noexcept { return sigma * p_max * dt * 60.0; }
  double loss_per_interval() const noexcept { return rho * dt; }

  // Throws ConfigError when an invariant does not hold.
  void validate() const;
};

// Reference homogeneous heater: midpoints of the heterogeneous ranges.
WhParams reference_params();

struct WhState {
  double theta = 0.0;
  int mode = 0; // 0 Off, 1 On

  bool operator==(const WhState&) const = default;
};

// Sorted, distinct step indices t in [0, T) at which the controller requests a flip
// of m_{t+1} relative to m_t.
using SwitchSet = std::vector<int>;

struct Trajectory {
  std::vector<WhState> states;      // index 0..T
  SwitchSet switches;               // requested switch times
  std::vector<int> effective;       // subset of switches that flipped the mode in band
  double log_proposal = 0.0;

  int horizon() const noexcept { return static_cast<int>(states.size()) - 1; }
  Vector modes() const;
};

// theta' = theta - rho dt (theta - theta_amb) + sigma dt m p_max - sigma eps, with eps the
// drain energy of the interval.
inline double step_temperature(const WhState& state, const WhParams& params, double drain) {
  return state.theta - params.loss_per_interval() * (state.theta - params.theta_amb) +
         params.heating_per_interval() * state.mode - params.sigma * drain;
}

// Nominal step plus a forced flip when `flip` is set and the new temperature lies in
// the band. Thermostat crossings take priority. `flipped` reports whether the flip took
// effect.
inline WhState controlled_step(const WhState& state, const WhParams& params, double drain,
                               bool flip, bool* flipped = nullptr) {
  WhState next{step_temperature(state, params, drain), state.mode};
  bool did_flip = false;
  if (next.theta >= params.theta_max) {
    next.mode = 0;
  } else if (next.theta <= params.theta_min) {
    next.mode = 1;
  } else if (flip) {
    next.mode = 1 - state.mode;
    did_flip = true;
  }
  if (flipped) *flipped = did_flip;
  return next;
}

inline WhState nominal_step(const WhState& state, const WhParams& params, double drain) {
  return controlled_step(state, params, drain, false);
}

WhState controlled_step(const WhState& state, const WhParams& params, double drain, int t,
                        std::span<const int> switches, bool* flipped = nullptr);

Trajectory simulate(const WhState& initial, const WhParams& params, std::span<const double> drains,
                    const SwitchSet& switches = {});

// Returns an empty string when `traj` is consistent with the dynamics on `drains` and uses
// at most `budget` in-band flips; otherwise a description of the first violation.
std::string check_trajectory(const Trajectory& traj, const WhParams& params,
                             std::span<const double> drains, int budget);

struct InitialDensity {
  double temp_low = 50.0;
  double temp_high = 65.0;
  double on_probability = 0.25;

  void validate(const WhParams& params) const;
};

WhState sample_initial(const InitialDensity& density, Stream& rng);

// Sampling law over switch sets. A set is drawn by first choosing its size k in
// [0, min(budget, horizon)] and then k distinct times uniformly. Size probabilities
// are proportional to `cardinality_weights[k]` (missing entries count as 1), further
// multiplied by C(horizon, k) when `per_outcome` is set, which makes every admissible
// set equally likely.
struct SwitchProposal {
  std::vector<double> cardinality_weights;
  bool per_outcome = false;

  // Probability of drawing a set of size k.
  double cardinality_probability(int k, int horizon, int budget) const;
  double log_pmf(const SwitchSet& set, int horizon, int budget) const;
  SwitchSet draw(int horizon, int budget, Stream& rng) const;
};

Trajectory sample_controlled(const WhState& initial, const WhParams& params,
                             std::span<const double> drains, int budget,
                             const SwitchProposal& proposal, Stream& rng);

double log_binomial(int n, int k);

} // namespace mcot
