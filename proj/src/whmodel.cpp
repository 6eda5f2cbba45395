#include "mcot/whmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace mcot {

DerivedParams derive_params(const PhysicalSpec& spec, const MaterialConstants& constants) {
  if (!(spec.volume > 0.0) || !(spec.height > 0.0) || !(spec.insulation_thickness > 0.0) ||
      !(spec.resistance_power > 0.0)) {
    throw ConfigError("derive_params: physical values must be strictly positive");
  }
  if (!(constants.insulation_conductivity > 0.0) || !(constants.water_heat_capacity > 0.0) ||
      !(constants.water_density > 0.0)) {
    throw ConfigError("derive_params: material constants must be strictly positive");
  }
  const double pi = std::numbers::pi;
  const double radius = std::sqrt(spec.volume / (pi * spec.height));
  const double area = 2.0 * pi * radius * spec.height + 2.0 * pi * radius * radius;
  const double u = constants.insulation_conductivity / spec.insulation_thickness;
  const double capacity = constants.water_density * constants.water_heat_capacity * spec.volume;
  return DerivedParams{u * area / capacity * 60.0, 1.0 / capacity, spec.resistance_power};
}

WhParams WhParams::from_physical(const PhysicalSpec& spec, const MaterialConstants& constants) {
  const DerivedParams d = derive_params(spec, constants);
  WhParams p;
  p.rho = d.rho;
  p.sigma = d.sigma;
  p.p_max = d.p_max;
  p.physical = spec;
  return p;
}

void WhParams::validate() const {
  if (!(rho > 0.0)) throw ConfigError("WhParams: rho must be > 0");
  if (!(sigma > 0.0)) throw ConfigError("WhParams: sigma must be > 0");
  if (!(p_max > 0.0)) throw ConfigError("WhParams: p_max must be > 0");
  if (!(theta_min < theta_max)) throw ConfigError("WhParams: theta_min must be < theta_max");
  if (!(dt > 0.0)) throw ConfigError("WhParams: dt must be > 0");
  if (physical) {
    const DerivedParams d = derive_params(*physical);
    if (d.rho != rho || d.sigma != sigma || d.p_max != p_max) {
      throw ConfigError("WhParams: rho/sigma/p_max do not match the physical description");
    }
  }
}

WhParams reference_params() { return WhParams::from_physical(PhysicalSpec{}); }

Vector Trajectory::modes() const {
  Vector m(static_cast<Index>(states.size()));
  for (std::size_t t = 0; t < states.size(); ++t) m[static_cast<Index>(t)] = states[t].mode;
  return m;
}

WhState controlled_step(const WhState& state, const WhParams& params, double drain, int t,
                        std::span<const int> switches, bool* flipped) {
  const bool flip = std::find(switches.begin(), switches.end(), t) != switches.end();
  return controlled_step(state, params, drain, flip, flipped);
}

Trajectory simulate(const WhState& initial, const WhParams& params, std::span<const double> drains,
                    const SwitchSet& switches) {
  Trajectory traj;
  traj.switches = switches;
  traj.states.reserve(drains.size() + 1);
  traj.states.push_back(initial);
  for (std::size_t t = 0; t < drains.size(); ++t) {
    bool flipped = false;
    traj.states.push_back(controlled_step(traj.states.back(), params, drains[t],
                                          static_cast<int>(t), switches, &flipped));
    if (flipped) traj.effective.push_back(static_cast<int>(t));
  }
  return traj;
}

std::string check_trajectory(const Trajectory& traj, const WhParams& params,
                             std::span<const double> drains, int budget) {
  std::ostringstream err;
  if (traj.states.size() != drains.size() + 1) {
    err << "length " << traj.states.size() << " does not match " << drains.size() << " drains";
    return err.str();
  }
  int flips = 0;
  for (std::size_t t = 0; t < drains.size(); ++t) {
    const WhState& cur = traj.states[t];
    const WhState& next = traj.states[t + 1];
    const double expected = step_temperature(cur, params, drains[t]);
    if (std::abs(next.theta - expected) > 1e-12 * std::max(1.0, std::abs(expected))) {
      err << "temperature mismatch at t=" << t;
      return err.str();
    }
    if (next.mode != 0 && next.mode != 1) {
      err << "invalid mode at t=" << t + 1;
      return err.str();
    }
    if (next.theta >= params.theta_max) {
      if (next.mode != 0) {
        err << "thermostat should be Off at t=" << t + 1;
        return err.str();
      }
    } else if (next.theta <= params.theta_min) {
      if (next.mode != 1) {
        err << "thermostat should be On at t=" << t + 1;
        return err.str();
      }
    } else if (next.mode != cur.mode) {
      const bool listed = std::find(traj.switches.begin(), traj.switches.end(),
                                    static_cast<int>(t)) != traj.switches.end();
      if (!listed) {
        err << "unlisted in-band flip at t=" << t;
        return err.str();
      }
      ++flips;
    }
  }
  if (flips > budget) {
    err << flips << " in-band flips exceed budget " << budget;
    return err.str();
  }
  return {};
}

void InitialDensity::validate(const WhParams& params) const {
  if (!(temp_low <= temp_high)) throw ConfigError("InitialDensity: temp_low > temp_high");
  if (temp_low < params.theta_min || temp_high > params.theta_max) {
    throw ConfigError("InitialDensity: temperature range outside the comfort band");
  }
  if (!(on_probability >= 0.0 && on_probability <= 1.0)) {
    throw ConfigError("InitialDensity: on_probability outside [0,1]");
  }
}

WhState sample_initial(const InitialDensity& density, Stream& rng) {
  WhState s;
  s.theta = rng.uniform(density.temp_low, density.temp_high);
  s.mode = rng.bernoulli(density.on_probability) ? 1 : 0;
  return s;
}

double log_binomial(int n, int k) {
  if (k < 0 || k > n) return -std::numeric_limits<double>::infinity();
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

double SwitchProposal::cardinality_probability(int k, int horizon, int budget) const {
  const int kmax = std::min(std::max(budget, 0), std::max(horizon, 0));
  if (k < 0 || k > kmax) return 0.0;
  // Work in logs: C(144, k) overflows nothing here, but relaxed budgets can be large.
  std::vector<double> logw(static_cast<std::size_t>(kmax) + 1);
  double top = -std::numeric_limits<double>::infinity();
  for (int j = 0; j <= kmax; ++j) {
    const double w = j < static_cast<int>(cardinality_weights.size()) ? cardinality_weights[j] : 1.0;
    double lw = w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity();
    if (per_outcome) lw += log_binomial(horizon, j);
    logw[j] = lw;
    top = std::max(top, lw);
  }
  if (!std::isfinite(top)) return k == 0 ? 1.0 : 0.0;
  double total = 0.0;
  for (double lw : logw) total += std::exp(lw - top);
  return std::exp(logw[k] - top) / total;
}

double SwitchProposal::log_pmf(const SwitchSet& set, int horizon, int budget) const {
  const int k = static_cast<int>(set.size());
  return std::log(cardinality_probability(k, horizon, budget)) - log_binomial(horizon, k);
}

SwitchSet SwitchProposal::draw(int horizon, int budget, Stream& rng) const {
  const int kmax = std::min(std::max(budget, 0), std::max(horizon, 0));
  int k = 0;
  if (kmax > 0) {
    double u = rng.uniform();
    for (k = 0; k < kmax; ++k) {
      u -= cardinality_probability(k, horizon, budget);
      if (u < 0.0) break;
    }
  }
  SwitchSet set;
  set.reserve(static_cast<std::size_t>(k));
  // Floyd's algorithm: k distinct values from [0, horizon).
  for (int j = horizon - k; j < horizon; ++j) {
    const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(j) + 1));
    if (std::find(set.begin(), set.end(), t) == set.end()) {
      set.push_back(t);
    } else {
      set.push_back(j);
    }
  }
  std::sort(set.begin(), set.end());
  return set;
}

Trajectory sample_controlled(const WhState& initial, const WhParams& params,
                             std::span<const double> drains, int budget,
                             const SwitchProposal& proposal, Stream& rng) {
  const int horizon = static_cast<int>(drains.size());
  SwitchSet set = proposal.draw(horizon, budget, rng);
  const double lp = proposal.log_pmf(set, horizon, budget);
  Trajectory traj = simulate(initial, params, drains, set);
  traj.log_proposal = lp;
  return traj;
}

} // namespace mcot
