#include "mcot/control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mcot {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> tail(const std::vector<double>& v, int from) {
  return std::vector<double>(v.begin() + from, v.end());
}

// One switch set per agent, drawn with probability q_z w_z from the weighted batch.
std::vector<SwitchSet> choose_sets(const WhBatchSampler& sampler,
                                   const std::vector<AgentBatch>& batches,
                                   const WeightedBatch& weighted, std::uint64_t seed,
                                   std::uint64_t tag) {
  std::vector<SwitchSet> chosen(batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const AgentBatch& b = batches[i];
    const Vector& w = weighted.agents[i].w;
    Stream rng = Stream::derive(seed, {static_cast<std::uint64_t>(StreamPurpose::evaluation), tag,
                                       static_cast<std::uint64_t>(i)});
    double u = rng.uniform();
    Index pick = b.size() - 1;
    for (Index z = 0; z < b.size(); ++z) {
      u -= std::exp(b.log_mass[z]) * w[z];
      if (u < 0.0) {
        pick = z;
        break;
      }
    }
    chosen[i] = sampler.switch_set(static_cast<Index>(i), pick);
  }
  return chosen;
}

std::vector<AgentSetup> setups_from(const PopulationState& pop, int from) {
  std::vector<AgentSetup> setups;
  setups.reserve(pop.agents.size());
  for (const AgentState& a : pop.agents) {
    setups.push_back(AgentSetup{a.params, a.state, tail(a.train, from), a.budget});
  }
  return setups;
}

Vector mean_f(const ConstraintSet& cs, const std::vector<Trajectory>& trajs) {
  Vector acc = Vector::Zero(cs.size());
  for (const Trajectory& tr : trajs) acc += cs.evaluate(tr);
  return acc / static_cast<double>(trajs.size());
}

std::vector<SwitchSet> weighted_choice(const PopulationState& pop, WhBatchSampler& sampler,
                                       const SolveResult& sr, const MomentMap& map,
                                       double epsilon, int z_eval, const SwitchProposal& proposal,
                                       const LocalCost& cost, std::uint64_t seed,
                                       std::uint64_t tag, int from) {
  if (z_eval <= 0) return choose_sets(sampler, sr.final_batches, sr.final_weights, seed, tag);
  WhBatchSampler fresh(setups_from(pop, from), z_eval, proposal, cost, seed, tag | (1ULL << 40));
  std::vector<AgentBatch> batches;
  fresh.draw(0, batches);
  WeightedBatch wb;
  estimate_gradient(batches, fresh.agent_weights(), sr.lambda, map, epsilon, &wb);
  return choose_sets(fresh, batches, wb, seed, tag | (1ULL << 40));
}

} // namespace

void PopulationState::validate() const {
  if (agents.empty()) throw ConfigError("population: no agents");
  const int h = horizon();
  if (h < 1) throw ConfigError("population: empty drain rows");
  for (const AgentState& a : agents) {
    if (a.budget < 0) throw ConfigError("population: negative switch budget");
    if (static_cast<int>(a.train.size()) != h || static_cast<int>(a.truth.size()) != h) {
      throw ConfigError("population: drain rows must share the horizon");
    }
    a.params.validate();
  }
}

void HeterogeneousRanges::validate() const {
  const double lo[] = {volume_low, height_low, thickness_low, power_low};
  const double hi[] = {volume_high, height_high, thickness_high, power_high};
  for (int k = 0; k < 4; ++k) {
    if (!(lo[k] > 0.0) || !(lo[k] <= hi[k])) throw ConfigError("heterogeneous ranges: need 0 < low <= high");
  }
}

PopulationState make_population(const PopulationSpec& spec, const DrainScenario& train,
                                const DrainScenario& truth, std::uint64_t seed) {
  if (spec.size < 1) throw ConfigError("population: size must be >= 1");
  if (spec.budget < 0) throw ConfigError("population: budget must be >= 0");
  if (train.agents() < spec.size || truth.agents() < spec.size) {
    throw ConfigError("population: drain scenarios have fewer rows than agents");
  }
  if (train.horizon() != truth.horizon()) {
    throw ConfigError("population: training and validation drains differ in shape");
  }
  spec.reference.validate();
  spec.initial.validate(spec.reference);
  if (spec.heterogeneous) spec.ranges.validate();

  PopulationState pop;
  pop.agents.resize(static_cast<std::size_t>(spec.size));
  for (Index i = 0; i < spec.size; ++i) {
    AgentState& a = pop.agents[static_cast<std::size_t>(i)];
    a.params = spec.reference;
    if (spec.heterogeneous) {
      Stream rng = Stream::derive(seed, StreamPurpose::population, static_cast<std::uint64_t>(i));
      const HeterogeneousRanges& r = spec.ranges;
      PhysicalSpec phys;
      phys.volume = rng.uniform(r.volume_low, r.volume_high);
      phys.height = rng.uniform(r.height_low, r.height_high);
      phys.insulation_thickness = rng.uniform(r.thickness_low, r.thickness_high);
      phys.resistance_power = rng.uniform(r.power_low, r.power_high);
      const WhParams derived = WhParams::from_physical(phys);
      a.params.rho = derived.rho;
      a.params.sigma = derived.sigma;
      a.params.p_max = derived.p_max;
      a.params.physical = phys;
    }
    Stream init = Stream::derive(seed, StreamPurpose::initial_state, static_cast<std::uint64_t>(i));
    a.state = sample_initial(spec.initial, init);
    a.budget = spec.budget;
    const auto tr = train.row(i);
    const auto tv = truth.row(i);
    a.train.assign(tr.begin(), tr.end());
    a.truth.assign(tv.begin(), tv.end());
  }
  return pop;
}

Vector nominal_consumption(const PopulationState& pop, bool on_truth) {
  std::vector<Trajectory> trajs;
  trajs.reserve(pop.agents.size());
  for (const AgentState& a : pop.agents) {
    trajs.push_back(simulate(a.state, a.params, on_truth ? a.truth : a.train));
  }
  return aggregate_consumption(trajs);
}

double tracking_error(const Vector& g, const Vector& signal) {
  if (g.size() != signal.size()) throw std::invalid_argument("tracking_error: length mismatch");
  double acc = 0.0;
  for (Index k = 0; k < g.size(); ++k) {
    if (std::isnan(signal[k])) continue;
    const double d = g[k] - signal[k];
    acc += d * d;
  }
  return std::sqrt(acc);
}

TrainEvaluateResult train_evaluate(const PopulationState& pop, const ConstraintSet& cs,
                                   const SolverConfig& solver, const EvaluationOptions& options,
                                   const Vector& lambda0) {
  pop.validate();
  if (cs.horizon() != pop.horizon()) throw ConfigError("constraint horizon differs from the drains");
  WhBatchSampler sampler(setups_from(pop, 0), solver.samples, options.proposal, options.cost,
                         solver.seed);
  const MomentMap map = cs.moment_map();
  TrainEvaluateResult out;
  out.solve = solve(solver, sampler, map, lambda0);

  EvaluationResult& ev = out.evaluation;
  ev.chosen = weighted_choice(pop, sampler, out.solve, map, solver.epsilon, options.z_eval,
                              options.proposal, options.cost, options.seed, 0, 0);
  ev.trajectories.reserve(pop.agents.size());
  for (std::size_t i = 0; i < pop.agents.size(); ++i) {
    const AgentState& a = pop.agents[i];
    ev.trajectories.push_back(simulate(a.state, a.params, a.truth, ev.chosen[i]));
  }
  ev.consumption = aggregate_consumption(ev.trajectories);
  ev.violation = mean_f(cs, ev.trajectories);
  const auto signal = cs.tracking_signal();
  ev.tracking_error = signal ? tracking_error(ev.consumption, *signal) : kNaN;
  return out;
}

void MpcConfig::validate(int horizon) const {
  solver.validate();
  if (first_iterations < 0) throw ConfigError("mpc: first_iterations must be >= 0");
  if (resolve_every < 1 || horizon % resolve_every != 0) {
    throw ConfigError("mpc: resolve_every must divide the horizon");
  }
  if (z_eval < 0) throw ConfigError("mpc: z_eval must be >= 0");
  if (!(next_step_boost >= 0.0)) throw ConfigError("mpc: next_step_boost must be >= 0");
  if (!(margin >= 0.0)) throw ConfigError("mpc: margin must be >= 0");
}

RunResult mpc_run(PopulationState pop, const ConstraintSet& cs, const MpcConfig& config) {
  pop.validate();
  const int horizon = pop.horizon();
  if (cs.horizon() != horizon) throw ConfigError("constraint horizon differs from the drains");
  config.validate(horizon);

  RunResult out;
  out.nominal = nominal_consumption(pop, true);
  out.committed.resize(pop.agents.size());
  for (std::size_t i = 0; i < pop.agents.size(); ++i) {
    out.committed[i].states.reserve(static_cast<std::size_t>(horizon) + 1);
    out.committed[i].states.push_back(pop.agents[i].state);
  }
  out.lambda = Vector::Zero(cs.size());

  std::vector<SwitchSet> plan(pop.agents.size());
  int plan_start = 0;
  for (int t = 0; t < horizon; ++t) {
    if (t % config.resolve_every == 0) {
      std::vector<Index> origin;
      const ConstraintSet sub = cs.shifted(t, &origin);
      MomentMap map = sub.moment_map();
      if (config.margin > 0.0) {
        for (Index a = 0; a < sub.size(); ++a) {
          const RowKind k = sub.rows()[static_cast<std::size_t>(a)].kind;
          if (k == RowKind::cap || k == RowKind::ramp_upper || k == RowKind::ramp_lower) {
            map.offset[a] += config.margin;
          }
        }
      }
      if (config.next_step_boost > 0.0) {
        for (Index a = 0; a < sub.size(); ++a) {
          const ConstraintRow& r = sub.rows()[static_cast<std::size_t>(a)];
          const bool ramp = r.kind == RowKind::ramp_upper || r.kind == RowKind::ramp_lower;
          if ((ramp ? r.t : r.t - 1) == 0) {
            map.coefficients.row(a) *= 1.0 + config.next_step_boost;
            map.offset[a] *= 1.0 + config.next_step_boost;
          }
        }
      }
      SolverConfig sc = config.solver;
      if (t == 0 && config.first_iterations > 0) sc.iterations = config.first_iterations;
      Vector lambda0 = Vector::Zero(sub.size());
      if (config.warm_start) {
        for (Index a = 0; a < sub.size(); ++a) lambda0[a] = out.lambda[origin[static_cast<std::size_t>(a)]];
      }
      WhBatchSampler sampler(setups_from(pop, t), sc.samples, config.proposal, config.cost, sc.seed,
                             static_cast<std::uint64_t>(t) + 1);
      const SolveResult sr = solve(sc, sampler, map, lambda0);
      for (Index a = 0; a < sub.size(); ++a) out.lambda[origin[static_cast<std::size_t>(a)]] = sr.lambda[a];
      if (sr.hit_cap) out.events.push_back({-1, t, "lambda_cap"});
      plan = weighted_choice(pop, sampler, sr, map, sc.epsilon, config.z_eval, config.proposal,
                             config.cost, sc.seed, static_cast<std::uint64_t>(t) + 1, t);
      plan_start = t;
      MpcStep step;
      step.t = t;
      step.iterations = sc.iterations;
      step.rows = sub.size();
      step.active = (sr.lambda.array() > 0.0).count();
      step.max_violation = sub.size() > 0 ? std::max(0.0, sr.final_moment.maxCoeff()) : 0.0;
      step.hit_cap = sr.hit_cap;
      out.steps.push_back(step);
    }

    const int rel = t - plan_start;
    for (std::size_t i = 0; i < pop.agents.size(); ++i) {
      AgentState& a = pop.agents[i];
      Trajectory& tr = out.committed[i];
      const bool request = a.budget > 0 && std::find(plan[i].begin(), plan[i].end(), rel) != plan[i].end();
      bool flipped = false;
      a.state = controlled_step(a.state, a.params, a.truth[static_cast<std::size_t>(t)], request, &flipped);
      tr.states.push_back(a.state);
      if (request) tr.switches.push_back(t);
      if (flipped) {
        --a.budget;
        tr.effective.push_back(t);
        out.events.push_back({static_cast<int>(i), t, "switch"});
      }
    }
  }

  out.consumption = aggregate_consumption(out.committed);
  const auto signal = cs.tracking_signal();
  out.signal = signal ? *signal : Vector::Constant(horizon, kNaN);
  out.violation_max = cs.max_violation_by_time(mean_f(cs, out.committed));
  out.tracking_error = signal ? tracking_error(out.consumption, *signal) : kNaN;
  out.nominal_error = signal ? tracking_error(out.nominal, *signal) : kNaN;
  return out;
}

double SignalStream::read(int index, int loop_step) {
  if (index < 1 || index > length()) throw std::out_of_range("signal index outside the day");
  if (index > loop_step + 1) {
    throw std::logic_error("signal index " + std::to_string(index) + " read at step " +
                           std::to_string(loop_step));
  }
  log_.push_back({index, loop_step});
  return values_[index - 1];
}

bool SignalStream::causal() const {
  return std::all_of(log_.begin(), log_.end(),
                     [](const Access& a) { return a.index <= a.loop_step + 1; });
}

void OnlineConfig::validate() const {
  if (inner_iterations < 0) throw ConfigError("online: inner_iterations must be >= 0");
  if (!(inner_step >= 0.0) || !(feedback_step >= 0.0)) throw ConfigError("online: steps must be >= 0");
  if (!(epsilon > 0.0)) throw ConfigError("online: epsilon must be > 0");
  if (!(switch_probability > 0.0 && switch_probability < 1.0)) {
    throw ConfigError("online: switch_probability must lie in (0, 1)");
  }
}

RunResult online_run(PopulationState pop, SignalStream& signal, const OnlineConfig& config) {
  pop.validate();
  config.validate();
  const int horizon = pop.horizon();
  if (signal.length() < horizon) throw ConfigError("online: signal shorter than the horizon");
  const auto n = pop.agents.size();

  RunResult out;
  out.nominal = nominal_consumption(pop, true);
  out.signal = Vector::Constant(horizon, kNaN);
  out.lambda = Vector::Zero(horizon);
  out.committed.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.committed[i].states.push_back(pop.agents[i].state);

  std::vector<AgentBatch> batches(n);
  std::vector<bool> has_flip(n);
  const Vector agent_weights = Vector::Constant(static_cast<Index>(n), 1.0 / static_cast<double>(n));
  const double log_stay = std::log1p(-config.switch_probability);
  const double log_flip = std::log(config.switch_probability);
  Vector lambda = Vector::Zero(1);

  for (int t = 0; t < horizon; ++t) {
    const double r = signal.read(t + 1, t);
    out.signal[t] = r;
    const MomentMap map{Matrix::Ones(1, 1), Vector::Constant(1, -r)};

    // Two one-step outcomes per agent on the forecast drain: stay nominal, or flip now.
    for (std::size_t i = 0; i < n; ++i) {
      const AgentState& a = pop.agents[i];
      const double drain = a.train[static_cast<std::size_t>(t)];
      Trajectory x{{a.state, nominal_step(a.state, a.params, drain)}, {}, {}, 0.0};
      AgentBatch& b = batches[i];
      has_flip[i] = a.budget > 0;
      if (!has_flip[i]) {
        b.resize(1, 1);
        b.features(0, 0) = x.states[1].mode;
        b.cost[0] = 0.0;
        b.log_mass[0] = 0.0;
        continue;
      }
      bool flipped = false;
      Trajectory y{{a.state, controlled_step(a.state, a.params, drain, true, &flipped)}, {0}, {}, 0.0};
      if (flipped) y.effective.push_back(0);
      b.resize(2, 1);
      b.features(0, 0) = x.states[1].mode;
      b.features(1, 0) = y.states[1].mode;
      b.cost[0] = 0.0;
      b.cost[1] = local_cost(x, y, config.cost);
      b.log_mass << log_stay, log_flip;
    }

    for (int k = 0; k < config.inner_iterations; ++k) {
      const GradientEstimate est = estimate_gradient(batches, agent_weights, lambda, map, config.epsilon);
      if (!std::isfinite(est.gradient[0])) throw SolverError("online: non-finite deviation");
      lambda[0] += config.inner_step * est.gradient[0];
    }
    WeightedBatch wb;
    estimate_gradient(batches, agent_weights, lambda, map, config.epsilon, &wb);

    double on = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      AgentState& a = pop.agents[i];
      bool request = false;
      if (has_flip[i]) {
        Stream rng = Stream::derive(config.seed, StreamPurpose::online, i, static_cast<std::uint64_t>(t));
        const double p_flip = std::exp(batches[i].log_mass[1]) * wb.agents[i].w[1];
        request = rng.uniform() < p_flip;
      }
      bool flipped = false;
      a.state = controlled_step(a.state, a.params, a.truth[static_cast<std::size_t>(t)], request, &flipped);
      Trajectory& tr = out.committed[i];
      tr.states.push_back(a.state);
      if (request) tr.switches.push_back(t);
      if (flipped) {
        --a.budget;
        tr.effective.push_back(t);
        out.events.push_back({static_cast<int>(i), t, "switch"});
      }
      on += a.state.mode;
    }
    const double realised = on / static_cast<double>(n);
    lambda[0] += config.feedback_step * (realised - r);
    out.lambda[t] = lambda[0];
  }

  out.consumption = aggregate_consumption(out.committed);
  out.violation_max = (out.consumption - out.signal).cwiseAbs();
  out.tracking_error = tracking_error(out.consumption, out.signal);
  out.nominal_error = tracking_error(out.nominal, out.signal);
  return out;
}

} // namespace mcot
