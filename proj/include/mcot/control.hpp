#pragma once

#include "mcot/constraints.hpp"
#include "mcot/drains.hpp"
#include "mcot/dual.hpp"
#include "mcot/sampler.hpp"
#include "mcot/whmodel.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mcot {

struct AgentState {
  WhParams params;
  WhState state;
  int budget = 2;
  std::vector<double> train; // forecast drains, full day
  std::vector<double> truth; // realised drains, full day
};

struct PopulationState {
  std::vector<AgentState> agents;

  Index size() const noexcept { return static_cast<Index>(agents.size()); }
  int horizon() const noexcept {
    return agents.empty() ? 0 : static_cast<int>(agents.front().train.size());
  }
  // Throws ConfigError on an empty population, negative budgets or mismatched drains.
  void validate() const;
};

// Ranges of the physical description drawn uniformly per heater.
struct HeterogeneousRanges {
  double volume_low = 0.1, volume_high = 0.3;
  double height_low = 0.8, height_high = 2.0;
  double thickness_low = 0.02, thickness_high = 0.05;
  double power_low = 1500.0, power_high = 2900.0;

  void validate() const;
};

struct PopulationSpec {
  Index size = 200;
  bool heterogeneous = false;
  HeterogeneousRanges ranges;
  WhParams reference = reference_params();
  InitialDensity initial;
  int budget = 2;
};

// Parameters and initial states come from the population and initial-state streams of
// `seed`; drains are taken row by row from the two scenarios.
PopulationState make_population(const PopulationSpec& spec, const DrainScenario& train,
                                const DrainScenario& truth, std::uint64_t seed);

// Nominal aggregate consumption on the forecast or the realised drains.
Vector nominal_consumption(const PopulationState& pop, bool on_truth);

// sqrt(sum_t (g_t - r_t)^2) over the times where r is defined.
double tracking_error(const Vector& g, const Vector& signal);

struct Event {
  int agent; // -1 for population-level events
  int t;
  std::string kind;

  bool operator==(const Event&) const = default;
};

struct EvaluationOptions {
  SwitchProposal proposal;
  LocalCost cost;
  // 0 reuses the solver's final batch; otherwise a fresh batch of this size is drawn at
  // the final multipliers.
  int z_eval = 0;
  std::uint64_t seed = 0;
};

struct EvaluationResult {
  std::vector<SwitchSet> chosen;
  std::vector<Trajectory> trajectories; // chosen switch sets replayed on the realised drains
  Vector consumption;
  Vector violation; // population mean of f, per row
  double tracking_error = 0.0;
};

struct TrainEvaluateResult {
  SolveResult solve;
  EvaluationResult evaluation;
};

// Solve on the forecast drains, draw one switch set per agent with the final weights, and
// replay it on the realised drains.
TrainEvaluateResult train_evaluate(const PopulationState& pop, const ConstraintSet& cs,
                                   const SolverConfig& solver, const EvaluationOptions& options,
                                   const Vector& lambda0 = Vector());

struct MpcConfig {
  SolverConfig solver;
  int first_iterations = 0; // iterations of the cold first solve; 0 means solver.iterations
  int resolve_every = 1;
  int z_eval = 0;
  bool warm_start = true;
  // Extra weight on rows at the first planned step (1 + boost).
  double next_step_boost = 0.0;
  // Back-off subtracted from cap and ramp thresholds in every re-solve, as a share of
  // maximum consumption. Absorbs the gap between forecast and realized drains.
  double margin = 0.0;
  SwitchProposal proposal;
  LocalCost cost;

  void validate(int horizon) const;
};

struct MpcStep {
  int t;
  int iterations;
  Index rows;
  Index active;
  double max_violation;
  bool hit_cap;
};

struct RunResult {
  Vector consumption; // realised G_1..G_T
  Vector nominal;     // nominal G on the realised drains
  Vector signal;      // tracking target when there is one (NaN elsewhere)
  Vector violation_max;
  std::vector<Trajectory> committed;
  std::vector<Event> events;
  std::vector<MpcStep> steps;
  Vector lambda; // final multipliers
  double tracking_error = 0.0;
  double nominal_error = 0.0;
};

// Receding-horizon loop: at each re-solve time t the constraint set is re-rooted at t,
// trajectories restart from the current states with the remaining budgets, and only the
// steps up to the next re-solve are committed on the realised drains.
RunResult mpc_run(PopulationState pop, const ConstraintSet& cs, const MpcConfig& config);

// Pull interface for a signal revealed in real time. Loop step t may read indices up to
// t + 1; anything later throws.
class SignalStream {
public:
  struct Access {
    int index;
    int loop_step;
  };

  explicit SignalStream(Vector values) : values_(std::move(values)) {}

  double read(int index, int loop_step);
  int length() const noexcept { return static_cast<int>(values_.size()); }
  const std::vector<Access>& log() const noexcept { return log_; }
  bool causal() const;

private:
  Vector values_; // values_[k] is the target at time k + 1
  std::vector<Access> log_;
};

struct OnlineConfig {
  int inner_iterations = 20;
  double inner_step = 0.5;
  double feedback_step = 0.5;
  double epsilon = 0.1;
  double switch_probability = 0.5; // mass of the one-step flip in the sampling law
  LocalCost cost;
  std::uint64_t seed = 0;

  void validate() const;
};

// One scalar multiplier on the next-step tracking equality. Each step the multiplier is
// refined on the forecast drains, one step is committed on the realised drains, and the
// realised deviation feeds back into the multiplier.
RunResult online_run(PopulationState pop, SignalStream& signal, const OnlineConfig& config);

} // namespace mcot
