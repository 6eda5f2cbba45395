#pragma once

#include "mcot/config.hpp"
#include "mcot/control.hpp"
#include "mcot/drains.hpp"

#include <string>
#include <vector>

namespace mcot {

// Everything a run needs, built deterministically from the config.
struct RunInputs {
  DrainScenario train;
  DrainScenario truth;
  PopulationState population;
  ConstraintSet constraints;
};

std::pair<DrainScenario, DrainScenario> load_or_generate_drains(const ExperimentConfig& config);
ConstraintSet build_constraints(const ExperimentConfig& config, const PopulationState& pop);
RunInputs prepare_inputs(const ExperimentConfig& config);

// Columns t,time_of_day,nominal,signal,controlled,violation_max; NaN prints as an empty field.
void write_consumption_csv(const std::string& path, double dt, const Vector& nominal,
                           const Vector& signal, const Vector& controlled,
                           const Vector& violation_max);

// Number of agents whose committed trajectory fails the dynamics or exceeds `budget`.
int budget_violations(const std::vector<Trajectory>& committed, const PopulationState& initial);

struct VerifyCheck {
  std::string name;
  double value;
  double tolerance;
  bool pass;
};

// Oracle invariants on random finite instances: strong duality against the dual solver,
// finite-difference gradients, and the estimator variance formula.
std::vector<VerifyCheck> run_verification(std::uint64_t seed, int instances);

// Runs one subcommand and writes its artifacts to `out_dir`. Throws ConfigError or
// SolverError; returns false when a `verify` check fails.
bool run_command(const std::string& command, const ExperimentConfig& config, const std::string& out_dir);

} // namespace mcot
