#pragma once

#include "mcot/constraints.hpp"
#include "mcot/control.hpp"
#include "mcot/dual.hpp"
#include "mcot/whmodel.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>

namespace mcot {

struct DrainSpec {
  std::string source = "generator"; // generator | csv
  std::string train_csv;
  std::string validation_csv;
  double amplitude = 1.0;
  double event_mean = 2.0;
};

struct TrackingSpec {
  bool enabled = false;
  double clip_quantile = 0.8;
  std::string signal_csv; // optional `t,value` file replacing the clipped nominal
};

// Cap on G over times whose time of day lies in [from_hour, to_hour).
struct CapSpec {
  bool enabled = false;
  double value = 0.3;
  double from_hour = 0.0;
  double to_hour = 24.0;
};

struct RampSpec {
  bool enabled = false;
  double up = 0.01;
  double down = 0.01;
};

struct ConstraintSpec {
  TrackingSpec tracking;
  CapSpec cap;
  RampSpec ramp;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  int horizon = 144;
  PopulationSpec population;
  DrainSpec drains;
  ConstraintSpec constraints;
  LocalCost cost;
  SwitchProposal proposal;
  SolverConfig solver;
  int z_eval = 0;
  MpcConfig mpc;       // its solver, proposal and cost are taken from the fields above
  OnlineConfig online; // seed and cost likewise

  void validate() const;
};

// Strict reader: unknown keys and wrong types raise ConfigError naming the JSON pointer.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::string& path);

nlohmann::json constraints_to_json(const ConstraintSet& cs);
ConstraintSet constraints_from_json(const nlohmann::json& j);

// Times k in [0, horizon) with k dt / 60 in [from_hour, to_hour).
bool in_window(int k, double dt, double from_hour, double to_hour);

// `t,value` CSV, one row per interval.
Vector load_signal_csv(const std::string& path, int horizon);

} // namespace mcot
