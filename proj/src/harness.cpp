#include "mcot/harness.hpp"

#include "mcot/oracle.hpp"
#include "mcot/sampler.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

namespace mcot {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double v) {
  if (std::isnan(v)) return {};
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out << text;
  if (!out) throw ConfigError("write failed for " + path);
}

void write_json(const std::string& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

void write_events(const std::string& path, const std::vector<Event>& events) {
  std::string s = "agent,t,kind\n";
  for (const Event& e : events) s += std::to_string(e.agent) + "," + std::to_string(e.t) + "," + e.kind + "\n";
  write_file(path, s);
}

void write_solver_trace(const std::string& path, const std::vector<TraceRow>& trace) {
  std::string s = "k,step,gradient_norm,max_violation,active,dual_value,normalization_error\n";
  for (const TraceRow& r : trace) {
    s += std::to_string(r.k) + "," + num(r.step) + "," + num(r.gradient_norm) + "," +
         num(r.max_violation) + "," + std::to_string(r.active) + "," + num(r.dual_value) + "," +
         num(r.normalization_error) + "\n";
  }
  write_file(path, s);
}

json lambda_json(const Vector& lambda, const ConstraintSet& cs, double epsilon) {
  return {{"epsilon", epsilon},
          {"lambda", std::vector<double>(lambda.data(), lambda.data() + lambda.size())},
          {"constraints", constraints_to_json(cs)}};
}

double max_or_zero(const Vector& v) {
  double m = 0.0;
  for (Index k = 0; k < v.size(); ++k) {
    if (!std::isnan(v[k])) m = std::max(m, v[k]);
  }
  return m;
}

} // namespace

std::pair<DrainScenario, DrainScenario> load_or_generate_drains(const ExperimentConfig& config) {
  const Index n = config.population.size;
  if (config.drains.source == "csv") {
    return {load_drains_csv(config.drains.train_csv, n, config.horizon, DrainSplit::training),
            load_drains_csv(config.drains.validation_csv, n, config.horizon, DrainSplit::validation)};
  }
  DrainProfile profile = DrainProfile::standard();
  profile.amplitude = config.drains.amplitude;
  profile.event_mean = config.drains.event_mean;
  const double dt = config.population.reference.dt;
  return {generate_drains(profile, n, config.horizon, dt, config.seed, DrainSplit::training),
          generate_drains(profile, n, config.horizon, dt, config.seed, DrainSplit::validation)};
}

ConstraintSet build_constraints(const ExperimentConfig& config, const PopulationState& pop) {
  const int horizon = config.horizon;
  const double dt = config.population.reference.dt;
  ConstraintSet cs(horizon, pop.size());
  const ConstraintSpec& spec = config.constraints;
  if (spec.tracking.enabled) {
    const Vector signal = spec.tracking.signal_csv.empty()
                              ? make_tracking_signal(nominal_consumption(pop, false),
                                                     spec.tracking.clip_quantile)
                              : load_signal_csv(spec.tracking.signal_csv, horizon);
    cs.add_tracking(signal);
  }
  if (spec.cap.enabled) {
    Vector bound = Vector::Constant(horizon, kNaN);
    for (int k = 0; k < horizon; ++k) {
      if (in_window(k, dt, spec.cap.from_hour, spec.cap.to_hour)) bound[k] = spec.cap.value;
    }
    cs.add_cap(bound);
  }
  if (spec.ramp.enabled && horizon > 1) {
    cs.add_ramp(Vector::Constant(horizon - 1, spec.ramp.up), Vector::Constant(horizon - 1, spec.ramp.down));
  }
  return cs;
}

RunInputs prepare_inputs(const ExperimentConfig& config) {
  config.validate();
  RunInputs in;
  std::tie(in.train, in.truth) = load_or_generate_drains(config);
  in.population = make_population(config.population, in.train, in.truth, config.seed);
  in.constraints = build_constraints(config, in.population);
  return in;
}

void write_consumption_csv(const std::string& path, double dt, const Vector& nominal,
                           const Vector& signal, const Vector& controlled,
                           const Vector& violation_max) {
  std::string s = "t,time_of_day,nominal,signal,controlled,violation_max\n";
  for (Index k = 0; k < nominal.size(); ++k) {
    s += std::to_string(k) + "," + num(static_cast<double>(k) * dt / 60.0) + "," + num(nominal[k]) +
         "," + num(signal[k]) + "," + num(controlled[k]) + "," + num(violation_max[k]) + "\n";
  }
  write_file(path, s);
}

int budget_violations(const std::vector<Trajectory>& committed, const PopulationState& initial) {
  int bad = 0;
  for (std::size_t i = 0; i < committed.size(); ++i) {
    const AgentState& a = initial.agents[i];
    if (!check_trajectory(committed[i], a.params, a.truth, a.budget).empty()) ++bad;
  }
  return bad;
}

std::vector<VerifyCheck> run_verification(std::uint64_t seed, int instances) {
  std::vector<VerifyCheck> checks;
  auto add = [&](std::string name, double value, double tol) {
    checks.push_back({std::move(name), value, tol, value <= tol});
  };
  double gap = 0.0, dual_gap = 0.0, feas = 0.0, fd = 0.0, var = 0.0, marg = 0.0;
  for (int k = 0; k < instances; ++k) {
    Stream rng = Stream::derive(seed, StreamPurpose::testing, static_cast<std::uint64_t>(k));
    oracle::RandomInstanceSpec spec;
    spec.points = 12 + 4 * (k % 4);
    spec.blocks = 1 + k % 3;
    spec.constraints = 1 + k % 3;
    spec.epsilon = k % 2 == 0 ? 0.5 : 0.05;
    const oracle::FiniteInstance inst = oracle::random_instance(spec, rng);
    const oracle::PrimalSolution primal = oracle::solve_primal(inst);
    const SolveResult dual = oracle::solve_exhaustive(inst, 20000);
    gap = std::max(gap, std::abs(oracle::exact_dual_value(inst, dual.lambda) - primal.value));
    dual_gap = std::max(dual_gap, std::abs(primal.duality_gap));
    feas = std::max(feas, oracle::exact_moment(inst, dual.lambda).maxCoeff());
    const Vector row_sums = primal.plan.rowwise().sum();
    marg = std::max(marg, (row_sums - inst.mu1).cwiseAbs().maxCoeff());

    Vector lambda(inst.constraints());
    Vector dir(inst.constraints());
    for (Index a = 0; a < lambda.size(); ++a) {
      lambda[a] = rng.uniform(0.0, 0.5);
      dir[a] = rng.uniform(-1.0, 1.0);
    }
    dir.normalize();
    const double h = 1e-5;
    const double num_d = (oracle::exact_dual_value(inst, lambda + h * dir) -
                          oracle::exact_dual_value(inst, lambda - h * dir)) / (2.0 * h);
    // d phi*/d lambda = <mu^lambda, f>.
    const double exact_d = oracle::exact_moment(inst, lambda).dot(dir);
    fd = std::max(fd, std::abs(num_d - exact_d) / std::max(1e-12, std::abs(exact_d)));

    const Vector q = inst.mu2;
    var = std::max(var, std::abs(oracle::enumerated_estimator_variance(inst, lambda, 0, q) -
                                 oracle::closed_form_estimator_variance(inst, lambda, 0)));
  }
  add("strong_duality_abs_gap", gap, 1e-4);
  add("primal_duality_gap", dual_gap, 1e-6);
  add("dual_solution_max_moment", feas, 1e-4);
  add("primal_first_marginal", marg, 1e-10);
  add("finite_difference_rel_error", fd, 1e-7);
  add("variance_formula_abs_error", var, 1e-8);
  return checks;
}

bool run_command(const std::string& command, const ExperimentConfig& config, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const auto path = [&](const char* name) { return (fs::path(out_dir) / name).string(); };
  json resolved = config_to_json(config);
  resolved["output_dir"] = out_dir;
  resolved["command"] = command;
  write_json(path("config.resolved.json"), resolved);

  if (command == "verify") {
    const auto checks = run_verification(config.seed, 8);
    json list = json::array();
    bool ok = true;
    for (const VerifyCheck& c : checks) {
      list.push_back({{"name", c.name}, {"value", c.value}, {"tolerance", c.tolerance}, {"pass", c.pass}});
      ok = ok && c.pass;
    }
    write_json(path("summary.json"), {{"command", command}, {"pass", ok}, {"checks", list}});
    return ok;
  }

  if (command == "gen-drains") {
    const auto [train, truth] = load_or_generate_drains(config);
    save_drains_csv(train, path("drains_train.csv"));
    save_drains_csv(truth, path("drains_validation.csv"));
    write_json(path("summary.json"), {{"command", command},
                                      {"agents", train.agents()},
                                      {"horizon", train.horizon()},
                                      {"train_mean", train.drains.mean()},
                                      {"validation_mean", truth.drains.mean()}});
    return true;
  }

  const RunInputs in = prepare_inputs(config);
  const ConstraintSet& cs = in.constraints;
  const double dt = config.population.reference.dt;
  const auto target = cs.tracking_signal();
  const Vector signal = target ? *target : Vector::Constant(config.horizon, kNaN);
  json summary = {{"command", command},
                  {"agents", in.population.size()},
                  {"horizon", config.horizon},
                  {"rows", cs.size()}};

  if (command == "simulate-nominal") {
    std::vector<Trajectory> trajs;
    for (const AgentState& a : in.population.agents) trajs.push_back(simulate(a.state, a.params, a.truth));
    const Vector g = aggregate_consumption(trajs);
    Vector mean = Vector::Zero(cs.size());
    for (const Trajectory& tr : trajs) mean += cs.evaluate(tr);
    mean /= static_cast<double>(trajs.size());
    const Vector viol = cs.max_violation_by_time(mean);
    write_consumption_csv(path("consumption.csv"), dt, g, signal, g, viol);
    const double err = target ? tracking_error(g, signal) : kNaN;
    summary["tracking_error"] = num_or_null(err);
    summary["nominal_error"] = num_or_null(err);
    summary["max_violation"] = max_or_zero(viol);
    summary["mean_consumption"] = g.mean();
    summary["peak_consumption"] = g.maxCoeff();
  } else if (command == "solve") {
    std::vector<AgentSetup> setups;
    for (const AgentState& a : in.population.agents) setups.push_back({a.params, a.state, a.train, a.budget});
    WhBatchSampler sampler(std::move(setups), config.solver.samples, config.proposal, config.cost, config.seed);
    const SolveResult sr = solve(config.solver, sampler, cs.moment_map());
    write_solver_trace(path("trace.csv"), sr.trace);
    write_json(path("lambda.json"), lambda_json(sr.lambda, cs, config.solver.epsilon));
    summary["max_violation"] = cs.size() > 0 ? std::max(0.0, sr.final_moment.maxCoeff()) : 0.0;
    summary["dual_value"] = sr.trace.empty() ? 0.0 : sr.trace.back().dual_value;
    summary["hit_cap"] = sr.hit_cap;
    summary["max_normalization_error"] = sr.trace.empty() ? 0.0 : sr.trace.back().normalization_error;
  } else if (command == "evaluate") {
    EvaluationOptions opt{config.proposal, config.cost, config.z_eval, config.seed};
    const TrainEvaluateResult r = train_evaluate(in.population, cs, config.solver, opt);
    const EvaluationResult& ev = r.evaluation;
    const Vector nominal = nominal_consumption(in.population, true);
    const Vector viol = cs.max_violation_by_time(ev.violation);
    write_consumption_csv(path("consumption.csv"), dt, nominal, signal, ev.consumption, viol);
    write_solver_trace(path("trace.csv"), r.solve.trace);
    std::vector<Event> events;
    for (std::size_t i = 0; i < ev.trajectories.size(); ++i) {
      for (int t : ev.trajectories[i].effective) events.push_back({static_cast<int>(i), t, "switch"});
    }
    write_events(path("events.csv"), events);
    write_json(path("lambda.json"), lambda_json(r.solve.lambda, cs, config.solver.epsilon));
    summary["tracking_error"] = num_or_null(ev.tracking_error);
    summary["nominal_error"] = num_or_null(target ? tracking_error(nominal, signal) : kNaN);
    summary["max_violation"] = max_or_zero(viol);
    summary["budget_violations"] = budget_violations(ev.trajectories, in.population);
    summary["switches"] = events.size();
  } else if (command == "mpc") {
    const RunResult r = mpc_run(in.population, cs, config.mpc);
    write_consumption_csv(path("consumption.csv"), dt, r.nominal, r.signal, r.consumption, r.violation_max);
    std::string s = "t,iterations,rows,active,max_violation,hit_cap\n";
    for (const MpcStep& st : r.steps) {
      s += std::to_string(st.t) + "," + std::to_string(st.iterations) + "," + std::to_string(st.rows) + "," +
           std::to_string(st.active) + "," + num(st.max_violation) + "," + (st.hit_cap ? "1" : "0") + "\n";
    }
    write_file(path("trace.csv"), s);
    write_events(path("events.csv"), r.events);
    write_json(path("lambda.json"), lambda_json(r.lambda, cs, config.solver.epsilon));
    summary["tracking_error"] = num_or_null(r.tracking_error);
    summary["nominal_error"] = num_or_null(r.nominal_error);
    summary["max_violation"] = max_or_zero(r.violation_max);
    summary["budget_violations"] = budget_violations(r.committed, in.population);
    summary["peak_consumption"] = r.consumption.maxCoeff();
  } else if (command == "online") {
    if (!target) throw ConfigError("/constraints/tracking: online runs need a tracking signal");
    SignalStream stream(signal);
    const RunResult r = online_run(in.population, stream, config.online);
    write_consumption_csv(path("consumption.csv"), dt, r.nominal, r.signal, r.consumption, r.violation_max);
    std::string s = "t,signal,controlled,lambda\n";
    for (int t = 0; t < config.horizon; ++t) {
      s += std::to_string(t) + "," + num(r.signal[t]) + "," + num(r.consumption[t]) + "," + num(r.lambda[t]) + "\n";
    }
    write_file(path("trace.csv"), s);
    std::string c = "index,loop_step\n";
    for (const SignalStream::Access& a : stream.log()) {
      c += std::to_string(a.index) + "," + std::to_string(a.loop_step) + "\n";
    }
    write_file(path("causality.csv"), c);
    write_events(path("events.csv"), r.events);
    summary["tracking_error"] = num_or_null(r.tracking_error);
    summary["nominal_error"] = num_or_null(r.nominal_error);
    summary["max_violation"] = max_or_zero(r.violation_max);
    summary["budget_violations"] = budget_violations(r.committed, in.population);
    summary["causal"] = stream.causal();
  } else {
    throw ConfigError("unknown command '" + command + "'");
  }
  write_json(path("summary.json"), summary);
  return true;
}

} // namespace mcot
