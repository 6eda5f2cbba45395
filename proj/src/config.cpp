#include "mcot/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace mcot {

using nlohmann::json;

namespace {

// Walks one JSON object, remembering which keys were read so leftovers can be reported.
class Reader {
public:
  Reader(const json& j, std::string pointer) : j_(j), pointer_(std::move(pointer)) {
    if (!j_.is_object()) fail("", "expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  void read(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }
  void read(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<int>();
    }
  }
  void read(const char* key, Index& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<Index>();
    }
  }
  void read(const char* key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned()) fail(key, "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void read(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) fail(key, "expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }
  void read(const char* key, std::vector<double>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) fail(key, "expected an array of numbers");
      out.clear();
      for (const json& e : *v) {
        if (!e.is_number()) fail(key, "expected an array of numbers");
        out.push_back(e.get<double>());
      }
    }
  }

  // Marks a key handled by the caller.
  void skip(const char* key) { take(key); }

  // Sub-object reader; an absent key yields an empty object.
  Reader child(const char* key) {
    const json* v = take(key);
    return Reader(v ? *v : empty(), pointer_ + "/" + key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(it.key(), "unknown key");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError(pointer_ + (key.empty() ? "" : "/" + key) + ": " + what);
  }

private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }
  const json* take(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& j_;
  std::string pointer_;
  std::set<std::string> seen_;
};

StepSchedule::Kind step_kind_from_string(const std::string& s) {
  if (s == "harmonic") return StepSchedule::Kind::harmonic;
  if (s == "constant") return StepSchedule::Kind::constant;
  throw ConfigError("/solver/step/kind: expected harmonic or constant");
}

void read_params(Reader r, WhParams& p) {
  r.read("theta_amb", p.theta_amb);
  r.read("theta_min", p.theta_min);
  r.read("theta_max", p.theta_max);
  r.read("dt", p.dt);
  PhysicalSpec phys = p.physical.value_or(PhysicalSpec{});
  Reader ph = r.child("physical");
  ph.read("volume", phys.volume);
  ph.read("height", phys.height);
  ph.read("insulation_thickness", phys.insulation_thickness);
  ph.read("resistance_power", phys.resistance_power);
  ph.finish();
  const DerivedParams d = derive_params(phys);
  p.rho = d.rho;
  p.sigma = d.sigma;
  p.p_max = d.p_max;
  p.physical = phys;
  r.finish();
}

} // namespace

bool in_window(int k, double dt, double from_hour, double to_hour) {
  const double hour = k * dt / 60.0;
  return hour >= from_hour && hour < to_hour;
}

void ExperimentConfig::validate() const {
  if (horizon < 1) throw ConfigError("/horizon: must be >= 1");
  population.reference.validate();
  population.initial.validate(population.reference);
  if (population.heterogeneous) population.ranges.validate();
  if (population.size < 1) throw ConfigError("/population/size: must be >= 1");
  if (population.budget < 0) throw ConfigError("/population/budget: must be >= 0");
  if (drains.source != "generator" && drains.source != "csv") {
    throw ConfigError("/drains/source: expected generator or csv");
  }
  if (drains.source == "csv" && (drains.train_csv.empty() || drains.validation_csv.empty())) {
    throw ConfigError("/drains: csv source needs train_csv and validation_csv");
  }
  if (!(drains.amplitude >= 0.0)) throw ConfigError("/drains/amplitude: must be >= 0");
  if (!(drains.event_mean > 0.0)) throw ConfigError("/drains/event_mean: must be > 0");
  const TrackingSpec& tr = constraints.tracking;
  if (!(tr.clip_quantile >= 0.0 && tr.clip_quantile <= 1.0)) {
    throw ConfigError("/constraints/tracking/clip_quantile: must lie in [0, 1]");
  }
  if (constraints.cap.enabled && !(constraints.cap.value >= 0.0 && constraints.cap.value <= 1.0)) {
    throw ConfigError("/constraints/cap/value: must lie in [0, 1]");
  }
  if (constraints.cap.enabled && !(constraints.cap.from_hour < constraints.cap.to_hour)) {
    throw ConfigError("/constraints/cap: from_hour must be < to_hour");
  }
  if (constraints.ramp.enabled && (!(constraints.ramp.up >= 0.0) || !(constraints.ramp.down >= 0.0))) {
    throw ConfigError("/constraints/ramp: bounds must be >= 0");
  }
  for (double w : proposal.cardinality_weights) {
    if (!(w >= 0.0)) throw ConfigError("/proposal/cardinality_weights: entries must be >= 0");
  }
  solver.validate();
  if (z_eval < 0) throw ConfigError("/evaluation/z_eval: must be >= 0");
  mpc.validate(horizon);
  online.validate();
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Reader root(j, "");
  root.read("seed", c.seed);
  root.read("output_dir", c.output_dir);
  root.read("horizon", c.horizon);

  {
    Reader p = root.child("population");
    p.read("size", c.population.size);
    p.read("heterogeneous", c.population.heterogeneous);
    p.read("budget", c.population.budget);
    Reader r = p.child("ranges");
    HeterogeneousRanges& g = c.population.ranges;
    std::vector<double> v;
    auto pair = [&](const char* key, double& lo, double& hi) {
      v = {lo, hi};
      r.read(key, v);
      if (v.size() != 2) r.fail(key, "expected [low, high]");
      lo = v[0];
      hi = v[1];
    };
    pair("volume", g.volume_low, g.volume_high);
    pair("height", g.height_low, g.height_high);
    pair("insulation_thickness", g.thickness_low, g.thickness_high);
    pair("resistance_power", g.power_low, g.power_high);
    r.finish();
    Reader init = p.child("initial");
    init.read("temp_low", c.population.initial.temp_low);
    init.read("temp_high", c.population.initial.temp_high);
    init.read("on_probability", c.population.initial.on_probability);
    init.finish();
    read_params(p.child("params"), c.population.reference);
    p.finish();
  }
  {
    Reader d = root.child("drains");
    d.read("source", c.drains.source);
    d.read("train_csv", c.drains.train_csv);
    d.read("validation_csv", c.drains.validation_csv);
    d.read("amplitude", c.drains.amplitude);
    d.read("event_mean", c.drains.event_mean);
    d.finish();
  }
  {
    Reader cs = root.child("constraints");
    Reader t = cs.child("tracking");
    t.read("enabled", c.constraints.tracking.enabled);
    t.read("clip_quantile", c.constraints.tracking.clip_quantile);
    t.read("signal_csv", c.constraints.tracking.signal_csv);
    t.finish();
    Reader cap = cs.child("cap");
    cap.read("enabled", c.constraints.cap.enabled);
    cap.read("value", c.constraints.cap.value);
    cap.read("from_hour", c.constraints.cap.from_hour);
    cap.read("to_hour", c.constraints.cap.to_hour);
    cap.finish();
    Reader ramp = cs.child("ramp");
    ramp.read("enabled", c.constraints.ramp.enabled);
    ramp.read("up", c.constraints.ramp.up);
    ramp.read("down", c.constraints.ramp.down);
    ramp.finish();
    cs.finish();
  }
  {
    std::string cost = std::string(to_string(c.cost.kind));
    root.read("cost", cost);
    c.cost.kind = cost_kind_from_string(cost);
  }
  {
    Reader p = root.child("proposal");
    p.read("cardinality_weights", c.proposal.cardinality_weights);
    p.read("per_outcome", c.proposal.per_outcome);
    p.finish();
  }
  {
    Reader s = root.child("solver");
    s.read("samples", c.solver.samples);
    s.read("iterations", c.solver.iterations);
    s.read("epsilon", c.solver.epsilon);
    s.read("ascent_on_violation", c.solver.ascent_on_violation);
    s.read("lambda_cap", c.solver.lambda_cap);
    Reader st = s.child("step");
    std::string kind = c.solver.step.kind == StepSchedule::Kind::harmonic ? "harmonic" : "constant";
    st.read("kind", kind);
    c.solver.step.kind = step_kind_from_string(kind);
    st.read("initial", c.solver.step.initial);
    st.read("half_life", c.solver.step.half_life);
    st.finish();
    s.finish();
  }
  {
    Reader e = root.child("evaluation");
    e.read("z_eval", c.z_eval);
    e.finish();
  }
  {
    Reader m = root.child("mpc");
    m.read("iterations", c.mpc.solver.iterations);
    m.read("first_iterations", c.mpc.first_iterations);
    m.read("resolve_every", c.mpc.resolve_every);
    m.read("z_eval", c.mpc.z_eval);
    m.read("warm_start", c.mpc.warm_start);
    m.read("next_step_boost", c.mpc.next_step_boost);
    m.read("margin", c.mpc.margin);
    m.finish();
  }
  {
    Reader o = root.child("online");
    o.read("inner_iterations", c.online.inner_iterations);
    o.read("inner_step", c.online.inner_step);
    o.read("feedback_step", c.online.feedback_step);
    o.read("epsilon", c.online.epsilon);
    o.read("switch_probability", c.online.switch_probability);
    o.finish();
  }
  root.finish();

  // Shared pieces: the loops inherit the solver, proposal, cost and master seed.
  const int mpc_iterations = c.mpc.solver.iterations;
  const bool mpc_iterations_set = j.contains("mpc") && j["mpc"].contains("iterations");
  c.mpc.solver = c.solver;
  if (mpc_iterations_set) c.mpc.solver.iterations = mpc_iterations;
  c.solver.seed = c.seed;
  c.mpc.solver.seed = c.seed;
  c.mpc.proposal = c.proposal;
  c.mpc.cost = c.cost;
  c.online.seed = c.seed;
  c.online.cost = c.cost;
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["horizon"] = c.horizon;
  const PopulationSpec& p = c.population;
  const HeterogeneousRanges& g = p.ranges;
  const PhysicalSpec phys = p.reference.physical.value_or(PhysicalSpec{});
  j["population"] = {
      {"size", p.size},
      {"heterogeneous", p.heterogeneous},
      {"budget", p.budget},
      {"ranges",
       {{"volume", {g.volume_low, g.volume_high}},
        {"height", {g.height_low, g.height_high}},
        {"insulation_thickness", {g.thickness_low, g.thickness_high}},
        {"resistance_power", {g.power_low, g.power_high}}}},
      {"initial",
       {{"temp_low", p.initial.temp_low},
        {"temp_high", p.initial.temp_high},
        {"on_probability", p.initial.on_probability}}},
      {"params",
       {{"theta_amb", p.reference.theta_amb},
        {"theta_min", p.reference.theta_min},
        {"theta_max", p.reference.theta_max},
        {"dt", p.reference.dt},
        {"physical",
         {{"volume", phys.volume},
          {"height", phys.height},
          {"insulation_thickness", phys.insulation_thickness},
          {"resistance_power", phys.resistance_power}}}}},
  };
  j["drains"] = {{"source", c.drains.source},
                 {"train_csv", c.drains.train_csv},
                 {"validation_csv", c.drains.validation_csv},
                 {"amplitude", c.drains.amplitude},
                 {"event_mean", c.drains.event_mean}};
  const ConstraintSpec& cs = c.constraints;
  j["constraints"] = {
      {"tracking",
       {{"enabled", cs.tracking.enabled},
        {"clip_quantile", cs.tracking.clip_quantile},
        {"signal_csv", cs.tracking.signal_csv}}},
      {"cap",
       {{"enabled", cs.cap.enabled},
        {"value", cs.cap.value},
        {"from_hour", cs.cap.from_hour},
        {"to_hour", cs.cap.to_hour}}},
      {"ramp", {{"enabled", cs.ramp.enabled}, {"up", cs.ramp.up}, {"down", cs.ramp.down}}},
  };
  j["cost"] = std::string(to_string(c.cost.kind));
  j["proposal"] = {{"cardinality_weights", c.proposal.cardinality_weights},
                   {"per_outcome", c.proposal.per_outcome}};
  j["solver"] = {{"samples", c.solver.samples},
                 {"iterations", c.solver.iterations},
                 {"epsilon", c.solver.epsilon},
                 {"ascent_on_violation", c.solver.ascent_on_violation},
                 {"step",
                  {{"kind", c.solver.step.kind == StepSchedule::Kind::harmonic ? "harmonic" : "constant"},
                   {"initial", c.solver.step.initial},
                   {"half_life", c.solver.step.half_life}}}};
  // JSON has no infinity; an absent cap means unbounded.
  if (std::isfinite(c.solver.lambda_cap)) j["solver"]["lambda_cap"] = c.solver.lambda_cap;
  j["evaluation"] = {{"z_eval", c.z_eval}};
  j["mpc"] = {{"iterations", c.mpc.solver.iterations},
              {"first_iterations", c.mpc.first_iterations},
              {"resolve_every", c.mpc.resolve_every},
              {"z_eval", c.mpc.z_eval},
              {"warm_start", c.mpc.warm_start},
              {"next_step_boost", c.mpc.next_step_boost},
              {"margin", c.mpc.margin}};
  j["online"] = {{"inner_iterations", c.online.inner_iterations},
                 {"inner_step", c.online.inner_step},
                 {"feedback_step", c.online.feedback_step},
                 {"epsilon", c.online.epsilon},
                 {"switch_probability", c.online.switch_probability}};
  return j;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

json constraints_to_json(const ConstraintSet& cs) {
  json rows = json::array();
  for (const ConstraintRow& r : cs.rows()) {
    rows.push_back({{"kind", std::string(to_string(r.kind))}, {"t", r.t}, {"threshold", r.threshold}});
  }
  return {{"horizon", cs.horizon()}, {"n_agents", cs.n_agents()}, {"rows", rows}};
}

ConstraintSet constraints_from_json(const json& j) {
  Reader r(j, "");
  int horizon = 0;
  Index n_agents = 1;
  r.read("horizon", horizon);
  r.read("n_agents", n_agents);
  ConstraintSet cs(horizon, n_agents);
  if (j.contains("rows")) {
    const json& rows = j.at("rows");
    if (!rows.is_array()) r.fail("rows", "expected an array");
    for (std::size_t k = 0; k < rows.size(); ++k) {
      Reader row(rows[k], "/rows/" + std::to_string(k));
      std::string kind;
      ConstraintRow out{RowKind::cap, 0, 0.0};
      row.read("kind", kind);
      row.read("t", out.t);
      row.read("threshold", out.threshold);
      row.finish();
      out.kind = row_kind_from_string(kind);
      cs.add_row(out);
    }
  }
  r.skip("rows");
  r.finish();
  return cs;
}

Vector load_signal_csv(const std::string& path, int horizon) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open signal " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("t,value", 0) != 0) {
    throw ConfigError(path + ": expected header t,value");
  }
  Vector v = Vector::Constant(horizon, std::numeric_limits<double>::quiet_NaN());
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    int t = -1;
    double value = 0.0;
    const char* end = line.data() + line.size();
    if (comma == std::string::npos ||
        std::from_chars(line.data(), line.data() + comma, t).ec != std::errc() ||
        std::from_chars(line.data() + comma + 1, end, value).ec != std::errc()) {
      throw ConfigError(path + ": malformed row '" + line + "'");
    }
    if (t < 0 || t >= horizon) throw ConfigError(path + ": t outside the horizon");
    v[t] = value;
    ++rows;
  }
  if (rows != horizon) throw ConfigError(path + ": expected " + std::to_string(horizon) + " rows");
  return v;
}

} // namespace mcot
