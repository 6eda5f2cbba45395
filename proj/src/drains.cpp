#include "mcot/drains.hpp"

#include "mcot/rng.hpp"
#include "mcot/whmodel.hpp"

#include <charconv>
#include <cstring>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mcot {

namespace {

constexpr int kSlots = 144;
constexpr double kSlotMinutes = 10.0;

struct Bump {
  double hour;
  double height; // degC per slot
  double width;  // hours
};

} // namespace

DrainProfile DrainProfile::standard() {
  // Night floor, morning shower peak, late-morning and lunch activity, evening rise.
  static constexpr Bump bumps[] = {
      {7.0, 0.95, 0.55}, {9.5, 0.22, 1.1}, {12.75, 0.2, 0.7}, {19.5, 0.42, 1.1}, {21.75, 0.3, 0.8},
  };
  DrainProfile p;
  p.reference_sigma = reference_params().sigma;
  p.mean_loss.resize(kSlots);
  for (int j = 0; j < kSlots; ++j) {
    const double hour = (j + 0.5) * kSlotMinutes / 60.0;
    double v = hour >= 6.0 && hour <= 23.5 ? 0.05 : 0.015;
    for (const Bump& b : bumps) {
      const double z = (hour - b.hour) / b.width;
      v += b.height * std::exp(-0.5 * z * z);
    }
    p.mean_loss[j] = std::round(v * 1000.0) / 1000.0;
  }
  return p;
}

double DrainProfile::mean_loss_at(int t, double dt) const {
  if (mean_loss.empty()) return 0.0;
  const double mid = std::fmod((t + 0.5) * dt, 1440.0);
  const int slots = static_cast<int>(mean_loss.size());
  const double slot_minutes = 1440.0 / slots;
  // Linear interpolation between slot centres, wrapping around midnight.
  const double x = mid / slot_minutes - 0.5;
  const double fl = std::floor(x);
  const double frac = x - fl;
  const int j0 = ((static_cast<int>(fl) % slots) + slots) % slots;
  const int j1 = (j0 + 1) % slots;
  const double density = (1.0 - frac) * mean_loss[j0] + frac * mean_loss[j1];
  return amplitude * density * dt / slot_minutes;
}

void DrainProfile::validate() const {
  if (!(reference_sigma > 0.0)) throw ConfigError("DrainProfile: reference_sigma must be > 0");
  if (!(event_mean > 0.0)) throw ConfigError("DrainProfile: event_mean must be > 0");
  if (amplitude < 0.0) throw ConfigError("DrainProfile: amplitude must be >= 0");
  for (double v : mean_loss) {
    if (!(v >= 0.0)) throw ConfigError("DrainProfile: profile points must be >= 0");
  }
}

DrainScenario generate_drains(const DrainProfile& profile, Index n_agents, int horizon, double dt,
                              std::uint64_t seed, DrainSplit split) {
  if (n_agents <= 0 || horizon <= 0) throw ConfigError("generate_drains: empty scenario requested");
  profile.validate();
  DrainScenario s;
  s.split = split;
  s.drains.setZero(n_agents, horizon);
  const StreamPurpose purpose = split == DrainSplit::training ? StreamPurpose::drains_training
                                                              : StreamPurpose::drains_validation;
  std::vector<double> rate(static_cast<std::size_t>(horizon));
  for (int t = 0; t < horizon; ++t) rate[t] = profile.mean_loss_at(t, dt) / profile.event_mean;
  for (Index i = 0; i < n_agents; ++i) {
    Stream rng = Stream::derive(seed, purpose, static_cast<std::uint64_t>(i));
    for (int t = 0; t < horizon; ++t) {
      const int events = rng.poisson(rate[t]);
      double loss = 0.0;
      for (int e = 0; e < events; ++e) loss += rng.exponential(profile.event_mean);
      s.drains(i, t) = loss / profile.reference_sigma;
    }
  }
  return s;
}

void save_drains_csv(const DrainScenario& scenario, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  std::string buf = "agent,t,eps\n";
  char num[64];
  for (Index i = 0; i < scenario.agents(); ++i) {
    for (int t = 0; t < scenario.horizon(); ++t) {
      buf += std::to_string(i);
      buf += ',';
      buf += std::to_string(t);
      buf += ',';
      auto r = std::to_chars(num, num + sizeof num, scenario.drains(i, t), std::chars_format::general, 17);
      buf.append(num, r.ptr);
      buf += '\n';
    }
  }
  out << buf;
  if (!out) throw ConfigError("write failed for " + path);
}

DrainScenario load_drains_csv(const std::string& path, Index expected_agents, int expected_horizon,
                              DrainSplit split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open drain file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  const char* p = text.data();
  const char* end = p + text.size();
  auto next_line = [&](const char*& line_end) {
    line_end = static_cast<const char*>(std::memchr(p, '\n', static_cast<std::size_t>(end - p)));
    if (!line_end) line_end = end;
  };
  const char* le = nullptr;
  next_line(le);
  std::string header(p, le);
  if (!header.empty() && header.back() == '\r') header.pop_back();
  if (header != "agent,t,eps") throw ConfigError(path + ":1: expected header 'agent,t,eps'");
  p = le < end ? le + 1 : end;

  struct Cell {
    long agent;
    long t;
    double eps;
  };
  std::vector<Cell> cells;
  cells.reserve(text.size() / 24);
  long max_agent = -1, max_t = -1;
  std::size_t line_no = 1;
  while (p < end) {
    ++line_no;
    next_line(le);
    const char* q = p;
    const char* stop = le;
    if (stop > q && stop[-1] == '\r') --stop;
    if (q == stop) {
      p = le < end ? le + 1 : end;
      continue;
    }
    Cell c{};
    auto fail = [&] {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": malformed row");
    };
    auto r1 = std::from_chars(q, stop, c.agent);
    if (r1.ec != std::errc() || r1.ptr == stop || *r1.ptr != ',') fail();
    auto r2 = std::from_chars(r1.ptr + 1, stop, c.t);
    if (r2.ec != std::errc() || r2.ptr == stop || *r2.ptr != ',') fail();
    auto r3 = std::from_chars(r2.ptr + 1, stop, c.eps);
    if (r3.ec != std::errc() || r3.ptr != stop) fail();
    if (c.agent < 0 || c.t < 0) fail();
    if (!(c.eps >= 0.0)) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": drain must be >= 0");
    }
    max_agent = std::max(max_agent, c.agent);
    max_t = std::max(max_t, c.t);
    cells.push_back(c);
    p = le < end ? le + 1 : end;
  }
  if (cells.empty()) throw ConfigError(path + ": no drain rows");

  const Index agents = expected_agents >= 0 ? expected_agents : max_agent + 1;
  const int horizon = expected_horizon >= 0 ? expected_horizon : static_cast<int>(max_t + 1);
  if (static_cast<Index>(cells.size()) != agents * horizon || max_agent + 1 != agents ||
      max_t + 1 != horizon) {
    throw ConfigError(path + ": expected " + std::to_string(agents) + "x" + std::to_string(horizon) +
                      " drain rows, found " + std::to_string(cells.size()));
  }
  DrainScenario s;
  s.split = split;
  s.drains.setConstant(agents, horizon, -1.0);
  for (const Cell& c : cells) {
    double& slot = s.drains(c.agent, c.t);
    if (slot >= 0.0) throw ConfigError(path + ": duplicate row for agent " + std::to_string(c.agent));
    slot = c.eps;
  }
  return s;
}

} // namespace mcot
