#include "mcot/oracle.hpp"

#include "mcot/logsumexp.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mcot::oracle {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool in_support(const FiniteInstance& inst, Index x, Index y) {
  return inst.block[static_cast<std::size_t>(x)] == inst.block[static_cast<std::size_t>(y)] &&
         inst.mu2[y] > 0.0;
}

// Log of the unnormalised Gibbs kernel mu2(y) exp(ell(x, y)/eps) over the block of x;
// -inf outside the support.
Matrix log_kernel(const FiniteInstance& inst, const Vector& lambda) {
  const Index n = inst.points();
  const Vector lf = inst.constraints() > 0 ? Vector(inst.f * lambda) : Vector::Zero(n);
  Matrix lk(n, n);
  for (Index x = 0; x < n; ++x) {
    for (Index y = 0; y < n; ++y) {
      lk(x, y) = in_support(inst, x, y)
                     ? std::log(inst.mu2[y]) + (-lf[y] - inst.cost(x, y)) / inst.epsilon
                     : kNegInf;
    }
  }
  return lk;
}

void check_lambda(const FiniteInstance& inst, const Vector& lambda) {
  if (lambda.size() != inst.constraints()) {
    throw std::invalid_argument("oracle: lambda has the wrong size");
  }
}

} // namespace

void FiniteInstance::validate() const {
  const Index n = points();
  if (n < 1 || n > kMaxPoints) throw ConfigError("finite instance: need 1..256 points");
  if (mu2.size() != n || static_cast<Index>(block.size()) != n || f.rows() != n ||
      cost.rows() != n || cost.cols() != n) {
    throw ConfigError("finite instance: inconsistent table sizes");
  }
  if ((mu1.array() < 0.0).any() || (mu2.array() < 0.0).any()) {
    throw ConfigError("finite instance: negative probability");
  }
  if (std::abs(mu1.sum() - 1.0) > 1e-12 || std::abs(mu2.sum() - 1.0) > 1e-12) {
    throw ConfigError("finite instance: laws must sum to 1");
  }
  if ((cost.array() < 0.0).any() || cost.diagonal().cwiseAbs().maxCoeff() != 0.0) {
    throw ConfigError("finite instance: cost must be >= 0 with a zero diagonal");
  }
  if (!f.allFinite() || !cost.allFinite()) throw ConfigError("finite instance: non-finite table");
  if (!(epsilon > 0.0)) throw ConfigError("finite instance: epsilon must be > 0");
}

double exact_dual_value(const FiniteInstance& inst, const Vector& lambda) {
  check_lambda(inst, lambda);
  const Matrix lk = log_kernel(inst, lambda);
  double value = 0.0;
  for (Index x = 0; x < inst.points(); ++x) {
    if (inst.mu1[x] == 0.0) continue;
    value -= inst.mu1[x] * inst.epsilon * log_sum_exp(lk.row(x));
  }
  return value;
}

Matrix exact_plan(const FiniteInstance& inst, const Vector& lambda) {
  check_lambda(inst, lambda);
  Matrix plan = log_kernel(inst, lambda);
  for (Index x = 0; x < inst.points(); ++x) {
    if (inst.mu1[x] == 0.0) {
      plan.row(x).setZero();
      continue;
    }
    auto row = plan.row(x);
    softmax_inplace(row);
    row *= inst.mu1[x];
  }
  return plan;
}

Vector exact_controlled_law(const FiniteInstance& inst, const Vector& lambda) {
  return exact_plan(inst, lambda).colwise().sum().transpose();
}

Vector exact_moment(const FiniteInstance& inst, const Vector& lambda) {
  return inst.f.transpose() * exact_controlled_law(inst, lambda);
}

Matrix exact_conditional_covariance(const FiniteInstance& inst, const Vector& lambda) {
  const Matrix plan = exact_plan(inst, lambda);
  const Index a = inst.constraints();
  Matrix cov = Matrix::Zero(a, a);
  for (Index x = 0; x < inst.points(); ++x) {
    if (inst.mu1[x] == 0.0) continue;
    const Vector p = plan.row(x).transpose() / inst.mu1[x];
    const Vector mean = inst.f.transpose() * p;
    cov += inst.mu1[x] * (inst.f.transpose() * p.asDiagonal() * inst.f - mean * mean.transpose());
  }
  return cov;
}

double primal_objective(const FiniteInstance& inst, const Matrix& plan) {
  double value = 0.0;
  for (Index x = 0; x < inst.points(); ++x) {
    for (Index y = 0; y < inst.points(); ++y) {
      const double p = plan(x, y);
      if (p <= 0.0) continue;
      value += p * inst.cost(x, y) + inst.epsilon * p * std::log(p / (inst.mu1[x] * inst.mu2[y]));
    }
  }
  return value;
}

PrimalSolution solve_primal(const FiniteInstance& inst, const PrimalOptions& options) {
  inst.validate();
  const Index n = inst.points();
  const Index na = inst.constraints();

  // Feasibility pre-solve: every row must admit a plan, one constraint at a time.
  for (Index x = 0; x < n; ++x) {
    if (inst.mu1[x] == 0.0) continue;
    bool any = false;
    for (Index y = 0; y < n; ++y) any = any || in_support(inst, x, y);
    if (!any) throw SolverError("infeasible: a point of mu1 has no admissible target");
  }
  for (Index a = 0; a < na; ++a) {
    double best = 0.0;
    for (Index x = 0; x < n; ++x) {
      if (inst.mu1[x] == 0.0) continue;
      double lo = std::numeric_limits<double>::infinity();
      for (Index y = 0; y < n; ++y) {
        if (in_support(inst, x, y)) lo = std::min(lo, inst.f(y, a));
      }
      best += inst.mu1[x] * lo;
    }
    if (best > 0.0) throw SolverError("infeasible: row " + std::to_string(a) + " cannot be met");
  }

  Matrix plan = Matrix::Zero(n, n);
  for (Index x = 0; x < n; ++x) {
    for (Index y = 0; y < n; ++y) {
      if (inst.mu1[x] > 0.0 && in_support(inst, x, y)) {
        plan(x, y) = inst.mu1[x] * inst.mu2[y] * std::exp(-inst.cost(x, y) / inst.epsilon);
      }
    }
  }
  Vector u = Vector::Zero(na);
  auto rescale_rows = [&] {
    for (Index x = 0; x < n; ++x) {
      const double s = plan.row(x).sum();
      if (s > 0.0) plan.row(x) *= inst.mu1[x] / s;
    }
  };

  long sweep = 0;
  for (; sweep < options.max_sweeps; ++sweep) {
    rescale_rows();
    const Vector col0 = plan.colwise().sum().transpose();
    const Vector moments = inst.f.transpose() * col0;
    bool done = true;
    for (Index a = 0; a < na; ++a) {
      if (moments[a] > options.tolerance) done = false;
      if (u[a] > 0.0 && moments[a] < -options.tolerance) done = false;
    }
    if (done) break;

    for (Index a = 0; a < na; ++a) {
      const Vector col = plan.colwise().sum().transpose();
      const auto fa = inst.f.col(a);
      // h(d) = sum_y col(y) f(y) exp(-d f(y)) is decreasing in d. All terms share a
      // positive shift, which keeps the sign of h and the Newton ratio h/h'.
      auto eval = [&](double d, double& h, double& dh) {
        double top = kNegInf;
        for (Index y = 0; y < n; ++y) {
          if (col[y] > 0.0) top = std::max(top, -d * fa[y]);
        }
        h = 0.0;
        dh = 0.0;
        for (Index y = 0; y < n; ++y) {
          if (col[y] <= 0.0) continue;
          const double e = col[y] * std::exp(-d * fa[y] - top);
          h += e * fa[y];
          dh -= e * fa[y] * fa[y];
        }
      };
      double lo = -u[a];
      double h = 0.0;
      double dh = 0.0;
      eval(lo, h, dh);
      double delta = lo;
      if (h > 0.0) {
        double hi = lo + 1.0;
        int doublings = 0;
        for (eval(hi, h, dh); h > 0.0; eval(hi, h, dh)) {
          if (++doublings > 80) throw SolverError("infeasible: multiplier diverges");
          hi = lo + 2.0 * (hi - lo);
        }
        delta = 0.5 * (lo + hi);
        for (int it = 0; it < 200; ++it) {
          eval(delta, h, dh);
          if (h == 0.0) break;
          if (h > 0.0) lo = delta;
          else hi = delta;
          double next = dh < 0.0 ? delta - h / dh : 0.5 * (lo + hi);
          if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
          if (std::abs(next - delta) <= 1e-16 * std::max(1.0, std::abs(delta))) {
            delta = next;
            break;
          }
          delta = next;
        }
      }
      if (delta == 0.0) continue;
      for (Index y = 0; y < n; ++y) plan.col(y) *= std::exp(-delta * fa[y]);
      u[a] = std::max(0.0, u[a] + delta);
      if (u[a] > 1e12) throw SolverError("infeasible: multiplier diverges");
    }
  }
  if (sweep >= options.max_sweeps) throw SolverError("solve_primal: no convergence");

  PrimalSolution sol;
  sol.plan = std::move(plan);
  sol.value = primal_objective(inst, sol.plan);
  sol.lambda = inst.epsilon * u;
  sol.duality_gap = sol.value - exact_dual_value(inst, sol.lambda);
  sol.sweeps = sweep;
  return sol;
}

SolveResult solve_exhaustive(const FiniteInstance& inst, int iterations) {
  EnumerationSampler sampler(inst);
  SolverConfig config;
  config.iterations = iterations;
  config.epsilon = inst.epsilon;
  config.step.kind = StepSchedule::Kind::constant;
  const double bound = inst.f.rowwise().squaredNorm().maxCoeff();
  config.step.initial = bound > 0.0 ? inst.epsilon / bound : 1.0;
  return solve(config, sampler, MomentMap::identity(inst.constraints()));
}

Vector exact_weights(const FiniteInstance& inst, const Vector& lambda) {
  const Vector law = exact_controlled_law(inst, lambda);
  Vector w = Vector::Zero(inst.points());
  for (Index y = 0; y < inst.points(); ++y) {
    if (inst.mu2[y] > 0.0) w[y] = law[y] / inst.mu2[y];
  }
  return w;
}

double enumerated_estimator_variance(const FiniteInstance& inst, const Vector& lambda, Index a,
                                     const Vector& q) {
  const Vector law = exact_controlled_law(inst, lambda);
  double mean = 0.0;
  for (Index y = 0; y < inst.points(); ++y) {
    if (q[y] > 0.0) mean += law[y] * inst.f(y, a);
  }
  double var = 0.0;
  for (Index y = 0; y < inst.points(); ++y) {
    if (q[y] <= 0.0) continue;
    const double v = law[y] / q[y] * inst.f(y, a) - mean;
    var += q[y] * v * v;
  }
  return var;
}

double closed_form_estimator_variance(const FiniteInstance& inst, const Vector& lambda, Index a) {
  const Vector law = exact_controlled_law(inst, lambda);
  const Vector w = exact_weights(inst, lambda);
  const auto fa = inst.f.col(a).array();
  const double m = (fa * law.array()).sum();
  return (fa.square() * w.array() * law.array()).sum() - m * m;
}

Vector zero_variance_law(const FiniteInstance& inst, const Vector& lambda, Index a) {
  const Vector law = exact_controlled_law(inst, lambda);
  Vector q(inst.points());
  for (Index y = 0; y < inst.points(); ++y) {
    if (law[y] > 0.0 && !(inst.f(y, a) > 0.0)) {
      throw std::invalid_argument("zero_variance_law: f must be positive on the support");
    }
    q[y] = law[y] * std::max(inst.f(y, a), 0.0);
  }
  return q / q.sum();
}

FiniteInstance random_instance(const RandomInstanceSpec& spec, Stream& rng) {
  if (spec.points < 1 || spec.points > kMaxPoints || spec.blocks < 1 || spec.constraints < 0) {
    throw ConfigError("random_instance: bad sizes");
  }
  const Index n = spec.points;
  FiniteInstance inst;
  inst.epsilon = spec.epsilon;
  inst.mu1.resize(n);
  inst.mu2.resize(n);
  inst.block.resize(static_cast<std::size_t>(n));
  for (Index x = 0; x < n; ++x) {
    inst.mu1[x] = rng.uniform(0.2, 1.0);
    inst.mu2[x] = rng.uniform(0.2, 1.0);
    inst.block[static_cast<std::size_t>(x)] = static_cast<int>(x % spec.blocks);
  }
  inst.mu1 /= inst.mu1.sum();
  inst.mu2 /= inst.mu2.sum();
  inst.cost.resize(n, n);
  for (Index x = 0; x < n; ++x) {
    for (Index y = 0; y < n; ++y) inst.cost(x, y) = x == y ? 0.0 : rng.uniform();
  }
  const Index na = spec.constraints;
  Matrix g(n, na);
  for (Index y = 0; y < n; ++y) {
    for (Index a = 0; a < na; ++a) g(y, a) = spec.positive_f ? rng.uniform(0.5, 1.5) : rng.uniform(-1.0, 1.0);
  }
  inst.f = g;
  if (spec.positive_f || na == 0) return inst;

  // nu0: second marginal of the product coupling restricted to blocks.
  Vector block_mu1 = Vector::Zero(spec.blocks);
  Vector block_mu2 = Vector::Zero(spec.blocks);
  for (Index x = 0; x < n; ++x) {
    block_mu1[inst.block[static_cast<std::size_t>(x)]] += inst.mu1[x];
    block_mu2[inst.block[static_cast<std::size_t>(x)]] += inst.mu2[x];
  }
  Vector nu0(n);
  for (Index y = 0; y < n; ++y) {
    const int b = inst.block[static_cast<std::size_t>(y)];
    nu0[y] = block_mu1[b] * inst.mu2[y] / block_mu2[b];
  }
  inst.f.setZero();
  const Vector mu0 = exact_controlled_law(inst, Vector::Zero(na));
  for (Index a = 0; a < na; ++a) {
    const double at_nu0 = nu0.dot(g.col(a));
    const double at_mu0 = mu0.dot(g.col(a));
    const double gap = at_mu0 - at_nu0;
    const double level = gap > 1e-3 ? at_nu0 + 0.4 * gap : at_nu0 + 0.05;
    inst.f.col(a) = g.col(a).array() - level;
  }
  return inst;
}

std::string instance_to_json(const FiniteInstance& inst) {
  nlohmann::json j;
  j["epsilon"] = inst.epsilon;
  j["mu1"] = std::vector<double>(inst.mu1.data(), inst.mu1.data() + inst.mu1.size());
  j["mu2"] = std::vector<double>(inst.mu2.data(), inst.mu2.data() + inst.mu2.size());
  j["block"] = inst.block;
  nlohmann::json f = nlohmann::json::array();
  nlohmann::json c = nlohmann::json::array();
  for (Index x = 0; x < inst.points(); ++x) {
    std::vector<double> frow(static_cast<std::size_t>(inst.constraints()));
    for (Index a = 0; a < inst.constraints(); ++a) frow[static_cast<std::size_t>(a)] = inst.f(x, a);
    std::vector<double> crow(static_cast<std::size_t>(inst.points()));
    for (Index y = 0; y < inst.points(); ++y) crow[static_cast<std::size_t>(y)] = inst.cost(x, y);
    f.push_back(frow);
    c.push_back(crow);
  }
  j["f"] = f;
  j["cost"] = c;
  return j.dump(1);
}

FiniteInstance instance_from_json(const std::string& text) {
  FiniteInstance inst;
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    inst.epsilon = j.at("epsilon").get<double>();
    const auto mu1 = j.at("mu1").get<std::vector<double>>();
    const auto mu2 = j.at("mu2").get<std::vector<double>>();
    inst.block = j.at("block").get<std::vector<int>>();
    const auto f = j.at("f").get<std::vector<std::vector<double>>>();
    const auto c = j.at("cost").get<std::vector<std::vector<double>>>();
    const auto n = static_cast<Index>(mu1.size());
    inst.mu1 = Eigen::Map<const Vector>(mu1.data(), n);
    inst.mu2 = Eigen::Map<const Vector>(mu2.data(), static_cast<Index>(mu2.size()));
    const Index na = f.empty() ? 0 : static_cast<Index>(f.front().size());
    if (static_cast<Index>(f.size()) != n || static_cast<Index>(c.size()) != n) {
      throw ConfigError("finite instance: table rows do not match the number of points");
    }
    inst.f.resize(n, na);
    inst.cost.resize(n, n);
    for (Index x = 0; x < n; ++x) {
      const auto& fr = f[static_cast<std::size_t>(x)];
      const auto& cr = c[static_cast<std::size_t>(x)];
      if (static_cast<Index>(fr.size()) != na || static_cast<Index>(cr.size()) != n) {
        throw ConfigError("finite instance: ragged table");
      }
      for (Index a = 0; a < na; ++a) inst.f(x, a) = fr[static_cast<std::size_t>(a)];
      for (Index y = 0; y < n; ++y) inst.cost(x, y) = cr[static_cast<std::size_t>(y)];
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("finite instance: ") + e.what());
  }
  inst.validate();
  return inst;
}

EnumerationSampler::EnumerationSampler(const FiniteInstance& inst) : dim_(inst.constraints()) {
  inst.validate();
  std::vector<double> weights;
  for (Index x = 0; x < inst.points(); ++x) {
    if (inst.mu1[x] == 0.0) continue;
    std::vector<Index> members;
    for (Index y = 0; y < inst.points(); ++y) {
      if (in_support(inst, x, y)) members.push_back(y);
    }
    if (members.empty()) throw ConfigError("enumeration: a point of mu1 has no admissible target");
    AgentBatch b;
    const auto z = static_cast<Index>(members.size());
    b.features.resize(z, dim_);
    b.cost.resize(z);
    b.log_mass.resize(z);
    for (Index k = 0; k < z; ++k) {
      const Index y = members[static_cast<std::size_t>(k)];
      b.features.row(k) = inst.f.row(y);
      b.cost[k] = inst.cost(x, y);
      b.log_mass[k] = std::log(inst.mu2[y]);
    }
    batches_.push_back(std::move(b));
    weights.push_back(inst.mu1[x]);
  }
  weights_ = Eigen::Map<const Vector>(weights.data(), static_cast<Index>(weights.size()));
}

void EnumerationSampler::draw(std::uint64_t, std::vector<AgentBatch>& batches) {
  batches = batches_;
}

FiniteMonteCarloSampler::FiniteMonteCarloSampler(const FiniteInstance& inst, int samples,
                                                 std::uint64_t seed)
    : inst_(inst), samples_(samples), seed_(seed) {
  inst_.validate();
  if (samples_ < 1) throw ConfigError("monte carlo: samples must be >= 1");
  std::vector<double> weights;
  for (Index x = 0; x < inst_.points(); ++x) {
    if (inst_.mu1[x] == 0.0) continue;
    std::vector<Index> members;
    std::vector<double> cdf;
    double acc = 0.0;
    for (Index y = 0; y < inst_.points(); ++y) {
      if (!in_support(inst_, x, y)) continue;
      members.push_back(y);
      acc += inst_.mu2[y];
      cdf.push_back(acc);
    }
    if (members.empty()) throw ConfigError("monte carlo: a point of mu1 has no admissible target");
    for (double& v : cdf) v /= acc;
    agents_.push_back(x);
    members_.push_back(std::move(members));
    cdf_.push_back(std::move(cdf));
    weights.push_back(inst_.mu1[x]);
  }
  weights_ = Eigen::Map<const Vector>(weights.data(), static_cast<Index>(weights.size()));
}

void FiniteMonteCarloSampler::draw(std::uint64_t iteration, std::vector<AgentBatch>& batches) {
  batches.resize(agents_.size());
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    AgentBatch& b = batches[i];
    if (b.size() != samples_ || b.features.cols() != inst_.constraints()) {
      b.resize(samples_, inst_.constraints());
    }
    Stream rng = Stream::derive(seed_, {static_cast<std::uint64_t>(StreamPurpose::testing),
                                        static_cast<std::uint64_t>(i), iteration});
    const std::vector<double>& cdf = cdf_[i];
    for (int z = 0; z < samples_; ++z) {
      const double u = rng.uniform();
      auto k = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      k = std::min(k, cdf.size() - 1);
      const Index y = members_[i][k];
      b.features.row(z) = inst_.f.row(y);
      b.cost[z] = inst_.cost(agents_[i], y);
    }
  }
}

} // namespace mcot::oracle
