#include "mcot/dual.hpp"
#include "mcot/logsumexp.hpp"
#include "mcot/oracle.hpp"
#include "mcot/sampler.hpp"

#include <doctest.h>

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace mcot;

namespace {

std::vector<AgentBatch> random_batches(Index agents, Index samples, Index dim, Stream& rng) {
  std::vector<AgentBatch> out(static_cast<std::size_t>(agents));
  for (AgentBatch& b : out) {
    b.resize(samples, dim);
    for (Index z = 0; z < samples; ++z) {
      for (Index d = 0; d < dim; ++d) b.features(z, d) = static_cast<double>(rng.below(2));
      b.cost[z] = z == 0 ? 0.0 : 1.0;
    }
  }
  return out;
}

MomentMap random_map(Index rows, Index dim, Stream& rng) {
  MomentMap m{Matrix(rows, dim), Vector(rows)};
  for (Index a = 0; a < rows; ++a) {
    for (Index d = 0; d < dim; ++d) m.coefficients(a, d) = rng.uniform(-1.0, 1.0);
    m.offset[a] = rng.uniform(-0.5, 0.5);
  }
  return m;
}

Vector uniform(Index n) { return Vector::Constant(n, 1.0 / static_cast<double>(n)); }

} // namespace

TEST_CASE("ell0 examples") {
  CHECK(ell0(Vector::Zero(2), Vector::Constant(2, 0.3), 0.0) == 0.0);
  CHECK(ell0(Vector::Zero(2), Vector::Constant(2, 0.3), 1.0) == -1.0);
  Vector lambda = Vector::Zero(3);
  lambda[0] = 1.0;
  Vector f = Vector::Zero(3);
  f[0] = 0.5;
  CHECK(ell0(lambda, f, 1.0) == doctest::Approx(-1.5));
}

TEST_CASE("ell0 on trajectories") {
  ConstraintSet cs(2);
  cs.add_cap(Vector::Constant(2, 0.5));
  Trajectory x;
  x.states = {{55.0, 0}, {55.0, 0}, {55.0, 0}};
  Trajectory y = x;
  y.states[1].mode = 1;
  const Vector lambda = Vector::Constant(2, 2.0);
  // f(y) = (0.5, -0.5), so -lambda.f = 0, minus cost 1.
  CHECK(ell0(x, y, lambda, cs, LocalCost{}) == doctest::Approx(-1.0));
  CHECK(ell0(x, x, lambda, cs, LocalCost{}) == doctest::Approx(2.0));
}

TEST_CASE("log weights") {
  SUBCASE("single sample") {
    const Weights w = log_weights(Vector::Constant(1, -3.7), 0.05);
    CHECK(w.w[0] == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("equal values") {
    const Weights w = log_weights(Vector::Constant(5, 0.4), 0.1);
    CHECK((w.w.array() - 1.0).abs().maxCoeff() < 1e-14);
    CHECK(w.b_value == doctest::Approx(0.4));
  }
  SUBCASE("closed-form pair") {
    const double eps = 0.3;
    Vector ell(2);
    ell << 0.0, -eps * std::log(3.0);
    const Weights w = log_weights(ell, eps);
    CHECK(w.w[0] == doctest::Approx(1.5).epsilon(1e-14));
    CHECK(w.w[1] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(w.b_value == doctest::Approx(eps * std::log(2.0 / 3.0)).epsilon(1e-14));
  }
  SUBCASE("extreme exponents stay finite and normalised") {
    Vector ell(4);
    ell << 1e4, -1e4, 0.0, 9999.0;
    const Weights w = log_weights(ell, 1e-3);
    CHECK(w.w.allFinite());
    CHECK(w.w.mean() == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("explicit masses") {
    Vector ell(3), lm(3);
    ell << -0.1, 0.2, -0.7;
    lm << std::log(0.5), std::log(0.3), std::log(0.2);
    const Weights w = log_weights(ell, lm, 0.2);
    CHECK((lm.array().exp() * w.w.array()).sum() == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("log_sum_exp") {
  Vector x(3);
  x << 1000.0, 1000.0, -std::numeric_limits<double>::infinity();
  CHECK(log_sum_exp(x) == doctest::Approx(1000.0 + std::log(2.0)));
  CHECK(std::isinf(log_sum_exp(Vector(0))));
}

TEST_CASE("budget zero sampler returns the nominal moment") {
  const int T = 12;
  std::vector<AgentSetup> setups;
  for (int i = 0; i < 4; ++i) {
    AgentSetup s;
    s.params = reference_params();
    s.start = {52.0 + 3.0 * i, i % 2};
    s.drains.assign(T, i * 3.0e5);
    s.budget = 0;
    setups.push_back(s);
  }
  ConstraintSet cs(T);
  cs.add_cap(Vector::Constant(T, 0.4));
  WhBatchSampler sampler(setups, 8, SwitchProposal{}, LocalCost{}, 3);
  std::vector<AgentBatch> batches;
  sampler.draw(0, batches);
  Vector expected = Vector::Zero(cs.size());
  for (int i = 0; i < 4; ++i) expected += cs.evaluate(sampler.nominal(i)) / 4.0;
  const Vector lambda = Vector::Constant(cs.size(), 3.0);
  const GradientEstimate g = estimate_gradient(batches, uniform(4), lambda, cs.moment_map(), 0.1);
  CHECK((g.gradient - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero multipliers and uniform cost give the plain mean") {
  Stream rng = Stream::derive(5, StreamPurpose::testing);
  auto batches = random_batches(3, 6, 4, rng);
  for (AgentBatch& b : batches) b.cost.setOnes();
  const MomentMap map = random_map(2, 4, rng);
  Vector expected = Vector::Zero(2);
  for (const AgentBatch& b : batches) {
    for (Index z = 0; z < b.size(); ++z) expected += map.apply(b.features.row(z).transpose()) / 18.0;
  }
  const GradientEstimate g = estimate_gradient(batches, uniform(3), Vector::Zero(2), map, 0.1);
  CHECK((g.gradient - expected).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("exhaustive enumeration on a tiny heater instance equals direct summation") {
  const int T = 3;
  const double eps = 0.2;
  const WhParams p = reference_params();
  const std::vector<double> drains{0.0, 4.0e6, 0.0};
  const std::vector<WhState> starts{{51.0, 0}, {63.0, 1}};
  std::vector<SwitchSet> sets{{}};
  for (int a = 0; a < T; ++a) {
    sets.push_back({a});
    for (int b = a + 1; b < T; ++b) sets.push_back({a, b});
  }
  ConstraintSet cs(T);
  cs.add_tracking(Vector::Constant(T, 0.5)).add_ramp(Vector::Constant(T - 1, 0.2), Vector::Constant(T - 1, 0.2));
  const MomentMap map = cs.moment_map();
  Vector lambda(cs.size());
  for (Index a = 0; a < lambda.size(); ++a) lambda[a] = 0.1 * static_cast<double>(a % 4);

  std::vector<AgentBatch> batches;
  Vector direct = Vector::Zero(cs.size());
  for (const WhState& s : starts) {
    const Trajectory x = simulate(s, p, drains);
    AgentBatch b;
    b.resize(static_cast<Index>(sets.size()), T + 1);
    std::vector<double> q(sets.size());
    double norm = 0.0;
    std::vector<Vector> fs;
    for (std::size_t z = 0; z < sets.size(); ++z) {
      const Trajectory y = simulate(s, p, drains, sets[z]);
      b.features.row(static_cast<Index>(z)) = y.modes().transpose();
      b.cost[static_cast<Index>(z)] = local_cost(x, y, LocalCost{});
      b.log_mass[static_cast<Index>(z)] = -std::log(static_cast<double>(sets.size()));
      fs.push_back(cs.evaluate(y));
      q[z] = std::exp((-lambda.dot(fs.back()) - b.cost[static_cast<Index>(z)]) / eps) / static_cast<double>(sets.size());
      norm += q[z];
    }
    for (std::size_t z = 0; z < sets.size(); ++z) direct += 0.5 * q[z] / norm * fs[z];
    batches.push_back(b);
  }
  const GradientEstimate g = estimate_gradient(batches, uniform(2), lambda, map, eps);
  CHECK((g.gradient - direct).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("hessian diagnostic") {
  Stream rng = Stream::derive(8, StreamPurpose::testing);
  SUBCASE("one sample per agent") {
    auto batches = random_batches(4, 1, 3, rng);
    const MomentMap map = random_map(2, 3, rng);
    WeightedBatch wb;
    estimate_gradient(batches, uniform(4), Vector::Constant(2, 0.5), map, 0.1, &wb);
    CHECK(estimate_hessian(batches, wb, map).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("constant f") {
    auto batches = random_batches(4, 5, 3, rng);
    const MomentMap map{Matrix::Zero(1, 3), Vector::Constant(1, 0.7)};
    WeightedBatch wb;
    estimate_gradient(batches, uniform(4), Vector::Constant(1, 0.5), map, 0.1, &wb);
    CHECK(estimate_hessian(batches, wb, map).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("matches the exact conditional covariance") {
    oracle::RandomInstanceSpec spec;
    spec.points = 12;
    spec.blocks = 3;
    spec.constraints = 3;
    const oracle::FiniteInstance inst = oracle::random_instance(spec, rng);
    oracle::EnumerationSampler sampler(inst);
    std::vector<AgentBatch> batches;
    sampler.draw(0, batches);
    const Vector lambda = Vector::Constant(3, 0.4);
    const MomentMap map = MomentMap::identity(3);
    WeightedBatch wb;
    estimate_gradient(batches, sampler.agent_weights(), lambda, map, inst.epsilon, &wb);
    const Matrix h = estimate_hessian(batches, wb, map);
    CHECK((h - oracle::exact_conditional_covariance(inst, lambda)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((h - h.transpose()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(h).eigenvalues().minCoeff() > -1e-12);
  }
}

TEST_CASE("empirical dual: gradient matches central differences and is concave") {
  Stream rng = Stream::derive(12, StreamPurpose::testing);
  const auto batches = random_batches(6, 16, 5, rng);
  const MomentMap map = random_map(3, 5, rng);
  const double eps = 0.25;
  const Vector weights = uniform(6);
  auto value = [&](const Vector& zeta) {
    return estimate_gradient(batches, weights, eps * zeta, map, eps).dual_value;
  };
  for (int k = 0; k < 10; ++k) {
    Vector zeta(3), dir(3);
    for (Index a = 0; a < 3; ++a) {
      zeta[a] = rng.uniform(0.5, 3.0);
      dir[a] = rng.uniform(-1.0, 1.0);
    }
    dir.normalize();
    const double h = 1e-4;
    // d/dzeta of phi*(eps zeta) is eps <mu^lambda, f>.
    const double fd = (value(zeta + h * dir) - value(zeta - h * dir)) / (2.0 * h);
    const double an = eps * estimate_gradient(batches, weights, eps * zeta, map, eps).gradient.dot(dir);
    CHECK(std::abs(fd - an) <= 1e-5 * std::max(1.0, std::abs(an)));

    Vector z2(3);
    for (Index a = 0; a < 3; ++a) z2[a] = rng.uniform(0.0, 4.0);
    CHECK(value(0.5 * (zeta + z2)) >= 0.5 * (value(zeta) + value(z2)) - 1e-10);
  }
}

TEST_CASE("gibbs variational identity on four points") {
  Vector mu(4), g(4);
  mu << 0.1, 0.2, 0.3, 0.4;
  g << 0.5, -1.0, 2.0, 0.3;
  // Mirror ascent on the simplex for max <p, g> - KL(p || mu).
  Vector p = Vector::Constant(4, 0.25);
  for (int it = 0; it < 2000; ++it) {
    const Vector grad = g.array() - (p.array() / mu.array()).log() - 1.0;
    p.array() *= (0.5 * grad.array()).exp();
    p /= p.sum();
  }
  const double primal = p.dot(g) - (p.array() * (p.array() / mu.array()).log()).sum();
  const double dual = log_sum_exp((mu.array().log() + g.array()).matrix());
  CHECK(std::abs(primal - dual) < 1e-9);
}

TEST_CASE("solver edge cases") {
  Stream rng = Stream::derive(13, StreamPurpose::testing);
  oracle::RandomInstanceSpec spec;
  spec.constraints = 2;
  const oracle::FiniteInstance inst = oracle::random_instance(spec, rng);
  oracle::EnumerationSampler sampler(inst);
  SolverConfig cfg;
  cfg.iterations = 25;
  cfg.epsilon = inst.epsilon;

  SUBCASE("no constraints") {
    const MomentMap empty{Matrix::Zero(0, 2), Vector::Zero(0)};
    const SolveResult r = solve(cfg, sampler, empty);
    CHECK(r.lambda.size() == 0);
    CHECK(r.trace.size() == 25);
  }
  SUBCASE("slack constraints drive multipliers to zero") {
    const MomentMap slack{Matrix::Identity(2, 2), Vector::Constant(2, -100.0)};
    const SolveResult r = solve(cfg, sampler, slack, Vector::Constant(2, 5.0));
    CHECK(r.lambda.isZero(0.0));
  }
  SUBCASE("non-finite features are fatal") {
    class Broken final : public BatchSampler {
    public:
      Index agents() const override { return 1; }
      Index feature_dim() const override { return 1; }
      void draw(std::uint64_t, std::vector<AgentBatch>& b) override {
        b.assign(1, AgentBatch{});
        b[0].resize(2, 1);
        b[0].features(0, 0) = std::nan("");
        b[0].features(1, 0) = 1.0;
        b[0].cost.setZero();
      }
    } broken;
    CHECK_THROWS_AS(solve(cfg, broken, MomentMap::identity(1)), SolverError);
  }
  SUBCASE("invalid configuration") {
    SolverConfig bad = cfg;
    bad.samples = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.epsilon = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.step.initial = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("weights are normalised every iteration of a heater solve") {
  const int T = 24;
  std::vector<AgentSetup> setups;
  Stream rng = Stream::derive(21, StreamPurpose::testing);
  for (int i = 0; i < 10; ++i) {
    AgentSetup s;
    s.params = reference_params();
    s.start = {rng.uniform(50.0, 65.0), static_cast<int>(rng.below(2))};
    for (int t = 0; t < T; ++t) s.drains.push_back(rng.bernoulli(0.2) ? rng.exponential(2.0) / s.params.sigma : 0.0);
    setups.push_back(s);
  }
  ConstraintSet cs(T);
  cs.add_cap(Vector::Constant(T, 0.2));
  WhBatchSampler sampler(setups, 16, SwitchProposal{}, LocalCost{}, 4);
  SolverConfig cfg;
  cfg.iterations = 30;
  const SolveResult r = solve(cfg, sampler, cs.moment_map());
  for (const TraceRow& row : r.trace) CHECK(row.normalization_error <= 1e-12);
  CHECK(r.lambda.minCoeff() >= 0.0);
}

#ifdef _OPENMP
TEST_CASE("estimates do not depend on the worker count") {
  Stream rng = Stream::derive(30, StreamPurpose::testing);
  const auto batches = random_batches(64, 8, 6, rng);
  const MomentMap map = random_map(4, 6, rng);
  const Vector lambda = Vector::Constant(4, 0.7);
  const int before = omp_get_max_threads();
  omp_set_num_threads(1);
  const GradientEstimate a = estimate_gradient(batches, uniform(64), lambda, map, 0.1);
  omp_set_num_threads(3);
  const GradientEstimate b = estimate_gradient(batches, uniform(64), lambda, map, 0.1);
  omp_set_num_threads(before);
  CHECK(a.gradient == b.gradient);
  CHECK(a.dual_value == b.dual_value);
}
#endif
