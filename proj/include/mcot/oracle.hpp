#pragma once

#include "mcot/dual.hpp"
#include "mcot/rng.hpp"
#include "mcot/types.hpp"

#include <string>
#include <vector>

namespace mcot::oracle {

// Finite trajectory space with explicit laws and tables. Points sharing a `block` value
// share their initial state; transport is only allowed inside a block.
struct FiniteInstance {
  Vector mu1;              // nominal law, sums to 1
  Vector mu2;              // sampling law, sums to 1
  std::vector<int> block;  // initial-state class of each point
  Matrix f;                // points x A
  Matrix cost;             // points x points, zero diagonal
  double epsilon = 0.1;

  Index points() const noexcept { return mu1.size(); }
  Index constraints() const noexcept { return f.cols(); }
  void validate() const;
};

inline constexpr Index kMaxPoints = 256;

// phi*(lambda) = -sum_x mu1(x) B(x), with B summed exactly over the block of x.
double exact_dual_value(const FiniteInstance& inst, const Vector& lambda);
// <mu^lambda, f>.
Vector exact_moment(const FiniteInstance& inst, const Vector& lambda);
// mu^lambda as a vector over points.
Vector exact_controlled_law(const FiniteInstance& inst, const Vector& lambda);
// pi^lambda(x, y) = mu1(x) P^lambda(x, y).
Matrix exact_plan(const FiniteInstance& inst, const Vector& lambda);
// E^lambda[f f^T - E[f|X] E[f|X]^T].
Matrix exact_conditional_covariance(const FiniteInstance& inst, const Vector& lambda);

struct PrimalOptions {
  double tolerance = 1e-13;
  long max_sweeps = 2'000'000;
};

struct PrimalSolution {
  Matrix plan;        // pi*
  double value;       // <pi*, c> + eps KL(pi* || mu1 x mu2)
  Vector lambda;      // multipliers of the moment rows
  double duality_gap; // value - phi*(lambda)
  long sweeps;
};

// Entropic primal solved by cyclic KL projections: exact row rescaling onto the first
// marginal and Hildreth-style projections onto each half-space <pi_2, f_a> <= 0, with
// the accumulated projection multipliers giving lambda*. Throws SolverError when the
// instance is infeasible or the iteration does not converge.
PrimalSolution solve_primal(const FiniteInstance& inst, const PrimalOptions& options = {});

// Primal objective for an arbitrary plan supported on the block diagonal.
double primal_objective(const FiniteInstance& inst, const Matrix& plan);

// Projected ascent with exhaustive "sampling" and the constant step eps / max ||f||^2,
// the inverse curvature bound of the dual.
SolveResult solve_exhaustive(const FiniteInstance& inst, int iterations);

// Exact importance weights w^lambda(y) = mu^lambda(y) / mu2(y).
Vector exact_weights(const FiniteInstance& inst, const Vector& lambda);

// Variance of the single-draw estimator (mu^lambda(Y)/q(Y)) f_a(Y), Y ~ q, computed by
// enumerating every outcome.
double enumerated_estimator_variance(const FiniteInstance& inst, const Vector& lambda, Index a,
                                     const Vector& q);
// Closed form of the same variance for q = mu2:
// int f^2 w mu^lambda - (int f mu^lambda)^2.
double closed_form_estimator_variance(const FiniteInstance& inst, const Vector& lambda, Index a);
// Sampling law proportional to f_a mu^lambda (requires f_a > 0), for which the estimator
// above is constant.
Vector zero_variance_law(const FiniteInstance& inst, const Vector& lambda, Index a);

struct RandomInstanceSpec {
  Index points = 16;
  int blocks = 4;
  Index constraints = 2;
  double epsilon = 0.1;
  bool positive_f = false;
};

// Random feasible instance: the product coupling inside blocks is strictly feasible and
// some rows are violated by the unconstrained optimum, so they bind.
FiniteInstance random_instance(const RandomInstanceSpec& spec, Stream& rng);

// Small JSON format (laws, blocks, tables, epsilon) for regression fixtures.
std::string instance_to_json(const FiniteInstance& inst);
FiniteInstance instance_from_json(const std::string& text);

// Exhaustive "sampling": each support point x of mu1 is an agent with weight mu1(x) whose
// batch is its whole block, carried with log mass log mu2(y). Features are f(y).
class EnumerationSampler final : public BatchSampler {
public:
  explicit EnumerationSampler(const FiniteInstance& inst);
  Index agents() const override { return static_cast<Index>(batches_.size()); }
  Index feature_dim() const override { return dim_; }
  void draw(std::uint64_t iteration, std::vector<AgentBatch>& batches) override;
  Vector agent_weights() const override { return weights_; }

private:
  std::vector<AgentBatch> batches_;
  Vector weights_;
  Index dim_;
};

// Z i.i.d. draws per agent from mu2 conditioned on the agent's block.
class FiniteMonteCarloSampler final : public BatchSampler {
public:
  FiniteMonteCarloSampler(const FiniteInstance& inst, int samples, std::uint64_t seed);
  Index agents() const override { return static_cast<Index>(agents_.size()); }
  Index feature_dim() const override { return inst_.constraints(); }
  void draw(std::uint64_t iteration, std::vector<AgentBatch>& batches) override;
  Vector agent_weights() const override { return weights_; }

private:
  FiniteInstance inst_;
  int samples_;
  std::uint64_t seed_;
  std::vector<Index> agents_;
  std::vector<std::vector<Index>> members_; // support of mu2 in each agent's block
  std::vector<std::vector<double>> cdf_;
  Vector weights_;
};

} // namespace mcot::oracle
