#pragma once

#include "mcot/moments.hpp"
#include "mcot/types.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace mcot {

// Samples drawn for one agent (one initial state). Row z of `features` is phi(Y_z);
// `log_mass[z]` is the log of the sampling-law mass carried by that draw, -log Z for Z
// i.i.d. draws, or log mu_2(y) when the support is enumerated exhaustively.
struct AgentBatch {
  RowMatrix features;
  Vector cost;     // c(x, Y_z)
  Vector log_mass;

  Index size() const noexcept { return features.rows(); }
  void resize(Index samples, Index dim) {
    features.resize(samples, dim);
    cost.resize(samples);
    log_mass.setConstant(samples, -std::log(static_cast<double>(samples)));
  }
};

// ell_0(x, y) = -lambda^T f(y) - c(x, y).
double ell0(const Vector& lambda, const Vector& f_y, double cost);

struct Weights {
  Vector w;       // self-normalised weights: sum_z exp(log_mass_z) w_z = 1
  double b_value; // estimate of B_{lambda,eps}(x) = eps log E[exp(ell_0 / eps)]
};

// Weights for Z i.i.d. draws: b = eps (logsumexp(ell/eps) - log Z), w = exp((ell - b)/eps).
Weights log_weights(const Eigen::Ref<const Vector>& ell, double epsilon);
Weights log_weights(const Eigen::Ref<const Vector>& ell, const Eigen::Ref<const Vector>& log_mass,
                    double epsilon);

// Per-agent result of the weighting step.
struct AgentWeights {
  Vector w;
  double b_value = 0.0;
  Vector mean_features; // sum_z q_z w_z phi(Y_z)
  double normalization_error = 0.0;
};

struct WeightedBatch {
  std::vector<AgentWeights> agents;
  Vector agent_weights;
};

struct GradientEstimate {
  Vector gradient;   // sum_i a_i sum_z q_z w_z f(Y_z) ~ <mu^lambda, f>
  double dual_value; // -sum_i a_i b_i ~ phi*(lambda)
  double max_normalization_error;
};

// Monte-Carlo estimate of <mu^lambda, f>. Weights never mix agents. Per-agent work runs in
// parallel; the reduction over agents is sequential, so results do not depend on the
// number of workers.
GradientEstimate estimate_gradient(std::span<const AgentBatch> batches, const Vector& agent_weights,
                                   const Vector& lambda, const MomentMap& map, double epsilon,
                                   WeightedBatch* weighted = nullptr);

// Average over agents of the weighted conditional covariance of f (the Hessian of the
// dual in zeta = lambda/eps). Diagnostic only.
Matrix estimate_hessian(std::span<const AgentBatch> batches, const WeightedBatch& weighted,
                        const MomentMap& map);

// Produces one batch per agent for a given iteration. Implementations must be
// deterministic in (iteration, agent).
class BatchSampler {
public:
  virtual ~BatchSampler() = default;
  virtual Index agents() const = 0;
  virtual Index feature_dim() const = 0;
  virtual void draw(std::uint64_t iteration, std::vector<AgentBatch>& batches) = 0;
  // Weight of each agent in the population average; uniform by default.
  virtual Vector agent_weights() const {
    return Vector::Constant(agents(), 1.0 / static_cast<double>(agents()));
  }
};

struct StepSchedule {
  enum class Kind { harmonic, constant };
  Kind kind = Kind::harmonic;
  double initial = 1.0;    // rho_0
  double half_life = 50.0; // k at which a harmonic step has halved

  double at(int k) const noexcept {
    return kind == Kind::constant ? initial : initial / (1.0 + static_cast<double>(k) / half_life);
  }
};

struct SolverConfig {
  int samples = 32;       // Z
  int iterations = 100;   // K
  StepSchedule step;
  double epsilon = 0.1;
  std::uint64_t seed = 0;
  // Multipliers grow where constraints are violated: lambda <- max(0, lambda + rho G).
  // When false the literal update lambda <- max(0, lambda - rho G) is applied.
  bool ascent_on_violation = true;
  double lambda_cap = std::numeric_limits<double>::infinity();

  void validate() const;
};

struct TraceRow {
  int k;
  double step;
  double gradient_norm;
  double max_violation;
  Index active; // number of strictly positive multipliers after the update
  double dual_value;
  double normalization_error;
};

struct SolveResult {
  Vector lambda;
  std::vector<TraceRow> trace;
  // Last drawn batch, re-weighted at the returned lambda.
  std::vector<AgentBatch> final_batches;
  WeightedBatch final_weights;
  Vector final_moment;
  bool hit_cap = false;
};

// Projected stochastic dual ascent. Throws SolverError on a non-finite gradient.
SolveResult solve(const SolverConfig& config, BatchSampler& sampler, const MomentMap& map,
                  const Vector& lambda0 = Vector());

} // namespace mcot
