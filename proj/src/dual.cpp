#include "mcot/dual.hpp"

#include "mcot/logsumexp.hpp"

#include <cmath>
#include <string>

namespace mcot {

double ell0(const Vector& lambda, const Vector& f_y, double cost) {
  return -lambda.dot(f_y) - cost;
}

Weights log_weights(const Eigen::Ref<const Vector>& ell, const Eigen::Ref<const Vector>& log_mass,
                    double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("log_weights: epsilon must be > 0");
  if (ell.size() == 0 || ell.size() != log_mass.size()) {
    throw std::invalid_argument("log_weights: need matching, non-empty inputs");
  }
  Vector shifted = ell / epsilon + log_mass;
  const double top = shifted.maxCoeff();
  if (!std::isfinite(top)) {
    // Left to the caller's non-finite check; throwing here would escape a parallel region.
    return Weights{Vector::Constant(ell.size(), std::numeric_limits<double>::quiet_NaN()),
                   std::numeric_limits<double>::quiet_NaN()};
  }
  shifted.array() -= top;
  const double rest = std::log(shifted.array().exp().sum());
  Weights out;
  out.b_value = epsilon * (top + rest);
  // w_z = exp(ell_z/eps - lse), taken from the shifted values so that the normalisation
  // holds to rounding even when ell/eps is huge.
  out.w.resize(ell.size());
  for (Index z = 0; z < ell.size(); ++z) {
    out.w[z] = std::isfinite(log_mass[z]) ? std::exp(shifted[z] - log_mass[z] - rest) : 0.0;
  }
  return out;
}

Weights log_weights(const Eigen::Ref<const Vector>& ell, double epsilon) {
  const Vector mass = Vector::Constant(ell.size(), -std::log(static_cast<double>(ell.size())));
  return log_weights(ell, mass, epsilon);
}

GradientEstimate estimate_gradient(std::span<const AgentBatch> batches, const Vector& agent_weights,
                                   const Vector& lambda, const MomentMap& map, double epsilon,
                                   WeightedBatch* weighted) {
  const auto n = static_cast<Index>(batches.size());
  if (agent_weights.size() != n) throw std::invalid_argument("estimate_gradient: agent weight count");
  if (lambda.size() != map.constraints()) throw std::invalid_argument("estimate_gradient: lambda size");

  const Vector coef = map.coefficients.transpose() * lambda;
  const double shift = lambda.dot(map.offset);

  std::vector<AgentWeights> local(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 8)
  for (Index i = 0; i < n; ++i) {
    const AgentBatch& b = batches[static_cast<std::size_t>(i)];
    const Vector ell = (-(b.features * coef).array() - shift - b.cost.array()).matrix();
    Weights wt = log_weights(ell, b.log_mass, epsilon);
    AgentWeights& out = local[static_cast<std::size_t>(i)];
    const Vector qw = (b.log_mass.array().exp() * wt.w.array()).matrix();
    out.mean_features = b.features.transpose() * qw;
    out.normalization_error = std::abs(qw.sum() - 1.0);
    out.b_value = wt.b_value;
    out.w = std::move(wt.w);
  }

  Vector phi_bar = Vector::Zero(map.features());
  double dual = 0.0;
  double total_weight = 0.0;
  double worst = 0.0;
  for (Index i = 0; i < n; ++i) {
    const AgentWeights& a = local[static_cast<std::size_t>(i)];
    phi_bar.noalias() += agent_weights[i] * a.mean_features;
    dual -= agent_weights[i] * a.b_value;
    total_weight += agent_weights[i];
    worst = std::max(worst, a.normalization_error);
  }
  GradientEstimate est;
  est.gradient = map.coefficients * phi_bar + total_weight * map.offset;
  est.dual_value = dual;
  est.max_normalization_error = worst;
  if (weighted) {
    weighted->agents = std::move(local);
    weighted->agent_weights = agent_weights;
  }
  return est;
}

Matrix estimate_hessian(std::span<const AgentBatch> batches, const WeightedBatch& weighted,
                        const MomentMap& map) {
  const Index dim = map.features();
  Matrix cov_total = Matrix::Zero(dim, dim);
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const AgentBatch& b = batches[i];
    const AgentWeights& aw = weighted.agents[i];
    const Vector qw = (b.log_mass.array().exp() * aw.w.array()).matrix();
    Matrix second = b.features.transpose() * qw.asDiagonal() * b.features;
    second.noalias() -= aw.mean_features * aw.mean_features.transpose();
    cov_total.noalias() += weighted.agent_weights[static_cast<Index>(i)] * second;
  }
  Matrix h = map.coefficients * cov_total * map.coefficients.transpose();
  return 0.5 * (h + h.transpose());
}

void SolverConfig::validate() const {
  if (samples < 1) throw ConfigError("solver: samples (Z) must be >= 1");
  if (iterations < 1) throw ConfigError("solver: iterations (K) must be >= 1");
  if (!(epsilon > 0.0)) throw ConfigError("solver: epsilon must be > 0");
  if (!(step.initial > 0.0)) throw ConfigError("solver: step must be > 0");
  if (step.kind == StepSchedule::Kind::harmonic && !(step.half_life > 0.0)) {
    throw ConfigError("solver: step half_life must be > 0");
  }
  if (!(lambda_cap > 0.0)) throw ConfigError("solver: lambda_cap must be > 0");
}

SolveResult solve(const SolverConfig& config, BatchSampler& sampler, const MomentMap& map,
                  const Vector& lambda0) {
  config.validate();
  if (sampler.feature_dim() != map.features()) {
    throw std::invalid_argument("solve: sampler features do not match the moment map");
  }
  const Index dim = map.constraints();
  SolveResult result;
  result.lambda = lambda0.size() == 0 ? Vector::Zero(dim) : lambda0;
  if (result.lambda.size() != dim) throw std::invalid_argument("solve: lambda0 has the wrong size");
  result.lambda = result.lambda.cwiseMax(0.0).cwiseMin(config.lambda_cap);

  const Vector agent_weights = sampler.agent_weights();
  std::vector<AgentBatch>& batches = result.final_batches;
  batches.resize(static_cast<std::size_t>(sampler.agents()));
  result.trace.reserve(static_cast<std::size_t>(config.iterations));

  const double direction = config.ascent_on_violation ? 1.0 : -1.0;
  for (int k = 0; k < config.iterations; ++k) {
    sampler.draw(static_cast<std::uint64_t>(k), batches);
    const GradientEstimate est =
        estimate_gradient(batches, agent_weights, result.lambda, map, config.epsilon);
    if (!est.gradient.allFinite() || !std::isfinite(est.dual_value)) {
      throw SolverError("non-finite gradient at iteration " + std::to_string(k));
    }
    const double rho = config.step.at(k);
    result.lambda = (result.lambda + direction * rho * est.gradient).cwiseMax(0.0);
    if ((result.lambda.array() >= config.lambda_cap).any()) {
      result.hit_cap = true;
      result.lambda = result.lambda.cwiseMin(config.lambda_cap);
    }
    TraceRow row;
    row.k = k;
    row.step = rho;
    row.gradient_norm = est.gradient.norm();
    row.max_violation = dim > 0 ? std::max(0.0, est.gradient.maxCoeff()) : 0.0;
    row.active = (result.lambda.array() > 0.0).count();
    row.dual_value = est.dual_value;
    row.normalization_error = est.max_normalization_error;
    result.trace.push_back(row);
  }
  const GradientEstimate fin = estimate_gradient(batches, agent_weights, result.lambda, map,
                                                 config.epsilon, &result.final_weights);
  result.final_moment = fin.gradient;
  return result;
}

} // namespace mcot
