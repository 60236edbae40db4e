#pragma once

#include <Eigen/Core>
#include <concepts>
#include <random>
#include <utility>
#include <vector>

#include "crossrl/policy.hpp"

namespace crossrl {

using Rng = std::mt19937_64;

/// Anything an estimator can roll: reset to a fresh episode, apply an action
/// for a reward, and expose the current observation vector.
template <class E>
concept Environment = requires(E env, Rng& rng, const Eigen::VectorXd& a) {
  { env.reset(rng) } -> std::convertible_to<Eigen::VectorXd>;
  { env.step(a) } -> std::convertible_to<double>;
  { env.observation() } -> std::convertible_to<Eigen::VectorXd>;
};

/// Diagonal Gaussian exploration noise on the action channels.
struct ExplorationNoise {
  Eigen::VectorXd covariance_diag;

  ExplorationNoise() = default;
  explicit ExplorationNoise(Eigen::VectorXd diag) : covariance_diag(std::move(diag)) {
    if (covariance_diag.size() == 0 || (covariance_diag.array() <= 0.0).any())
      throw ConfigError("ExplorationNoise: covariance entries must be positive");
  }

  static ExplorationNoise isotropic(int p, double variance) {
    return ExplorationNoise(Eigen::VectorXd::Constant(p, variance));
  }

  Eigen::VectorXd sample(Rng& rng) const {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd out(covariance_diag.size());
    for (long d = 0; d < out.size(); ++d)
      out[d] = std::sqrt(covariance_diag[d]) * n(rng);
    return out;
  }
};

/// One stochastic gradient contribution: the kernel it spawns and its
/// pre-step-size weight, plus the sampled horizons and value estimate.
struct GradientSample {
  Eigen::VectorXd knot;
  Eigen::VectorXd weight;
  int horizon_t = 0;
  int horizon_T = 0;
  double q_estimate = 0.0;
};

/// P(k) = (1 - gamma) * gamma^k.
inline int sample_geometric(double gamma, Rng& rng) {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw ConfigError("sample_geometric: gamma must lie in (0, 1)");
  std::geometric_distribution<int> d(1.0 - gamma);
  return d(rng);
}

/// Draws from the stochastic policy: mean action plus exploration noise.
/// Action clamps belong to the environment, not here.
inline Eigen::VectorXd sample_action(const KernelPolicy& policy, const Eigen::VectorXd& s,
                                     const ExplorationNoise& noise, Rng& rng) {
  return policy_eval(policy, s) + noise.sample(rng);
}

/// Value estimate from the environment's current state: applies `a0`, then
/// follows the stochastic policy for a geometrically drawn number of steps,
/// summing the rewards undiscounted (the discount enters through the
/// horizon's law). Returns the estimate and the drawn horizon.
template <Environment E>
std::pair<double, int> estimate_q(E& env, const KernelPolicy& policy,
                                  const Eigen::VectorXd& a0, double gamma,
                                  const ExplorationNoise& noise, Rng& rng) {
  const int horizon = sample_geometric(gamma, rng);
  double q = env.step(a0);
  for (int tau = 1; tau <= horizon; ++tau)
    q += env.step(sample_action(policy, env.observation(), noise, rng));
  return {q, horizon};
}

/// Unbiased gradient contribution for one task: runs a fresh episode for a
/// geometric number of steps so the visited pair follows the discounted
/// occupation measure, then scores the exploration there by a value estimate.
template <Environment E>
GradientSample estimate_gradient(E& env, const KernelPolicy& policy, double gamma,
                                 const ExplorationNoise& noise, Rng& rng) {
  const int t = sample_geometric(gamma, rng);
  env.reset(rng);
  for (int step = 0; step < t; ++step)
    env.step(sample_action(policy, env.observation(), noise, rng));

  GradientSample out;
  out.knot = env.observation();
  const Eigen::VectorXd mean = policy_eval(policy, out.knot);
  const Eigen::VectorXd action = mean + noise.sample(rng);
  auto [q, horizon] = estimate_q(env, policy, action, gamma, noise, rng);
  out.weight =
      (action - mean).cwiseQuotient(noise.covariance_diag) * (q / (1.0 - gamma));
  out.horizon_t = t;
  out.horizon_T = horizon;
  out.q_estimate = q;
  return out;
}

/// Batch of independent gradient samples with weights scaled by 1/b, so that
/// their sum is the batch-averaged estimate.
template <Environment E>
std::vector<GradientSample> batch_gradient(E& env, const KernelPolicy& policy,
                                           double gamma, const ExplorationNoise& noise,
                                           int batch, Rng& rng) {
  if (batch < 1) throw ConfigError("batch_gradient: batch size must be at least 1");
  std::vector<GradientSample> out;
  out.reserve(batch);
  for (int b = 0; b < batch; ++b) {
    GradientSample gs = estimate_gradient(env, policy, gamma, noise, rng);
    gs.weight /= static_cast<double>(batch);
    out.push_back(std::move(gs));
  }
  return out;
}

} // namespace crossrl
