#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "crossrl/env_nav.hpp"
#include "crossrl/gradient.hpp"
#include "crossrl/gram.hpp"
#include "crossrl/projection.hpp"
#include "crossrl/pruning.hpp"

namespace crossrl {

enum class TrainMode { Agnostic, Consensus, Cross };
enum class ProjectionMode { Exact, Relaxed };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Agnostic: return "agnostic";
    case TrainMode::Consensus: return "consensus";
    case TrainMode::Cross: return "cross";
  }
  return "?";
}

inline TrainMode train_mode_from(const std::string& s) {
  if (s == "agnostic") return TrainMode::Agnostic;
  if (s == "consensus") return TrainMode::Consensus;
  if (s == "cross") return TrainMode::Cross;
  throw ConfigError("mode: expected agnostic|consensus|cross, got '" + s + "'");
}

inline ProjectionMode projection_mode_from(const std::string& s) {
  if (s == "exact") return ProjectionMode::Exact;
  if (s == "relaxed") return ProjectionMode::Relaxed;
  throw ConfigError("projection: expected exact|relaxed, got '" + s + "'");
}

/// Deterministic derivation of per-stream seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t x = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

struct TrainerConfig {
  double gamma = 0.9;
  double eta = 0.1; // constant step size
  double epsilon = std::numeric_limits<double>::quiet_NaN(); // required in cross mode
  double beta = 0.1;  // compression budget
  double alpha = 0.0; // stationarity threshold; enforced only when positive
  int batch = 4;
  Eigen::VectorXd sigma = Eigen::VectorXd::Constant(2, 0.05); // exploration covariance
  int order_cap = 400;
  long max_iters = 1000;
  ProjectionMode projection = ProjectionMode::Exact;
  TrainMode mode = TrainMode::Cross;
  std::uint64_t seed = 1;
  int step_cap = 200;
  double capture_radius = 0.3;
  double max_forward = 2.0;
  double max_turn = std::numbers::pi;
  double arena_margin = 2.0;
  double solver_tol = 1e-8;
  int solver_max_sweeps = 10000;
  long checkpoint_interval = 0; // iterations between checkpoints; 0 disables
  bool concurrent_gradients = true;
  KernelSpec kernel = nav_kernel_spec();

  NavEnvConfig env_config() const {
    return NavEnvConfig{step_cap, capture_radius, max_forward, max_turn, arena_margin};
  }

  /// Coupling radius actually used by the run: zero in consensus mode.
  double effective_epsilon() const {
    return mode == TrainMode::Consensus ? 0.0 : epsilon;
  }

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma: must lie in (0, 1)");
    if (!(eta > 0.0)) throw ConfigError("eta: must be positive");
    if (batch < 1) throw ConfigError("batch: must be at least 1");
    if (beta < 0.0) throw ConfigError("beta: must be nonnegative");
    if (alpha < 0.0) throw ConfigError("alpha: must be nonnegative");
    if (order_cap < 1) throw ConfigError("order_cap: must be positive");
    if (max_iters < 0) throw ConfigError("max_iters: must be nonnegative");
    if (step_cap < 1) throw ConfigError("rollout.step_cap: must be positive");
    if (sigma.size() != kernel.action_dim)
      throw ConfigError("sigma: needs one entry per action dimension");
    if ((sigma.array() <= 0.0).any()) throw ConfigError("sigma: entries must be positive");
    if (mode == TrainMode::Cross) {
      if (std::isnan(epsilon))
        throw ConfigError("epsilon: required in cross mode");
      if (epsilon < 0.0) throw ConfigError("epsilon: must be nonnegative");
    }
  }
};

/// A task gradient expressed over the shared dictionary.
struct GradientFunction {
  std::vector<int> knot_indices;
  Eigen::MatrixXd weights; // one row per index
};

/// Stationarity check: the supremum of <grad_i, h - h_i> over the coupling
/// ball around the current center, per task. Stops when the worst task
/// margin is at most alpha.
inline std::pair<bool, double> stopping_check(const std::vector<GradientFunction>& grads,
                                              const PolicyBundle& bundle, double alpha,
                                              double epsilon, const GramMatrix& gram) {
  if (static_cast<int>(grads.size()) != bundle.n_tasks())
    throw ConfigError("stopping_check: one gradient per task required");
  double worst = 0.0;
  for (int i = 0; i < bundle.n_tasks(); ++i) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(bundle.order(), bundle.spec.action_dim);
    for (std::size_t r = 0; r < grads[i].knot_indices.size(); ++r)
      d.row(grads[i].knot_indices[r]) += grads[i].weights.row(r);
    const double margin = ball_support(d, bundle.central_weights, epsilon,
                                       bundle.task_weights[i], gram);
    worst = std::max(worst, margin);
  }
  return {worst <= alpha, worst};
}

struct IterationTaskRecord {
  double return_estimate = 0.0;
  double dist_to_center = std::numeric_limits<double>::quiet_NaN();
  double prune_bias = 0.0;
  double margin = std::numeric_limits<double>::quiet_NaN();
};

struct IterationRecord {
  long iter = 0;
  std::vector<IterationTaskRecord> tasks;
  int model_order = 0;
  double prune_max_bias = 0.0;
  int prune_removals = 0;
  bool cap_forced = false;
  double seconds = 0.0;
};

struct TrainingHistory {
  std::vector<IterationRecord> records;
  bool stopped_early = false;
  long stop_iteration = -1;
};

struct TrainResult {
  PolicyBundle bundle;
  TrainingHistory history;
};

struct TrainHooks {
  std::function<void(const IterationRecord&, const PolicyBundle&)> on_iteration;
  std::function<void(long, const PolicyBundle&)> on_checkpoint;
};

/// The cross-learning loop over caller-supplied environments: per-task batch
/// gradients, the eta-scaled expansion merge, the mode's coupling step
/// (exact or relaxed projection, consensus averaging, or none), dictionary
/// pruning, and the logged stationarity margin. The center policy is never
/// touched by a gradient, only by projection and pruning.
template <class EnvT>
  requires Environment<EnvT>
TrainResult train_core(const TrainerConfig& cfg, std::vector<EnvT> envs,
                       const TrainHooks& hooks = {}) {
  cfg.validate();
  const int n = static_cast<int>(envs.size());
  if (n == 0) throw ConfigError("train: need at least one task");

  const double eps = cfg.effective_epsilon();
  PolicyBundle bundle =
      PolicyBundle::zero(cfg.kernel, n, cfg.mode == TrainMode::Agnostic ? 0.0 : eps);
  GramMatrix gram_matrix(Eigen::MatrixXd(0, 0));
  GramInverse gram_inverse;
  gram_inverse.rebuild(gram_matrix);

  std::vector<Rng> rngs;
  rngs.reserve(n);
  for (int i = 0; i < n; ++i) rngs.emplace_back(mix_seed(cfg.seed, i));
  ExplorationNoise noise(cfg.sigma);

  TrainingHistory history;
  history.records.reserve(std::min<long>(cfg.max_iters, 1 << 20));

  for (long k = 0; k < cfg.max_iters; ++k) {
    const auto tic = std::chrono::steady_clock::now();

    // fan out one batch-gradient worker per task, join in task order
    std::vector<std::vector<GradientSample>> samples(n);
    if (cfg.concurrent_gradients && n > 1) {
      std::vector<std::future<std::vector<GradientSample>>> futures(n);
      for (int i = 0; i < n; ++i) {
        KernelPolicy policy(cfg.kernel, bundle.dict, bundle.task_weights[i]);
        futures[i] = std::async(std::launch::async,
                                [&envs, i, policy = std::move(policy), &cfg, &noise,
                                 &rngs]() mutable {
                                  return batch_gradient(envs[i], policy, cfg.gamma,
                                                        noise, cfg.batch, rngs[i]);
                                });
      }
      for (int i = 0; i < n; ++i) samples[i] = futures[i].get();
    } else {
      for (int i = 0; i < n; ++i) {
        KernelPolicy policy(cfg.kernel, bundle.dict, bundle.task_weights[i]);
        samples[i] = batch_gradient(envs[i], policy, cfg.gamma, noise, cfg.batch, rngs[i]);
      }
    }

    // merge the eta-scaled expansions into the shared dictionary
    std::vector<PolicyUpdate> updates(n);
    for (int i = 0; i < n; ++i) {
      updates[i].knots.resize(cfg.batch, cfg.kernel.state_dim);
      updates[i].weights.resize(cfg.batch, cfg.kernel.action_dim);
      for (int b = 0; b < cfg.batch; ++b) {
        updates[i].knots.row(b) = samples[i][b].knot.transpose();
        updates[i].weights.row(b) = cfg.eta * samples[i][b].weight.transpose();
      }
    }
    const int order_before = bundle.order();
    MergeResult merged = merge_dictionaries(bundle, updates);
    bundle = std::move(merged.bundle);
    gram_matrix.append(cfg.kernel, bundle.dict, order_before);
    gram_inverse.append(gram_matrix, order_before);

    // coupling step
    if (cfg.mode == TrainMode::Cross) {
      if (cfg.projection == ProjectionMode::Exact) {
        try {
          bundle = project_exact(bundle, eps, gram_matrix, cfg.solver_tol,
                                 cfg.solver_max_sweeps)
                       .bundle;
        } catch (SolverError& e) {
          throw SolverError("projection failed at iteration " + std::to_string(k) +
                                ": " + e.what(),
                            e.residual, k);
        }
      } else {
        bundle = project_relaxed(bundle, eps, gram_matrix);
      }
    } else if (cfg.mode == TrainMode::Consensus) {
      bundle = project_relaxed(bundle, 0.0, gram_matrix);
    }

    // stationarity margin of this iteration's gradients against the updated
    // policies (logged always, enforced only when alpha > 0)
    IterationRecord rec;
    rec.iter = k;
    rec.tasks.resize(n);
    double worst_margin = std::numeric_limits<double>::quiet_NaN();
    if (cfg.mode != TrainMode::Agnostic) {
      worst_margin = 0.0;
      for (int i = 0; i < n; ++i) {
        Eigen::MatrixXd d = Eigen::MatrixXd::Zero(bundle.order(), cfg.kernel.action_dim);
        for (int b = 0; b < cfg.batch; ++b)
          d.row(merged.row_indices[i][b]) += samples[i][b].weight.transpose();
        const double margin = ball_support(d, bundle.central_weights, eps,
                                           bundle.task_weights[i], gram_matrix);
        rec.tasks[i].margin = margin;
        worst_margin = std::max(worst_margin, margin);
      }
    }

    // dictionary pruning
    auto [pruned, report] = prune(bundle, cfg.beta, cfg.order_cap, gram_matrix,
                                  &gram_inverse);
    gram_matrix.remove(report.removed_knots);
    bundle = std::move(pruned);

    if (!bundle.central_weights.allFinite())
      throw SolverError("non-finite central weights at iteration " + std::to_string(k),
                        0.0, k);
    for (int i = 0; i < n; ++i) {
      if (!bundle.task_weights[i].allFinite())
        throw SolverError("non-finite weights for task " + std::to_string(i) +
                              " at iteration " + std::to_string(k),
                          0.0, k);
      double mean_q = 0.0;
      for (const auto& gs : samples[i]) mean_q += gs.q_estimate;
      rec.tasks[i].return_estimate = mean_q / cfg.batch;
      rec.tasks[i].prune_bias = report.per_policy_bias[i];
      if (cfg.mode != TrainMode::Agnostic)
        rec.tasks[i].dist_to_center =
            rkhs_distance(bundle.task_weights[i], bundle.central_weights, gram_matrix);
    }
    rec.model_order = bundle.order();
    rec.prune_max_bias = report.per_policy_bias.maxCoeff();
    rec.prune_removals = static_cast<int>(report.removed_knots.size());
    rec.cap_forced = report.cap_forced;
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();

    if (hooks.on_iteration) hooks.on_iteration(rec, bundle);
    if (cfg.checkpoint_interval > 0 && (k + 1) % cfg.checkpoint_interval == 0 &&
        hooks.on_checkpoint)
      hooks.on_checkpoint(k + 1, bundle);
    history.records.push_back(std::move(rec));

    if (cfg.alpha > 0.0 && cfg.mode != TrainMode::Agnostic &&
        worst_margin <= cfg.alpha) {
      history.stopped_early = true;
      history.stop_iteration = k;
      break;
    }
  }
  return TrainResult{std::move(bundle), std::move(history)};
}

/// Trains on navigation scenarios (one environment per task).
inline TrainResult train(const TrainerConfig& cfg, const std::vector<Scenario>& scenarios,
                         const TrainHooks& hooks = {}) {
  std::vector<NavEnv> envs;
  envs.reserve(scenarios.size());
  for (const auto& s : scenarios) envs.emplace_back(s, cfg.env_config());
  return train_core(cfg, std::move(envs), hooks);
}

// --- evaluation and rollouts ---------------------------------------------

struct EvalSummary {
  int episodes = 0;
  double mean_return = 0.0;
  double mean_cost = 0.0; // -mean_return
  double std_return = 0.0;
  double success_rate = 0.0;
  double collision_rate = 0.0;
  double mean_steps = 0.0;
};

/// Monte-Carlo evaluation with the deterministic (mean) policy unless
/// exploration noise is supplied. Returns are discounted; steps count until
/// absorption or the cap.
inline EvalSummary evaluate(const KernelPolicy& policy, const Scenario& scenario,
                            int episodes, double gamma, NavEnvConfig env_cfg,
                            std::uint64_t seed,
                            const ExplorationNoise* noise = nullptr) {
  if (episodes < 1) throw ConfigError("evaluate: episodes must be positive");
  EvalSummary out;
  out.episodes = episodes;
  Rng rng(mix_seed(seed, 0x6576616cULL));
  NavEnv env(scenario, env_cfg);
  double acc2 = 0.0;
  for (int e = 0; e < episodes; ++e) {
    env.reset(rng);
    double ret = 0.0, disc = 1.0;
    int active_steps = 0;
    bool absorbed_counted = false;
    while (!env.done()) {
      Eigen::VectorXd a = policy_eval(policy, env.observation());
      if (noise) a += noise->sample(rng);
      const double r = env.step(a);
      ret += disc * r;
      disc *= gamma;
      if (!absorbed_counted) {
        ++active_steps;
        if (env.succeeded() || env.collided()) absorbed_counted = true;
      }
    }
    out.mean_steps += active_steps;
    out.success_rate += env.succeeded() ? 1.0 : 0.0;
    out.collision_rate += env.collided() ? 1.0 : 0.0;
    const double d = ret - out.mean_return;
    out.mean_return += d / (e + 1);
    acc2 += d * (ret - out.mean_return);
  }
  out.mean_steps /= episodes;
  out.success_rate /= episodes;
  out.collision_rate /= episodes;
  out.std_return = episodes > 1 ? std::sqrt(acc2 / (episodes - 1)) : 0.0;
  out.mean_cost = -out.mean_return;
  return out;
}

/// One episode for inspection/plotting. The deterministic flag suppresses
/// exploration noise; the start point overrides the scenario's start spec.
inline Trajectory rollout(const KernelPolicy& policy, const Scenario& scenario,
                          std::optional<Pose> start, std::uint64_t seed,
                          bool deterministic, NavEnvConfig env_cfg,
                          const ExplorationNoise* noise = nullptr) {
  NavEnv env(scenario, env_cfg);
  Rng rng(mix_seed(seed, 0x726f6c6cULL));
  if (start)
    env.reset_at(*start);
  else
    env.reset(rng);
  if (!deterministic && !noise)
    throw ConfigError("rollout: stochastic rollouts need exploration noise");

  Trajectory rows;
  rows.reserve(env_cfg.step_cap);
  int t = 0;
  while (!env.done()) {
    TrajectoryRow row;
    row.t = t++;
    row.x = env.pose().x;
    row.y = env.pose().y;
    row.psi = env.pose().psi;
    Eigen::VectorXd a = policy_eval(policy, env.observation());
    if (!deterministic) a += noise->sample(rng);
    row.action_z = a[0];
    row.action_psi = a[1];
    row.reward = env.step(a);
    row.d_g = env.goal_distance();
    row.collided = env.collided();
    rows.push_back(row);
  }
  return rows;
}

// --- CSV schemas ----------------------------------------------------------

inline constexpr const char* kMetricsCsvVersion = "# crossrl metrics v1";
inline constexpr const char* kMetricsCsvHeader =
    "iter,task,return_estimate,dist_to_center,model_order,prune_bias,margin,seconds";

inline void append_metrics_rows(std::ostream& out, const IterationRecord& rec) {
  for (std::size_t i = 0; i < rec.tasks.size(); ++i) {
    const auto& t = rec.tasks[i];
    out << rec.iter << ',' << i << ',' << t.return_estimate << ',';
    if (!std::isnan(t.dist_to_center)) out << t.dist_to_center;
    out << ',' << rec.model_order << ',' << t.prune_bias << ',';
    if (!std::isnan(t.margin)) out << t.margin;
    out << ',' << rec.seconds << "\n";
  }
}

inline constexpr const char* kPruneCsvVersion = "# crossrl prune v1";
inline constexpr const char* kPruneCsvHeader =
    "iter,removals,max_bias,final_order,cap_forced";

inline constexpr const char* kEvalCsvVersion = "# crossrl eval v1";
inline constexpr const char* kEvalCsvHeader =
    "policy,scenario,episodes,mean_return,mean_cost,std_return,success_rate,"
    "collision_rate,mean_steps";

inline void append_eval_row(std::ostream& out, const std::string& policy,
                            const std::string& scenario, const EvalSummary& s) {
  out << policy << ',' << scenario << ',' << s.episodes << ',' << s.mean_return << ','
      << s.mean_cost << ',' << s.std_return << ',' << s.success_rate << ','
      << s.collision_rate << ',' << s.mean_steps << "\n";
}

} // namespace crossrl
