#pragma once
#include <cstdio>

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "crossrl/gram.hpp"
#include "crossrl/policy.hpp"

namespace crossrl {

/// Ridge added to the Gram matrix inside the projection solver to guard
/// against near-singular dictionaries. Applied to solver arithmetic only.
inline constexpr double kProjectionRidge = 1e-10;

struct ProjectionResult {
  PolicyBundle bundle;
  Eigen::VectorXd multipliers;   // one nonnegative multiplier per task
  std::vector<bool> active_set;  // constraint at distance epsilon (within tol)
  int iterations = 0;
  double kkt_residual = 0.0;
};

/// Squared-distance objective of the joint projection: how far the candidate
/// output lies from the post-gradient input, task policies plus center.
inline double projection_objective(const PolicyBundle& bar, const PolicyBundle& out,
                                   const GramMatrix& gram) {
  double obj = rkhs_norm_sq(out.central_weights - bar.central_weights, gram);
  for (int i = 0; i < bar.n_tasks(); ++i)
    obj += rkhs_norm_sq(out.task_weights[i] - bar.task_weights[i], gram);
  return obj;
}

namespace detail {

/// Inner-product matrix of the stacked functions [g_bar, h_bar_1..h_bar_N]
/// under the (ridged) Gram quadratic form. All solver iterations run in this
/// (N+1)-dimensional coordinate space; weight matrices are reassembled once.
struct ProjectionSpace {
  std::vector<const Eigen::MatrixXd*> basis; // N+1 weight matrices
  Eigen::MatrixXd s;                         // (N+1)x(N+1) function Gram

  ProjectionSpace(const PolicyBundle& bar, const GramMatrix& gram, double ridge) {
    const int n = bar.n_tasks();
    basis.push_back(&bar.central_weights);
    for (int i = 0; i < n; ++i) basis.push_back(&bar.task_weights[i]);

    std::vector<Eigen::MatrixXd> kw(n + 1);
    for (int a = 0; a <= n; ++a)
      kw[a] = gram.matrix() * (*basis[a]) + ridge * (*basis[a]);
    s.resize(n + 1, n + 1);
    for (int a = 0; a <= n; ++a)
      for (int b = a; b <= n; ++b) {
        const double v = basis[a]->cwiseProduct(kw[b]).sum();
        s(a, b) = v;
        s(b, a) = v;
      }
  }

  double norm_sq(const Eigen::VectorXd& coords) const {
    return coords.dot(s * coords);
  }

  Eigen::MatrixXd assemble(const Eigen::VectorXd& coords) const {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(basis[0]->rows(), basis[0]->cols());
    for (int a = 0; a < coords.size(); ++a)
      if (coords[a] != 0.0) w += coords[a] * (*basis[a]);
    return w;
  }
};

} // namespace detail

/// Projects a post-gradient bundle onto the coupling set
/// { ||h_i - g|| <= epsilon for all i }, minimizing the summed squared RKHS
/// distance to the inputs (task policies and center jointly).
///
/// The minimizer has the inline structure h_i = zeta_i h_bar_i + (1-zeta_i) g
/// with zeta_i = 1/(1+mu_i), so the problem reduces to one scalar dual
/// variable per task. We iterate the per-constraint exact dual update
/// mu_i = max(0, ||h_bar_i - g||/eps - 1) against the center stationarity
/// g = (g_bar + sum_i mu_i h_i) / (1 + sum_i mu_i) until the KKT residual
/// falls below `tol`. theta_i = mu_i/(1+mu_i) keeps eps = 0 well defined.
inline ProjectionResult project_exact(const PolicyBundle& bar, double epsilon,
                                      const GramMatrix& gram, double tol = 1e-8,
                                      int max_sweeps = 10000) {
  if (epsilon < 0.0) throw ConfigError("project_exact: epsilon must be nonnegative");
  if (gram.order() != bar.order())
    throw ConfigError("project_exact: gram does not match the dictionary");
  if (gram.order() <= 64 && !gram.is_psd(1e-9))
    throw SolverError("project_exact: gram matrix is not positive semidefinite");

  const int n = bar.n_tasks();
  const double inf = std::numeric_limits<double>::infinity();
  detail::ProjectionSpace space(bar, gram, kProjectionRidge);

  const double gbar_norm = std::sqrt(std::max(0.0, space.s(0, 0)));
  const double scale = 1.0 + gbar_norm;

  auto coord = [&](int a) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n + 1);
    e[a] = 1.0;
    return e;
  };

  auto dist_to = [&](int task, const Eigen::VectorXd& g_coords) {
    const double d2 = space.norm_sq(coord(task + 1) - g_coords);
    if (d2 < -1e-8 * scale * scale)
      throw SolverError("project_exact: gram matrix is not positive semidefinite",
                        -d2);
    return std::sqrt(std::max(0.0, d2));
  };

  Eigen::VectorXd g = coord(0); // start at the input center
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(n);
  int sweeps = 0;
  for (; sweeps < max_sweeps; ++sweeps) {
    for (int i = 0; i < n; ++i) {
      const double d = dist_to(i, g);
      if (epsilon == 0.0)
        theta[i] = d > 0.0 ? 1.0 : 0.0;
      else
        theta[i] = std::max(0.0, 1.0 - epsilon / d); // d > eps >= 0 here
    }
    Eigen::VectorXd g_next = Eigen::VectorXd::Zero(n + 1);
    g_next[0] = 1.0;
    for (int i = 0; i < n; ++i) g_next[i + 1] = theta[i];
    g_next /= 1.0 + theta.sum();
    if (sweeps > 1000) g_next = 0.5 * (g + g_next); // damped fallback

    const double step = (g_next - g).cwiseAbs().maxCoeff();
    g = g_next;
    // the coordinates are scale-free; iterate to machine resolution
    if (step <= 1e-15 * (1.0 + g.cwiseAbs().maxCoeff()) && sweeps > 0) break;
  }

  // Final primal variables against the final center. The contraction factor
  // zeta = 1/(1+mu) is computed by direct division; deriving it from theta
  // would lose the low bits that the multiplier then amplifies.
  Eigen::VectorXd mu(n);
  std::vector<Eigen::VectorXd> h(n);
  double r_feas = 0.0, r_slack = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d_bar = dist_to(i, g);
    double zeta;
    if (epsilon == 0.0)
      zeta = d_bar > 0.0 ? 0.0 : 1.0;
    else
      zeta = d_bar > epsilon ? epsilon / d_bar : 1.0;
    theta[i] = 1.0 - zeta;
    mu[i] = zeta > 0.0 ? (1.0 - zeta) / zeta : inf;
    h[i] = zeta * coord(i + 1) + (1.0 - zeta) * g;
    const double d = zeta * d_bar;
    r_feas = std::max(r_feas, d - epsilon);
    // complementarity in scaled form theta * |d - eps|: the raw product
    // mu * (d - eps) amplifies round-off without bound as mu grows
    r_slack = std::max(r_slack, theta[i] * std::abs(d - epsilon));
  }

  // KKT residuals in weight space: assembling the residual matrix first
  // avoids the cancellation that coordinate quadratic forms suffer when the
  // inputs are large.
  std::vector<Eigen::MatrixXd> task_w(n);
  Eigen::MatrixXd central_w = space.assemble(g);
  Eigen::MatrixXd center_residual = central_w - bar.central_weights;
  for (int i = 0; i < n; ++i) {
    task_w[i] = space.assemble(h[i]);
    center_residual -= bar.task_weights[i] - task_w[i];
  }
  const double r_center =
      std::sqrt(std::max(0.0, (gram.matrix() * center_residual)
                                      .cwiseProduct(center_residual)
                                      .sum() +
                                  kProjectionRidge * center_residual.squaredNorm())) /
      scale;
  const double kkt = std::max({r_feas, r_slack, r_center});
  if (kkt > tol) {
    char detail[160];
    std::snprintf(detail, sizeof detail,
                  "project_exact: no convergence within sweep cap "
                  "(feasibility %.3e, slackness %.3e, center %.3e, scale %.3e)",
                  r_feas, r_slack, r_center, scale);
    throw SolverError(detail, kkt, sweeps);
  }

  PolicyBundle out(bar.spec, bar.dict, std::move(task_w), std::move(central_w), epsilon);

  const double active_tol = 10.0 * tol * (1.0 + epsilon) + 1e-12;
  std::vector<bool> active(n);
  for (int i = 0; i < n; ++i) {
    const double d = (1.0 - theta[i]) * dist_to(i, g);
    active[i] = std::abs(d - epsilon) <= active_tol;
  }
  return ProjectionResult{std::move(out), std::move(mu), std::move(active), sweeps,
                          kkt};
}

/// Closed-form projection onto the relaxed (averaged) coupling set
/// { sum_i ||h_i - g||^2 <= N eps^2 }. The input center is ignored: the output
/// center is the exact mean of the inputs and each task policy is pulled a
/// fraction psi of the way back toward it, with psi chosen so the averaged
/// constraint is met exactly when active.
inline PolicyBundle project_relaxed(const KernelSpec& spec, const Dictionary& dict,
                                    const std::vector<Eigen::MatrixXd>& task_w_bar,
                                    double epsilon, const GramMatrix& gram) {
  if (epsilon < 0.0) throw ConfigError("project_relaxed: epsilon must be nonnegative");
  const int n = static_cast<int>(task_w_bar.size());
  if (n == 0) throw ConfigError("project_relaxed: need at least one task policy");

  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(task_w_bar[0].rows(), task_w_bar[0].cols());
  for (const auto& w : task_w_bar) mean += w;
  mean /= static_cast<double>(n);

  double spread = 0.0; // sum_i ||h_bar_i - mean||^2
  for (const auto& w : task_w_bar) spread += rkhs_norm_sq(w - mean, gram);

  double psi = 1.0;
  if (spread > 0.0)
    psi = std::min(1.0, std::sqrt(static_cast<double>(n)) * epsilon / std::sqrt(spread));

  std::vector<Eigen::MatrixXd> task_w(n);
  for (int i = 0; i < n; ++i) task_w[i] = (1.0 - psi) * mean + psi * task_w_bar[i];
  return PolicyBundle(spec, dict, std::move(task_w), std::move(mean), epsilon);
}

inline PolicyBundle project_relaxed(const std::vector<KernelPolicy>& task_policies_bar,
                                    double epsilon, const GramMatrix& gram) {
  if (task_policies_bar.empty())
    throw ConfigError("project_relaxed: need at least one task policy");
  std::vector<Eigen::MatrixXd> ws;
  ws.reserve(task_policies_bar.size());
  for (const auto& p : task_policies_bar) {
    if (!(p.dict == task_policies_bar.front().dict))
      throw ConfigError("project_relaxed: dictionary mismatch");
    ws.push_back(p.weights);
  }
  return project_relaxed(task_policies_bar.front().spec, task_policies_bar.front().dict,
                         ws, epsilon, gram);
}

inline PolicyBundle project_relaxed(const PolicyBundle& bar, double epsilon,
                                    const GramMatrix& gram) {
  return project_relaxed(bar.spec, bar.dict, bar.task_weights, epsilon, gram);
}

/// Side-by-side run of the exact and relaxed projections on the same input,
/// with the distance bounds that hold whenever the input center is within
/// epsilon of the mean of the inputs. The per-task bound uses the
/// conservative envelope eps * (2 + sqrt(N)).
struct ProjectionComparison {
  double center_distance = 0.0;          // ||g - g'||
  Eigen::VectorXd task_distances;        // ||h_i - h'_i||
  double input_center_gap = 0.0;         // ||g_bar - g'||
  bool hypothesis_held = false;          // input_center_gap <= eps
  bool center_bound_held = false;        // center_distance <= eps + slack
  bool task_bounds_held = false;         // task_distances <= eps(2+sqrt(N)) + slack
  ProjectionResult exact;
  PolicyBundle relaxed;
};

inline ProjectionComparison compare_projections(const PolicyBundle& bar, double epsilon,
                                                const GramMatrix& gram,
                                                double tol = 1e-8,
                                                double bound_slack = 1e-8) {
  ProjectionComparison rep;
  rep.exact = project_exact(bar, epsilon, gram, tol);
  rep.relaxed = project_relaxed(bar, epsilon, gram);

  const int n = bar.n_tasks();
  rep.center_distance = rkhs_distance(rep.exact.bundle.central_weights,
                                      rep.relaxed.central_weights, gram);
  rep.input_center_gap =
      rkhs_distance(bar.central_weights, rep.relaxed.central_weights, gram);
  rep.hypothesis_held = rep.input_center_gap <= epsilon;
  rep.task_distances.resize(n);
  const double task_bound = epsilon * (2.0 + std::sqrt(static_cast<double>(n)));
  rep.center_bound_held = rep.center_distance <= epsilon + bound_slack;
  rep.task_bounds_held = true;
  for (int i = 0; i < n; ++i) {
    rep.task_distances[i] = rkhs_distance(rep.exact.bundle.task_weights[i],
                                          rep.relaxed.task_weights[i], gram);
    if (rep.task_distances[i] > task_bound + bound_slack) rep.task_bounds_held = false;
  }
  return rep;
}

/// Supremum of <direction, h - anchor> over the ball { ||h - center|| <= radius }:
/// <direction, center - anchor> + radius * ||direction||. Used by the
/// stationarity stopping rule.
inline double ball_support(const Eigen::MatrixXd& direction,
                           const Eigen::MatrixXd& center, double radius,
                           const Eigen::MatrixXd& anchor, const GramMatrix& gram) {
  return inner_product(direction, center - anchor, gram) +
         radius * rkhs_norm(direction, gram);
}

inline double ball_support(const KernelPolicy& direction, const KernelPolicy& center,
                           double radius, const KernelPolicy& anchor,
                           const GramMatrix& gram) {
  if (!(direction.dict == center.dict) || !(direction.dict == anchor.dict))
    throw ConfigError("ball_support: dictionary mismatch");
  return ball_support(direction.weights, center.weights, radius, anchor.weights, gram);
}

} // namespace crossrl
