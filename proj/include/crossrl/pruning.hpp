#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "crossrl/gram.hpp"
#include "crossrl/policy.hpp"

namespace crossrl {

/// Ridge used inside the pruner's incremental least-squares machinery. Kept
/// two decades under the redundancy tolerance so the ridge floor of the
/// achieved-error identity cannot mask an exactly redundant knot.
inline constexpr double kPruneRidge = 1e-12;

/// Squared-error level treated as exact redundancy: knots this cheap are
/// removable even under a zero compression budget.
inline constexpr double kRedundancyTol = 1e-10;

/// Relative eigenvalue cutoff for the truncated pseudo-inverse.
inline constexpr double kPinvTruncation = 1e-10;

struct PruneReport {
  std::vector<int> removed_knots;  // ascending indices into the pre-call dictionary
  Eigen::VectorXd per_policy_bias; // N+1 RKHS norms: tasks first, central last
  int final_order = 0;
  bool cap_forced = false; // some removal ignored the budget to honor the cap
};

/// Best approximation of `policy` over its dictionary minus knot j: the
/// squared RKHS error and the re-solved reduced weights, computed with a
/// truncated eigen-decomposition pseudo-inverse of the reduced Gram.
inline std::pair<double, Eigen::MatrixXd>
removal_error(int j, const KernelPolicy& policy, const GramMatrix& gram) {
  const int m = policy.dict.size();
  const int p = policy.spec.action_dim;
  if (j < 0 || j >= m) throw ConfigError("removal_error: knot index out of range");
  if (gram.order() != m) throw ConfigError("removal_error: gram does not match");

  const Eigen::MatrixXd& k = gram.matrix();
  const double norm_sq = std::max(0.0, (k * policy.weights).cwiseProduct(policy.weights).sum());
  if (m == 1) return {norm_sq, Eigen::MatrixXd(0, p)};

  std::vector<int> keep;
  keep.reserve(m - 1);
  for (int r = 0; r < m; ++r)
    if (r != j) keep.push_back(r);

  Eigen::MatrixXd k_rr(m - 1, m - 1);
  Eigen::MatrixXd c(m - 1, p); // K_{reduced,full} * w
  for (int a = 0; a < m - 1; ++a) {
    for (int b = 0; b < m - 1; ++b) k_rr(a, b) = k(keep[a], keep[b]);
    c.row(a) = (k.row(keep[a]) * policy.weights);
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k_rr);
  const Eigen::VectorXd& d = es.eigenvalues();
  const double cutoff = kPinvTruncation * std::max(d.maxCoeff(), 0.0);
  Eigen::VectorXd dinv = Eigen::VectorXd::Zero(m - 1);
  for (int a = 0; a < m - 1; ++a)
    if (d[a] > cutoff && d[a] > 0.0) dinv[a] = 1.0 / d[a];
  Eigen::MatrixXd best =
      es.eigenvectors() * dinv.asDiagonal() * es.eigenvectors().transpose() * c;

  const double err = norm_sq - c.cwiseProduct(best).sum();
  return {std::max(0.0, err), std::move(best)};
}

/// Ridged inverse of the Gram matrix, maintained incrementally alongside it:
/// block updates when knots are appended, Schur downdates when rows are
/// removed, and a periodic rebuild to shed accumulated round-off.
class GramInverse {
public:
  GramInverse() = default;

  int order() const { return static_cast<int>(b_.rows()); }
  const Eigen::MatrixXd& matrix() const { return b_; }

  void rebuild(const GramMatrix& gram) {
    const int m = gram.order();
    Eigen::MatrixXd a =
        gram.matrix() + kPruneRidge * Eigen::MatrixXd::Identity(m, m);
    b_ = a.ldlt().solve(Eigen::MatrixXd::Identity(m, m));
    updates_since_rebuild_ = 0;
  }

  /// Extends the inverse for gram rows [first_new, gram.order()).
  void append(const GramMatrix& gram, int first_new) {
    if (first_new != order()) {
      rebuild(gram);
      return;
    }
    const int m_new = gram.order();
    const int nb = m_new - first_new;
    if (nb == 0) return;
    if (order() == 0 || ++updates_since_rebuild_ > 256) {
      rebuild(gram);
      return;
    }
    const auto& k = gram.matrix();
    const Eigen::MatrixXd u = k.topRightCorner(first_new, nb);
    Eigen::MatrixXd d = k.bottomRightCorner(nb, nb) +
                        kPruneRidge * Eigen::MatrixXd::Identity(nb, nb);
    const Eigen::MatrixXd bu = b_ * u;
    const Eigen::MatrixXd schur = d - u.transpose() * bu;
    const Eigen::MatrixXd schur_inv =
        schur.ldlt().solve(Eigen::MatrixXd::Identity(nb, nb));
    Eigen::MatrixXd out(m_new, m_new);
    out.topLeftCorner(first_new, first_new) =
        b_ + bu * schur_inv * bu.transpose();
    out.topRightCorner(first_new, nb) = -bu * schur_inv;
    out.bottomLeftCorner(nb, first_new) = out.topRightCorner(first_new, nb).transpose();
    out.bottomRightCorner(nb, nb) = schur_inv;
    b_ = std::move(out);

    // drift probe: one matching column of (K + ridge) B should be a unit vector
    const int probe = m_new / 2;
    Eigen::VectorXd col = k.col(probe);
    col[probe] += kPruneRidge;
    Eigen::VectorXd res = b_ * col;
    res[probe] -= 1.0;
    if (res.cwiseAbs().maxCoeff() > 1e-8) rebuild(gram);
  }

  /// Drops row/column `pos` (Schur downdate).
  void remove(int pos) {
    const int m = order();
    const double pivot = b_(pos, pos);
    Eigen::VectorXd col = b_.col(pos);
    Eigen::MatrixXd out(m - 1, m - 1);
    for (int a = 0, ar = 0; a < m; ++a) {
      if (a == pos) continue;
      for (int bcol = 0, bc = 0; bcol < m; ++bcol) {
        if (bcol == pos) continue;
        out(ar, bc) = b_(a, bcol) - col[a] * col[bcol] / pivot;
        ++bc;
      }
      ++ar;
    }
    b_ = std::move(out);
  }

private:
  Eigen::MatrixXd b_;
  int updates_since_rebuild_ = 0;
};

/// Common-dictionary greedy pruning. The central policy participates as one
/// more policy. Every candidate score is the cumulative squared error of the
/// best reduced-dictionary reconstruction of the ORIGINAL pre-call policy, so
/// the total per-call bias stays within the budget no matter how many knots
/// go. Knots are removed cheapest-first while the worst per-policy error
/// stays within beta (or is pure redundancy); once the budget is exhausted,
/// removals continue only as forced by the model-order cap and are flagged.
inline std::pair<PolicyBundle, PruneReport>
prune(const PolicyBundle& bundle, double beta, int order_cap, const GramMatrix& gram,
      GramInverse* inverse = nullptr) {
  if (beta < 0.0) throw ConfigError("prune: beta must be nonnegative");
  if (order_cap < 0) throw ConfigError("prune: order cap must be nonnegative");
  if (gram.order() != bundle.order()) throw ConfigError("prune: gram does not match");

  const int m0 = bundle.order();
  const int n_pol = bundle.n_tasks() + 1;
  const int p = bundle.spec.action_dim;
  const Eigen::MatrixXd& k = gram.matrix();

  std::vector<const Eigen::MatrixXd*> w(n_pol);
  for (int i = 0; i < bundle.n_tasks(); ++i) w[i] = &bundle.task_weights[i];
  w[n_pol - 1] = &bundle.central_weights;

  PruneReport report;
  report.per_policy_bias = Eigen::VectorXd::Zero(n_pol);
  report.final_order = m0;
  if (m0 == 0) {
    return {bundle, report};
  }

  // fixed per-call data: K w_i and ||h_i||^2 against the original dictionary
  std::vector<Eigen::MatrixXd> kw(n_pol);
  Eigen::VectorXd norm_sq(n_pol);
  for (int i = 0; i < n_pol; ++i) {
    kw[i] = k * (*w[i]);
    norm_sq[i] = std::max(0.0, kw[i].cwiseProduct(*w[i]).sum());
  }

  GramInverse local;
  GramInverse& inv = inverse ? *inverse : local;
  if (!inverse) inv.rebuild(gram);
  if (inv.order() != m0) throw ConfigError("prune: gram inverse out of sync");

  std::vector<int> survivors(m0);
  for (int r = 0; r < m0; ++r) survivors[r] = r;

  const double budget_sq = std::max(beta * beta, kRedundancyTol);

  // Ridged least-squares state for the current survivor set, carried across
  // removals by rank-one downdates: coeff_i are the re-solved weights and
  // base_est_i the ridged reconstruction residual of the original policy i.
  // The exact (unridged) achieved error obeys
  //   achieved_i = base_est_i - ridge * |coeff_i|_F^2,
  // which the accept test uses; the ranking uses the ridged scores directly.
  std::vector<Eigen::MatrixXd> coeff(n_pol);
  Eigen::VectorXd base_est(n_pol);
  {
    const Eigen::MatrixXd& b = inv.matrix();
    for (int i = 0; i < n_pol; ++i) {
      coeff[i] = b * kw[i];
      base_est[i] =
          std::max(0.0, norm_sq[i] - kw[i].cwiseProduct(coeff[i]).sum());
    }
  }

  while (!survivors.empty()) {
    const int ms = static_cast<int>(survivors.size());
    const Eigen::MatrixXd& b = inv.matrix();

    // cheapest candidate: worst-policy cumulative score if survivor r goes;
    // near-equal scores keep the earlier (lower) dictionary index
    int best_r = -1;
    double best_score = 0.0;
    for (int r = 0; r < ms; ++r) {
      const double pivot = std::max(b(r, r), 1e-300);
      double score = 0.0;
      for (int i = 0; i < n_pol; ++i) {
        const double e = base_est[i] + coeff[i].row(r).squaredNorm() / pivot;
        score = std::max(score, e);
      }
      if (best_r < 0 || score < best_score - 1e-12 * (1.0 + best_score)) {
        best_r = r;
        best_score = score;
      }
    }

    // tentative removal: downdated weights and the exact worst-policy error
    const double pivot = std::max(b(best_r, best_r), 1e-300);
    std::vector<Eigen::MatrixXd> wr(n_pol);
    Eigen::VectorXd base_next(n_pol);
    double worst_true = 0.0;
    for (int i = 0; i < n_pol; ++i) {
      wr[i].resize(ms - 1, p);
      for (int a = 0, ar = 0; a < ms; ++a) {
        if (a == best_r) continue;
        wr[i].row(ar++) =
            coeff[i].row(a) - (b(a, best_r) / pivot) * coeff[i].row(best_r);
      }
      base_next[i] = base_est[i] + coeff[i].row(best_r).squaredNorm() / pivot;
      const double achieved = base_next[i] - kPruneRidge * wr[i].squaredNorm();
      worst_true = std::max(worst_true, achieved);
    }

    const bool within_budget = worst_true <= budget_sq;
    const bool cap_pressure = ms > order_cap;
    if (!within_budget && !cap_pressure) break;
    if (!within_budget) report.cap_forced = true;

    report.removed_knots.push_back(survivors[best_r]);
    survivors.erase(survivors.begin() + best_r);
    inv.remove(best_r);
    coeff = std::move(wr);
    base_est = std::move(base_next);
  }

  std::sort(report.removed_knots.begin(), report.removed_knots.end());
  report.final_order = static_cast<int>(survivors.size());

  // exactly measured per-policy bias of the carried re-solved weights
  const int ms = static_cast<int>(survivors.size());
  Eigen::MatrixXd k_ss(ms, ms);
  for (int a = 0; a < ms; ++a)
    for (int bcol = 0; bcol < ms; ++bcol) k_ss(a, bcol) = k(survivors[a], survivors[bcol]);

  std::vector<Eigen::MatrixXd>& new_w = coeff;
  for (int i = 0; i < n_pol; ++i) {
    double cross = 0.0;
    for (int r = 0; r < ms; ++r) cross += kw[i].row(survivors[r]).dot(new_w[i].row(r));
    const double achieved = norm_sq[i] - 2.0 * cross +
                            (k_ss * new_w[i]).cwiseProduct(new_w[i]).sum();
    report.per_policy_bias[i] = std::sqrt(std::max(0.0, achieved));
  }

  Dictionary dict = bundle.dict;
  dict.remove(report.removed_knots);
  std::vector<Eigen::MatrixXd> task_w(new_w.begin(), new_w.end() - 1);
  PolicyBundle out(bundle.spec, std::move(dict), std::move(task_w),
                   std::move(new_w.back()), bundle.epsilon);
  return {std::move(out), std::move(report)};
}

} // namespace crossrl
