#pragma once

// Test-only reference minimizers, kept independent of the production
// projection solver: an augmented-Lagrangian outer loop whose piecewise
// quadratic subproblems are solved by a semismooth Newton method with
// backtracking.
//
// Every candidate decomposes into a component in span{inputs} plus an
// orthogonal remainder; dropping the remainder lowers the objective and
// loosens every constraint, so the minimizer lies in the span. The oracle
// therefore works in the coordinates of the N+1 input functions, with their
// pairwise K-inner-product matrix S as the metric. Problem size is
// (N+1)^2 <= 25 scalars, so dense Newton solves are trivial.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

namespace crossrl::testing {

struct OracleResult {
  std::vector<Eigen::MatrixXd> task_w;
  Eigen::MatrixXd central_w;
  double objective = 0.0; // cost term only, at the returned point
};

/// Minimizes the projection objective subject to the coupling constraints.
///
/// relaxed == false:  sum_i ||A_i - Abar_i||_K^2 + ||c - cbar||_K^2
///                    s.t. ||A_i - c||_K^2 <= eps^2 for every i
/// relaxed == true:   sum_i ||A_i - Abar_i||_K^2   (center not in the cost)
///                    s.t. sum_i ||A_i - c||_K^2 <= N eps^2
inline OracleResult penalty_minimizer(const std::vector<Eigen::MatrixXd>& bar_task,
                                      const Eigen::MatrixXd& bar_central, double eps,
                                      const Eigen::MatrixXd& k, bool relaxed) {
  const int n = static_cast<int>(bar_task.size());
  const int nb = n + 1;      // basis: [c_bar, A_bar_1 .. A_bar_N]
  const int nv = (n + 1) * nb; // stacked coordinates of A_1..A_N then c
  const int n_con = relaxed ? 1 : n;
  const double rho = 50.0;

  std::vector<const Eigen::MatrixXd*> basis{&bar_central};
  for (const auto& w : bar_task) basis.push_back(&w);

  Eigen::MatrixXd s(nb, nb);
  for (int a = 0; a < nb; ++a) {
    const Eigen::MatrixXd ka = k * (*basis[a]);
    for (int b = 0; b < nb; ++b) s(a, b) = ka.cwiseProduct(*basis[b]).sum();
  }
  s = 0.5 * (s + s.transpose().eval());

  auto block = [&](Eigen::VectorXd& z, int v) {
    return Eigen::Ref<Eigen::VectorXd>(z.segment(v * nb, nb));
  };
  auto cblock = [&](const Eigen::VectorXd& z, int v) {
    return Eigen::VectorXd(z.segment(v * nb, nb));
  };
  auto e = [&](int a) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(nb);
    v[a] = 1.0;
    return v;
  };
  auto qf = [&](const Eigen::VectorXd& v) { return v.dot(s * v); };

  Eigen::VectorXd z = Eigen::VectorXd::Zero(nv);
  for (int i = 0; i < n; ++i) block(z, i) = e(i + 1);
  block(z, n) = e(0);

  auto cost = [&](const Eigen::VectorXd& zz) {
    double f = relaxed ? 0.0 : qf(cblock(zz, n) - e(0));
    for (int i = 0; i < n; ++i) f += qf(cblock(zz, i) - e(i + 1));
    return f;
  };

  auto assemble = [&](const Eigen::VectorXd& coords) {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(bar_central.rows(), bar_central.cols());
    for (int a = 0; a < nb; ++a) w += coords[a] * (*basis[a]);
    return w;
  };

  auto finish = [&](const Eigen::VectorXd& zz) {
    OracleResult res;
    res.task_w.resize(n);
    for (int i = 0; i < n; ++i) res.task_w[i] = assemble(cblock(zz, i));
    res.central_w = assemble(cblock(zz, n));
    res.objective = cost(zz);
    return res;
  };

  auto constraints = [&](const Eigen::VectorXd& zz) {
    Eigen::VectorXd g(n_con);
    if (relaxed) {
      double v = -static_cast<double>(n) * eps * eps;
      for (int i = 0; i < n; ++i) v += qf(cblock(zz, i) - cblock(zz, n));
      g[0] = v;
    } else {
      for (int i = 0; i < n; ++i)
        g[i] = qf(cblock(zz, i) - cblock(zz, n)) - eps * eps;
    }
    return g;
  };

  if (eps == 0.0) {
    // Constraints degenerate to A_i == c; substitute and minimize the
    // remaining convex quadratic over c alone (exact linear solve).
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nb);
    double count = static_cast<double>(n) + (relaxed ? 0.0 : 1.0);
    if (!relaxed) rhs += e(0);
    for (int i = 0; i < n; ++i) rhs += e(i + 1);
    Eigen::MatrixXd lhs = count * s + 1e-13 * Eigen::MatrixXd::Identity(nb, nb);
    Eigen::VectorXd c = lhs.ldlt().solve(s * rhs);
    Eigen::VectorXd zz(nv);
    for (int v = 0; v <= n; ++v) zz.segment(v * nb, nb) = c;
    return finish(zz);
  }

  auto lagrangian = [&](const Eigen::VectorXd& zz, const Eigen::VectorXd& lam) {
    const Eigen::VectorXd g = constraints(zz);
    double f = cost(zz);
    for (int j = 0; j < n_con; ++j) {
      const double sj = std::max(0.0, lam[j] + 2.0 * rho * g[j]);
      f += (sj * sj - lam[j] * lam[j]) / (4.0 * rho);
    }
    return f;
  };

  // gradient and generalized Hessian of the augmented Lagrangian
  auto derivatives = [&](const Eigen::VectorXd& zz, const Eigen::VectorXd& lam,
                         Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
    grad = Eigen::VectorXd::Zero(nv);
    hess = Eigen::MatrixXd::Zero(nv, nv);
    for (int i = 0; i < n; ++i) {
      grad.segment(i * nb, nb) = 2.0 * (s * (cblock(zz, i) - e(i + 1)));
      hess.block(i * nb, i * nb, nb, nb) += 2.0 * s;
    }
    if (!relaxed) {
      grad.segment(n * nb, nb) = 2.0 * (s * (cblock(zz, n) - e(0)));
      hess.block(n * nb, n * nb, nb, nb) += 2.0 * s;
    }

    const Eigen::VectorXd g = constraints(zz);
    for (int j = 0; j < n_con; ++j) {
      const double sj = std::max(0.0, lam[j] + 2.0 * rho * g[j]);
      if (sj <= 0.0) continue;
      // gradient of g_j and its rank-one outer product
      Eigen::VectorXd gj = Eigen::VectorXd::Zero(nv);
      const auto add_pair = [&](int i) {
        const Eigen::VectorXd d = 2.0 * (s * (cblock(zz, i) - cblock(zz, n)));
        gj.segment(i * nb, nb) += d;
        gj.segment(n * nb, nb) -= d;
        // curvature of g_j: 2S on (i,i) and (c,c), -2S cross
        hess.block(i * nb, i * nb, nb, nb) += sj * 2.0 * s;
        hess.block(n * nb, n * nb, nb, nb) += sj * 2.0 * s;
        hess.block(i * nb, n * nb, nb, nb) -= sj * 2.0 * s;
        hess.block(n * nb, i * nb, nb, nb) -= sj * 2.0 * s;
      };
      if (relaxed)
        for (int i = 0; i < n; ++i) add_pair(i);
      else
        add_pair(j);
      grad += sj * gj;
      hess += 2.0 * rho * gj * gj.transpose();
    }
  };

  Eigen::VectorXd lam = Eigen::VectorXd::Zero(n_con);
  const Eigen::MatrixXd ridge = 1e-12 * Eigen::MatrixXd::Identity(nv, nv);
  for (int outer = 0; outer < 400; ++outer) {
    for (int iter = 0; iter < 200; ++iter) {
      Eigen::VectorXd grad;
      Eigen::MatrixXd hess;
      derivatives(z, lam, grad, hess);
      const double f0 = lagrangian(z, lam);
      if (grad.cwiseAbs().maxCoeff() <= 1e-13 * (1.0 + std::abs(f0))) break;

      Eigen::VectorXd dir = (hess + ridge).ldlt().solve(grad);
      double descent = grad.dot(dir);
      if (descent <= 0.0) { // fall back to plain gradient
        dir = grad;
        descent = grad.squaredNorm();
      }
      double step = 1.0;
      bool accepted = false;
      for (int bt = 0; bt < 60; ++bt) {
        if (lagrangian(z - step * dir, lam) <= f0 - 1e-4 * step * descent) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) break;
      z -= step * dir;
    }
    const Eigen::VectorXd g = constraints(z);
    Eigen::VectorXd lam_next(n_con);
    for (int j = 0; j < n_con; ++j)
      lam_next[j] = std::max(0.0, lam[j] + 2.0 * rho * g[j]);
    const double lam_move = (lam_next - lam).cwiseAbs().maxCoeff();
    const double lam_scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
    lam = lam_next;
    if (lam_move <= 1e-12 * lam_scale && g.maxCoeff() <= 1e-13) break;
  }
  return finish(z);
}

} // namespace crossrl::testing
