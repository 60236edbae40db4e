#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <utility>
#include <vector>

#include "crossrl/policy.hpp"

namespace crossrl {

/// Base-kernel Gram matrix of a dictionary. Kept in sync with the dictionary
/// incrementally: rows/columns are appended when knots are inserted and
/// deleted when knots are pruned, instead of rebuilding from scratch.
class GramMatrix {
public:
  GramMatrix() = default;
  explicit GramMatrix(Eigen::MatrixXd k) : k_(std::move(k)) {
    if (k_.rows() != k_.cols()) throw ConfigError("GramMatrix: must be square");
  }

  static GramMatrix build(const KernelSpec& spec, const Dictionary& dict) {
    const int m = dict.size();
    Eigen::MatrixXd k(m, m);
    for (int a = 0; a < m; ++a) {
      k(a, a) = 1.0;
      for (int b = a + 1; b < m; ++b) {
        const double v = kernel_eval(spec, dict.knot(a), dict.knot(b));
        k(a, b) = v;
        k(b, a) = v;
      }
    }
    return GramMatrix(std::move(k));
  }

  int order() const { return static_cast<int>(k_.rows()); }
  const Eigen::MatrixXd& matrix() const { return k_; }

  /// Appends rows/columns for dictionary knots [first_new, dict.size()).
  void append(const KernelSpec& spec, const Dictionary& dict, int first_new) {
    const int m_old = order();
    const int m_new = dict.size();
    if (first_new != m_old || m_new < m_old)
      throw ConfigError("GramMatrix::append: dictionary out of sync");
    k_.conservativeResize(m_new, m_new);
    for (int a = m_old; a < m_new; ++a) {
      for (int b = 0; b <= a; ++b) {
        const double v = (a == b) ? 1.0 : kernel_eval(spec, dict.knot(a), dict.knot(b));
        k_(a, b) = v;
        k_(b, a) = v;
      }
    }
  }

  /// Deletes the rows/columns listed in `sorted_indices` (ascending, unique).
  void remove(const std::vector<int>& sorted_indices) {
    if (sorted_indices.empty()) return;
    const int m_old = order();
    std::vector<int> keep;
    keep.reserve(m_old - sorted_indices.size());
    std::size_t next = 0;
    for (int m = 0; m < m_old; ++m) {
      if (next < sorted_indices.size() && sorted_indices[next] == m) {
        ++next;
        continue;
      }
      keep.push_back(m);
    }
    Eigen::MatrixXd out(keep.size(), keep.size());
    for (std::size_t a = 0; a < keep.size(); ++a)
      for (std::size_t b = 0; b < keep.size(); ++b) out(a, b) = k_(keep[a], keep[b]);
    k_ = std::move(out);
  }

  double min_eigenvalue() const {
    if (order() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k_, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }

  /// Positive semidefinite within round-off: smallest eigenvalue no lower
  /// than -rel_tol times the largest.
  bool is_psd(double rel_tol = 1e-9) const {
    if (order() == 0) return true;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k_, Eigen::EigenvaluesOnly);
    const double hi = es.eigenvalues().maxCoeff();
    return es.eigenvalues().minCoeff() >= -rel_tol * std::max(hi, 1.0);
  }

  bool is_symmetric(double tol = 1e-12) const {
    if (order() == 0) return true;
    return (k_ - k_.transpose()).cwiseAbs().maxCoeff() <= tol;
  }

private:
  Eigen::MatrixXd k_;
};

inline GramMatrix gram(const KernelSpec& spec, const Dictionary& dict) {
  return GramMatrix::build(spec, dict);
}

/// RKHS inner product of two coefficient matrices over the same Gram matrix:
/// the action channels aggregate, sum_d wf[:,d]' K wg[:,d].
inline double inner_product(const Eigen::MatrixXd& wf, const Eigen::MatrixXd& wg,
                            const GramMatrix& gram) {
  if (wf.rows() != gram.order() || wg.rows() != gram.order() || wf.cols() != wg.cols())
    throw ConfigError("inner_product: coefficient shape mismatch");
  if (gram.order() == 0) return 0.0;
  return (gram.matrix() * wg).cwiseProduct(wf).sum();
}

inline double inner_product(const KernelPolicy& f, const KernelPolicy& g,
                            const GramMatrix& gram) {
  if (!(f.dict == g.dict)) throw ConfigError("inner_product: dictionary mismatch");
  return inner_product(f.weights, g.weights, gram);
}

inline double rkhs_norm_sq(const Eigen::MatrixXd& w, const GramMatrix& gram) {
  return std::max(0.0, inner_product(w, w, gram));
}

inline double rkhs_norm(const Eigen::MatrixXd& w, const GramMatrix& gram) {
  return std::sqrt(rkhs_norm_sq(w, gram));
}

inline double rkhs_distance(const Eigen::MatrixXd& wf, const Eigen::MatrixXd& wg,
                            const GramMatrix& gram) {
  return rkhs_norm(wf - wg, gram);
}

inline double rkhs_distance(const KernelPolicy& f, const KernelPolicy& g,
                            const GramMatrix& gram) {
  if (!(f.dict == g.dict)) throw ConfigError("rkhs_distance: dictionary mismatch");
  return rkhs_distance(f.weights, g.weights, gram);
}

} // namespace crossrl
