#pragma once

#include <Eigen/Core>
#include <utility>
#include <vector>

#include "crossrl/kernel.hpp"

namespace crossrl {

/// Ordered collection of kernel centers (knots), one row per knot.
/// An empty dictionary represents the zero function.
class Dictionary {
public:
  Dictionary() = default;
  explicit Dictionary(int state_dim) : knots_(0, state_dim) {}
  explicit Dictionary(Eigen::MatrixXd knots) : knots_(std::move(knots)) {}

  int size() const { return static_cast<int>(knots_.rows()); }
  int state_dim() const { return static_cast<int>(knots_.cols()); }
  const Eigen::MatrixXd& matrix() const { return knots_; }
  Eigen::VectorXd knot(int m) const { return knots_.row(m).transpose(); }

  int append(const Eigen::VectorXd& s) {
    knots_.conservativeResize(knots_.rows() + 1, Eigen::NoChange);
    knots_.row(knots_.rows() - 1) = s.transpose();
    return size() - 1;
  }

  /// Index of a stored knot within Euclidean distance `tol` of `s`, or -1.
  int find_within(const Eigen::VectorXd& s, double tol) const {
    for (int m = 0; m < size(); ++m)
      if ((knots_.row(m).transpose() - s).norm() <= tol) return m;
    return -1;
  }

  /// Removes the rows listed in `sorted_indices` (ascending, unique).
  void remove(const std::vector<int>& sorted_indices) {
    if (sorted_indices.empty()) return;
    Eigen::MatrixXd out(knots_.rows() - static_cast<long>(sorted_indices.size()),
                        knots_.cols());
    std::size_t next = 0;
    long row = 0;
    for (long m = 0; m < knots_.rows(); ++m) {
      if (next < sorted_indices.size() && sorted_indices[next] == m) {
        ++next;
        continue;
      }
      out.row(row++) = knots_.row(m);
    }
    knots_ = std::move(out);
  }

  bool operator==(const Dictionary& other) const { return knots_ == other.knots_; }

private:
  Eigen::MatrixXd knots_;
};

/// A function in the kernel expansion form: row m of `weights` is the action
/// weight attached to knot m.
struct KernelPolicy {
  KernelSpec spec;
  Dictionary dict;
  Eigen::MatrixXd weights; // M x p

  KernelPolicy() = default;

  KernelPolicy(KernelSpec sp, Dictionary d, Eigen::MatrixXd w)
      : spec(std::move(sp)), dict(std::move(d)), weights(std::move(w)) {
    if (weights.rows() != dict.size() || weights.cols() != spec.action_dim)
      throw ConfigError("KernelPolicy: weight shape does not match dictionary");
    if (dict.size() > 0 && dict.state_dim() != spec.state_dim)
      throw ConfigError("KernelPolicy: dictionary state dimension mismatch");
  }

  static KernelPolicy zero(const KernelSpec& spec) {
    return KernelPolicy(spec, Dictionary(spec.state_dim),
                        Eigen::MatrixXd(0, spec.action_dim));
  }
};

/// Vector of base-kernel evaluations of every knot against `s`.
inline Eigen::VectorXd kernel_column(const KernelSpec& spec, const Dictionary& dict,
                                     const Eigen::VectorXd& s) {
  const Eigen::MatrixXd& knots = dict.matrix();
  Eigen::VectorXd k(knots.rows());
  for (long m = 0; m < knots.rows(); ++m) {
    double quad = 0.0;
    for (int d = 0; d < spec.state_dim; ++d) {
      double delta = knots(m, d) - s[d];
      if (spec.is_angular(d)) delta = wrap_angle(delta);
      quad += delta * delta / spec.length_scales[d];
    }
    k[m] = std::exp(-0.5 * quad);
  }
  return k;
}

inline Eigen::VectorXd policy_eval(const KernelSpec& spec, const Dictionary& dict,
                                   const Eigen::MatrixXd& weights,
                                   const Eigen::VectorXd& s) {
  if (s.size() != spec.state_dim)
    throw ConfigError("policy_eval: state dimension mismatch");
  if (dict.size() == 0) return Eigen::VectorXd::Zero(spec.action_dim);
  return weights.transpose() * kernel_column(spec, dict, s);
}

inline Eigen::VectorXd policy_eval(const KernelPolicy& policy, const Eigen::VectorXd& s) {
  return policy_eval(policy.spec, policy.dict, policy.weights, s);
}

/// N task policies plus one central policy over a single shared dictionary.
struct PolicyBundle {
  KernelSpec spec;
  Dictionary dict;
  std::vector<Eigen::MatrixXd> task_weights; // N matrices, each M x p
  Eigen::MatrixXd central_weights;           // M x p
  double epsilon = 0.0;

  PolicyBundle() = default;

  PolicyBundle(KernelSpec sp, Dictionary d, std::vector<Eigen::MatrixXd> tw,
               Eigen::MatrixXd cw, double eps)
      : spec(std::move(sp)), dict(std::move(d)), task_weights(std::move(tw)),
        central_weights(std::move(cw)), epsilon(eps) {
    validate();
  }

  static PolicyBundle zero(const KernelSpec& spec, int n_tasks, double eps = 0.0) {
    std::vector<Eigen::MatrixXd> tw(n_tasks, Eigen::MatrixXd(0, spec.action_dim));
    return PolicyBundle(spec, Dictionary(spec.state_dim), std::move(tw),
                        Eigen::MatrixXd(0, spec.action_dim), eps);
  }

  int n_tasks() const { return static_cast<int>(task_weights.size()); }
  int order() const { return dict.size(); }

  KernelPolicy task_policy(int i) const {
    return KernelPolicy(spec, dict, task_weights.at(i));
  }
  KernelPolicy central_policy() const {
    return KernelPolicy(spec, dict, central_weights);
  }

  Eigen::VectorXd eval_task(int i, const Eigen::VectorXd& s) const {
    return policy_eval(spec, dict, task_weights.at(i), s);
  }
  Eigen::VectorXd eval_central(const Eigen::VectorXd& s) const {
    return policy_eval(spec, dict, central_weights, s);
  }

  void validate() const {
    if (epsilon < 0.0) throw ConfigError("PolicyBundle: epsilon must be nonnegative");
    const long m = dict.size();
    const long p = spec.action_dim;
    if (central_weights.rows() != m || central_weights.cols() != p)
      throw ConfigError("PolicyBundle: central weights do not conform to dictionary");
    for (const auto& w : task_weights)
      if (w.rows() != m || w.cols() != p)
        throw ConfigError("PolicyBundle: task weights do not conform to dictionary");
  }
};

/// One policy's contribution of fresh knots (a gradient step's kernel
/// centers and their weight rows).
struct PolicyUpdate {
  Eigen::MatrixXd knots;   // R x q
  Eigen::MatrixXd weights; // R x p
};

struct MergeResult {
  PolicyBundle bundle;
  std::vector<int> appended; // dictionary indices of genuinely new knots
  // for task i, update row r landed at dictionary index row_indices[i][r]
  std::vector<std::vector<int>> row_indices;
};

/// Distance below which two knots are considered the same kernel center and
/// stored once. Prevents Gram rank collapse from repeated states.
inline constexpr double kKnotDedupTol = 1e-9;

/// Folds per-task expansions into the shared dictionary. Each task's function
/// becomes old + its own contribution; other policies receive zero weight
/// rows for knots they did not contribute. Near-duplicate knots are stored
/// once, with each policy keeping its own weight row.
inline MergeResult merge_dictionaries(const PolicyBundle& bundle,
                                      const std::vector<PolicyUpdate>& updates) {
  if (static_cast<int>(updates.size()) != bundle.n_tasks())
    throw ConfigError("merge_dictionaries: one update per task policy required");

  Dictionary dict = bundle.dict;
  std::vector<int> appended;
  std::vector<std::vector<int>> row_indices(bundle.n_tasks());
  // (task, dictionary index, weight row) triples to apply once shapes are final
  std::vector<std::tuple<int, int, Eigen::RowVectorXd>> contributions;

  for (int i = 0; i < bundle.n_tasks(); ++i) {
    const auto& up = updates[i];
    if (up.knots.rows() != up.weights.rows())
      throw ConfigError("merge_dictionaries: knot/weight row mismatch");
    if (up.knots.rows() > 0 && up.knots.cols() != bundle.spec.state_dim)
      throw ConfigError("merge_dictionaries: knot dimension mismatch");
    for (long r = 0; r < up.knots.rows(); ++r) {
      const Eigen::VectorXd s = up.knots.row(r).transpose();
      int idx = dict.find_within(s, kKnotDedupTol);
      if (idx < 0) {
        idx = dict.append(s);
        appended.push_back(idx);
      }
      row_indices[i].push_back(idx);
      contributions.emplace_back(i, idx, up.weights.row(r));
    }
  }

  const int m_new = dict.size();
  const int p = bundle.spec.action_dim;
  auto pad = [&](const Eigen::MatrixXd& w) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m_new, p);
    out.topRows(w.rows()) = w;
    return out;
  };

  std::vector<Eigen::MatrixXd> task_w;
  task_w.reserve(bundle.n_tasks());
  for (const auto& w : bundle.task_weights) task_w.push_back(pad(w));
  Eigen::MatrixXd central_w = pad(bundle.central_weights);

  for (const auto& [task, idx, row] : contributions) task_w[task].row(idx) += row;

  return MergeResult{PolicyBundle(bundle.spec, std::move(dict), std::move(task_w),
                                  std::move(central_w), bundle.epsilon),
                     std::move(appended), std::move(row_indices)};
}

} // namespace crossrl
