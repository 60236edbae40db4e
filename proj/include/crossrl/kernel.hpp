#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "crossrl/errors.hpp"

namespace crossrl {

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

/// Anisotropic Gaussian base kernel over the state space. `length_scales`
/// holds the per-dimension diagonal of the kernel covariance; dimensions
/// listed in `angular_dims` are treated as angles and their differences are
/// wrapped to (-pi, pi] before squaring. The p action channels share this
/// scalar kernel, so the matrix-valued kernel is never materialized.
struct KernelSpec {
  int state_dim = 0;
  int action_dim = 0;
  Eigen::VectorXd length_scales;
  std::vector<int> angular_dims;
  std::vector<char> angular_mask; // one flag per state dimension

  KernelSpec() = default;

  KernelSpec(int q, int p, Eigen::VectorXd scales, std::vector<int> angular = {})
      : state_dim(q), action_dim(p), length_scales(std::move(scales)),
        angular_dims(std::move(angular)), angular_mask(q, 0) {
    if (q <= 0 || p <= 0) throw ConfigError("KernelSpec: dimensions must be positive");
    if (length_scales.size() != q)
      throw ConfigError("KernelSpec: need one length scale per state dimension");
    if ((length_scales.array() <= 0.0).any())
      throw ConfigError("KernelSpec: length scales must be strictly positive");
    std::sort(angular_dims.begin(), angular_dims.end());
    angular_dims.erase(std::unique(angular_dims.begin(), angular_dims.end()),
                       angular_dims.end());
    for (int d : angular_dims) {
      if (d < 0 || d >= q) throw ConfigError("KernelSpec: angular dim out of range");
      angular_mask[d] = 1;
    }
  }

  bool is_angular(int d) const { return angular_mask[d] != 0; }
};

/// Base kernel evaluation; result lies in (0, 1] and equals 1 iff the
/// (wrapped) displacement is zero.
inline double kernel_eval(const KernelSpec& spec, const Eigen::VectorXd& s,
                          const Eigen::VectorXd& t) {
  if (s.size() != spec.state_dim || t.size() != spec.state_dim)
    throw ConfigError("kernel_eval: state dimension mismatch");
  double quad = 0.0;
  for (int d = 0; d < spec.state_dim; ++d) {
    double delta = s[d] - t[d];
    if (spec.is_angular(d)) delta = wrap_angle(delta);
    quad += delta * delta / spec.length_scales[d];
  }
  return std::exp(-0.5 * quad);
}

} // namespace crossrl
