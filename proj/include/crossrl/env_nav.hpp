#pragma once

#include <Eigen/Core>
#include <cmath>
#include <fstream>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "crossrl/kernel.hpp"

namespace crossrl {

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double psi = 0.0; // heading, wrapped to (-pi, pi]
};

/// Unicycle Euler step. Only forward motion is allowed: the commanded
/// velocity is clamped at zero before use.
inline Pose step_pose(const Pose& pose, double forward, double turn_rate, double dt) {
  const double v = std::max(forward, 0.0);
  Pose next;
  next.x = pose.x + dt * v * std::cos(pose.psi);
  next.y = pose.y + dt * v * std::sin(pose.psi);
  next.psi = wrap_angle(pose.psi + dt * turn_rate);
  return next;
}

/// Egocentric observation tuple; the order of to_vector() matches the
/// navigation kernel length scales.
struct Observation {
  double obstacle_distance = 0.0; // agent to obstacle center
  double obstacle_bearing = 0.0;
  double goal_distance = 0.0;
  double goal_bearing = 0.0;
  double occlusion_half_angle = 0.0;

  Eigen::VectorXd to_vector() const {
    Eigen::VectorXd v(5);
    v << obstacle_distance, obstacle_bearing, goal_distance, goal_bearing,
        occlusion_half_angle;
    return v;
  }
};

class Obstacle {
public:
  enum class Shape { Circle, Ellipse };

  static Obstacle circle(const Eigen::Vector2d& center, double radius) {
    if (radius <= 0.0) throw ConfigError("Obstacle: radius must be positive");
    Obstacle o;
    o.shape_ = Shape::Circle;
    o.center_ = center;
    o.semi_axes_ = Eigen::Vector2d::Constant(radius);
    return o;
  }

  static Obstacle ellipse(const Eigen::Vector2d& center,
                          const Eigen::Vector2d& semi_axes) {
    if (semi_axes.minCoeff() <= 0.0)
      throw ConfigError("Obstacle: semi-axes must be positive");
    Obstacle o;
    o.shape_ = Shape::Ellipse;
    o.center_ = center;
    o.semi_axes_ = semi_axes;
    return o;
  }

  Shape shape() const { return shape_; }
  const Eigen::Vector2d& center() const { return center_; }
  double radius() const { return semi_axes_[0]; }
  const Eigen::Vector2d& semi_axes() const { return semi_axes_; }

  /// Interior test, boundary inclusive.
  bool contains(const Eigen::Vector2d& point) const {
    const Eigen::Vector2d d = point - center_;
    if (shape_ == Shape::Circle) return d.norm() <= semi_axes_[0];
    const double qx = d[0] / semi_axes_[0];
    const double qy = d[1] / semi_axes_[1];
    return qx * qx + qy * qy <= 1.0;
  }

  double center_distance(const Eigen::Vector2d& point) const {
    return (point - center_).norm();
  }

  /// Gap between the point and the boundary measured along the ray from the
  /// obstacle center (exact for circles); used to pick the nearest obstacle.
  double boundary_gap(const Eigen::Vector2d& point) const {
    const Eigen::Vector2d d = point - center_;
    const double dist = d.norm();
    if (dist < 1e-12) return -semi_axes_.maxCoeff();
    if (shape_ == Shape::Circle) return dist - semi_axes_[0];
    const Eigen::Vector2d u = d / dist;
    const double ux = u[0] / semi_axes_[0];
    const double uy = u[1] / semi_axes_[1];
    return dist - 1.0 / std::sqrt(ux * ux + uy * uy);
  }

  /// Half the angle subtended by the obstacle as seen from the point. For
  /// circles this is asin(r/d); for ellipses it comes from the two tangent
  /// lines through the point.
  double occlusion_half_angle(const Eigen::Vector2d& point) const {
    const Eigen::Vector2d d = point - center_;
    const double dist = d.norm();
    if (shape_ == Shape::Circle) {
      if (dist <= semi_axes_[0]) return 0.5 * std::numbers::pi;
      return std::asin(semi_axes_[0] / dist);
    }
    // tangency points of the ellipse boundary seen from `point`
    const double gx = (center_[0] - point[0]) / semi_axes_[0];
    const double gy = (center_[1] - point[1]) / semi_axes_[1];
    const double r = std::hypot(gx, gy);
    if (r <= 1.0) return 0.5 * std::numbers::pi; // on or inside
    const double chi = std::atan2(gy, gx);
    const double delta = std::acos(-1.0 / r);
    double half = 0.0;
    Eigen::Vector2d tangent_dir[2];
    for (int s = 0; s < 2; ++s) {
      const double phi = chi + (s == 0 ? delta : -delta);
      const Eigen::Vector2d b(center_[0] + semi_axes_[0] * std::cos(phi),
                              center_[1] + semi_axes_[1] * std::sin(phi));
      tangent_dir[s] = b - point;
    }
    const double ang0 = std::atan2(tangent_dir[0][1], tangent_dir[0][0]);
    const double ang1 = std::atan2(tangent_dir[1][1], tangent_dir[1][0]);
    half = 0.5 * std::abs(wrap_angle(ang0 - ang1));
    return half;
  }

private:
  Shape shape_ = Shape::Circle;
  Eigen::Vector2d center_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d semi_axes_ = Eigen::Vector2d::Ones();
};

inline bool collision(const Pose& pose, const Obstacle& obstacle) {
  return obstacle.contains(Eigen::Vector2d(pose.x, pose.y));
}

/// -100 on collision, otherwise the goal-proximity reward.
inline double nav_reward(bool collided, double goal_distance) {
  return collided ? -100.0 : 10.0 - 10.0 * goal_distance;
}

/// Egocentric observation of a goal and one obstacle from a pose.
inline Observation observe(const Pose& pose, const Obstacle& obstacle,
                           const Eigen::Vector2d& goal) {
  const Eigen::Vector2d at(pose.x, pose.y);
  Observation obs;
  obs.goal_distance = (goal - at).norm();
  obs.goal_bearing = wrap_angle(std::atan2(goal[1] - at[1], goal[0] - at[0]) - pose.psi);
  obs.obstacle_distance = obstacle.center_distance(at);
  const Eigen::Vector2d oc = obstacle.center() - at;
  obs.obstacle_bearing = wrap_angle(std::atan2(oc[1], oc[0]) - pose.psi);
  obs.occlusion_half_angle = obstacle.occlusion_half_angle(at);
  return obs;
}

struct StartSpec {
  enum class Kind { Fixed, UniformBox };
  Kind kind = Kind::Fixed;
  Eigen::Vector2d point = Eigen::Vector2d::Zero(); // Fixed
  Eigen::Vector2d lo = Eigen::Vector2d::Zero();    // UniformBox
  Eigen::Vector2d hi = Eigen::Vector2d::Zero();

  static StartSpec fixed(const Eigen::Vector2d& p) {
    StartSpec s;
    s.kind = Kind::Fixed;
    s.point = p;
    return s;
  }
  static StartSpec uniform(const Eigen::Vector2d& lo, const Eigen::Vector2d& hi) {
    StartSpec s;
    s.kind = Kind::UniformBox;
    s.lo = lo;
    s.hi = hi;
    return s;
  }

  /// Fixed starts face heading zero; box starts draw a uniform heading too.
  Pose sample(std::mt19937_64& rng) const {
    if (kind == Kind::Fixed) return Pose{point[0], point[1], 0.0};
    std::uniform_real_distribution<double> ux(lo[0], hi[0]), uy(lo[1], hi[1]);
    std::uniform_real_distribution<double> upsi(-std::numbers::pi, std::numbers::pi);
    const double x = ux(rng), y = uy(rng), psi = upsi(rng);
    return Pose{x, y, wrap_angle(psi)};
  }
};

struct Scenario {
  std::string name;
  std::vector<Obstacle> obstacles;
  std::vector<Eigen::Vector2d> goals;
  StartSpec start;
  double step_time = 0.5;
  Eigen::Vector2d bounds_lo = Eigen::Vector2d::Zero();
  Eigen::Vector2d bounds_hi = Eigen::Vector2d::Constant(12.0);

  void validate() const {
    if (goals.empty()) throw ConfigError("Scenario: needs at least one goal");
    if (step_time <= 0.0) throw ConfigError("Scenario: step time must be positive");
  }
};

// --- presets -----------------------------------------------------------

/// Kernel over the five-dimensional egocentric observation; the three angular
/// components get pi-scaled length scales and wrapped differences.
inline KernelSpec nav_kernel_spec() {
  Eigen::VectorXd scales(5);
  scales << 1.0, std::numbers::pi / 5.0, 1.0, std::numbers::pi / 5.0,
      std::numbers::pi / 10.0;
  return KernelSpec(5, 2, scales, {1, 3, 4});
}

inline Scenario make_task(int index) {
  Scenario s;
  s.start = StartSpec::uniform({0.0, 0.0}, {10.0, 10.0});
  s.goals = {{5.0, 6.0}};
  s.step_time = 0.5;
  switch (index) {
    case 1:
      s.name = "task1";
      s.obstacles = {Obstacle::circle({7.0, 2.0}, 0.5)};
      break;
    case 2:
      s.name = "task2";
      s.obstacles = {Obstacle::circle({2.0, 2.0}, 1.0)};
      break;
    case 3:
      s.name = "task3";
      s.obstacles = {Obstacle::circle({7.0, 7.0}, 2.0)};
      break;
    default:
      throw ConfigError("make_task: index must be 1, 2 or 3");
  }
  return s;
}

inline std::vector<Scenario> make_training_tasks() {
  return {make_task(1), make_task(2), make_task(3)};
}

inline Scenario make_eval_circle(double radius = 1.0) {
  Scenario s;
  s.name = "eval-circle";
  s.obstacles = {Obstacle::circle({2.5, 3.5}, radius)};
  s.goals = {{5.0, 6.0}};
  s.start = StartSpec::fixed({0.5, 1.5});
  return s;
}

inline Scenario make_eval_ellipse() {
  Scenario s;
  s.name = "eval-ellipse";
  s.obstacles = {Obstacle::ellipse({2.5, 3.5}, {0.5, 2.0})};
  s.goals = {{5.0, 6.0}};
  s.start = StartSpec::fixed({0.5, 1.5});
  return s;
}

/// Three-goal course with mixed obstacle shapes: a circle before the first
/// goal, a small circle between the first and second, and a tall ellipse on
/// the way to the last goal.
inline Scenario make_eval_multi() {
  Scenario s;
  s.name = "eval-multi";
  s.obstacles = {Obstacle::circle({2.5, 3.5}, 1.0), Obstacle::circle({5.3, 3.8}, 0.5),
                 Obstacle::ellipse({8.3, 3.3}, {0.5, 2.0})};
  s.goals = {{5.0, 6.0}, {5.5, 1.5}, {11.0, 5.0}};
  s.start = StartSpec::fixed({0.5, 1.5});
  return s;
}

inline std::vector<std::string> scenario_preset_names() {
  return {"task1", "task2", "task3", "eval-circle", "eval-ellipse", "eval-multi"};
}

inline Scenario scenario_preset(const std::string& name) {
  if (name == "task1" || name == "1") return make_task(1);
  if (name == "task2" || name == "2") return make_task(2);
  if (name == "task3" || name == "3") return make_task(3);
  if (name == "eval-circle") return make_eval_circle();
  if (name == "eval-ellipse") return make_eval_ellipse();
  if (name == "eval-multi") return make_eval_multi();
  throw ConfigError("unknown scenario preset: " + name);
}

// --- scenario files ----------------------------------------------------

inline nlohmann::json scenario_to_json(const Scenario& s) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["kind"] = "crossrl-scenario";
  j["name"] = s.name;
  j["step_time"] = s.step_time;
  j["bounds"] = {{s.bounds_lo[0], s.bounds_lo[1]}, {s.bounds_hi[0], s.bounds_hi[1]}};
  j["goals"] = nlohmann::json::array();
  for (const auto& g : s.goals) j["goals"].push_back({g[0], g[1]});
  j["obstacles"] = nlohmann::json::array();
  for (const auto& o : s.obstacles) {
    if (o.shape() == Obstacle::Shape::Circle)
      j["obstacles"].push_back(
          {{"type", "circle"}, {"center", {o.center()[0], o.center()[1]}}, {"radius", o.radius()}});
    else
      j["obstacles"].push_back({{"type", "ellipse"},
                                {"center", {o.center()[0], o.center()[1]}},
                                {"semi_axes", {o.semi_axes()[0], o.semi_axes()[1]}}});
  }
  if (s.start.kind == StartSpec::Kind::Fixed)
    j["start"] = {{"type", "fixed"}, {"point", {s.start.point[0], s.start.point[1]}}};
  else
    j["start"] = {{"type", "uniform"},
                  {"box", {{s.start.lo[0], s.start.lo[1]}, {s.start.hi[0], s.start.hi[1]}}}};
  return j;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  Scenario s;
  s.name = j.value("name", std::string("scenario"));
  s.step_time = j.value("step_time", 0.5);
  if (j.contains("bounds")) {
    s.bounds_lo = {j["bounds"][0][0].get<double>(), j["bounds"][0][1].get<double>()};
    s.bounds_hi = {j["bounds"][1][0].get<double>(), j["bounds"][1][1].get<double>()};
  }
  for (const auto& g : j.at("goals"))
    s.goals.push_back({g[0].get<double>(), g[1].get<double>()});
  for (const auto& o : j.value("obstacles", nlohmann::json::array())) {
    const Eigen::Vector2d c{o.at("center")[0].get<double>(),
                            o.at("center")[1].get<double>()};
    if (o.at("type") == "circle")
      s.obstacles.push_back(Obstacle::circle(c, o.at("radius").get<double>()));
    else if (o.at("type") == "ellipse")
      s.obstacles.push_back(Obstacle::ellipse(
          c, {o.at("semi_axes")[0].get<double>(), o.at("semi_axes")[1].get<double>()}));
    else
      throw IoError("scenario file: unknown obstacle type");
  }
  const auto& st = j.at("start");
  if (st.at("type") == "fixed")
    s.start = StartSpec::fixed(
        {st.at("point")[0].get<double>(), st.at("point")[1].get<double>()});
  else if (st.at("type") == "uniform")
    s.start = StartSpec::uniform(
        {st.at("box")[0][0].get<double>(), st.at("box")[0][1].get<double>()},
        {st.at("box")[1][0].get<double>(), st.at("box")[1][1].get<double>()});
  else
    throw IoError("scenario file: unknown start type");
  s.validate();
  return s;
}

inline void save_scenario(const std::string& path, const Scenario& s) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << scenario_to_json(s).dump(2) << "\n";
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
    return scenario_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("scenario file: " + std::string(e.what()));
  }
}

/// Resolves a preset name or falls back to reading a scenario file.
inline Scenario resolve_scenario(const std::string& name_or_path) {
  try {
    return scenario_preset(name_or_path);
  } catch (const ConfigError&) {
    return load_scenario(name_or_path);
  }
}

// --- episode dynamics ---------------------------------------------------

struct NavEnvConfig {
  int step_cap = 200;           // hard episode truncation
  double capture_radius = 0.3;  // goal counts as reached within this distance
  double max_forward = 2.0;     // forward-velocity saturation (lower clamp is 0)
  double max_turn = std::numbers::pi; // |turn-rate| saturation
  double arena_margin = 2.0;    // walking this far beyond the bounds absorbs
};

/// One navigation episode. The state and action sets are kept compact:
/// commanded velocities saturate at the configured limits and leaving the
/// inflated world box absorbs the episode at the exit point's goal-proximity
/// reward. Collisions absorb with zero reward thereafter; capturing the final
/// goal absorbs with the goal-proximity reward; the step cap freezes the
/// episode with zero reward. The observation is always the last valid one
/// (never taken from inside an obstacle).
class NavEnv {
public:
  static constexpr int kStateDim = 5;
  static constexpr int kActionDim = 2;

  explicit NavEnv(Scenario scenario, NavEnvConfig config = {})
      : scenario_(std::move(scenario)), config_(config) {
    scenario_.validate();
  }

  const Scenario& scenario() const { return scenario_; }

  Eigen::VectorXd reset(std::mt19937_64& rng) { return reset_at(scenario_.start.sample(rng)); }

  Eigen::VectorXd reset_at(const Pose& start) {
    pose_ = start;
    steps_ = 0;
    goal_index_ = 0;
    collided_ = false;
    succeeded_ = false;
    absorbed_ = false;
    absorbed_reward_ = 0.0;
    pending_collision_ = inside_any_obstacle();
    refresh_observation();
    return observation_;
  }

  /// Applies one action and returns the reward.
  double step(const Eigen::VectorXd& action) {
    if (action.size() != kActionDim) throw ConfigError("NavEnv::step: bad action size");
    if (steps_ >= config_.step_cap) return 0.0; // truncated
    ++steps_;
    if (absorbed_) return absorbed_reward_;
    if (pending_collision_) {
      pending_collision_ = false;
      collided_ = true;
      absorbed_ = true;
      absorbed_reward_ = 0.0;
      return -100.0;
    }

    const double forward = std::min(action[0], config_.max_forward);
    const double turn = std::clamp(action[1], -config_.max_turn, config_.max_turn);
    const Pose next = step_pose(pose_, forward, turn, scenario_.step_time);
    for (const auto& o : scenario_.obstacles) {
      if (collision(next, o)) {
        collided_ = true;
        absorbed_ = true;
        absorbed_reward_ = 0.0;
        return -100.0; // pose and observation stay at the last valid state
      }
    }

    pose_ = next;
    const double d_g = goal_distance();
    const double reward = nav_reward(false, d_g);
    if (d_g <= config_.capture_radius) {
      if (goal_index_ + 1 < static_cast<int>(scenario_.goals.size())) {
        ++goal_index_;
      } else {
        succeeded_ = true;
        absorbed_ = true;
        absorbed_reward_ = reward; // keep collecting the goal-proximity reward
      }
    } else if (outside_arena()) {
      absorbed_ = true;
      absorbed_reward_ = reward; // frozen at the exit point
    }
    refresh_observation();
    return reward;
  }

  const Eigen::VectorXd& observation() const { return observation_; }
  const Pose& pose() const { return pose_; }
  int steps() const { return steps_; }
  int goal_index() const { return goal_index_; }
  bool collided() const { return collided_; }
  bool succeeded() const { return succeeded_; }
  bool truncated() const { return steps_ >= config_.step_cap; }
  bool done() const { return truncated(); }

  double goal_distance() const {
    return (scenario_.goals[goal_index_] - Eigen::Vector2d(pose_.x, pose_.y)).norm();
  }

  /// Nearest obstacle by boundary gap, if any.
  const Obstacle* nearest_obstacle() const {
    const Eigen::Vector2d at(pose_.x, pose_.y);
    const Obstacle* best = nullptr;
    double best_gap = 0.0;
    for (const auto& o : scenario_.obstacles) {
      const double gap = o.boundary_gap(at);
      if (!best || gap < best_gap) {
        best = &o;
        best_gap = gap;
      }
    }
    return best;
  }

private:
  bool inside_any_obstacle() const {
    for (const auto& o : scenario_.obstacles)
      if (collision(pose_, o)) return true;
    return false;
  }

  bool outside_arena() const {
    const double m = config_.arena_margin;
    return pose_.x < scenario_.bounds_lo[0] - m || pose_.x > scenario_.bounds_hi[0] + m ||
           pose_.y < scenario_.bounds_lo[1] - m || pose_.y > scenario_.bounds_hi[1] + m;
  }

  void refresh_observation() {
    const Obstacle* o = nearest_obstacle();
    if (o) {
      observation_ = observe(pose_, *o, scenario_.goals[goal_index_]).to_vector();
    } else {
      // no obstacles: report one far away, dead ahead of nothing
      Observation obs;
      obs.obstacle_distance = 100.0;
      const Eigen::Vector2d at(pose_.x, pose_.y);
      const Eigen::Vector2d goal = scenario_.goals[goal_index_];
      obs.goal_distance = (goal - at).norm();
      obs.goal_bearing =
          wrap_angle(std::atan2(goal[1] - at[1], goal[0] - at[0]) - pose_.psi);
      observation_ = obs.to_vector();
    }
  }

  Scenario scenario_;
  NavEnvConfig config_;
  Pose pose_;
  Eigen::VectorXd observation_ = Eigen::VectorXd::Zero(kStateDim);
  int steps_ = 0;
  int goal_index_ = 0;
  bool collided_ = false;
  bool succeeded_ = false;
  bool absorbed_ = false;
  bool pending_collision_ = false;
  double absorbed_reward_ = 0.0;
};

// --- trajectories -------------------------------------------------------

struct TrajectoryRow {
  int t = 0;
  double x = 0.0, y = 0.0, psi = 0.0; // pose before the action
  double action_z = 0.0, action_psi = 0.0;
  double reward = 0.0;
  double d_g = 0.0; // goal distance after the step
  bool collided = false;
};

using Trajectory = std::vector<TrajectoryRow>;

inline constexpr const char* kTrajectoryCsvVersion = "# crossrl trajectory v1";
inline constexpr const char* kTrajectoryCsvHeader =
    "t,x,y,psi,action_z,action_psi,reward,d_g,collided";

inline void write_trajectory_csv(std::ostream& out, const Trajectory& rows) {
  out << kTrajectoryCsvVersion << "\n" << kTrajectoryCsvHeader << "\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.t << ',' << r.x << ',' << r.y << ',' << r.psi << ',' << r.action_z << ','
        << r.action_psi << ',' << r.reward << ',' << r.d_g << ',' << (r.collided ? 1 : 0)
        << "\n";
  }
}

} // namespace crossrl
