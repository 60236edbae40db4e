#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "crossrl/env_nav.hpp"

using namespace crossrl;

TEST_CASE("unicycle step") {
  Pose p{0.0, 0.0, 0.0};
  SUBCASE("zero action leaves the pose unchanged") {
    Pose q = step_pose(p, 0.0, 0.0, 0.5);
    CHECK(q.x == 0.0);
    CHECK(q.y == 0.0);
    CHECK(q.psi == 0.0);
  }
  SUBCASE("forward motion along the heading") {
    Pose q = step_pose(p, 1.0, 0.0, 0.5);
    CHECK(q.x == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(q.y == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(q.psi == 0.0);
  }
  SUBCASE("backward commands are clamped to zero velocity") {
    Pose q = step_pose(p, -1.0, 0.0, 0.5);
    CHECK(q.x == 0.0);
    CHECK(q.y == 0.0);
  }
  SUBCASE("kinematic consistency on random actions") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 200; ++trial) {
      Pose a{u(rng), u(rng), wrap_angle(u(rng))};
      const double v = u(rng), w = u(rng), dt = 0.5;
      Pose b = step_pose(a, v, w, dt);
      const double moved = std::hypot(b.x - a.x, b.y - a.y);
      CHECK(moved == doctest::Approx(dt * std::max(v, 0.0)).epsilon(1e-12));
      CHECK(b.psi <= std::numbers::pi);
      CHECK(b.psi > -std::numbers::pi);
    }
  }
}

TEST_CASE("egocentric observation") {
  Obstacle far_circle = Obstacle::circle({100.0, 0.0}, 1.0);
  SUBCASE("goal dead ahead") {
    Observation obs = observe(Pose{0, 0, 0}, far_circle, {1.0, 0.0});
    CHECK(obs.goal_distance == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(obs.goal_bearing == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("heading rotates the bearing") {
    Observation obs =
        observe(Pose{0, 0, std::numbers::pi / 2}, far_circle, {1.0, 0.0});
    CHECK(obs.goal_bearing == doctest::Approx(-std::numbers::pi / 2).epsilon(1e-12));
  }
  SUBCASE("circle occlusion half-angle") {
    Obstacle c = Obstacle::circle({2.0, 0.0}, 1.0);
    Observation obs = observe(Pose{0, 0, 0}, c, {1.0, 0.0});
    CHECK(obs.obstacle_distance == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(obs.obstacle_bearing == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(obs.occlusion_half_angle ==
          doctest::Approx(std::numbers::pi / 6).epsilon(1e-12));
  }
}

TEST_CASE("ellipse occlusion matches the circle formula when axes are equal") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-8.0, 8.0), ur(0.3, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Vector2d c{u(rng), u(rng)};
    const double r = ur(rng);
    const Eigen::Vector2d p{u(rng), u(rng)};
    if ((p - c).norm() <= r + 0.1) continue;
    Obstacle circle = Obstacle::circle(c, r);
    Obstacle ellipse = Obstacle::ellipse(c, {r, r});
    CHECK(circle.occlusion_half_angle(p) ==
          doctest::Approx(ellipse.occlusion_half_angle(p)).epsilon(1e-9));
  }
}

TEST_CASE("reward") {
  CHECK(nav_reward(true, 0.5) == -100.0);
  CHECK(nav_reward(false, 0.0) == 10.0);
  CHECK(nav_reward(false, 1.0) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("collision predicate") {
  Obstacle c = Obstacle::circle({0.0, 0.0}, 1.0);
  CHECK_FALSE(collision(Pose{2.0, 0.0, 0.0}, c));
  CHECK(collision(Pose{0.5, 0.0, 0.0}, c));

  Obstacle e = Obstacle::ellipse({2.5, 3.5}, {0.5, 2.0});
  CHECK(collision(Pose{2.5, 5.4, 0.0}, e)); // (1.9/2)^2 = 0.9025 <= 1
  CHECK_FALSE(collision(Pose{2.5, 5.6, 0.0}, e));
}

TEST_CASE("collision agrees with a Monte-Carlo rasterization") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 13.0);
  Obstacle circle = Obstacle::circle({2.5, 3.5}, 1.0);
  Obstacle ellipse = Obstacle::ellipse({2.5, 3.5}, {0.5, 2.0});
  long disagreements = 0;
  for (long s = 0; s < 1000000; ++s) {
    const double x = u(rng), y = u(rng);
    {
      const long double q =
          (static_cast<long double>(x) - 2.5L) * (x - 2.5L) +
          (static_cast<long double>(y) - 3.5L) * (y - 3.5L) - 1.0L;
      if (std::abs(static_cast<double>(q)) > 1e-9)
        disagreements += (q <= 0.0L) != circle.contains({x, y});
    }
    {
      const long double qx = (static_cast<long double>(x) - 2.5L) / 0.5L;
      const long double qy = (static_cast<long double>(y) - 3.5L) / 2.0L;
      const long double q = qx * qx + qy * qy - 1.0L;
      if (std::abs(static_cast<double>(q)) > 1e-9)
        disagreements += (q <= 0.0L) != ellipse.contains({x, y});
    }
  }
  CHECK(disagreements == 0);
}

TEST_CASE("training task presets") {
  auto tasks = make_training_tasks();
  REQUIRE(tasks.size() == 3);
  CHECK(tasks[0].obstacles[0].center() == Eigen::Vector2d(7.0, 2.0));
  CHECK(tasks[0].obstacles[0].radius() == 0.5);
  CHECK(tasks[1].obstacles[0].center() == Eigen::Vector2d(2.0, 2.0));
  CHECK(tasks[1].obstacles[0].radius() == 1.0);
  CHECK(tasks[2].obstacles[0].center() == Eigen::Vector2d(7.0, 7.0));
  CHECK(tasks[2].obstacles[0].radius() == 2.0);
  for (const auto& t : tasks) {
    CHECK(t.step_time == 0.5);
    CHECK(t.start.kind == StartSpec::Kind::UniformBox);
    CHECK(t.start.hi == Eigen::Vector2d(10.0, 10.0));
    CHECK(t.goals[0] == Eigen::Vector2d(5.0, 6.0));
  }
}

TEST_CASE("evaluation presets") {
  Scenario circle = make_eval_circle();
  CHECK(circle.start.point == Eigen::Vector2d(0.5, 1.5));
  CHECK(circle.goals[0] == Eigen::Vector2d(5.0, 6.0));
  CHECK(circle.obstacles[0].center() == Eigen::Vector2d(2.5, 3.5));

  Scenario ellipse = make_eval_ellipse();
  CHECK(ellipse.obstacles[0].semi_axes() == Eigen::Vector2d(0.5, 2.0));

  Scenario multi = make_eval_multi();
  REQUIRE(multi.goals.size() == 3);
  CHECK(multi.goals[0] == Eigen::Vector2d(5.0, 6.0));
  CHECK(multi.goals[1] == Eigen::Vector2d(5.5, 1.5));
  CHECK(multi.goals[2] == Eigen::Vector2d(11.0, 5.0));

  CHECK_THROWS_AS(scenario_preset("task99"), ConfigError);
}

TEST_CASE("scenario files round-trip") {
  const auto path = std::filesystem::temp_directory_path() / "crossrl_scenario.json";
  Scenario multi = make_eval_multi();
  save_scenario(path.string(), multi);
  Scenario loaded = load_scenario(path.string());
  CHECK(loaded.name == multi.name);
  REQUIRE(loaded.obstacles.size() == 3);
  CHECK(loaded.obstacles[2].shape() == Obstacle::Shape::Ellipse);
  CHECK(loaded.goals == multi.goals);
  CHECK(loaded.start.point == multi.start.point);

  Scenario via_resolve = resolve_scenario(path.string());
  CHECK(via_resolve.goals == multi.goals);
  CHECK(resolve_scenario("task1").obstacles[0].radius() == 0.5);
  CHECK_THROWS_AS(load_scenario("/nonexistent.json"), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("nav episode dynamics") {
  SUBCASE("zero policy stays put and collects a constant reward") {
    NavEnv env(make_eval_circle());
    std::mt19937_64 rng(1);
    env.reset(rng);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
    const double r0 = env.step(zero);
    for (int t = 0; t < 20; ++t) CHECK(env.step(zero) == r0);
    CHECK(env.pose().x == 0.5);
    CHECK(env.pose().y == 1.5);
  }

  SUBCASE("starting inside an obstacle collides immediately") {
    Scenario s = make_eval_circle();
    s.start = StartSpec::fixed({2.5, 3.5});
    NavEnv env(s);
    std::mt19937_64 rng(1);
    env.reset(rng);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
    CHECK(env.step(zero) == -100.0);
    CHECK(env.collided());
    CHECK(env.step(zero) == 0.0);
    CHECK(env.step(zero) == 0.0);
  }

  SUBCASE("reaching the final goal absorbs with the goal reward") {
    Scenario s = make_eval_circle();
    s.obstacles.clear();
    NavEnv env(s);
    env.reset_at(Pose{5.0, 6.0, 0.0});
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
    const double r = env.step(zero);
    CHECK(r == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(env.succeeded());
    CHECK(env.step(zero) == doctest::Approx(10.0).epsilon(1e-12));
  }

  SUBCASE("multi-goal scenarios advance to the next goal on capture") {
    NavEnv env(make_eval_multi());
    env.reset_at(Pose{5.0, 5.8, 0.0}); // within capture radius of goal 1
    CHECK(env.goal_index() == 0);
    env.step(Eigen::VectorXd::Zero(2));
    CHECK(env.goal_index() == 1);
    CHECK_FALSE(env.succeeded());
  }

  SUBCASE("step cap truncates with zero reward") {
    NavEnv env(make_eval_circle(), NavEnvConfig{5, 0.3});
    std::mt19937_64 rng(1);
    env.reset(rng);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
    for (int t = 0; t < 5; ++t) {
      CHECK_FALSE(env.done());
      env.step(zero);
    }
    CHECK(env.done());
    CHECK(env.step(zero) == 0.0);
  }

  SUBCASE("collision freezes the last valid observation") {
    NavEnv env(make_eval_circle());
    env.reset_at(Pose{1.3, 3.5, 0.0}); // 0.2 west of the obstacle boundary
    const Eigen::VectorXd before = env.observation();
    Eigen::VectorXd lunge(2);
    lunge << 2.0, 0.0; // moves 1.0 into the obstacle
    CHECK(env.step(lunge) == -100.0);
    CHECK(env.collided());
    CHECK(env.observation() == before);
  }
}

TEST_CASE("observation continuity away from switches") {
  std::mt19937_64 rng(17);
  Scenario s = make_eval_circle();
  std::uniform_real_distribution<double> u(0.0, 12.0), upsi(-3.0, 3.0);
  int tested = 0;
  while (tested < 200) {
    Pose a{u(rng), u(rng), wrap_angle(upsi(rng))};
    const Eigen::Vector2d at(a.x, a.y);
    if (s.obstacles[0].boundary_gap(at) < 1.0) continue;
    if ((s.goals[0] - at).norm() < 1.0) continue;
    Pose b{a.x + 1e-6, a.y - 1e-6, wrap_angle(a.psi + 1e-6)};
    Observation oa = observe(a, s.obstacles[0], s.goals[0]);
    Observation ob = observe(b, s.obstacles[0], s.goals[0]);
    CHECK(std::abs(oa.obstacle_distance - ob.obstacle_distance) <= 1e-4);
    CHECK(std::abs(oa.goal_distance - ob.goal_distance) <= 1e-4);
    CHECK(std::abs(wrap_angle(oa.obstacle_bearing - ob.obstacle_bearing)) <= 1e-4);
    CHECK(std::abs(wrap_angle(oa.goal_bearing - ob.goal_bearing)) <= 1e-4);
    CHECK(std::abs(oa.occlusion_half_angle - ob.occlusion_half_angle) <= 1e-4);
    ++tested;
  }
}

TEST_CASE("rewards stay in range inside the world box") {
  std::mt19937_64 rng(23);
  NavEnv env(make_eval_multi());
  std::normal_distribution<double> n(0.3, 0.4);
  for (int episode = 0; episode < 20; ++episode) {
    env.reset(rng);
    for (int t = 0; t < 100; ++t) {
      Eigen::VectorXd a(2);
      a << n(rng), n(rng);
      const double r = env.step(a);
      CHECK(r <= 10.0);
      const Pose& p = env.pose();
      if (p.x >= 0 && p.x <= 12 && p.y >= 0 && p.y <= 12)
        CHECK((r == -100.0 || r > -160.0));
    }
  }
}

TEST_CASE("trajectory csv schema") {
  Trajectory rows{{0, 0.5, 1.5, 0.0, 1.0, 0.2, -3.5, 4.2, false},
                  {1, 1.0, 1.5, 0.1, 0.8, 0.0, -2.5, 3.9, true}};
  std::ostringstream out;
  write_trajectory_csv(out, rows);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "# crossrl trajectory v1");
  std::getline(in, line);
  CHECK(line == "t,x,y,psi,action_z,action_psi,reward,d_g,collided");
  std::getline(in, line);
  CHECK(line.substr(0, 10) == "0,0.5,1.5,");
}
