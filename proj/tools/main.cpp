// Command-line front end: train / eval / rollout / compare / presets.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "crossrl/serialize.hpp"
#include "crossrl/trainer.hpp"

namespace fs = std::filesystem;
using namespace crossrl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct RunConfig {
  TrainerConfig trainer;
  std::vector<std::string> tasks = {"task1", "task2", "task3"};
  std::string out_dir;
  int eval_episodes = 500;
  bool paper_preset = false;
  bool epsilon_set = false;
  bool quiet = false;

  RunConfig() {
    const char* env = std::getenv("CROSSRL_OUT_DIR");
    out_dir = env ? env : "out";
  }
};

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

long parse_long(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  TrainerConfig& t = cfg.trainer;
  if (key == "mode") t.mode = train_mode_from(value);
  else if (key == "projection") t.projection = projection_mode_from(value);
  else if (key == "gamma") t.gamma = parse_double(key, value);
  else if (key == "eta") t.eta = parse_double(key, value);
  else if (key == "epsilon") { t.epsilon = parse_double(key, value); cfg.epsilon_set = true; }
  else if (key == "beta") t.beta = parse_double(key, value);
  else if (key == "alpha") t.alpha = parse_double(key, value);
  else if (key == "batch") t.batch = static_cast<int>(parse_long(key, value));
  else if (key == "order_cap") t.order_cap = static_cast<int>(parse_long(key, value));
  else if (key == "max_iters" || key == "iters") t.max_iters = parse_long(key, value);
  else if (key == "seed") t.seed = static_cast<std::uint64_t>(parse_long(key, value));
  else if (key == "sigma.z") t.sigma[0] = parse_double(key, value);
  else if (key == "sigma.psi") t.sigma[1] = parse_double(key, value);
  else if (key == "rollout.step_cap") t.step_cap = static_cast<int>(parse_long(key, value));
  else if (key == "rollout.capture_radius") t.capture_radius = parse_double(key, value);
  else if (key == "rollout.max_forward") t.max_forward = parse_double(key, value);
  else if (key == "rollout.max_turn") t.max_turn = parse_double(key, value);
  else if (key == "rollout.arena_margin") t.arena_margin = parse_double(key, value);
  else if (key == "solver.tol") t.solver_tol = parse_double(key, value);
  else if (key == "solver.max_sweeps") t.solver_max_sweeps = static_cast<int>(parse_long(key, value));
  else if (key == "checkpoint_interval") t.checkpoint_interval = parse_long(key, value);
  else if (key == "tasks") cfg.tasks = split_list(value);
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "eval.episodes") cfg.eval_episodes = static_cast<int>(parse_long(key, value));
  else throw ConfigError("unknown config key '" + key + "'");
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

/// The benchmark constants: discount 0.9, step size 0.1, exploration
/// covariance diag(0.05, 0.05), batch 4, 400-kernel cap, the five-dimensional
/// egocentric kernel, and the three training tasks at 29000 iterations.
/// The coupling radius follows the mode: 3 for cross, 0 for consensus.
void apply_paper_preset(RunConfig& cfg) {
  TrainerConfig& t = cfg.trainer;
  t.gamma = 0.9;
  t.eta = 0.1;
  t.sigma = Eigen::VectorXd::Constant(2, 0.05);
  t.batch = 4;
  t.order_cap = 400;
  t.max_iters = 29000;
  t.kernel = nav_kernel_spec();
  cfg.tasks = {"task1", "task2", "task3"};
  cfg.paper_preset = true;
}

void finalize_epsilon(RunConfig& cfg) {
  if (!cfg.epsilon_set && cfg.paper_preset) {
    if (cfg.trainer.mode == TrainMode::Cross) cfg.trainer.epsilon = 3.0;
    if (cfg.trainer.mode == TrainMode::Consensus) cfg.trainer.epsilon = 0.0;
  }
}

std::vector<Scenario> resolve_tasks(const std::vector<std::string>& names) {
  if (names.empty()) throw ConfigError("tasks: need at least one scenario");
  std::vector<Scenario> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(resolve_scenario(n));
  return out;
}

KernelPolicy select_policy(const SavedBundle& saved, const std::string& selector) {
  if (selector == "central") {
    if (saved.mode == "agnostic")
      throw ConfigError(
          "policy 'central': an agnostic-mode bundle has no central policy");
    return saved.bundle.central_policy();
  }
  if (selector.rfind("task-", 0) == 0) {
    const int idx = static_cast<int>(parse_long("policy", selector.substr(5)));
    if (idx < 0 || idx >= saved.bundle.n_tasks())
      throw ConfigError("policy '" + selector + "': bundle has " +
                        std::to_string(saved.bundle.n_tasks()) + " tasks");
    return saved.bundle.task_policy(idx);
  }
  throw ConfigError("policy: expected central or task-<i>, got '" + selector + "'");
}

// --- train ---------------------------------------------------------------

int cmd_train(const RunConfig& cfg) {
  cfg.trainer.validate();
  const auto scenarios = resolve_tasks(cfg.tasks);
  fs::create_directories(cfg.out_dir);
  const fs::path out(cfg.out_dir);

  std::ofstream metrics(out / "metrics.csv");
  std::ofstream prune_log(out / "prune.csv");
  if (!metrics || !prune_log) throw IoError("cannot write into " + cfg.out_dir);
  metrics << kMetricsCsvVersion << "\n" << kMetricsCsvHeader << "\n";
  metrics.precision(10);
  prune_log << kPruneCsvVersion << "\n" << kPruneCsvHeader << "\n";
  prune_log.precision(10);

  const long report_every = std::max<long>(1, cfg.trainer.max_iters / 20);
  TrainHooks hooks;
  hooks.on_iteration = [&](const IterationRecord& rec, const PolicyBundle&) {
    append_metrics_rows(metrics, rec);
    prune_log << rec.iter << ',' << rec.prune_removals << ',' << rec.prune_max_bias
              << ',' << rec.model_order << ',' << (rec.cap_forced ? 1 : 0) << "\n";
    if (!cfg.quiet && (rec.iter + 1) % report_every == 0) {
      double mean_ret = 0.0;
      for (const auto& t : rec.tasks) mean_ret += t.return_estimate;
      std::cout << "iter " << rec.iter + 1 << "/" << cfg.trainer.max_iters
                << "  order " << rec.model_order << "  mean return estimate "
                << mean_ret / rec.tasks.size() << "\n";
    }
  };
  hooks.on_checkpoint = [&](long iter, const PolicyBundle& bundle) {
    fs::create_directories(out / "checkpoints");
    save_bundle(
        (out / "checkpoints" / ("bundle-" + std::to_string(iter) + ".json")).string(),
        bundle, to_string(cfg.trainer.mode));
  };

  TrainResult result = train(cfg.trainer, scenarios, hooks);
  save_bundle((out / "bundle.json").string(), result.bundle, to_string(cfg.trainer.mode));
  if (!cfg.quiet) {
    std::cout << "finished " << result.history.records.size() << " iterations";
    if (result.history.stopped_early)
      std::cout << " (stationarity threshold met at iteration "
                << result.history.stop_iteration << ")";
    std::cout << "\nbundle: " << (out / "bundle.json").string() << "\n";
  }
  return kExitOk;
}

// --- eval ------------------------------------------------------------------

int cmd_eval(const RunConfig& cfg, const std::string& bundle_path,
             const std::string& scenario_name, const std::string& selector,
             bool per_task, bool with_noise, const std::string& out_csv) {
  SavedBundle saved = load_bundle(bundle_path);
  Scenario scenario = resolve_scenario(scenario_name);
  ExplorationNoise noise(cfg.trainer.sigma);

  std::vector<std::pair<std::string, KernelPolicy>> policies;
  if (per_task) {
    for (int i = 0; i < saved.bundle.n_tasks(); ++i)
      policies.emplace_back("task-" + std::to_string(i), saved.bundle.task_policy(i));
  } else {
    policies.emplace_back(selector, select_policy(saved, selector));
  }

  std::ostringstream csv;
  csv << kEvalCsvVersion << "\n" << kEvalCsvHeader << "\n";
  csv.precision(10);
  std::cout << std::left << std::setw(12) << "policy" << std::setw(14) << "scenario"
            << std::right << std::setw(12) << "mean_cost" << std::setw(10) << "success"
            << std::setw(10) << "collide" << std::setw(10) << "steps" << "\n";
  for (const auto& [name, policy] : policies) {
    EvalSummary s =
        evaluate(policy, scenario, cfg.eval_episodes, cfg.trainer.gamma,
                 cfg.trainer.env_config(), cfg.trainer.seed, with_noise ? &noise : nullptr);
    append_eval_row(csv, name, scenario.name, s);
    std::cout << std::left << std::setw(12) << name << std::setw(14) << scenario.name
              << std::right << std::setw(12) << std::fixed << std::setprecision(3)
              << s.mean_cost << std::setw(10) << s.success_rate << std::setw(10)
              << s.collision_rate << std::setw(10) << std::setprecision(1) << s.mean_steps
              << "\n";
    std::cout.unsetf(std::ios::fixed);
  }
  if (!out_csv.empty()) {
    const fs::path parent = fs::path(out_csv).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    std::ofstream f(out_csv);
    if (!f) throw IoError("cannot write " + out_csv);
    f << csv.str();
  }
  return kExitOk;
}

// --- rollout ----------------------------------------------------------------

int cmd_rollout(const RunConfig& cfg, const std::string& bundle_path,
                const std::string& scenario_name, const std::string& selector,
                const std::string& start_xy, bool stochastic,
                const std::string& out_csv) {
  SavedBundle saved = load_bundle(bundle_path);
  Scenario scenario = resolve_scenario(scenario_name);
  KernelPolicy policy = select_policy(saved, selector);

  std::optional<Pose> start;
  if (!start_xy.empty()) {
    const auto parts = split_list(start_xy);
    if (parts.size() != 2 && parts.size() != 3)
      throw ConfigError("start: expected x,y or x,y,psi");
    start = Pose{parse_double("start.x", parts[0]), parse_double("start.y", parts[1]),
                 parts.size() == 3 ? parse_double("start.psi", parts[2]) : 0.0};
  }

  ExplorationNoise noise(cfg.trainer.sigma);
  Trajectory traj = rollout(policy, scenario, start, cfg.trainer.seed, !stochastic,
                            cfg.trainer.env_config(), stochastic ? &noise : nullptr);
  if (out_csv.empty()) {
    write_trajectory_csv(std::cout, traj);
  } else {
    std::ofstream f(out_csv);
    if (!f) throw IoError("cannot write " + out_csv);
    write_trajectory_csv(f, traj);
    std::cout << "wrote " << traj.size() << " rows to " << out_csv << "\n";
  }
  return kExitOk;
}

// --- compare -----------------------------------------------------------------

int cmd_compare(RunConfig cfg, const std::string& policies_csv) {
  // the five-policy protocol: one agnostic policy per training task, the
  // consensus policy, and the cross-learned central policy
  const auto scenarios = resolve_tasks(cfg.tasks);
  std::vector<std::string> wanted =
      policies_csv.empty() ? std::vector<std::string>{} : split_list(policies_csv);
  auto selected = [&](const std::string& name) {
    if (wanted.empty()) return true;
    return std::find(wanted.begin(), wanted.end(), name) != wanted.end();
  };

  auto agnostic_name = [](const Scenario& s) {
    if (s.obstacles.empty()) return "agnostic-" + s.name;
    std::ostringstream name;
    name << "agnostic-" << s.obstacles[0].radius();
    return name.str();
  };

  fs::create_directories(cfg.out_dir);
  const fs::path out(cfg.out_dir);

  std::vector<std::pair<std::string, KernelPolicy>> policies;
  if (!cfg.quiet) std::cout << "training policies...\n";
  for (const auto& s : scenarios) {
    const std::string name = agnostic_name(s);
    if (!selected(name)) continue;
    TrainerConfig t = cfg.trainer;
    t.mode = TrainMode::Agnostic;
    TrainResult r = train(t, {s});
    save_bundle((out / ("bundle-" + name + ".json")).string(), r.bundle, "agnostic");
    policies.emplace_back(name, r.bundle.task_policy(0));
    if (!cfg.quiet) std::cout << "  " << name << " done\n";
  }
  if (selected("consensus")) {
    TrainerConfig t = cfg.trainer;
    t.mode = TrainMode::Consensus;
    TrainResult r = train(t, scenarios);
    save_bundle((out / "bundle-consensus.json").string(), r.bundle, "consensus");
    policies.emplace_back("consensus", r.bundle.central_policy());
    if (!cfg.quiet) std::cout << "  consensus done\n";
  }
  if (selected("cross")) {
    TrainerConfig t = cfg.trainer;
    t.mode = TrainMode::Cross;
    if (std::isnan(t.epsilon)) t.epsilon = 3.0;
    TrainResult r = train(t, scenarios);
    save_bundle((out / "bundle-cross.json").string(), r.bundle, "cross");
    policies.emplace_back("cross", r.bundle.central_policy());
    if (!cfg.quiet) std::cout << "  cross done\n";
  }
  if (policies.empty()) throw ConfigError("policies: nothing selected");

  std::vector<Scenario> extra_scenarios = {make_eval_circle(), make_eval_ellipse(),
                                           make_eval_multi()};

  std::ofstream csv(out / "compare.csv");
  if (!csv) throw IoError("cannot write into " + cfg.out_dir);
  csv << "# crossrl compare v1\n" << kEvalCsvHeader << "\n";
  csv.precision(10);

  auto print_row = [](const std::string& policy, const std::string& scenario,
                      const EvalSummary& s) {
    std::cout << std::left << std::setw(14) << policy << std::setw(14) << scenario
              << std::right << std::setw(12) << std::fixed << std::setprecision(3)
              << s.mean_cost << std::setw(10) << s.success_rate << std::setw(10)
              << s.collision_rate << "\n";
    std::cout.unsetf(std::ios::fixed);
  };

  std::cout << std::left << std::setw(14) << "policy" << std::setw(14) << "scenario"
            << std::right << std::setw(12) << "mean_cost" << std::setw(10) << "success"
            << std::setw(10) << "collide" << "\n";
  for (const auto& [name, policy] : policies) {
    double cost_sum = 0.0;
    for (const auto& s : scenarios) {
      EvalSummary sum = evaluate(policy, s, cfg.eval_episodes, cfg.trainer.gamma,
                                 cfg.trainer.env_config(), cfg.trainer.seed);
      cost_sum += sum.mean_cost;
      append_eval_row(csv, name, s.name, sum);
      print_row(name, s.name, sum);
    }
    // task-averaged row backs the all-task comparison
    EvalSummary avg;
    avg.episodes = cfg.eval_episodes * static_cast<int>(scenarios.size());
    avg.mean_cost = cost_sum / scenarios.size();
    avg.mean_return = -avg.mean_cost;
    append_eval_row(csv, name, "task-avg", avg);
    print_row(name, "task-avg", avg);
    for (const auto& s : extra_scenarios) {
      EvalSummary sum = evaluate(policy, s, cfg.eval_episodes, cfg.trainer.gamma,
                                 cfg.trainer.env_config(), cfg.trainer.seed);
      append_eval_row(csv, name, s.name, sum);
      print_row(name, s.name, sum);
    }
  }
  std::cout << "wrote " << (out / "compare.csv").string() << "\n";
  return kExitOk;
}

int cmd_presets() {
  std::cout << "scenario presets:\n";
  for (const auto& name : scenario_preset_names()) std::cout << "  " << name << "\n";
  std::cout << "\nconfig preset paper-vi (config-file form):\n"
            << "mode = cross\nprojection = exact\ngamma = 0.9\neta = 0.1\n"
            << "epsilon = 3\nbatch = 4\nsigma.z = 0.05\nsigma.psi = 0.05\n"
            << "order_cap = 400\nmax_iters = 29000\ntasks = task1,task2,task3\n"
            << "rollout.step_cap = 200\nrollout.capture_radius = 0.3\n";
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel cross-learning toolkit"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_file, preset;
  std::string bundle_path, scenario_name = "eval-circle", selector = "central";
  std::string start_xy, out_csv, policies_csv;
  bool per_task = false, with_noise = false, stochastic = false;

  // overrides are collected and applied after preset and config file (flags win)
  std::map<std::string, std::string> overrides;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "config file with key = value lines");
    sub->add_option("--preset", preset, "config preset (paper-vi)");
    sub->add_flag("--quiet", cfg.quiet, "suppress progress output");
  };
  auto add_override = [&](CLI::App* sub, const std::string& flag, const std::string& key,
                          const std::string& help) {
    sub->add_option_function<std::string>(
        flag, [&overrides, key](const std::string& v) { overrides[key] = v; }, help);
  };
  auto add_trainer_flags = [&](CLI::App* sub) {
    add_override(sub, "--mode", "mode", "agnostic|consensus|cross");
    add_override(sub, "--projection", "projection", "exact|relaxed");
    add_override(sub, "--gamma", "gamma", "discount factor");
    add_override(sub, "--eta", "eta", "step size");
    add_override(sub, "--epsilon", "epsilon", "coupling radius");
    add_override(sub, "--beta", "beta", "compression budget");
    add_override(sub, "--alpha", "alpha", "stationarity stop threshold");
    add_override(sub, "--batch", "batch", "gradient samples per step");
    add_override(sub, "--order-cap", "order_cap", "model order cap");
    add_override(sub, "--iters", "max_iters", "training iterations");
    add_override(sub, "--seed", "seed", "master seed");
    add_override(sub, "--tasks", "tasks", "comma list of scenario presets or files");
    add_override(sub, "--out", "out_dir", "output directory");
    add_override(sub, "--checkpoint-interval", "checkpoint_interval",
                 "iterations between checkpoints");
    add_override(sub, "--episodes", "eval.episodes", "evaluation episodes");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "run the training loop");
  add_common(train_cmd);
  add_trainer_flags(train_cmd);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a saved policy bundle");
  add_common(eval_cmd);
  add_trainer_flags(eval_cmd);
  eval_cmd->add_option("--bundle", bundle_path, "bundle file")->required();
  eval_cmd->add_option("--scenario", scenario_name, "scenario preset or file");
  eval_cmd->add_option("--policy", selector, "central or task-<i>");
  eval_cmd->add_flag("--per-task", per_task, "evaluate every task policy");
  eval_cmd->add_flag("--noise", with_noise, "evaluate with exploration noise");
  eval_cmd->add_option("--out-csv", out_csv, "also write the summary CSV here");

  CLI::App* rollout_cmd = app.add_subcommand("rollout", "emit one trajectory as CSV");
  add_common(rollout_cmd);
  add_trainer_flags(rollout_cmd);
  rollout_cmd->add_option("--bundle", bundle_path, "bundle file")->required();
  rollout_cmd->add_option("--scenario", scenario_name, "scenario preset or file");
  rollout_cmd->add_option("--policy", selector, "central or task-<i>");
  rollout_cmd->add_option("--start", start_xy, "start override: x,y or x,y,psi");
  rollout_cmd->add_flag("--stochastic", stochastic, "sample exploration noise");
  rollout_cmd->add_option("--out-csv", out_csv, "trajectory CSV path (default stdout)");

  CLI::App* compare_cmd =
      app.add_subcommand("compare", "train and compare the five-policy protocol");
  add_common(compare_cmd);
  add_trainer_flags(compare_cmd);
  compare_cmd->add_option("--policies", policies_csv,
                          "subset, e.g. agnostic-0.5,consensus,cross");

  app.add_subcommand("presets", "list presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (!preset.empty()) {
      if (preset != "paper-vi") throw ConfigError("unknown preset '" + preset + "'");
      apply_paper_preset(cfg);
    }
    if (!config_file.empty()) load_config_file(cfg, config_file);
    for (const auto& [key, value] : overrides) apply_config_entry(cfg, key, value);
    finalize_epsilon(cfg);

    if (app.got_subcommand("presets")) return cmd_presets();
    if (app.got_subcommand("train")) return cmd_train(cfg);
    if (app.got_subcommand("eval"))
      return cmd_eval(cfg, bundle_path, scenario_name, selector, per_task, with_noise,
                      out_csv);
    if (app.got_subcommand("rollout"))
      return cmd_rollout(cfg, bundle_path, scenario_name, selector, start_xy, stochastic,
                         out_csv);
    if (app.got_subcommand("compare")) return cmd_compare(cfg, policies_csv);
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const SolverError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}
