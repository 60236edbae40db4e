#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crossrl/policy.hpp"

namespace crossrl {

inline constexpr int kBundleFormatVersion = 1;

/// A policy bundle together with the training mode that produced it.
struct SavedBundle {
  PolicyBundle bundle;
  std::string mode; // "agnostic" | "consensus" | "cross" | ""
};

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json flat = nlohmann::json::array();
  for (long r = 0; r < m.rows(); ++r)
    for (long c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  return flat;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& flat, long rows, long cols) {
  if (static_cast<long>(flat.size()) != rows * cols)
    throw IoError("bundle file: matrix payload has wrong length");
  Eigen::MatrixXd m(rows, cols);
  long i = 0;
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = flat.at(i++).get<double>();
  return m;
}

} // namespace detail

inline nlohmann::json bundle_to_json(const PolicyBundle& bundle,
                                     const std::string& mode = "") {
  nlohmann::json j;
  j["format_version"] = kBundleFormatVersion;
  j["kind"] = "crossrl-policy-bundle";
  if (!mode.empty()) j["mode"] = mode;
  j["epsilon"] = bundle.epsilon;
  j["spec"] = {
      {"state_dim", bundle.spec.state_dim},
      {"action_dim", bundle.spec.action_dim},
      {"length_scales", std::vector<double>(bundle.spec.length_scales.begin(),
                                            bundle.spec.length_scales.end())},
      {"angular_dims", bundle.spec.angular_dims},
  };
  j["n_knots"] = bundle.dict.size();
  j["n_tasks"] = bundle.n_tasks();
  j["knots"] = detail::matrix_to_json(bundle.dict.matrix());
  j["central_weights"] = detail::matrix_to_json(bundle.central_weights);
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& w : bundle.task_weights) tasks.push_back(detail::matrix_to_json(w));
  j["task_weights"] = std::move(tasks);
  return j;
}

inline SavedBundle bundle_from_json(const nlohmann::json& j) {
  if (!j.contains("format_version") || j.at("format_version").get<int>() != kBundleFormatVersion)
    throw IoError("bundle file: unsupported format version");
  const auto& sp = j.at("spec");
  std::vector<double> scales = sp.at("length_scales").get<std::vector<double>>();
  KernelSpec spec(sp.at("state_dim").get<int>(), sp.at("action_dim").get<int>(),
                  Eigen::Map<Eigen::VectorXd>(scales.data(), scales.size()),
                  sp.at("angular_dims").get<std::vector<int>>());
  const long m = j.at("n_knots").get<long>();
  const long n = j.at("n_tasks").get<long>();
  Dictionary dict(detail::matrix_from_json(j.at("knots"), m, spec.state_dim));
  Eigen::MatrixXd central =
      detail::matrix_from_json(j.at("central_weights"), m, spec.action_dim);
  std::vector<Eigen::MatrixXd> tasks;
  tasks.reserve(n);
  for (long i = 0; i < n; ++i)
    tasks.push_back(
        detail::matrix_from_json(j.at("task_weights").at(i), m, spec.action_dim));
  PolicyBundle bundle(std::move(spec), std::move(dict), std::move(tasks),
                      std::move(central), j.at("epsilon").get<double>());
  return SavedBundle{std::move(bundle), j.value("mode", std::string())};
}

inline void save_bundle(const std::string& path, const PolicyBundle& bundle,
                        const std::string& mode = "") {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << bundle_to_json(bundle, mode).dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

inline SavedBundle load_bundle(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bundle file: " + std::string(e.what()));
  }
  try {
    return bundle_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bundle file: " + std::string(e.what()));
  }
}

} // namespace crossrl
