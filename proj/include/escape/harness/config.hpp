#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "escape/dynamics.hpp"
#include "escape/ensembles.hpp"
#include "escape/metrics.hpp"
#include "escape/topology.hpp"

namespace escape {

struct GraphSpec {
  // Either explicit edges or a random connected graph.
  std::optional<Graph> explicit_graph;
  Eigen::Index K = 8;
  double edge_prob = 0.4;
  std::uint64_t seed = 7;

  Eigen::Index agents() const { return explicit_graph ? explicit_graph->K : K; }
  Graph build() const;
};

struct EnsembleSpec {
  LossKind kind = LossKind::quadratic_heterogeneous;
  RegressionEnsembleSpec regression;
  QuadraticEnsembleSpec quadratic;
  DoubleWellEnsembleSpec double_well;
};

struct StrategyOverride {
  std::optional<double> mu;
  std::optional<Eigen::Index> batch;
};

struct TheoryReport {
  bool enabled = true;
  long n_max = -1;  // -1: horizon - 1
};

struct EscapeReport {
  bool enabled = false;
  BasinOptions basin = {.gd_steps = 2000, .gd_mu = 0.1, .tol = 1e-3, .basin_scale = 1.0, .adaptive_step = true};
};

struct LandscapeReport {
  bool enabled = false;
  int n_dirs = 4;
  std::vector<double> alphas = {-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0};
  std::uint64_t seed = 3;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  long trials = 64;
  std::filesystem::path output = "out";
  GraphSpec graph;
  EnsembleSpec ensemble;
  PerturbationSpec perturbation;
  AttackMethod attack = AttackMethod::exact;
  TrainingConfig training;
  std::map<Strategy, StrategyOverride> overrides;
  std::vector<Strategy> strategies{std::begin(kAllStrategies), std::end(kAllStrategies)};
  TheoryReport theory;
  EscapeReport escape;
  LandscapeReport landscape;

  /// Training configuration for one strategy, with overrides and the base seed applied.
  TrainingConfig training_for(Strategy s) const;
};

/// Strict parse: unknown keys and type errors raise ConfigInvalid naming the
/// JSON path.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& file);
/// Fully resolved config, including defaults.
nlohmann::json to_json(const ExperimentConfig& cfg);

/// { "K": int, "edges": [[i, j], ...], "self_loops": [i, ...] }, 0-indexed.
Graph graph_from_json(const nlohmann::json& j, const std::string& path = "graph");
Graph load_graph(const std::filesystem::path& file);

/// Agent losses and w* for the configured ensemble.
Problem build_problem(const ExperimentConfig& cfg);

}  // namespace escape
