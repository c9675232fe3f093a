#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "escape/harness/config.hpp"
#include "escape/metrics.hpp"

namespace escape {

/// Everything shared by the three strategies of one experiment.
struct SuiteContext {
  ExperimentConfig cfg;
  Problem problem;
  CombinationMatrix cm;
  double risk_at_minimizer = 0.0;
};

SuiteContext prepare(const ExperimentConfig& cfg);

/// Holds `<dir>/.lock` for the lifetime of the object. Throws Error when the
/// directory is already owned by another process.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path file_;
};

struct StrategyRun {
  Strategy strategy = Strategy::diffusion;
  TrainingConfig training;
  std::vector<TraceRecord> records;  // one per recorded iteration
  long trials = 0;
  bool diverged = false;
  long diverged_at = -1;
  long inconclusive = 0;
};

/// All trials of one strategy. Records stop at the last iteration every
/// trial reached.
StrategyRun simulate(const SuiteContext& ctx, Strategy strategy, bool with_escape, int threads);

void write_trace_csv(std::ostream& out, const std::vector<StrategyRun>& runs, Eigen::Index agents, bool with_escape);
void write_escape_csv(std::ostream& out, const std::vector<StrategyRun>& runs);
/// Columns n, e_n, f_con, f_dif, er_cen, er_con, er_dif, er_exact_cen, er_exact_con, er_exact_dif.
void write_theory_csv(std::ostream& out, const SuiteContext& ctx, long n_max);
/// Columns point, direction, alpha, risk.
void write_landscape_csv(std::ostream& out, const SuiteContext& ctx);

nlohmann::json meta_json(const SuiteContext& ctx, const std::vector<StrategyRun>& runs);

struct SuiteResult {
  std::filesystem::path dir;
  std::vector<std::string> files;
};

/// Runs every configured strategy on the same topology and shards and writes
/// trace.csv, theory.csv, escape.csv, landscape.csv and meta.json into
/// cfg.output. On divergence the artifacts written so far are kept and
/// DivergedNaN is thrown.
SuiteResult run_suite(const ExperimentConfig& cfg, int threads);

/// Two-basin escape experiment only: escape.csv and meta.json.
SuiteResult run_escape_study(const ExperimentConfig& cfg, int threads);

}  // namespace escape
