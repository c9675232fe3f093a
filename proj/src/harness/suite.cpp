#include "escape/harness/suite.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cmath>
#include <fstream>

#include "escape/errors.hpp"
#include "escape/harness/csv.hpp"
#include "escape/parallel.hpp"
#include "escape/theory.hpp"

namespace escape {

namespace fs = std::filesystem;
using nlohmann::json;

SuiteContext prepare(const ExperimentConfig& cfg) {
  Problem problem = build_problem(cfg);
  CombinationMatrix cm = metropolis_matrix(cfg.graph.build());
  const double J0 = problem.risk(problem.w_star);
  return {cfg, std::move(problem), std::move(cm), J0};
}

OutputLock::OutputLock(const fs::path& dir) : file_(dir / ".lock") {
  fs::create_directories(dir);
  const int fd = ::open(file_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) throw Error("output directory " + dir.string() + " is locked (remove " + file_.string() + " if stale)");
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(file_, ec);
}

StrategyRun simulate(const SuiteContext& ctx, Strategy strategy, bool with_escape, int threads) {
  StrategyRun out;
  out.strategy = strategy;
  out.training = ctx.cfg.training_for(strategy);
  out.trials = ctx.cfg.trials;

  const auto T = static_cast<std::size_t>(ctx.cfg.trials);
  std::vector<std::vector<TrialMeasure>> per_trial(T);
  std::vector<long> diverged_at(T, -1);
  parallel_for(T, threads, [&](std::size_t t) {
    const Trajectory traj = run(ctx.problem, out.training, ctx.cm, t);
    if (traj.diverged) diverged_at[t] = traj.diverged_at;
    for (const NetworkState& s : traj.snapshots) {
      TrialMeasure m = measure(s, ctx.problem, ctx.risk_at_minimizer);
      if (with_escape) measure_escape(m, s, ctx.problem, ctx.cfg.escape.basin);
      per_trial[t].push_back(std::move(m));
    }
  });

  std::size_t common = per_trial.front().size();
  for (std::size_t t = 0; t < T; ++t) {
    common = std::min(common, per_trial[t].size());
    if (diverged_at[t] >= 0 && (!out.diverged || diverged_at[t] < out.diverged_at)) {
      out.diverged = true;
      out.diverged_at = diverged_at[t];
    }
  }
  for (std::size_t i = 0; i < common; ++i) {
    std::vector<TrialMeasure> column;
    column.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
      column.push_back(per_trial[t][i]);
      out.inconclusive += per_trial[t][i].inconclusive;
    }
    out.records.push_back(aggregate(column, strategy));
  }
  return out;
}

void write_trace_csv(std::ostream& out, const std::vector<StrategyRun>& runs, Eigen::Index agents, bool with_escape) {
  CsvWriter csv(out);
  std::vector<std::string> header = {"n", "strategy", "er_empirical", "er_stderr", "consensus_distance",
                                     "mean_sq_error"};
  for (Eigen::Index k = 0; k < agents; ++k) header.push_back("er_agent_" + std::to_string(k));
  if (with_escape) header.push_back("escaped_fraction");
  csv.header(header);
  for (const StrategyRun& run : runs)
    for (const TraceRecord& r : run.records) {
      csv.cell(r.n).cell(std::string(to_string(r.strategy))).cell(r.er_empirical).cell(r.er_stderr);
      csv.cell(r.consensus_distance).cell(r.mean_sq_error);
      for (Eigen::Index k = 0; k < agents; ++k) csv.cell(r.er_agents[k]);
      if (with_escape) csv.cell(r.escaped_fraction.value_or(0.0));
      csv.end_row();
    }
}

void write_escape_csv(std::ostream& out, const std::vector<StrategyRun>& runs) {
  CsvWriter csv(out);
  csv.header({"n", "strategy", "escaped_fraction", "trials"});
  for (const StrategyRun& run : runs)
    for (const TraceRecord& r : run.records)
      csv.cell(r.n).cell(std::string(to_string(r.strategy))).cell(r.escaped_fraction.value_or(0.0)).cell(run.trials).end_row();
}

void write_theory_csv(std::ostream& out, const SuiteContext& ctx, long n_max) {
  const TheoryContext theory = build_context(ctx.problem);
  const TrainingConfig& t = ctx.cfg.training;
  std::vector<std::vector<double>> exact;
  for (Strategy s : kAllStrategies)
    exact.push_back(er_exact_linear(theory, strategy_matrices(ctx.cm, s), t.mu, t.batch, n_max));
  CsvWriter csv(out);
  csv.header({"n", "e_n", "f_con", "f_dif", "er_cen", "er_con", "er_dif", "er_exact_cen", "er_exact_con",
              "er_exact_dif"});
  for (long n = 0; n <= n_max; ++n) {
    const TheoryPrediction p = predict_er(theory, ctx.cm, t.mu, t.batch, n);
    csv.cell(n).cell(p.e_n).cell(p.f_con).cell(p.f_dif).cell(p.er_cen).cell(p.er_con).cell(p.er_dif);
    // kAllStrategies order: centralized, consensus, diffusion.
    csv.cell(exact[0][n]).cell(exact[1][n]).cell(exact[2][n]);
    csv.end_row();
  }
}

void write_landscape_csv(std::ostream& out, const SuiteContext& ctx) {
  const LandscapeReport& rep = ctx.cfg.landscape;
  std::vector<std::pair<std::string, Vec>> points = {{"w_star", ctx.problem.w_star}};
  if (ctx.cfg.ensemble.kind == LossKind::double_well_2d) {
    const Vec flat = ctx.problem.models.front().as_double_well()->flat_minimum();
    points.emplace_back("flat_minimum",
                        locate_minimizer(ctx.problem.models, flat, ctx.problem.spec, ctx.problem.attack));
  }
  const RiskFunction risk = [&](const Vec& w) { return ctx.problem.risk(w); };
  CsvWriter csv(out);
  csv.header({"point", "direction", "alpha", "risk"});
  for (const auto& [name, w] : points) {
    const Mat profile = landscape_profile(risk, w, rep.n_dirs, rep.alphas, rep.seed);
    for (Eigen::Index i = 0; i < profile.rows(); ++i)
      for (Eigen::Index j = 0; j < profile.cols(); ++j)
        csv.cell(name).cell(static_cast<long>(i)).cell(rep.alphas[j]).cell(profile(i, j)).end_row();
  }
}

json meta_json(const SuiteContext& ctx, const std::vector<StrategyRun>& runs) {
  json j;
  j["config"] = to_json(ctx.cfg);
  j["w_star"] = std::vector<double>(ctx.problem.w_star.begin(), ctx.problem.w_star.end());
  j["risk_at_minimizer"] = ctx.risk_at_minimizer;
  j["gradient_norm_at_minimizer"] = ctx.problem.gradient(ctx.problem.w_star).norm();
  j["flatness_trace"] = flatness_trace(ctx.problem, ctx.problem.w_star);
  j["rho_alpha"] = ctx.cm.spectral_radius_alpha();
  json strategies = json::object();
  for (Strategy s : ctx.cfg.strategies) {
    const TrainingConfig t = ctx.cfg.training_for(s);
    const RegimeFlags flags = regime_flags(t, ctx.cfg.perturbation.epsilon);
    json entry = {{"mu", t.mu},
                  {"batch", t.batch},
                  {"regime", {{"large_batch", flags.large_batch}, {"small_eps", flags.small_eps}}}};
    for (const StrategyRun& r : runs)
      if (r.strategy == s) {
        entry["diverged"] = r.diverged;
        if (r.diverged) entry["diverged_at"] = r.diverged_at;
        if (ctx.cfg.escape.enabled) entry["inconclusive_verdicts"] = r.inconclusive;
      }
    strategies[std::string(to_string(s))] = entry;
  }
  j["strategies"] = strategies;
  return j;
}

namespace {

void write_file(const fs::path& file, const std::function<void(std::ostream&)>& body, SuiteResult& result) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + file.string());
  body(out);
  out.flush();
  if (!out) throw Error("write failed for " + file.string());
  result.files.push_back(file.filename().string());
}

void check_divergence(const std::vector<StrategyRun>& runs) {
  for (const StrategyRun& r : runs)
    if (r.diverged) throw DivergedNaN(r.diverged_at);
}

}  // namespace

SuiteResult run_suite(const ExperimentConfig& cfg, int threads) {
  const SuiteContext ctx = prepare(cfg);
  SuiteResult result{cfg.output, {}};
  OutputLock lock(cfg.output);

  std::vector<StrategyRun> runs;
  for (Strategy s : cfg.strategies) runs.push_back(simulate(ctx, s, cfg.escape.enabled, threads));

  write_file(cfg.output / "trace.csv",
             [&](std::ostream& o) { write_trace_csv(o, runs, ctx.problem.agents(), cfg.escape.enabled); }, result);
  if (cfg.escape.enabled)
    write_file(cfg.output / "escape.csv", [&](std::ostream& o) { write_escape_csv(o, runs); }, result);
  write_file(cfg.output / "meta.json", [&](std::ostream& o) { o << meta_json(ctx, runs).dump(2) << '\n'; }, result);
  check_divergence(runs);

  if (cfg.theory.enabled) {
    const long n_max = cfg.theory.n_max >= 0 ? cfg.theory.n_max : std::max(cfg.training.horizon - 1, 0L);
    write_file(cfg.output / "theory.csv", [&](std::ostream& o) { write_theory_csv(o, ctx, n_max); }, result);
  }
  if (cfg.landscape.enabled)
    write_file(cfg.output / "landscape.csv", [&](std::ostream& o) { write_landscape_csv(o, ctx); }, result);
  return result;
}

SuiteResult run_escape_study(const ExperimentConfig& base, int threads) {
  ExperimentConfig cfg = base;
  cfg.escape.enabled = true;
  const SuiteContext ctx = prepare(cfg);
  SuiteResult result{cfg.output, {}};
  OutputLock lock(cfg.output);
  std::vector<StrategyRun> runs;
  for (Strategy s : cfg.strategies) runs.push_back(simulate(ctx, s, true, threads));
  write_file(cfg.output / "escape.csv", [&](std::ostream& o) { write_escape_csv(o, runs); }, result);
  write_file(cfg.output / "meta.json", [&](std::ostream& o) { o << meta_json(ctx, runs).dump(2) << '\n'; }, result);
  check_divergence(runs);
  return result;
}

}  // namespace escape
