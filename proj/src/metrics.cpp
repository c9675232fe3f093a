#include "escape/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "escape/errors.hpp"
#include "escape/parallel.hpp"

namespace escape {

Vec agent_excess_risks(const NetworkState& state, const Problem& problem, double risk_at_minimizer) {
  Vec er(state.agents());
  for (Eigen::Index k = 0; k < state.agents(); ++k)
    er[k] = problem.risk(state.iterates.row(k).transpose()) - risk_at_minimizer;
  return er;
}

double excess_risk(const std::vector<NetworkState>& trials, const Problem& problem, double risk_at_minimizer) {
  double total = 0.0;
  for (const NetworkState& s : trials) total += agent_excess_risks(s, problem, risk_at_minimizer).mean();
  return total / static_cast<double>(trials.size());
}

TrialMeasure measure(const NetworkState& state, const Problem& problem, double risk_at_minimizer) {
  TrialMeasure m;
  m.n = state.iteration;
  m.er_agents = agent_excess_risks(state, problem, risk_at_minimizer);
  m.consensus_distance = consensus_distance(state.iterates);
  m.sq_error = state.error().squaredNorm();
  return m;
}

TraceRecord aggregate(const std::vector<TrialMeasure>& trials, Strategy strategy) {
  TraceRecord r;
  r.strategy = strategy;
  r.n = trials.front().n;
  r.er_agents = Vec::Zero(trials.front().er_agents.size());
  const double T = static_cast<double>(trials.size());
  double sum = 0.0, sum_sq = 0.0, escaped = 0.0;
  bool escape_measured = true;
  for (const TrialMeasure& m : trials) {
    r.er_agents += m.er_agents;
    const double er = m.er_agents.mean();
    sum += er;
    sum_sq += er * er;
    r.consensus_distance += m.consensus_distance;
    r.mean_sq_error += m.sq_error;
    escape_measured = escape_measured && m.escaped >= 0;
    escaped += static_cast<double>(m.escaped) / static_cast<double>(m.er_agents.size());
  }
  r.er_agents /= T;
  r.er_empirical = sum / T;
  r.er_stderr = trials.size() > 1
                    ? std::sqrt(std::max(sum_sq - T * r.er_empirical * r.er_empirical, 0.0) / (T - 1.0) / T)
                    : 0.0;
  r.consensus_distance /= T;
  r.mean_sq_error /= T;
  if (escape_measured) r.escaped_fraction = escaped / T;
  return r;
}

TraceRecord summarize(const std::vector<NetworkState>& trials, const Problem& problem, Strategy strategy,
                      double risk_at_minimizer) {
  std::vector<TrialMeasure> ms;
  for (const NetworkState& s : trials) ms.push_back(measure(s, problem, risk_at_minimizer));
  return aggregate(ms, strategy);
}

BasinVerdict basin_verdict(const Vec& point, const Problem& problem, const BasinOptions& options) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(
      network_hessian(problem.models, point, problem.spec, problem.attack), Eigen::EigenvaluesOnly);
  const double lambda_max = eig.eigenvalues().cwiseAbs().maxCoeff();
  double gd_mu = options.gd_mu;
  if (options.adaptive_step && gd_mu * lambda_max >= 0.5) gd_mu = 0.5 / lambda_max;
  if (gd_mu * lambda_max >= 1.0)
    throw StepTooLarge("gd_mu * lambda_max = " + std::to_string(gd_mu * lambda_max) + " >= 1");

  const double box = 10.0 * options.basin_scale;
  Vec w = point;
  for (long i = 0; i <= options.gd_steps; ++i) {
    if ((w - problem.w_star).norm() <= options.tol) return BasinVerdict::inside;
    if ((w - problem.w_star).cwiseAbs().maxCoeff() > box) return BasinVerdict::outside;
    const Vec g = problem.gradient(w);
    if (!g.allFinite()) return BasinVerdict::outside;
    if (g.norm() <= 1e-3 * options.tol) {
      // Stalled away from w*: another minimum, or a saddle on the separatrix.
      Eigen::SelfAdjointEigenSolver<Mat> local(network_hessian(problem.models, w, problem.spec, problem.attack),
                                               Eigen::EigenvaluesOnly);
      return local.eigenvalues().minCoeff() > 0.0 ? BasinVerdict::outside : BasinVerdict::inconclusive;
    }
    w -= gd_mu * g;
  }
  return BasinVerdict::inconclusive;
}

bool in_basin(const Vec& point, const Problem& problem, const BasinOptions& options) {
  switch (basin_verdict(point, problem, options)) {
    case BasinVerdict::inside: return true;
    case BasinVerdict::outside: return false;
    case BasinVerdict::inconclusive: break;
  }
  throw Inconclusive("descent neither reached w* nor left the basin box");
}

double EscapeSample::fraction() const {
  double total = 0.0;
  for (double f : per_trial) total += f;
  return per_trial.empty() ? 0.0 : total / static_cast<double>(per_trial.size());
}

double EscapeSample::standard_error() const {
  const double T = static_cast<double>(per_trial.size());
  if (per_trial.size() < 2) return 0.0;
  const double mean = fraction();
  double ss = 0.0;
  for (double f : per_trial) ss += (f - mean) * (f - mean);
  return std::sqrt(ss / (T - 1.0) / T);
}

void measure_escape(TrialMeasure& m, const NetworkState& state, const Problem& problem, const BasinOptions& basin) {
  m.escaped = 0;
  m.inconclusive = 0;
  for (Eigen::Index k = 0; k < state.agents(); ++k) {
    const BasinVerdict v = basin_verdict(state.iterates.row(k).transpose(), problem, basin);
    m.escaped += v == BasinVerdict::outside;
    m.inconclusive += v == BasinVerdict::inconclusive;
  }
}

std::vector<EscapeSample> escape_curve(const Problem& problem, const TrainingConfig& cfg, const CombinationMatrix& cm,
                                       long trials, const BasinOptions& basin, int threads) {
  std::vector<std::vector<double>> fractions(trials);
  std::vector<std::vector<long>> inconclusive(trials);
  std::vector<long> steps;
  for (long n = 0; n <= cfg.horizon; ++n)
    if (n % cfg.stride == 0 || n == cfg.horizon) steps.push_back(n);

  parallel_for(static_cast<std::size_t>(trials), threads, [&](std::size_t t) {
    const Trajectory traj = run(problem, cfg, cm, t);
    for (std::size_t i = 0; i < steps.size(); ++i) {
      // A diverged run stays at its last finite state, which is far outside any basin.
      const NetworkState& s = traj.snapshots[std::min(i, traj.snapshots.size() - 1)];
      TrialMeasure m;
      if (traj.diverged && i >= traj.snapshots.size()) {
        m.escaped = s.agents();
        m.inconclusive = 0;
      } else {
        measure_escape(m, s, problem, basin);
      }
      const long escaped = m.escaped, unknown = m.inconclusive;
      fractions[t].push_back(static_cast<double>(escaped) / static_cast<double>(s.agents()));
      inconclusive[t].push_back(unknown);
    }
  });

  std::vector<EscapeSample> out(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    out[i].n = steps[i];
    for (long t = 0; t < trials; ++t) {
      out[i].per_trial.push_back(fractions[t][i]);
      out[i].inconclusive += inconclusive[t][i];
    }
  }
  return out;
}

double flatness_trace(const std::vector<LossModel>& models, const Vec& w, const PerturbationSpec& spec,
                      AttackMethod attack) {
  return network_hessian(models, w, spec, attack).trace();
}

double flatness_trace(const Problem& problem, const Vec& w) {
  return flatness_trace(problem.models, w, problem.spec, problem.attack);
}

}  // namespace escape
