#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "escape/dynamics.hpp"
#include "escape/problem.hpp"

namespace escape {

/// One row of trace.csv: statistics over trials at iteration n.
struct TraceRecord {
  long n = 0;
  Strategy strategy = Strategy::diffusion;
  double er_empirical = 0.0;
  double er_stderr = 0.0;
  double consensus_distance = 0.0;
  double mean_sq_error = 0.0;
  Vec er_agents;
  std::optional<double> escaped_fraction;
};

/// J(w_k) - J(w*) for every agent, in agent order.
Vec agent_excess_risks(const NetworkState& state, const Problem& problem, double risk_at_minimizer);

/// (1/K) sum_k J(w_k) - J(w*), averaged over the given trial states.
double excess_risk(const std::vector<NetworkState>& trials, const Problem& problem, double risk_at_minimizer);

/// sqrt((1/K) sum_k ||w_k - mean_l w_l||^2).
template <typename Derived>
typename Derived::Scalar consensus_distance(const Eigen::MatrixBase<Derived>& iterates) {
  using Scalar = typename Derived::Scalar;
  const auto mean = iterates.colwise().mean();
  return std::sqrt((iterates.rowwise() - mean).squaredNorm() / static_cast<Scalar>(iterates.rows()));
}

/// Per-trial measurements of one snapshot.
struct TrialMeasure {
  long n = 0;
  Vec er_agents;
  double consensus_distance = 0.0;
  double sq_error = 0.0;
  long escaped = -1;  // agents outside the basin; -1 when not evaluated
  long inconclusive = 0;
};

TrialMeasure measure(const NetworkState& state, const Problem& problem, double risk_at_minimizer);
/// Reduces measurements of the same iteration in trial order.
TraceRecord aggregate(const std::vector<TrialMeasure>& trials, Strategy strategy);
/// measure + aggregate.
TraceRecord summarize(const std::vector<NetworkState>& trials, const Problem& problem, Strategy strategy,
                      double risk_at_minimizer);

enum class BasinVerdict { inside, outside, inconclusive };

struct BasinOptions {
  long gd_steps = 2000;
  double gd_mu = 0.1;
  double tol = 1e-3;
  /// Descent leaving the box of half-width 10 * basin_scale around w* counts as escape.
  double basin_scale = 1.0;
  /// Use min(gd_mu, 0.5 / lambda_max at the probe) instead of failing the step-size check.
  bool adaptive_step = false;
};

/// Noiseless full-gradient descent on J from `point`. Inside when it reaches
/// w* within tol, outside when it leaves the box or settles at another
/// stationary point, inconclusive otherwise. Throws StepTooLarge unless
/// gd_mu * lambda_max(Hessian at point) < 1 or adaptive_step is set.
BasinVerdict basin_verdict(const Vec& point, const Problem& problem, const BasinOptions& options);
/// Boolean form; throws Inconclusive.
bool in_basin(const Vec& point, const Problem& problem, const BasinOptions& options);

/// Escape statistics at one recorded iteration. An agent has escaped when
/// its current iterate is outside the basin of w*; inconclusive verdicts
/// count as not escaped and are tallied separately.
struct EscapeSample {
  long n = 0;
  std::vector<double> per_trial;  // escaped fraction of agents, by trial
  long inconclusive = 0;

  double fraction() const;
  double standard_error() const;
};

/// Adds the basin verdicts of every agent to `m`.
void measure_escape(TrialMeasure& m, const NetworkState& state, const Problem& problem, const BasinOptions& basin);

/// Runs `trials` paired trials of cfg.strategy and evaluates basin membership
/// of every agent at n = 0, stride, ..., horizon.
std::vector<EscapeSample> escape_curve(const Problem& problem, const TrainingConfig& cfg, const CombinationMatrix& cm,
                                       long trials, const BasinOptions& basin, int threads = 1);

/// Tr(Hessian of J at w).
double flatness_trace(const Problem& problem, const Vec& w);
double flatness_trace(const std::vector<LossModel>& models, const Vec& w, const PerturbationSpec& spec,
                      AttackMethod attack);

}  // namespace escape
