#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "escape/problem.hpp"
#include "escape/rng.hpp"
#include "escape/topology.hpp"

namespace escape {

struct TrainingConfig {
  double mu = 0.05;
  Eigen::Index batch = 1;
  long horizon = 1;
  Strategy strategy = Strategy::diffusion;
  std::uint64_t seed = 0;
  /// nullopt starts every agent at w*; otherwise at w* + offset.
  std::optional<Vec> init_offset;
  long stride = 1;
};

/// Derived, never user-set: large_batch <=> 1/B <= mu, small_eps <=> eps <= mu^2.
struct RegimeFlags {
  bool large_batch = false;
  bool small_eps = false;
};

RegimeFlags regime_flags(const TrainingConfig& cfg, double epsilon);
/// Throws Error when mu <= 0, batch < 1, horizon < 0 or stride < 1.
void validate(const TrainingConfig& cfg);

struct NetworkState {
  AgentMatrix iterates;  // row k = w_{k,n}
  Vec reference;         // w*
  long iteration = 0;

  Eigen::Index agents() const { return iterates.rows(); }
  /// Row k = w_{k,n} - w*.
  AgentMatrix error() const { return iterates.rowwise() - reference.transpose(); }
};

NetworkState initial_state(const Problem& problem, const TrainingConfig& cfg);

/// Per-agent sample indices for one iteration.
using Batches = std::vector<std::vector<Eigen::Index>>;

/// Uniform with replacement, agent k drawing from rngs[k].
Batches draw_batches(const Problem& problem, Eigen::Index batch, std::span<Rng> rngs);

/// Row k = (1/B) sum_b robust_grad(Q_k) at points.row(k) on agent k's batch,
/// perturbations recomputed at that point.
AgentMatrix stochastic_gradients(const Problem& problem, const AgentMatrix& points, const Batches& batches);

NetworkState step_centralized(const NetworkState& state, const Problem& problem, const TrainingConfig& cfg,
                              const Batches& batches);
NetworkState step_diffusion(const NetworkState& state, const Problem& problem, const TrainingConfig& cfg,
                            const CombinationMatrix& cm, const Batches& batches);
NetworkState step_consensus(const NetworkState& state, const Problem& problem, const TrainingConfig& cfg,
                            const CombinationMatrix& cm, const Batches& batches);
NetworkState step(const NetworkState& state, const Problem& problem, const TrainingConfig& cfg,
                  const CombinationMatrix& cm, const Batches& batches);

/// W' = A2 (A1 W - mu G) in block form, with W and G as agent matrices.
template <typename DW, typename DG>
MatrixX<typename DW::Scalar> unified_step(const Eigen::MatrixBase<DW>& error, const Eigen::MatrixBase<DG>& gradients,
                                          typename DW::Scalar mu, const StrategyMatrices& sm) {
  return sm.A2 * (sm.A1 * error - mu * gradients);
}

struct Trajectory {
  std::vector<NetworkState> snapshots;  // n = 0, stride, 2*stride, ..., horizon
  bool diverged = false;
  long diverged_at = -1;
};

using StateObserver = std::function<void(const NetworkState&)>;

/// One trial. Agent k's data stream is derive(cfg.seed, trial, k), shared by
/// all strategies so runs are paired. Divergence stops the run and is
/// recorded rather than thrown.
Trajectory run(const Problem& problem, const TrainingConfig& cfg, const CombinationMatrix& cm,
               std::uint64_t trial = 0, const StateObserver& observer = {});

std::vector<Rng> agent_streams(std::uint64_t seed, std::uint64_t trial, Eigen::Index agents);

}  // namespace escape
