#include "escape/dynamics.hpp"

#include "escape/errors.hpp"
#include "escape/linalg.hpp"

namespace escape {

namespace {

void require_finite(const NetworkState& s) {
  if (!s.iterates.allFinite()) throw DivergedNaN(s.iteration);
}

}  // namespace

RegimeFlags regime_flags(const TrainingConfig& cfg, double epsilon) {
  return {1.0 / static_cast<double>(cfg.batch) <= cfg.mu, epsilon <= cfg.mu * cfg.mu};
}

void validate(const TrainingConfig& cfg) {
  if (!(cfg.mu > 0.0)) throw Error("mu must be positive");
  if (cfg.batch < 1) throw Error("batch size must be at least 1");
  if (cfg.horizon < 0) throw Error("horizon must be nonnegative");
  if (cfg.stride < 1) throw Error("stride must be at least 1");
}

NetworkState initial_state(const Problem& problem, const TrainingConfig& cfg) {
  NetworkState s;
  s.reference = problem.w_star;
  Vec start = problem.w_star;
  if (cfg.init_offset) {
    if (cfg.init_offset->size() != start.size()) throw Error("init offset has wrong dimension");
    start += *cfg.init_offset;
  }
  s.iterates = start.transpose().replicate(problem.agents(), 1);
  return s;
}

std::vector<Rng> agent_streams(std::uint64_t seed, std::uint64_t trial, Eigen::Index agents) {
  std::vector<Rng> rngs;
  rngs.reserve(agents);
  for (Eigen::Index k = 0; k < agents; ++k) rngs.push_back(make_rng(seed, {trial, static_cast<std::uint64_t>(k)}));
  return rngs;
}

Batches draw_batches(const Problem& problem, Eigen::Index batch, std::span<Rng> rngs) {
  Batches out(problem.models.size());
  for (std::size_t k = 0; k < problem.models.size(); ++k) {
    const Eigen::Index N = problem.models[k].shard().size();
    out[k].resize(batch);
    for (Eigen::Index b = 0; b < batch; ++b) out[k][b] = uniform_index(N, rngs[k]);
  }
  return out;
}

AgentMatrix stochastic_gradients(const Problem& problem, const AgentMatrix& points, const Batches& batches) {
  AgentMatrix G(points.rows(), points.cols());
  for (Eigen::Index k = 0; k < points.rows(); ++k) {
    const Vec w = points.row(k).transpose();
    G.row(k) = batch_gradient(problem.models[k], w, batches[k], problem.spec, problem.attack).transpose();
  }
  return G;
}

NetworkState step_centralized(const NetworkState& state, const Problem& problem, const TrainingConfig& cfg,
                              const Batches& batches) {
  const AgentMatrix& X = state.iterates;
  if ((X.rowwise() - X.row(0)).cwiseAbs().maxCoeff() > 1e-12)
    throw Error("centralized step requires identical agent rows");
  // Every agent's batch is perturbed at the shared iterate.
  const AgentMatrix shared = X.row(0).replicate(X.rows(), 1);
  const AgentMatrix G = stochastic_gradients(problem, shared, batches);
  const Vec w = X.row(0).transpose() - cfg.mu * G.colwise().mean().transpose();
  NetworkState next{w.transpose().replicate(X.rows(), 1), state.reference, state.iteration + 1};
  require_finite(next);
  return next;
}

NetworkState step_diffusion(const NetworkState& state, const Problem& problem, const TrainingConfig& cfg,
                            const CombinationMatrix& cm, const Batches& batches) {
  const AgentMatrix G = stochastic_gradients(problem, state.iterates, batches);
  const AgentMatrix phi = state.iterates - cfg.mu * G;
  NetworkState next{combine(cm.A(), phi), state.reference, state.iteration + 1};
  require_finite(next);
  return next;
}

NetworkState step_consensus(const NetworkState& state, const Problem& problem, const TrainingConfig& cfg,
                            const CombinationMatrix& cm, const Batches& batches) {
  // Gradient at the pre-mixing iterate w_{k,n-1}, not at phi_{k,n}.
  const AgentMatrix G = stochastic_gradients(problem, state.iterates, batches);
  NetworkState next{combine(cm.A(), state.iterates) - cfg.mu * G, state.reference, state.iteration + 1};
  require_finite(next);
  return next;
}

NetworkState step(const NetworkState& state, const Problem& problem, const TrainingConfig& cfg,
                  const CombinationMatrix& cm, const Batches& batches) {
  switch (cfg.strategy) {
    case Strategy::centralized: return step_centralized(state, problem, cfg, batches);
    case Strategy::consensus: return step_consensus(state, problem, cfg, cm, batches);
    case Strategy::diffusion: break;
  }
  return step_diffusion(state, problem, cfg, cm, batches);
}

Trajectory run(const Problem& problem, const TrainingConfig& cfg, const CombinationMatrix& cm, std::uint64_t trial,
               const StateObserver& observer) {
  validate(cfg);
  Trajectory traj;
  std::vector<Rng> rngs = agent_streams(cfg.seed, trial, problem.agents());
  NetworkState state = initial_state(problem, cfg);
  auto record = [&](const NetworkState& s) {
    traj.snapshots.push_back(s);
    if (observer) observer(s);
  };
  record(state);
  for (long n = 1; n <= cfg.horizon; ++n) {
    const Batches batches = draw_batches(problem, cfg.batch, rngs);
    try {
      state = step(state, problem, cfg, cm, batches);
    } catch (const DivergedNaN&) {
      traj.diverged = true;
      traj.diverged_at = n;
      break;
    }
    if (n % cfg.stride == 0 || n == cfg.horizon) record(state);
  }
  return traj;
}

}  // namespace escape
