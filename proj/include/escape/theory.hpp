#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "escape/dynamics.hpp"
#include "escape/problem.hpp"
#include "escape/topology.hpp"

namespace escape {

/// Quantities frozen at the local minimizer w*.
struct TheoryContext {
  Vec w_star;
  std::vector<Mat> H_blocks;  // H_k* = Hessian of J_k at w*
  Mat H_bar;                  // (1/K) sum_k H_k*
  AgentMatrix d;              // row k = grad J_k(w*)
  std::vector<Mat> R_blocks;  // per-agent B = 1 noise covariance at w*
  Mat R_bar;                  // (1/K^2) sum_k R_k
  double rho_disagreement = 0.0;  // max_k ||H_k* - H_bar||_2

  Eigen::Index agents() const { return d.rows(); }
  Eigen::Index dim() const { return w_star.size(); }
};

struct ContextOptions {
  /// Zero computes noise covariances by enumerating each shard (exact);
  /// otherwise Monte Carlo with this many draws.
  long mc_samples = 0;
  std::uint64_t seed = 0;
  double gradient_tol = 1e-6;
  int threads = 1;
};

/// Throws NotAtMinimizer when ||grad J(w*)|| > gradient_tol or H_bar is not
/// positive definite.
TheoryContext build_context(const Problem& problem, const ContextOptions& options = {});

/// Damped Newton on J from `start`; returns the stationary point reached.
Vec locate_minimizer(const std::vector<LossModel>& models, const Vec& start, const PerturbationSpec& spec,
                     AttackMethod attack, double tol = 1e-11, int max_iter = 100);

/// One step of the linearized recursion
///   W' <- A2 ((A1 - mu H) W' - mu (d + s))
/// with H = diag{H_k*} acting row-wise on the agent matrix.
AgentMatrix short_term_step(const AgentMatrix& error, const TheoryContext& ctx, const StrategyMatrices& sm, double mu,
                            const AgentMatrix& noise);

enum class NoiseSource { gaussian, resampling };

/// Draws s_n^B for the short-term model. gaussian: N(0, R_k / B) per agent;
/// resampling: batch-mean robust gradient at w* minus grad J_k(w*).
AgentMatrix draw_short_term_noise(const TheoryContext& ctx, const Problem& problem, Eigen::Index batch,
                                  NoiseSource source, std::span<Rng> rngs);
/// Resampling noise for an explicit batch draw.
AgentMatrix resampled_noise(const TheoryContext& ctx, const Problem& problem, const Batches& batches);

struct LinearMoments {
  std::vector<double> er;       // (1/2K) E||W'_n||^2_{I (x) H_bar}
  std::vector<double> mean_sq;  // E||W'_n||^2
};

/// Exact first and second moment propagation of the short-term model from
/// W'_{-1} = 0 under Gaussian noise with covariance R_k / B; entry n is the
/// state after n + 1 updates, n = 0..n_max.
LinearMoments propagate_linear_moments(const TheoryContext& ctx, const StrategyMatrices& sm, double mu,
                                       Eigen::Index batch, long n_max);
std::vector<double> er_exact_linear(const TheoryContext& ctx, const StrategyMatrices& sm, double mu,
                                    Eigen::Index batch, long n_max);

/// e(n) = 1/4 Tr((I - (I - mu H_bar)^{2(n+1)}) R_bar). Throws StepTooLarge
/// unless mu * lambda_max(H_bar) < 1.
double e_of_n(const TheoryContext& ctx, double mu, long n);

struct FTerms {
  double con = 0.0;
  double dif = 0.0;
};

/// Heterogeneity terms, with the weighted norm taken as I_{K-1} (x) H_bar on
/// the (K-1)M-dimensional projected vector. Zero for K = 1.
FTerms f_terms(const TheoryContext& ctx, const CombinationMatrix& cm, long n);

struct TheoryPrediction {
  long n = 0;
  double e_n = 0.0;
  double f_con = 0.0;
  double f_dif = 0.0;
  double er_cen = 0.0;
  double er_con = 0.0;
  double er_dif = 0.0;

  double er(Strategy s) const;
};

TheoryPrediction predict_er(const TheoryContext& ctx, const CombinationMatrix& cm, double mu, Eigen::Index batch,
                            long n);

struct ApproximationErrorReport {
  std::vector<double> true_mean_sq;   // E-hat ||W_n||^2, n = number of updates
  std::vector<double> short_mean_sq;  // E-hat ||W'_n||^2
  std::vector<double> gap;            // |difference|
  std::vector<double> gap_stderr;     // standard error of the paired difference
  std::vector<double> ratio;          // gap / E-hat ||W_n||^2
  RegimeFlags regime;
  bool regime_ok = false;
  bool diverged = false;
};

/// Paired Monte Carlo: true dynamics and the short-term model share batch
/// draws, the latter using resampled noise at w*.
ApproximationErrorReport approximation_error(const Problem& problem, const TheoryContext& ctx,
                                             const CombinationMatrix& cm, const TrainingConfig& cfg, long trials,
                                             int threads = 1);

struct BarCheck {
  Vec w_bar;    // (1/sqrt(K)) (1^T (x) I) W
  Vec w_check;  // (V_alpha^T (x) I) W, stacked by mode
};

template <typename Derived>
BarCheck bar_check_decompose(const Eigen::MatrixBase<Derived>& error, const CombinationMatrix& cm) {
  const double K = static_cast<double>(error.rows());
  BarCheck out;
  out.w_bar = error.colwise().sum().transpose() / std::sqrt(K);
  const Mat modes = cm.V_alpha().transpose() * error;
  out.w_check.resize(modes.size());
  for (Eigen::Index i = 0; i < modes.rows(); ++i) out.w_check.segment(i * modes.cols(), modes.cols()) = modes.row(i);
  return out;
}

}  // namespace escape
