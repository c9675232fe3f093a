#include "escape/theory.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>

#include "escape/errors.hpp"
#include "escape/linalg.hpp"
#include "escape/noise.hpp"
#include "escape/parallel.hpp"

namespace escape {

namespace {

double spectral_norm_symmetric(const Mat& S) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(S, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

Mat block_diagonal(const std::vector<Mat>& blocks) {
  const auto K = static_cast<Eigen::Index>(blocks.size());
  const Eigen::Index M = blocks.front().rows();
  Mat out = Mat::Zero(K * M, K * M);
  for (Eigen::Index k = 0; k < K; ++k) out.block(k * M, k * M, M, M) = blocks[k];
  return out;
}

}  // namespace

Vec locate_minimizer(const std::vector<LossModel>& models, const Vec& start, const PerturbationSpec& spec,
                     AttackMethod attack, double tol, int max_iter) {
  Vec w = start;
  Vec g = network_gradient(models, w, spec, attack);
  for (int it = 0; it < max_iter && g.norm() > tol; ++it) {
    const Mat H = network_hessian(models, w, spec, attack);
    Eigen::LDLT<Mat> ldlt(H);
    Vec dir = -g;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) dir = ldlt.solve(-g);
    double t = 1.0;
    Vec trial = w + dir;
    Vec trial_g = network_gradient(models, trial, spec, attack);
    while (trial_g.norm() >= g.norm() && t > 1e-8) {
      t *= 0.5;
      trial = w + t * dir;
      trial_g = network_gradient(models, trial, spec, attack);
    }
    if (trial_g.norm() >= g.norm()) break;
    w = trial;
    g = trial_g;
  }
  return w;
}

TheoryContext build_context(const Problem& problem, const ContextOptions& options) {
  const Vec& w = problem.w_star;
  const double grad_norm = problem.gradient(w).norm();
  if (grad_norm > options.gradient_tol)
    throw NotAtMinimizer("||grad J(w*)|| = " + std::to_string(grad_norm) + " exceeds tolerance");

  TheoryContext ctx;
  ctx.w_star = w;
  const Eigen::Index K = problem.agents(), M = problem.dim();
  ctx.H_bar = Mat::Zero(M, M);
  ctx.R_bar = Mat::Zero(M, M);
  ctx.d.resize(K, M);
  for (Eigen::Index k = 0; k < K; ++k) {
    const LossModel& m = problem.models[k];
    ctx.H_blocks.push_back(symmetrized(risk_hessian(m, w, problem.spec, problem.attack)));
    ctx.H_bar += ctx.H_blocks.back();
    ctx.d.row(k) = risk_gradient(m, w, problem.spec, problem.attack).transpose();
    if (options.mc_samples > 0)
      ctx.R_blocks.push_back(estimate_covariance(m, w, 1, problem.spec, problem.attack, options.mc_samples,
                                                 derive_seed(options.seed, {static_cast<std::uint64_t>(k)}),
                                                 options.threads)
                                 .covariance);
    else
      ctx.R_blocks.push_back(exact_noise_covariance(m, w, problem.spec, problem.attack));
    ctx.R_bar += ctx.R_blocks.back();
  }
  ctx.H_bar /= static_cast<double>(K);
  ctx.R_bar /= static_cast<double>(K * K);

  Eigen::SelfAdjointEigenSolver<Mat> eig(ctx.H_bar, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() <= 0.0)
    throw NotAtMinimizer("H_bar is not positive definite (min eigenvalue " +
                         std::to_string(eig.eigenvalues().minCoeff()) + ")");
  for (const Mat& Hk : ctx.H_blocks)
    ctx.rho_disagreement = std::max(ctx.rho_disagreement, spectral_norm_symmetric(Hk - ctx.H_bar));
  return ctx;
}

AgentMatrix short_term_step(const AgentMatrix& error, const TheoryContext& ctx, const StrategyMatrices& sm, double mu,
                            const AgentMatrix& noise) {
  AgentMatrix inner = sm.A1 * error;
  for (Eigen::Index k = 0; k < error.rows(); ++k)
    inner.row(k) -= mu * (error.row(k) * ctx.H_blocks[k] + ctx.d.row(k) + noise.row(k));
  return sm.A2 * inner;
}

AgentMatrix resampled_noise(const TheoryContext& ctx, const Problem& problem, const Batches& batches) {
  AgentMatrix s(ctx.agents(), ctx.dim());
  for (Eigen::Index k = 0; k < ctx.agents(); ++k)
    s.row(k) = noise_sample(problem.models[k], ctx.w_star, batches[k], problem.spec, problem.attack,
                            ctx.d.row(k).transpose())
                   .transpose();
  return s;
}

AgentMatrix draw_short_term_noise(const TheoryContext& ctx, const Problem& problem, Eigen::Index batch,
                                  NoiseSource source, std::span<Rng> rngs) {
  if (source == NoiseSource::resampling) return resampled_noise(ctx, problem, draw_batches(problem, batch, rngs));
  AgentMatrix s(ctx.agents(), ctx.dim());
  for (Eigen::Index k = 0; k < ctx.agents(); ++k) {
    const Mat root = psd_sqrt(ctx.R_blocks[k] / static_cast<double>(batch));
    s.row(k) = (root * standard_normal(ctx.dim(), rngs[k])).transpose();
  }
  return s;
}

LinearMoments propagate_linear_moments(const TheoryContext& ctx, const StrategyMatrices& sm, double mu,
                                       Eigen::Index batch, long n_max) {
  const Eigen::Index K = ctx.agents(), M = ctx.dim();
  const Mat A1 = block_extend(sm.A1, M);
  const Mat A2 = block_extend(sm.A2, M);
  const Mat transition = A2 * (A1 - mu * block_diagonal(ctx.H_blocks));
  const Mat R = block_diagonal(ctx.R_blocks) / static_cast<double>(batch);
  const Mat forcing_cov = mu * mu * A2 * R * A2.transpose();
  const Vec drift = -mu * A2 * stack_rows(ctx.d);
  const Mat weight = block_diagonal(std::vector<Mat>(K, ctx.H_bar));

  LinearMoments out;
  Vec mean = Vec::Zero(K * M);
  Mat cov = Mat::Zero(K * M, K * M);
  for (long n = 0; n <= n_max; ++n) {
    mean = transition * mean + drift;
    cov = transition * cov * transition.transpose() + forcing_cov;
    cov = symmetrized(cov);
    const double weighted = mean.dot(weight * mean) + (weight * cov).trace();
    out.er.push_back(weighted / (2.0 * static_cast<double>(K)));
    out.mean_sq.push_back(mean.squaredNorm() + cov.trace());
  }
  return out;
}

std::vector<double> er_exact_linear(const TheoryContext& ctx, const StrategyMatrices& sm, double mu,
                                    Eigen::Index batch, long n_max) {
  return propagate_linear_moments(ctx, sm, mu, batch, n_max).er;
}

double e_of_n(const TheoryContext& ctx, double mu, long n) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(ctx.H_bar);
  const double lambda_max = eig.eigenvalues().maxCoeff();
  if (mu * lambda_max >= 1.0)
    throw StepTooLarge("mu * lambda_max(H_bar) = " + std::to_string(mu * lambda_max) + " >= 1");
  const Mat R = eig.eigenvectors().transpose() * ctx.R_bar * eig.eigenvectors();
  double total = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i)
    total += (1.0 - std::pow(1.0 - mu * eig.eigenvalues()[i], 2.0 * static_cast<double>(n + 1))) * R(i, i);
  return 0.25 * total;
}

FTerms f_terms(const TheoryContext& ctx, const CombinationMatrix& cm, long n) {
  FTerms f;
  const Eigen::Index K = ctx.agents();
  if (K < 2) return f;
  const Vec lambda = cm.P_alpha();
  // V_alpha is orthogonal to 1, so removing a common row changes nothing
  // except that identical agents give exactly zero.
  const AgentMatrix deviations = ctx.d.rowwise() - ctx.d.row(0);
  AgentMatrix modes = cm.V_alpha().transpose() * deviations;  // (K-1) x M
  for (Eigen::Index i = 0; i < modes.rows(); ++i)
    modes.row(i) *= (1.0 - std::pow(lambda[i], static_cast<double>(n + 1))) / (1.0 - lambda[i]);
  f.con = block_weighted_sq_norm(modes, ctx.H_bar) / (2.0 * static_cast<double>(K));
  modes = lambda.asDiagonal() * modes;
  f.dif = block_weighted_sq_norm(modes, ctx.H_bar) / (2.0 * static_cast<double>(K));
  return f;
}

double TheoryPrediction::er(Strategy s) const {
  switch (s) {
    case Strategy::centralized: return er_cen;
    case Strategy::consensus: return er_con;
    case Strategy::diffusion: break;
  }
  return er_dif;
}

TheoryPrediction predict_er(const TheoryContext& ctx, const CombinationMatrix& cm, double mu, Eigen::Index batch,
                            long n) {
  TheoryPrediction p;
  p.n = n;
  p.e_n = e_of_n(ctx, mu, n);
  const FTerms f = f_terms(ctx, cm, n);
  p.f_con = f.con;
  p.f_dif = f.dif;
  const double noise = mu / static_cast<double>(batch) * p.e_n;
  p.er_cen = noise;
  p.er_con = noise + mu * mu * f.con;
  p.er_dif = noise + mu * mu * f.dif;
  const double slack = 1e-12 * std::max(1.0, p.er_con);
  if (!(p.er_cen <= p.er_dif + slack && p.er_dif <= p.er_con + slack))
    throw std::logic_error("escaping-efficiency ordering violated");
  return p;
}

ApproximationErrorReport approximation_error(const Problem& problem, const TheoryContext& ctx,
                                             const CombinationMatrix& cm, const TrainingConfig& cfg, long trials,
                                             int threads) {
  validate(cfg);
  const StrategyMatrices sm = strategy_matrices(cm, cfg.strategy);
  const std::size_t steps = static_cast<std::size_t>(cfg.horizon) + 1;
  std::vector<std::vector<double>> true_sq(trials, std::vector<double>(steps, 0.0));
  std::vector<std::vector<double>> short_sq(trials, std::vector<double>(steps, 0.0));
  std::vector<char> diverged(trials, 0);

  parallel_for(static_cast<std::size_t>(trials), threads, [&](std::size_t t) {
    std::vector<Rng> rngs = agent_streams(cfg.seed, t, problem.agents());
    NetworkState state = initial_state(problem, cfg);
    AgentMatrix linear = state.error();
    true_sq[t][0] = short_sq[t][0] = linear.squaredNorm();
    for (std::size_t n = 1; n < steps; ++n) {
      const Batches batches = draw_batches(problem, cfg.batch, rngs);
      try {
        state = step(state, problem, cfg, cm, batches);
      } catch (const DivergedNaN&) {
        diverged[t] = 1;
        return;
      }
      linear = short_term_step(linear, ctx, sm, cfg.mu, resampled_noise(ctx, problem, batches));
      true_sq[t][n] = state.error().squaredNorm();
      short_sq[t][n] = linear.squaredNorm();
    }
  });

  ApproximationErrorReport rep;
  rep.regime = regime_flags(cfg, problem.spec.epsilon);
  rep.regime_ok = rep.regime.large_batch && rep.regime.small_eps;
  for (char d : diverged) rep.diverged = rep.diverged || d;
  const double T = static_cast<double>(trials);
  for (std::size_t n = 0; n < steps; ++n) {
    double a = 0.0, b = 0.0, diff = 0.0, diff_sq = 0.0;
    for (long t = 0; t < trials; ++t) {
      a += true_sq[t][n];
      b += short_sq[t][n];
      const double dd = short_sq[t][n] - true_sq[t][n];
      diff += dd;
      diff_sq += dd * dd;
    }
    a /= T;
    b /= T;
    const double mean_diff = diff / T;
    const double var = trials > 1 ? (diff_sq - T * mean_diff * mean_diff) / (T - 1.0) : 0.0;
    rep.true_mean_sq.push_back(a);
    rep.short_mean_sq.push_back(b);
    rep.gap.push_back(std::abs(b - a));
    rep.gap_stderr.push_back(std::sqrt(std::max(var, 0.0) / T));
    rep.ratio.push_back(a > 0.0 ? std::abs(b - a) / a : 0.0);
  }
  return rep;
}

}  // namespace escape
