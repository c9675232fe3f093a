#pragma once

#include <cstdint>
#include <vector>

#include "escape/adversary.hpp"
#include "escape/rng.hpp"

namespace escape {

struct NoiseStatistics {
  Vec mean;
  double second_moment = 0.0;  // E||s||^2
  double fourth_moment = 0.0;  // E||s||^4
  Mat covariance;              // unbiased, divides by n - 1
  long sample_count = 0;
  Eigen::Index batch = 1;
  /// Per-coordinate standard deviation of the draws.
  Vec stddev() const;
};

/// s^B(w) for an explicit batch: batch-mean robust gradient minus `mean_gradient`.
Vec noise_sample(const LossModel& m, const Vec& w, const std::vector<Eigen::Index>& batch,
                 const PerturbationSpec& spec, AttackMethod attack, const Vec& mean_gradient);
/// s^B(w) with B samples drawn uniformly with replacement; the shard-mean
/// gradient is recomputed at w.
Vec noise_sample(const LossModel& m, const Vec& w, Eigen::Index batch, const PerturbationSpec& spec,
                 AttackMethod attack, Rng& rng);

NoiseStatistics estimate_covariance(const LossModel& m, const Vec& w, Eigen::Index batch,
                                    const PerturbationSpec& spec, AttackMethod attack, long n_samples,
                                    std::uint64_t seed, int threads = 1);

/// R_{s,k}(w) for B = 1 by enumerating the shard (uniform sampling makes this
/// the exact noise covariance).
Mat exact_noise_covariance(const LossModel& m, const Vec& w, const PerturbationSpec& spec, AttackMethod attack);

struct NetworkCovariance {
  Mat direct;        // covariance of (1/K) sum_k s_k
  Mat from_agents;   // (1/K^2) sum_k R-hat_k
  double relative_gap = 0.0;  // ||direct - from_agents||_F / ||from_agents||_F
};

NetworkCovariance network_covariance(const std::vector<LossModel>& models, const Vec& w_star,
                                     const PerturbationSpec& spec, AttackMethod attack, long n_samples,
                                     std::uint64_t seed, int threads = 1);

Mat exact_network_covariance(const std::vector<LossModel>& models, const Vec& w_star, const PerturbationSpec& spec,
                             AttackMethod attack);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace escape
