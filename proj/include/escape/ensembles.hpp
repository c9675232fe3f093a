#pragma once

#include <cstdint>
#include <vector>

#include "escape/adversary.hpp"

namespace escape {

// Synthetic agent ensembles. Every shard's inputs are drawn i.i.d. Gaussian;
// the affine-coupled kinds centre each shard so its mean input is zero.

struct RegressionEnsembleSpec {
  Eigen::Index K = 8;
  Eigen::Index dim = 3;
  Eigen::Index samples = 64;
  double heterogeneity = 0.5;  // spread of per-agent generating weights
  double label_noise = 0.5;
  bool identical_shards = false;
  std::uint64_t seed = 1;
};

struct QuadraticEnsembleSpec {
  Eigen::Index K = 8;
  Eigen::Index dim = 4;
  Eigen::Index samples = 64;
  double heterogeneity = 1.0;         // spread of local minimizers c_k
  double hessian_disagreement = 0.0;  // max ||H_k - H_bar||_2
  double noise_scale = 1.0;
  double eig_min = 0.5;
  double eig_max = 2.0;
  bool identical_shards = false;
  std::uint64_t seed = 1;
};

struct DoubleWellEnsembleSpec {
  Eigen::Index K = 8;
  Eigen::Index samples = 64;
  double heterogeneity = 0.5;  // spread of per-agent tilts (zero network mean)
  double noise_scale = 0.5;
  double length = 1.0;
  double h_flat = 1.0;
  double kappa_flat = 1.0;
  double anchor_distance = 4.0;  // perturbation anchor sits at (-anchor_distance, 0)
  bool identical_shards = false;
  std::uint64_t seed = 1;
};

std::vector<LossModel> make_regression_ensemble(const RegressionEnsembleSpec& spec);
std::vector<LossModel> make_quadratic_ensemble(const QuadraticEnsembleSpec& spec);
std::vector<LossModel> make_double_well_ensemble(const DoubleWellEnsembleSpec& spec);

}  // namespace escape
