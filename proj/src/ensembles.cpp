#include "escape/ensembles.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <algorithm>

#include "escape/linalg.hpp"

#include "escape/rng.hpp"

namespace escape {

namespace {

Mat gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat X(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) X(i, j) = scale * normal(rng);
  return X;
}

Mat centered(Mat X) {
  X.rowwise() -= X.colwise().mean();
  return X;
}

Mat random_orthogonal(Eigen::Index n, Rng& rng) {
  Eigen::HouseholderQR<Mat> qr(gaussian_matrix(n, n, 1.0, rng));
  return qr.householderQ() * Mat::Identity(n, n);
}

}  // namespace

std::vector<LossModel> make_regression_ensemble(const RegressionEnsembleSpec& spec) {
  Rng base = make_rng(spec.seed, {1});
  const Vec w0 = standard_normal(spec.dim, base);
  std::vector<LossModel> models;
  for (Eigen::Index k = 0; k < spec.K; ++k) {
    Rng rng = make_rng(spec.seed, {2, spec.identical_shards ? 0 : static_cast<std::uint64_t>(k)});
    const Vec w_true = w0 + spec.heterogeneity * standard_normal(spec.dim, rng);
    DatasetShard shard{gaussian_matrix(spec.samples, spec.dim, 1.0, rng), Vec()};
    shard.y = shard.X * w_true + spec.label_noise * standard_normal(spec.samples, rng);
    models.push_back(LossModel::regression(std::move(shard)));
  }
  return models;
}

std::vector<LossModel> make_quadratic_ensemble(const QuadraticEnsembleSpec& spec) {
  const Eigen::Index M = spec.dim;
  Rng base = make_rng(spec.seed, {3});
  const Mat Q = random_orthogonal(M, base);
  Vec eigs = Vec::LinSpaced(M, spec.eig_min, spec.eig_max);
  const Mat H0 = Q * eigs.asDiagonal() * Q.transpose();

  // Zero-mean symmetric perturbations scaled to spectral norm hessian_disagreement.
  std::vector<Mat> deltas;
  Mat mean_delta = Mat::Zero(M, M);
  for (Eigen::Index k = 0; k < spec.K; ++k) {
    Rng rng = make_rng(spec.seed, {4, static_cast<std::uint64_t>(k)});
    Mat S = gaussian_matrix(M, M, 1.0, rng);
    deltas.push_back(S + S.transpose());
    mean_delta += deltas.back();
  }
  mean_delta /= static_cast<double>(spec.K);
  // One common scale keeps the mean at zero, so max_k ||H_k - H_bar|| is exactly the target.
  double largest = 0.0;
  for (Mat& D : deltas) {
    D -= mean_delta;
    Eigen::SelfAdjointEigenSolver<Mat> eig(D);
    largest = std::max(largest, eig.eigenvalues().cwiseAbs().maxCoeff());
  }
  for (Mat& D : deltas) D = largest > 0.0 ? Mat(D * (spec.hessian_disagreement / largest)) : Mat(Mat::Zero(M, M));

  std::vector<LossModel> models;
  for (Eigen::Index k = 0; k < spec.K; ++k) {
    Rng rng = make_rng(spec.seed, {5, static_cast<std::uint64_t>(k)});
    const Vec center = spec.heterogeneity * standard_normal(M, rng);
    Rng data = make_rng(spec.seed, {6, spec.identical_shards ? 0 : static_cast<std::uint64_t>(k)});
    DatasetShard shard{centered(gaussian_matrix(spec.samples, M, spec.noise_scale, data)), Vec::Zero(spec.samples)};
    models.push_back(LossModel::quadratic(symmetrized(H0 + deltas[k]), center, std::move(shard)));
  }
  return models;
}

std::vector<LossModel> make_double_well_ensemble(const DoubleWellEnsembleSpec& spec) {
  std::vector<Vec> tilts;
  Vec mean = Vec::Zero(2);
  for (Eigen::Index k = 0; k < spec.K; ++k) {
    Rng rng = make_rng(spec.seed, {7, static_cast<std::uint64_t>(k)});
    tilts.push_back(spec.heterogeneity * standard_normal(2, rng));
    mean += tilts.back();
  }
  mean /= static_cast<double>(spec.K);

  std::vector<LossModel> models;
  for (Eigen::Index k = 0; k < spec.K; ++k) {
    DoubleWellParams p;
    p.length = spec.length;
    p.h_flat = spec.h_flat;
    p.kappa_flat = spec.kappa_flat;
    p.tilt = tilts[k] - mean;
    p.anchor = (Vec(2) << -spec.anchor_distance, 0.0).finished();
    Rng data = make_rng(spec.seed, {8, spec.identical_shards ? 0 : static_cast<std::uint64_t>(k)});
    DatasetShard shard{centered(gaussian_matrix(spec.samples, 2, spec.noise_scale, data)), Vec::Zero(spec.samples)};
    models.push_back(LossModel::double_well(std::move(p), std::move(shard)));
  }
  return models;
}

}  // namespace escape
