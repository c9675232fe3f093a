#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <variant>
#include <vector>

#include "escape/types.hpp"

namespace escape {

enum class Norm { l2, linf };
enum class AttackMethod { exact, pgd };
enum class LossKind { robust_linear_regression, quadratic_heterogeneous, double_well_2d };

std::string_view to_string(Norm n);
std::string_view to_string(AttackMethod a);
std::string_view to_string(LossKind k);
Norm parse_norm(std::string_view s);
AttackMethod parse_attack(std::string_view s);
LossKind parse_loss_kind(std::string_view s);

struct PerturbationSpec {
  Norm norm = Norm::l2;
  double epsilon = 0.0;
  int steps = 10;
  /// Zero selects 2.5 * epsilon / steps.
  double step_size = 0.0;

  double effective_step() const { return step_size > 0.0 ? step_size : 2.5 * epsilon / steps; }
};

/// Local training samples; row i of X is x_i. Kinds without labels keep y = 0.
struct DatasetShard {
  Mat X;
  Vec y;

  Eigen::Index size() const { return X.rows(); }
  Eigen::Index input_dim() const { return X.cols(); }
};

/// Q(w; x, y) = 1/2 (y - x^T w)^2 - offset, offset = clean least-squares risk.
struct RegressionParams {
  double offset = 0.0;
};

/// Q(w; x) = 1/2 (w - c)^T H (w - c) - x^T (w - c), shard centred so J_k(c) = 0 at eps = 0.
struct QuadraticParams {
  Mat H;
  Vec center;
};

/// Two-basin potential on R^2,
///   V(u, v) = phi(u) + 1/2 kappa(u) v^2,
///   phi'(u) = c u (u - 0.8 L)(u - L),  c = 5 h / L^2,
///   kappa(u) = kappa_f (1 + 3 ((L - u) / L)^2),
/// with a sharp minimum at the origin, a barrier at u = 0.8 L and a flat
/// minimum at (L, 0); the Hessian trace ratio sharp:flat is exactly 4.
/// Q_k(w; x) = V(w) + tilt_k^T w - x^T (w - anchor).
struct DoubleWellParams {
  double length = 1.0;
  double h_flat = 1.0;
  double kappa_flat = 1.0;
  Vec tilt = Vec::Zero(2);
  Vec anchor = Vec::Zero(2);

  double potential(const Vec& w) const;
  Vec potential_gradient(const Vec& w) const;
  Vec sharp_minimum() const { return Vec::Zero(2); }
  Vec flat_minimum() const { return (Vec(2) << length, 0.0).finished(); }
  double barrier() const { return 0.8 * length; }
};

struct InnerMaxResult {
  Vec delta;
  bool unique = true;
};

class LossModel {
 public:
  static LossModel regression(DatasetShard shard);
  static LossModel quadratic(Mat H, Vec center, DatasetShard shard);
  static LossModel double_well(DoubleWellParams params, DatasetShard shard);

  LossKind kind() const;
  Eigen::Index model_dim() const;
  Eigen::Index input_dim() const { return shard_.input_dim(); }
  const DatasetShard& shard() const { return shard_; }

  double value(const Vec& w, const Vec& x, double y) const;
  Vec grad_w(const Vec& w, const Vec& x, double y) const;
  Vec grad_x(const Vec& w, const Vec& x, double y) const;

  /// Closed-form argmax over the epsilon-ball. Throws Unsupported when the
  /// kind has none.
  InnerMaxResult inner_max_exact(const Vec& w, const Vec& x, double y, const PerturbationSpec& spec) const;
  bool has_closed_form() const { return true; }

  /// Q is affine in x with grad_x independent of x, so the maximizer does not
  /// depend on the sample and shard means reduce to evaluation at the mean input.
  bool affine_in_input() const { return kind() != LossKind::robust_linear_regression; }

  const RegressionParams* as_regression() const { return std::get_if<RegressionParams>(&params_); }
  const QuadraticParams* as_quadratic() const { return std::get_if<QuadraticParams>(&params_); }
  const DoubleWellParams* as_double_well() const { return std::get_if<DoubleWellParams>(&params_); }

 private:
  LossModel(std::variant<RegressionParams, QuadraticParams, DoubleWellParams> params, DatasetShard shard);

  std::variant<RegressionParams, QuadraticParams, DoubleWellParams> params_;
  DatasetShard shard_;
  Vec mean_input_;
  double mean_label_ = 0.0;

  friend Vec risk_gradient_fast(const LossModel&, const Vec&, const PerturbationSpec&, AttackMethod);
  friend double local_risk_fast(const LossModel&, const Vec&, const PerturbationSpec&, AttackMethod);
};

/// Euclidean projection onto the epsilon-ball of the given norm.
Vec project_ball(const Vec& delta, Norm norm, double epsilon);

/// Projected gradient ascent from delta = 0 keeping the best iterate. Steps
/// are normalized (l2) or signed (linf); steps = 1 with step_size >= epsilon
/// is FGSM for linf.
Vec inner_max_pgd(const LossModel& m, const Vec& w, const Vec& x, double y, const PerturbationSpec& spec);

Vec perturbation(const LossModel& m, const Vec& w, const Vec& x, double y, const PerturbationSpec& spec,
                 AttackMethod attack);

/// Danskin gradient: grad_w Q at the perturbed sample with delta held fixed.
Vec robust_grad(const LossModel& m, const Vec& w, const Vec& x, double y, const PerturbationSpec& spec,
                AttackMethod attack);
Vec robust_grad(const LossModel& m, const Vec& w, Eigen::Index sample, const PerturbationSpec& spec,
                AttackMethod attack);

/// (1/B) sum over `batch` of robust_grad. Affine-coupled kinds evaluate one
/// robust gradient at the batch-mean input.
Vec batch_gradient(const LossModel& m, const Vec& w, const std::vector<Eigen::Index>& batch,
                   const PerturbationSpec& spec, AttackMethod attack);

/// J_k(w): shard average of the delta-maximized loss.
double local_risk(const LossModel& m, const Vec& w, const PerturbationSpec& spec, AttackMethod attack);
/// grad J_k(w): shard average of robust_grad.
Vec risk_gradient(const LossModel& m, const Vec& w, const PerturbationSpec& spec, AttackMethod attack);
/// Same quantities by explicit per-sample summation, no shortcuts.
double local_risk_bruteforce(const LossModel& m, const Vec& w, const PerturbationSpec& spec, AttackMethod attack);
Vec risk_gradient_bruteforce(const LossModel& m, const Vec& w, const PerturbationSpec& spec, AttackMethod attack);

/// Hessian of J_k: analytic for regression and quadratic kinds, symmetrized
/// central differences of risk_gradient (step 1e-4) for the double well.
Mat risk_hessian(const LossModel& m, const Vec& w, const PerturbationSpec& spec, AttackMethod attack);
Mat risk_hessian_fd(const LossModel& m, const Vec& w, const PerturbationSpec& spec, AttackMethod attack,
                    double step = 1e-4);

// Network risk J = (1/K) sum_k J_k.
double network_risk(const std::vector<LossModel>& models, const Vec& w, const PerturbationSpec& spec,
                     AttackMethod attack);
Vec network_gradient(const std::vector<LossModel>& models, const Vec& w, const PerturbationSpec& spec,
                     AttackMethod attack);
Mat network_hessian(const std::vector<LossModel>& models, const Vec& w, const PerturbationSpec& spec,
                    AttackMethod attack);

using RiskFunction = std::function<double(const Vec&)>;

/// Entry (i, j) = J(w + alpha_j v_i), v_i isotropic Gaussian rescaled to ||w||
/// (unit norm when w = 0).
Mat landscape_profile(const RiskFunction& risk, const Vec& w, int n_dirs, const std::vector<double>& alpha_grid,
                      std::uint64_t seed);
std::vector<Vec> landscape_directions(const Vec& w, int n_dirs, std::uint64_t seed);

struct AffineLipschitzReport {
  double lipschitz_clean = 0.0;       // L-hat estimated at epsilon = 0
  std::vector<double> epsilons;
  std::vector<double> excess;         // max over pairs of gap - L-hat ||dw||
  std::vector<double> slope;          // excess / epsilon
};

/// Measures ||grad J_k(w2) - grad J_k(w1)|| - L-hat ||w2 - w1|| over random
/// probe pairs with separation `spread`, for each epsilon.
AffineLipschitzReport affine_lipschitz_probe(const LossModel& m, const std::vector<double>& epsilons, Norm norm,
                                             int pairs, double radius, double spread, std::uint64_t seed);

}  // namespace escape
