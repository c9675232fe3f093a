#include "escape/adversary.hpp"

#include <Eigen/QR>
#include <cmath>
#include <limits>
#include <string>

#include "escape/errors.hpp"
#include "escape/rng.hpp"

namespace escape {

namespace {

double sign_plus(double v) { return v >= 0.0 ? 1.0 : -1.0; }

Vec sign_plus(const Vec& v) { return v.unaryExpr([](double x) { return sign_plus(x); }); }

// argmax_{||delta|| <= eps} -delta^T g.
InnerMaxResult maximize_against(const Vec& g, const PerturbationSpec& spec) {
  InnerMaxResult r{Vec::Zero(g.size()), true};
  if (spec.epsilon == 0.0) return r;
  if (spec.norm == Norm::l2) {
    const double n = g.norm();
    if (n == 0.0) {
      r.unique = false;
      return r;
    }
    r.delta = -spec.epsilon * g / n;
  } else {
    r.delta = -spec.epsilon * sign_plus(g);
    r.unique = (g.array() != 0.0).all();
  }
  return r;
}

template <typename... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <typename... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

}  // namespace

std::string_view to_string(Norm n) { return n == Norm::l2 ? "l2" : "linf"; }
std::string_view to_string(AttackMethod a) { return a == AttackMethod::exact ? "exact" : "pgd"; }
std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::robust_linear_regression: return "robust_linear_regression";
    case LossKind::quadratic_heterogeneous: return "quadratic_heterogeneous";
    case LossKind::double_well_2d: return "double_well_2d";
  }
  return "unknown";
}
Norm parse_norm(std::string_view s) {
  if (s == "l2") return Norm::l2;
  if (s == "linf") return Norm::linf;
  throw Error("unknown norm '" + std::string(s) + "'");
}
AttackMethod parse_attack(std::string_view s) {
  if (s == "exact") return AttackMethod::exact;
  if (s == "pgd") return AttackMethod::pgd;
  throw Error("unknown attack method '" + std::string(s) + "'");
}
LossKind parse_loss_kind(std::string_view s) {
  for (LossKind k : {LossKind::robust_linear_regression, LossKind::quadratic_heterogeneous, LossKind::double_well_2d})
    if (to_string(k) == s) return k;
  throw Error("unknown loss kind '" + std::string(s) + "'");
}

double DoubleWellParams::potential(const Vec& w) const {
  const double u = w[0], v = w[1];
  const double L = length, b = barrier(), c = 5.0 * h_flat / (L * L);
  const double phi = c * (u * u * u * u / 4.0 - (b + L) * u * u * u / 3.0 + b * L * u * u / 2.0);
  const double t = (L - u) / L;
  const double kappa = kappa_flat * (1.0 + 3.0 * t * t);
  return phi + 0.5 * kappa * v * v;
}

Vec DoubleWellParams::potential_gradient(const Vec& w) const {
  const double u = w[0], v = w[1];
  const double L = length, b = barrier(), c = 5.0 * h_flat / (L * L);
  const double t = (L - u) / L;
  const double dphi = c * u * (u - b) * (u - L);
  const double kappa = kappa_flat * (1.0 + 3.0 * t * t);
  const double dkappa = -6.0 * kappa_flat * t / L;
  Vec g(2);
  g << dphi + 0.5 * dkappa * v * v, kappa * v;
  return g;
}

LossModel::LossModel(std::variant<RegressionParams, QuadraticParams, DoubleWellParams> params, DatasetShard shard)
    : params_(std::move(params)), shard_(std::move(shard)) {
  if (shard_.size() < 1) throw Error("dataset shard must hold at least one sample");
  if (shard_.y.size() != shard_.size()) shard_.y = Vec::Zero(shard_.size());
  mean_input_ = shard_.X.colwise().mean().transpose();
  mean_label_ = shard_.y.mean();
}

LossModel LossModel::regression(DatasetShard shard) {
  RegressionParams p;
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(shard.X);
  Vec w_ls = cod.solve(shard.y);
  p.offset = 0.5 * (shard.y - shard.X * w_ls).squaredNorm() / static_cast<double>(shard.X.rows());
  return LossModel(p, std::move(shard));
}

LossModel LossModel::quadratic(Mat H, Vec center, DatasetShard shard) {
  if (H.rows() != center.size() || shard.X.cols() != center.size())
    throw Error("quadratic model dimensions disagree");
  return LossModel(QuadraticParams{std::move(H), std::move(center)}, std::move(shard));
}

LossModel LossModel::double_well(DoubleWellParams params, DatasetShard shard) {
  if (shard.X.cols() != 2 || params.tilt.size() != 2 || params.anchor.size() != 2)
    throw Error("double well model is two-dimensional");
  return LossModel(std::move(params), std::move(shard));
}

LossKind LossModel::kind() const {
  return std::visit(overloaded{[](const RegressionParams&) { return LossKind::robust_linear_regression; },
                               [](const QuadraticParams&) { return LossKind::quadratic_heterogeneous; },
                               [](const DoubleWellParams&) { return LossKind::double_well_2d; }},
                    params_);
}

Eigen::Index LossModel::model_dim() const {
  return std::visit(overloaded{[&](const RegressionParams&) { return shard_.input_dim(); },
                               [](const QuadraticParams& q) { return q.center.size(); },
                               [](const DoubleWellParams&) { return Eigen::Index{2}; }},
                    params_);
}

double LossModel::value(const Vec& w, const Vec& x, double y) const {
  return std::visit(overloaded{[&](const RegressionParams& p) {
                                 const double r = y - x.dot(w);
                                 return 0.5 * r * r - p.offset;
                               },
                               [&](const QuadraticParams& q) {
                                 const Vec e = w - q.center;
                                 return 0.5 * e.dot(q.H * e) - x.dot(e);
                               },
                               [&](const DoubleWellParams& d) {
                                 return d.potential(w) + d.tilt.dot(w) - x.dot(w - d.anchor);
                               }},
                    params_);
}

Vec LossModel::grad_w(const Vec& w, const Vec& x, double y) const {
  return std::visit(overloaded{[&](const RegressionParams&) -> Vec { return -(y - x.dot(w)) * x; },
                               [&](const QuadraticParams& q) -> Vec { return q.H * (w - q.center) - x; },
                               [&](const DoubleWellParams& d) -> Vec {
                                 return d.potential_gradient(w) + d.tilt - x;
                               }},
                    params_);
}

Vec LossModel::grad_x(const Vec& w, const Vec& x, double y) const {
  return std::visit(overloaded{[&](const RegressionParams&) -> Vec { return -(y - x.dot(w)) * w; },
                               [&](const QuadraticParams& q) -> Vec { return -(w - q.center); },
                               [&](const DoubleWellParams& d) -> Vec { return -(w - d.anchor); }},
                    params_);
}

InnerMaxResult LossModel::inner_max_exact(const Vec& w, const Vec& x, double y, const PerturbationSpec& spec) const {
  if (!has_closed_form()) throw Unsupported("no closed-form inner maximizer for " + std::string(to_string(kind())));
  return std::visit(overloaded{[&](const RegressionParams&) {
                                 // Q = 1/2 (r0 - delta^T w)^2 is maximized by pushing delta^T w
                                 // against the residual sign.
                                 const double r0 = y - x.dot(w);
                                 InnerMaxResult r = maximize_against(sign_plus(r0) * w, spec);
                                 if (spec.epsilon > 0.0 && r0 == 0.0) r.unique = false;
                                 return r;
                               },
                               [&](const QuadraticParams& q) { return maximize_against(w - q.center, spec); },
                               [&](const DoubleWellParams& d) { return maximize_against(w - d.anchor, spec); }},
                    params_);
}

Vec project_ball(const Vec& delta, Norm norm, double epsilon) {
  if (epsilon <= 0.0) return Vec::Zero(delta.size());
  if (norm == Norm::l2) {
    const double n = delta.norm();
    return n > epsilon ? Vec(delta * (epsilon / n)) : delta;
  }
  return delta.cwiseMax(-epsilon).cwiseMin(epsilon);
}

Vec inner_max_pgd(const LossModel& m, const Vec& w, const Vec& x, double y, const PerturbationSpec& spec) {
  Vec delta = Vec::Zero(x.size());
  if (spec.epsilon <= 0.0) return delta;
  Vec best = delta;
  double best_value = m.value(w, x, y);
  const double step = spec.effective_step();
  for (int t = 0; t < spec.steps; ++t) {
    const Vec g = m.grad_x(w, x + delta, y);
    if (spec.norm == Norm::l2) {
      const double n = g.norm();
      if (n == 0.0) break;
      delta += step * g / n;
    } else {
      delta += step * sign_plus(g);
    }
    delta = project_ball(delta, spec.norm, spec.epsilon);
    const double v = m.value(w, x + delta, y);
    if (v > best_value) {
      best_value = v;
      best = delta;
    }
  }
  return best;
}

Vec perturbation(const LossModel& m, const Vec& w, const Vec& x, double y, const PerturbationSpec& spec,
                 AttackMethod attack) {
  if (spec.epsilon <= 0.0) return Vec::Zero(x.size());
  return attack == AttackMethod::exact ? m.inner_max_exact(w, x, y, spec).delta : inner_max_pgd(m, w, x, y, spec);
}

Vec robust_grad(const LossModel& m, const Vec& w, const Vec& x, double y, const PerturbationSpec& spec,
                AttackMethod attack) {
  return m.grad_w(w, x + perturbation(m, w, x, y, spec, attack), y);
}

Vec robust_grad(const LossModel& m, const Vec& w, Eigen::Index sample, const PerturbationSpec& spec,
                AttackMethod attack) {
  const Vec x = m.shard().X.row(sample).transpose();
  return robust_grad(m, w, x, m.shard().y[sample], spec, attack);
}

Vec batch_gradient(const LossModel& m, const Vec& w, const std::vector<Eigen::Index>& batch,
                   const PerturbationSpec& spec, AttackMethod attack) {
  const double B = static_cast<double>(batch.size());
  if (m.affine_in_input()) {
    Vec x = Vec::Zero(m.input_dim());
    for (Eigen::Index i : batch) x += m.shard().X.row(i).transpose();
    return robust_grad(m, w, Vec(x / B), 0.0, spec, attack);
  }
  Vec sum = Vec::Zero(w.size());
  for (Eigen::Index i : batch) sum += robust_grad(m, w, i, spec, attack);
  return sum / B;
}

double local_risk_bruteforce(const LossModel& m, const Vec& w, const PerturbationSpec& spec, AttackMethod attack) {
  const DatasetShard& s = m.shard();
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const Vec x = s.X.row(i).transpose();
    total += m.value(w, x + perturbation(m, w, x, s.y[i], spec, attack), s.y[i]);
  }
  return total / static_cast<double>(s.size());
}

Vec risk_gradient_bruteforce(const LossModel& m, const Vec& w, const PerturbationSpec& spec, AttackMethod attack) {
  const DatasetShard& s = m.shard();
  Vec total = Vec::Zero(m.model_dim());
  for (Eigen::Index i = 0; i < s.size(); ++i) total += robust_grad(m, w, i, spec, attack);
  return total / static_cast<double>(s.size());
}

double local_risk_fast(const LossModel& m, const Vec& w, const PerturbationSpec& spec, AttackMethod attack) {
  const Vec delta = perturbation(m, w, m.mean_input_, m.mean_label_, spec, attack);
  return m.value(w, m.mean_input_ + delta, m.mean_label_);
}

Vec risk_gradient_fast(const LossModel& m, const Vec& w, const PerturbationSpec& spec, AttackMethod attack) {
  const Vec delta = perturbation(m, w, m.mean_input_, m.mean_label_, spec, attack);
  return m.grad_w(w, m.mean_input_ + delta, m.mean_label_);
}

double local_risk(const LossModel& m, const Vec& w, const PerturbationSpec& spec, AttackMethod attack) {
  return m.affine_in_input() ? local_risk_fast(m, w, spec, attack) : local_risk_bruteforce(m, w, spec, attack);
}

Vec risk_gradient(const LossModel& m, const Vec& w, const PerturbationSpec& spec, AttackMethod attack) {
  return m.affine_in_input() ? risk_gradient_fast(m, w, spec, attack) : risk_gradient_bruteforce(m, w, spec, attack);
}

Mat risk_hessian_fd(const LossModel& m, const Vec& w, const PerturbationSpec& spec, AttackMethod attack,
                    double step) {
  const Eigen::Index M = w.size();
  Mat H(M, M);
  for (Eigen::Index i = 0; i < M; ++i) {
    Vec wp = w, wm = w;
    wp[i] += step;
    wm[i] -= step;
    H.col(i) = (risk_gradient(m, wp, spec, attack) - risk_gradient(m, wm, spec, attack)) / (2.0 * step);
  }
  return 0.5 * (H + H.transpose());
}

Mat risk_hessian(const LossModel& m, const Vec& w, const PerturbationSpec& spec, AttackMethod attack) {
  const bool exact = spec.epsilon == 0.0 || attack == AttackMethod::exact;
  const Eigen::Index M = w.size();
  if (const auto* q = m.as_quadratic(); q && exact) {
    Mat H = q->H;
    const Vec e = w - q->center;
    if (spec.epsilon > 0.0 && spec.norm == Norm::l2) {
      const double n = e.norm();
      if (n == 0.0) return risk_hessian_fd(m, w, spec, attack);
      const Vec u = e / n;
      H += spec.epsilon * (Mat::Identity(M, M) - u * u.transpose()) / n;
    }
    return H;
  }
  if (m.as_regression() && exact) {
    const DatasetShard& s = m.shard();
    const double N = static_cast<double>(s.size());
    if (spec.epsilon == 0.0) return s.X.transpose() * s.X / N;
    Mat H = Mat::Zero(M, M);
    if (spec.norm == Norm::l2) {
      const double wn = w.norm();
      if (wn == 0.0) return risk_hessian_fd(m, w, spec, attack);
      const Vec u = w / wn;
      const Mat proj = Mat::Identity(M, M) - u * u.transpose();
      for (Eigen::Index i = 0; i < s.size(); ++i) {
        const double r = s.y[i] - s.X.row(i).dot(w);
        const double a = std::abs(r) + spec.epsilon * wn;
        const Vec g = -sign_plus(r) * s.X.row(i).transpose() + spec.epsilon * u;
        H += g * g.transpose() + (a * spec.epsilon / wn) * proj;
      }
    } else {
      const Vec sw = sign_plus(w);
      for (Eigen::Index i = 0; i < s.size(); ++i) {
        const double r = s.y[i] - s.X.row(i).dot(w);
        const Vec g = -sign_plus(r) * s.X.row(i).transpose() + spec.epsilon * sw;
        H += g * g.transpose();
      }
    }
    return H / N;
  }
  return risk_hessian_fd(m, w, spec, attack);
}

double network_risk(const std::vector<LossModel>& models, const Vec& w, const PerturbationSpec& spec,
                     AttackMethod attack) {
  double total = 0.0;
  for (const LossModel& m : models) total += local_risk(m, w, spec, attack);
  return total / static_cast<double>(models.size());
}

Vec network_gradient(const std::vector<LossModel>& models, const Vec& w, const PerturbationSpec& spec,
                     AttackMethod attack) {
  Vec total = Vec::Zero(w.size());
  for (const LossModel& m : models) total += risk_gradient(m, w, spec, attack);
  return total / static_cast<double>(models.size());
}

Mat network_hessian(const std::vector<LossModel>& models, const Vec& w, const PerturbationSpec& spec,
                    AttackMethod attack) {
  Mat total = Mat::Zero(w.size(), w.size());
  for (const LossModel& m : models) total += risk_hessian(m, w, spec, attack);
  return total / static_cast<double>(models.size());
}

std::vector<Vec> landscape_directions(const Vec& w, int n_dirs, std::uint64_t seed) {
  std::vector<Vec> dirs;
  const double scale = w.norm() > 0.0 ? w.norm() : 1.0;
  for (int i = 0; i < n_dirs; ++i) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(i)});
    Vec v = standard_normal(w.size(), rng);
    dirs.push_back(v * (scale / v.norm()));
  }
  return dirs;
}

Mat landscape_profile(const RiskFunction& risk, const Vec& w, int n_dirs, const std::vector<double>& alpha_grid,
                      std::uint64_t seed) {
  const std::vector<Vec> dirs = landscape_directions(w, n_dirs, seed);
  Mat out(n_dirs, static_cast<Eigen::Index>(alpha_grid.size()));
  for (int i = 0; i < n_dirs; ++i)
    for (std::size_t j = 0; j < alpha_grid.size(); ++j)
      out(i, static_cast<Eigen::Index>(j)) = risk(w + alpha_grid[j] * dirs[i]);
  return out;
}

AffineLipschitzReport affine_lipschitz_probe(const LossModel& m, const std::vector<double>& epsilons, Norm norm,
                                             int pairs, double radius, double spread, std::uint64_t seed) {
  const Eigen::Index M = m.model_dim();
  std::vector<std::pair<Vec, Vec>> probes;
  for (int p = 0; p < pairs; ++p) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(p)});
    Vec w1 = radius * standard_normal(M, rng);
    Vec dir = standard_normal(M, rng);
    probes.emplace_back(w1, w1 + spread * dir / dir.norm());
  }
  auto gap = [&](const PerturbationSpec& spec, const Vec& a, const Vec& b) {
    return (risk_gradient(m, b, spec, AttackMethod::exact) - risk_gradient(m, a, spec, AttackMethod::exact)).norm();
  };

  AffineLipschitzReport rep;
  PerturbationSpec clean{norm, 0.0};
  for (const auto& [a, b] : probes) rep.lipschitz_clean = std::max(rep.lipschitz_clean, gap(clean, a, b) / (b - a).norm());
  for (double eps : epsilons) {
    PerturbationSpec spec{norm, eps};
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& [a, b] : probes) worst = std::max(worst, gap(spec, a, b) - rep.lipschitz_clean * (b - a).norm());
    rep.epsilons.push_back(eps);
    rep.excess.push_back(worst);
    rep.slope.push_back(worst / eps);
  }
  return rep;
}

}  // namespace escape
