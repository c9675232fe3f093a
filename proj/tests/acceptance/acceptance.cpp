// Acceptance suite: one line per criterion, nonzero exit if any fails.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "../support/oracles.hpp"
#include "escape/ensembles.hpp"
#include "escape/harness/config.hpp"
#include "escape/harness/suite.hpp"
#include "escape/linalg.hpp"
#include "escape/metrics.hpp"
#include "escape/noise.hpp"
#include "escape/parallel.hpp"
#include "escape/theory.hpp"

using namespace escape;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Problem make_problem(std::vector<LossModel> models, double eps, Norm norm = Norm::l2,
                     AttackMethod attack = AttackMethod::exact) {
  Problem p;
  p.models = std::move(models);
  p.spec.epsilon = eps;
  p.spec.norm = norm;
  p.attack = attack;
  const Eigen::Index M = p.models[0].model_dim();
  p.w_star = locate_minimizer(p.models, Vec::Zero(M), p.spec, p.attack);
  return p;
}

// 1. Combination matrices of random connected graphs.
Outcome combination_matrices() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_stoch = 0.0, worst_sym = 0.0, worst_rec = 0.0, worst_rho = 0.0;
  for (int i = 0; i < 200; ++i) {
    const Eigen::Index K = 2 + i % 31;
    const double p_edge = 0.1 + 0.8 * ((i * 37) % 100) / 100.0;
    const auto cm = metropolis_matrix(random_connected_graph(K, p_edge, 1000 + i));
    const Mat& A = cm.A();
    const Vec ones = Vec::Ones(K);
    worst_stoch = std::max({worst_stoch, (A.colwise().sum().transpose() - ones).cwiseAbs().maxCoeff(),
                            (A * ones - ones).cwiseAbs().maxCoeff()});
    worst_sym = std::max(worst_sym, (A - A.transpose()).cwiseAbs().maxCoeff());
    worst_rec = std::max(worst_rec, (cm.V() * cm.P().asDiagonal() * cm.V().transpose() - A).cwiseAbs().maxCoeff());
    worst_rho = std::max(worst_rho, cm.spectral_radius_alpha());
  }
  const double t = seconds_since(t0);
  return {worst_stoch <= 1e-12 && worst_sym <= 1e-12 && worst_rec <= 1e-10 && worst_rho < 1.0 && t < 5.0,
          fmt("200 graphs: max |A1-1| %.1e, asymmetry %.1e, reconstruction %.1e, max rho %.4f, %.2f s", worst_stoch,
              worst_sym, worst_rec, worst_rho, t)};
}

// 2. Per-strategy steps against the unified recursion.
Outcome unified_recursion() {
  const auto t0 = std::chrono::steady_clock::now();
  RegressionEnsembleSpec rs;
  rs.K = 8;
  rs.dim = 3;
  rs.samples = 32;
  Problem p = make_problem(make_regression_ensemble(rs), 0.05, Norm::l2, AttackMethod::pgd);
  const auto cm = metropolis_matrix(random_connected_graph(8, 0.4, 7));
  Rng rng = make_rng(2, {});
  auto streams = agent_streams(3, 0, p.agents());
  double worst = 0.0;
  for (Strategy s : kAllStrategies) {
    TrainingConfig cfg;
    cfg.mu = 0.05;
    cfg.batch = 4;
    cfg.strategy = s;
    const auto sm = strategy_matrices(cm, s);
    for (int t = 0; t < 100; ++t) {
      NetworkState st{AgentMatrix(8, 3), p.w_star, 0};
      const Vec shared = standard_normal(3, rng);
      for (Eigen::Index k = 0; k < 8; ++k)
        st.iterates.row(k) = (p.w_star + (s == Strategy::centralized ? shared : standard_normal(3, rng))).transpose();
      const Batches b = draw_batches(p, cfg.batch, streams);
      const AgentMatrix G = stochastic_gradients(p, st.iterates, b);
      const AgentMatrix diff = step(st, p, cfg, cm, b).error() - unified_step(st.error(), G, cfg.mu, sm);
      worst = std::max(worst, diff.cwiseAbs().maxCoeff());
    }
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-12 && t < 5.0, fmt("300 states: max deviation %.1e, %.2f s", worst, t)};
}

// 3. Gradient-noise scalings.
Outcome noise_scalings() {
  const auto t0 = std::chrono::steady_clock::now();
  RegressionEnsembleSpec rs;
  rs.K = 1;
  rs.dim = 3;
  rs.samples = 64;
  rs.seed = 5;
  const Problem p = make_problem(make_regression_ensemble(rs), 0.05);
  const long draws = 100000;
  std::vector<double> Bs, traces;
  double worst_z = 0.0, worst_identity = 0.0;
  Mat R1;
  for (Eigen::Index B : {1, 2, 4, 8, 16}) {
    const auto s = estimate_covariance(p.models[0], p.w_star, B, p.spec, p.attack, draws, 100 + B);
    const Vec sd = s.stddev();
    for (Eigen::Index i = 0; i < s.mean.size(); ++i)
      worst_z = std::max(worst_z, std::abs(s.mean[i]) / (sd[i] / std::sqrt(double(draws))));
    if (B == 1) R1 = s.covariance;
    worst_identity = std::max(worst_identity, (s.covariance - R1 / double(B)).norm() / (R1 / double(B)).norm());
    Bs.push_back(double(B));
    traces.push_back(s.covariance.trace());
  }
  const double slope = loglog_slope(Bs, traces);
  const double t = seconds_since(t0);
  return {worst_z <= 4.0 && slope >= -1.1 && slope <= -0.9 && worst_identity <= 0.1 && t < 120.0,
          fmt("max |mean|/se %.2f, slope %.4f, max ||R_B - R_1/B||_F rel %.3f, %.1f s", worst_z, slope,
              worst_identity, t)};
}

// 4. Attack quality and Danskin gradients.
Outcome attack_oracle() {
  RegressionEnsembleSpec rs;
  rs.K = 1;
  rs.dim = 4;
  rs.samples = 200;
  rs.seed = 9;
  const LossModel m = make_regression_ensemble(rs)[0];
  Rng rng = make_rng(9, {1});
  double worst_ratio = INFINITY;
  long probes = 0;
  for (Norm n : {Norm::linf, Norm::l2}) {
    PerturbationSpec spec;
    spec.norm = n;
    spec.epsilon = n == Norm::linf ? 8.0 / 255.0 : 128.0 / 255.0;
    spec.steps = 10;
    spec.step_size = n == Norm::linf ? 2.0 / 255.0 : 0.0;
    for (int t = 0; t < 500; ++t, ++probes) {
      const Vec w = standard_normal(4, rng);
      const Eigen::Index i = uniform_index(m.shard().size(), rng);
      const Vec x = m.shard().X.row(i).transpose();
      const double y = m.shard().y[i];
      const double clean = m.value(w, x, y);
      const double exact = m.value(w, x + m.inner_max_exact(w, x, y, spec).delta, y) - clean;
      const double pgd = m.value(w, x + inner_max_pgd(m, w, x, y, spec), y) - clean;
      if (exact > 0.0) worst_ratio = std::min(worst_ratio, pgd / exact);
    }
  }

  double worst_fd = 0.0;
  for (Norm n : {Norm::l2, Norm::linf}) {
    PerturbationSpec spec;
    spec.norm = n;
    spec.epsilon = 0.05;
    for (int t = 0; t < 20; ++t) {
      const Vec w = standard_normal(4, rng);
      const Vec g = risk_gradient(m, w, spec, AttackMethod::exact);
      const Vec fd = oracle::central_gradient(
          [&](const Vec& v) { return local_risk(m, v, spec, AttackMethod::exact); }, w, 1e-5);
      worst_fd = std::max(worst_fd, (g - fd).norm() / fd.norm());
    }
  }
  return {worst_ratio >= 0.999 && worst_fd <= 1e-4,
          fmt("%ld probes: min PGD/exact increase %.6f; gradient vs FD max rel err %.1e", probes, worst_ratio,
              worst_fd)};
}

// 5. Leading-order prediction against exact second moments of the linear model.
Outcome theory_vs_exact() {
  const auto t0 = std::chrono::steady_clock::now();
  QuadraticEnsembleSpec qs;
  qs.K = 8;
  qs.dim = 4;
  qs.heterogeneity = 1.0;
  qs.hessian_disagreement = 0.05;
  qs.eig_min = 0.25;
  qs.eig_max = 1.0;
  qs.seed = 3;
  const Problem p = make_problem(make_quadratic_ensemble(qs), 0.0);
  const auto ctx = build_context(p);
  const auto cm = metropolis_matrix(random_connected_graph(8, 0.6, 7));
  bool ok = true;
  std::string detail;
  for (Strategy s : kAllStrategies) {
    std::vector<double> errs;
    for (double mu : {0.08, 0.04, 0.02}) {
      const long n = static_cast<long>(std::floor(0.5 / mu + 1e-9));
      const double exact = er_exact_linear(ctx, strategy_matrices(cm, s), mu, 256, n)[n];
      errs.push_back(oracle::rel(predict_er(ctx, cm, mu, 256, n).er(s), exact));
    }
    ok = ok && errs[0] > errs[1] && errs[1] > errs[2] && errs[2] <= 0.1;
    detail += fmt("%s %.3f/%.3f/%.3f; ", std::string(to_string(s)).c_str(), errs[0], errs[1], errs[2]);
  }
  const double t = seconds_since(t0);
  return {ok && t < 60.0, "rel err at mu=.08/.04/.02: " + detail + fmt("%.1f s", t)};
}

// 6. Ordering, in theory and empirically.
Outcome ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  const double mu = 0.05;
  const long B = 32, trials = 512;
  const long n = static_cast<long>(std::floor(1.0 / mu + 1e-9));
  int theory_ok = 0, empirical_ok = 0;
  for (int f = 0; f < 20; ++f) {
    QuadraticEnsembleSpec qs;
    qs.K = 8;
    qs.dim = 4;
    qs.heterogeneity = 0.1;
    qs.hessian_disagreement = 0.1;
    qs.seed = 100 + f;
    const Problem p = make_problem(make_quadratic_ensemble(qs), mu * mu / 2.0);
    const auto cm = metropolis_matrix(random_connected_graph(8, 0.4, 200 + f));
    const auto ctx = build_context(p);

    // theory.csv rows for n <= 1/mu.
    bool th = true;
    for (long k = 0; k <= n; ++k) {
      const auto pr = predict_er(ctx, cm, mu, B, k);
      th = th && pr.er_cen <= pr.er_dif && pr.er_dif <= pr.er_con;
    }
    theory_ok += th;

    const double J0 = p.risk(p.w_star);
    double m[3], se[3];
    int i = 0;
    for (Strategy s : {Strategy::centralized, Strategy::diffusion, Strategy::consensus}) {
      TrainingConfig cfg;
      cfg.mu = mu;
      cfg.batch = B;
      cfg.horizon = n;
      cfg.stride = n;
      cfg.strategy = s;
      cfg.seed = 11;
      std::vector<NetworkState> fin(trials);
      parallel_for(trials, 1, [&](std::size_t t) { fin[t] = run(p, cfg, cm, t).snapshots.back(); });
      const TraceRecord r = summarize(fin, p, s, J0);
      m[i] = r.er_empirical;
      se[i] = r.er_stderr;
      ++i;
    }
    empirical_ok += m[0] + 1.96 * se[0] < m[1] - 1.96 * se[1] && m[1] + 1.96 * se[1] < m[2] - 1.96 * se[2];
  }
  const double t = seconds_since(t0);
  return {theory_ok == 20 && empirical_ok >= 16 && t < 600.0,
          fmt("theory ordering %d/20 fixtures, separated empirical CIs %d/20, %.1f s", theory_ok, empirical_ok, t)};
}

// 7. Short-term approximation error scaling.
Outcome approximation() {
  const auto t0 = std::chrono::steady_clock::now();
  DoubleWellEnsembleSpec ds;
  ds.K = 8;
  ds.heterogeneity = 0.5;
  ds.noise_scale = 0.5;
  ds.seed = 5;
  const auto cm = metropolis_matrix(random_connected_graph(8, 0.6, 7));
  const std::vector<double> mus{0.04, 0.02, 0.01};
  bool ok = true;
  std::string detail;
  for (Strategy s : {Strategy::consensus, Strategy::diffusion, Strategy::centralized}) {
    std::vector<double> gaps;
    double ratio = 0.0;
    for (double mu : mus) {
      const Problem p = make_problem(make_double_well_ensemble(ds), mu * mu / 2.0);
      const auto ctx = build_context(p);
      TrainingConfig cfg;
      cfg.mu = mu;
      cfg.batch = static_cast<Eigen::Index>(std::ceil(4.0 / mu));
      cfg.horizon = static_cast<long>(std::floor(1.0 / mu + 1e-9));
      cfg.strategy = s;
      cfg.seed = 11;
      const auto rep = approximation_error(p, ctx, cm, cfg, 1000, resolve_threads(0));
      gaps.push_back(rep.gap[cfg.horizon]);
      ratio = rep.ratio[cfg.horizon];
      ok = ok && rep.regime_ok;
    }
    const double slope = oracle::slope_loglog(mus, gaps);
    // The centralized gap sits below Monte Carlo resolution; it is reported only.
    if (s != Strategy::centralized) ok = ok && slope >= 2.5 && ratio <= 0.05;
    detail += fmt("%s slope %.2f ratio %.1e%s; ", std::string(to_string(s)).c_str(), slope, ratio,
                  s == Strategy::centralized ? " (reported)" : "");
  }
  return {ok, detail + fmt("%.1f s", seconds_since(t0))};
}

// 8. Escape from the sharp basin.
Outcome escape_study() {
  const auto t0 = std::chrono::steady_clock::now();
  DoubleWellEnsembleSpec ds;
  ds.K = 8;
  ds.heterogeneity = 6.0;
  ds.noise_scale = 1.0;
  ds.seed = 5;
  const double mu = 0.1;
  const Problem p = make_problem(make_double_well_ensemble(ds), mu * mu / 2.0);
  const auto cm = metropolis_matrix(random_connected_graph(8, 0.4, 7));
  const double sharp = flatness_trace(p, Vec::Zero(2)), flat = flatness_trace(p, (Vec(2) << 1.0, 0.0).finished());
  BasinOptions bo;
  bo.gd_steps = 4000;
  bo.gd_mu = 0.05;
  bo.adaptive_step = true;

  auto fractions = [&](Eigen::Index B) {
    std::vector<EscapeSample> out;
    for (Strategy s : {Strategy::consensus, Strategy::diffusion, Strategy::centralized}) {
      TrainingConfig cfg;
      cfg.mu = mu;
      cfg.batch = B;
      cfg.horizon = static_cast<long>(std::lround(1.0 / mu));
      cfg.stride = cfg.horizon;
      cfg.strategy = s;
      cfg.seed = 11;
      out.push_back(escape_curve(p, cfg, cm, 512, bo, resolve_threads(0)).back());
    }
    return out;
  };
  auto paired_z = [](const EscapeSample& a, const EscapeSample& b) {
    std::vector<double> d;
    for (std::size_t t = 0; t < a.per_trial.size(); ++t) d.push_back(a.per_trial[t] - b.per_trial[t]);
    const auto ms = oracle::mean_se(d);
    return ms.se > 0.0 ? ms.mean / ms.se : (ms.mean > 0.0 ? INFINITY : 0.0);
  };

  const auto big = fractions(16);
  const double z1 = paired_z(big[0], big[1]), z2 = paired_z(big[1], big[2]);
  const auto small = fractions(1);
  const bool ok = std::abs(sharp / flat - 4.0) <= 0.08 && z1 >= 1.96 && z2 >= 1.96;
  return {ok, fmt("trace ratio %.3f; B=16: con %.3f dif %.3f cen %.3f (paired z %.1f, %.1f); "
                  "B=1 (reported): con %.3f dif %.3f cen %.3f; %.1f s",
                  sharp / flat, big[0].fraction(), big[1].fraction(), big[2].fraction(), z1, z2, small[0].fraction(),
                  small[1].fraction(), small[2].fraction(), seconds_since(t0))};
}

// 9. Homogeneous agents. The perturbation is off: with a shared minimizer the
// robust quadratic has its kink exactly at w*. The step size is small enough
// that the O(mu^2) noise-driven disagreement term sits below Monte Carlo resolution.
Outcome homogeneous() {
  const auto t0 = std::chrono::steady_clock::now();
  QuadraticEnsembleSpec qs;
  qs.K = 8;
  qs.dim = 4;
  qs.heterogeneity = 0.0;
  qs.hessian_disagreement = 0.0;
  qs.identical_shards = true;
  qs.seed = 3;
  const double mu = 0.0025;
  const Problem p = make_problem(make_quadratic_ensemble(qs), 0.0);
  const auto cm = metropolis_matrix(random_connected_graph(8, 0.6, 7));
  const auto ctx = build_context(p);
  bool f_zero = true;
  for (long n = 0; n <= 40; ++n) {
    const FTerms f = f_terms(ctx, cm, n);
    f_zero = f_zero && f.con == 0.0 && f.dif == 0.0;
  }

  const long horizon = static_cast<long>(std::floor(1.0 / mu + 1e-9)), first = horizon / 2, trials = 512;
  const double J0 = p.risk(p.w_star);
  std::vector<std::vector<TraceRecord>> curves;
  for (Strategy s : kAllStrategies) {
    TrainingConfig cfg;
    cfg.mu = mu;
    cfg.batch = 400;
    cfg.horizon = horizon;
    cfg.strategy = s;
    cfg.seed = 23;
    std::vector<Trajectory> runs(trials);
    parallel_for(trials, resolve_threads(0), [&](std::size_t t) { runs[t] = run(p, cfg, cm, t); });
    std::vector<TraceRecord> curve;
    for (long n = first; n <= horizon; ++n) {
      std::vector<NetworkState> at;
      for (const auto& r : runs) at.push_back(r.snapshots[n]);
      curve.push_back(summarize(at, p, s, J0));
    }
    curves.push_back(curve);
  }
  long overlapping = 0, total = 0;
  double worst_sep = 0.0;
  for (std::size_t i = 0; i < curves[0].size(); ++i)
    for (int a = 0; a < 3; ++a)
      for (int b = a + 1; b < 3; ++b) {
        const auto &x = curves[a][i], &y = curves[b][i];
        const double sep = std::abs(x.er_empirical - y.er_empirical) / (1.96 * (x.er_stderr + y.er_stderr));
        worst_sep = std::max(worst_sep, sep);
        overlapping += sep <= 1.0;
        ++total;
      }
  return {f_zero && overlapping == total,
          fmt("f_con = f_dif = 0 exactly: %s; CI overlap at n in [%ld, %ld]: %ld/%ld pairs (max separation %.2f); %.1f s",
              f_zero ? "yes" : "no", first, horizon, overlapping, total, worst_sep, seconds_since(t0))};
}

// 10. Byte-identical suite outputs across thread counts.
Outcome determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path base = fs::temp_directory_path() / ("escape-acceptance-" + std::to_string(::getpid()));
  bool ok = true;
  std::size_t files = 0;
  for (const char* name : {"hetero-quad-k8.json", "double-well-escape.json"}) {
    std::vector<std::string> reference;
    for (int threads : {1, 2, 8}) {
      ExperimentConfig cfg = load_config(fs::path(ESCAPE_SOURCE_DIR) / "configs" / name);
      cfg.output = base / "out";
      fs::remove_all(cfg.output);
      const SuiteResult r = run_suite(cfg, threads);
      std::vector<std::string> contents;
      for (const auto& f : r.files) {
        std::ifstream in(cfg.output / f, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        contents.push_back(f + "\n" + ss.str());
      }
      if (reference.empty()) {
        reference = contents;
        files += contents.size();
      } else {
        ok = ok && contents == reference;
      }
    }
  }
  fs::remove_all(base);
  return {ok, fmt("2 configs, %zu artifacts compared at 1, 2 and 8 threads; %.1f s", files, seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> criteria{combination_matrices, unified_recursion, noise_scalings,
                                                       attack_oracle,        theory_vs_exact,   ordering,
                                                       approximation,        escape_study,      homogeneous,
                                                       determinism};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
