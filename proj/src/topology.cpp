#include "escape/topology.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "escape/errors.hpp"
#include "escape/rng.hpp"

namespace escape {

Graph Graph::from_edges(Eigen::Index K, const std::vector<std::pair<Eigen::Index, Eigen::Index>>& edges,
                        const std::vector<Eigen::Index>& self_loops) {
  if (K < 1) throw InvalidGraph("K must be positive");
  Graph g{K, BoolMatrix::Constant(K, K, false)};
  auto check = [K](Eigen::Index i) {
    if (i < 0 || i >= K) throw InvalidGraph("agent index " + std::to_string(i) + " out of range");
  };
  for (auto [i, j] : edges) {
    check(i);
    check(j);
    g.adjacency(i, j) = g.adjacency(j, i) = true;
  }
  for (Eigen::Index i : self_loops) {
    check(i);
    g.adjacency(i, i) = true;
  }
  return g;
}

bool Graph::symmetric() const { return (adjacency == adjacency.transpose()).all(); }

bool Graph::has_self_loop() const { return adjacency.matrix().diagonal().any(); }

bool Graph::connected() const {
  if (K == 0) return false;
  std::vector<char> seen(K, 0);
  std::vector<Eigen::Index> stack{0};
  seen[0] = 1;
  Eigen::Index count = 1;
  while (!stack.empty()) {
    Eigen::Index k = stack.back();
    stack.pop_back();
    for (Eigen::Index l = 0; l < K; ++l) {
      if (!seen[l] && (adjacency(k, l) || adjacency(l, k))) {
        seen[l] = 1;
        ++count;
        stack.push_back(l);
      }
    }
  }
  return count == K;
}

Eigen::Index Graph::neighborhood_size(Eigen::Index k) const {
  Eigen::Index n = 1;
  for (Eigen::Index l = 0; l < K; ++l)
    if (l != k && adjacency(k, l)) ++n;
  return n;
}

Graph random_connected_graph(Eigen::Index K, double edge_prob, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x67726170ULL});
  std::bernoulli_distribution coin(std::clamp(edge_prob, 0.0, 1.0));
  std::vector<std::pair<Eigen::Index, Eigen::Index>> edges;
  for (Eigen::Index i = 0; i < K; ++i)
    for (Eigen::Index j = i + 1; j < K; ++j)
      if (coin(rng)) edges.emplace_back(i, j);
  std::vector<Eigen::Index> loops(K);
  std::iota(loops.begin(), loops.end(), Eigen::Index{0});
  Graph g = Graph::from_edges(K, edges, loops);

  // Label components, then bridge component c to c+1 with one random edge.
  std::vector<Eigen::Index> label(K, -1);
  Eigen::Index components = 0;
  for (Eigen::Index s = 0; s < K; ++s) {
    if (label[s] >= 0) continue;
    std::vector<Eigen::Index> stack{s};
    label[s] = components;
    while (!stack.empty()) {
      Eigen::Index k = stack.back();
      stack.pop_back();
      for (Eigen::Index l = 0; l < K; ++l)
        if (label[l] < 0 && g.adjacency(k, l)) {
          label[l] = components;
          stack.push_back(l);
        }
    }
    ++components;
  }
  for (Eigen::Index c = 0; c + 1 < components; ++c) {
    std::vector<Eigen::Index> a, b;
    for (Eigen::Index k = 0; k < K; ++k) {
      if (label[k] == c) a.push_back(k);
      if (label[k] == c + 1) b.push_back(k);
    }
    Eigen::Index i = a[uniform_index(static_cast<Eigen::Index>(a.size()), rng)];
    Eigen::Index j = b[uniform_index(static_cast<Eigen::Index>(b.size()), rng)];
    g.adjacency(i, j) = g.adjacency(j, i) = true;
  }
  return g;
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::centralized: return "centralized";
    case Strategy::consensus: return "consensus";
    case Strategy::diffusion: return "diffusion";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  for (Strategy s : kAllStrategies)
    if (to_string(s) == name) return s;
  throw Error("unknown strategy '" + std::string(name) + "'");
}

CombinationMatrix::CombinationMatrix(Mat A) : A_(std::move(A)) {
  const Eigen::Index K = A_.rows();
  Eigen::SelfAdjointEigenSolver<Mat> eig(A_);
  const Vec& lambda = eig.eigenvalues();
  const Mat& vectors = eig.eigenvectors();

  Eigen::Index unit = 0;
  (lambda.array() - 1.0).abs().minCoeff(&unit);

  std::vector<Eigen::Index> order;
  for (Eigen::Index i = 0; i < K; ++i)
    if (i != unit) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    const double ma = std::abs(lambda[a]), mb = std::abs(lambda[b]);
    if (std::abs(ma - mb) > 1e-12) return ma > mb;
    if ((lambda[a] > 0) != (lambda[b] > 0)) return lambda[a] > 0;
    return a < b;
  });

  V_.resize(K, K);
  P_.resize(K);
  V_.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(K)));
  P_[0] = 1.0;
  for (Eigen::Index c = 1; c < K; ++c) {
    Eigen::Index src = order[c - 1];
    Vec v = vectors.col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    V_.col(c) = v;
    P_[c] = lambda[src];
  }
}

CombinationMatrix CombinationMatrix::unchecked(Mat A) { return CombinationMatrix(std::move(A)); }

CombinationMatrix CombinationMatrix::from_matrix(Mat A) {
  if (A.rows() != A.cols() || A.rows() == 0) throw InvalidGraph("combination matrix must be square and nonempty");
  if ((A.array() < 0.0).any() || (A.array() > 1.0).any()) throw InvalidGraph("weights must lie in [0,1]");
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > kStochasticTol) throw InvalidGraph("matrix is not symmetric");
  if ((A.colwise().sum().array() - 1.0).abs().maxCoeff() > kStochasticTol)
    throw InvalidGraph("columns do not sum to one");
  CombinationMatrix cm(std::move(A));
  if (cm.spectral_radius_alpha() >= 1.0 - 1e-12)
    throw InvalidGraph("eigenvalue 1 is not simple (rho(P_alpha) >= 1)");
  return cm;
}

double CombinationMatrix::spectral_radius_alpha() const {
  if (K() < 2) return 0.0;
  return P_.tail(K() - 1).cwiseAbs().maxCoeff();
}

CombinationMatrix metropolis_matrix(const Graph& g) {
  if (!g.symmetric()) throw InvalidGraph("adjacency is not symmetric");
  if (!g.has_self_loop()) throw NoSelfLoop();
  if (!g.connected()) throw NotConnected();
  const Eigen::Index K = g.K;
  Mat A = Mat::Zero(K, K);
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index l = k + 1; l < K; ++l)
      if (g.adjacency(k, l))
        A(l, k) = A(k, l) =
            1.0 / static_cast<double>(std::max(g.neighborhood_size(k), g.neighborhood_size(l)));
  for (Eigen::Index k = 0; k < K; ++k) A(k, k) = 1.0 - (A.col(k).sum() - A(k, k));
  return CombinationMatrix::from_matrix(std::move(A));
}

StrategyMatrices strategy_matrices(const CombinationMatrix& cm, Strategy strategy) {
  const Eigen::Index K = cm.K();
  const Mat I = Mat::Identity(K, K);
  switch (strategy) {
    case Strategy::consensus: return {strategy, cm.A(), I};
    case Strategy::diffusion: return {strategy, I, cm.A()};
    case Strategy::centralized: break;
  }
  return {strategy, I, Mat::Constant(K, K, 1.0 / static_cast<double>(K))};
}

GraphReport inspect_graph(const Graph& g) {
  GraphReport r;
  r.connected = g.connected();
  r.has_self_loop = g.has_self_loop();
  if (!r.connected || !r.has_self_loop || !g.symmetric()) return r;
  try {
    CombinationMatrix cm = metropolis_matrix(g);
    r.column_sums = cm.A().colwise().sum().transpose();
    r.rho_alpha = cm.spectral_radius_alpha();
    r.reconstruction_error = (cm.V() * cm.P().asDiagonal() * cm.V().transpose() - cm.A()).cwiseAbs().maxCoeff();
    r.valid = true;
  } catch (const Error&) {
    r.valid = false;
  }
  return r;
}

}  // namespace escape
