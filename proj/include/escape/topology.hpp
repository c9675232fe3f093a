#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "escape/types.hpp"

namespace escape {

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Undirected agent graph. adjacency(k, k) marks a self-loop.
struct Graph {
  Eigen::Index K = 0;
  BoolMatrix adjacency;

  static Graph from_edges(Eigen::Index K, const std::vector<std::pair<Eigen::Index, Eigen::Index>>& edges,
                          const std::vector<Eigen::Index>& self_loops);

  bool symmetric() const;
  bool has_self_loop() const;
  bool connected() const;
  /// Neighbourhood size n_k, counting agent k itself.
  Eigen::Index neighborhood_size(Eigen::Index k) const;
};

/// Erdos-Renyi graph conditioned on connectivity: edges are drawn with
/// probability edge_prob and, if several components remain, consecutive
/// components are bridged by one random edge each. Every agent gets a self-loop.
Graph random_connected_graph(Eigen::Index K, double edge_prob, std::uint64_t seed);

enum class Strategy { centralized, consensus, diffusion };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);
inline constexpr Strategy kAllStrategies[] = {Strategy::centralized, Strategy::consensus, Strategy::diffusion};

/// Symmetric doubly-stochastic combination matrix with its cached spectral
/// decomposition A = V diag(P) V^T. The first column of V is 1/sqrt(K); the
/// remaining eigenpairs (V_alpha, P_alpha) are ordered by decreasing |lambda|,
/// ties broken positive-first then by solver index, and each column of V_alpha
/// has its largest-magnitude entry positive.
class CombinationMatrix {
 public:
  static constexpr double kStochasticTol = 1e-12;

  /// Validates the matrix invariants and decomposes. Throws InvalidGraph.
  static CombinationMatrix from_matrix(Mat A);
  /// Decomposes without validation. Only meant for degenerate unit cases
  /// such as A = I, where lambda = 1 is not simple.
  static CombinationMatrix unchecked(Mat A);

  Eigen::Index K() const { return A_.rows(); }
  const Mat& A() const { return A_; }
  const Mat& V() const { return V_; }
  const Vec& P() const { return P_; }
  Mat V_alpha() const { return V_.rightCols(K() - 1); }
  Vec P_alpha() const { return P_.tail(K() - 1); }
  /// rho(P_alpha); zero for K = 1.
  double spectral_radius_alpha() const;

 private:
  explicit CombinationMatrix(Mat A);
  Mat A_;
  Mat V_;
  Vec P_;
};

/// Metropolis weights a_{lk} = 1 / max(n_k, n_l) on edges, residual on the
/// diagonal. Throws NotConnected / NoSelfLoop.
CombinationMatrix metropolis_matrix(const Graph& g);

struct StrategyMatrices {
  Strategy strategy;
  Mat A1;
  Mat A2;
};

StrategyMatrices strategy_matrices(const CombinationMatrix& cm, Strategy strategy);

struct GraphReport {
  bool connected = false;
  bool has_self_loop = false;
  bool valid = false;
  Vec column_sums;
  double rho_alpha = 0.0;
  double reconstruction_error = 0.0;
};

/// Never throws for structurally well-formed graphs; invalid graphs are
/// reported through the flags.
GraphReport inspect_graph(const Graph& g);

}  // namespace escape
