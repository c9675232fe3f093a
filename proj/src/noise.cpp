#include "escape/noise.hpp"

#include <cmath>

#include "escape/errors.hpp"
#include "escape/parallel.hpp"

namespace escape {

namespace {

constexpr long kChunk = 1024;

struct Moments {
  Vec sum;
  Mat outer;
  double sq = 0.0;
  double quad = 0.0;

  explicit Moments(Eigen::Index M) : sum(Vec::Zero(M)), outer(Mat::Zero(M, M)) {}
  void add(const Vec& s) {
    sum += s;
    outer.noalias() += s * s.transpose();
    const double n2 = s.squaredNorm();
    sq += n2;
    quad += n2 * n2;
  }
  void merge(const Moments& o) {
    sum += o.sum;
    outer += o.outer;
    sq += o.sq;
    quad += o.quad;
  }
};

Mat unbiased_covariance(const Moments& m, long n) {
  const Vec mean = m.sum / static_cast<double>(n);
  return (m.outer - static_cast<double>(n) * mean * mean.transpose()) / static_cast<double>(n - 1);
}

}  // namespace

Vec NoiseStatistics::stddev() const { return covariance.diagonal().cwiseMax(0.0).cwiseSqrt(); }

Vec noise_sample(const LossModel& m, const Vec& w, const std::vector<Eigen::Index>& batch,
                 const PerturbationSpec& spec, AttackMethod attack, const Vec& mean_gradient) {
  return batch_gradient(m, w, batch, spec, attack) - mean_gradient;
}

Vec noise_sample(const LossModel& m, const Vec& w, Eigen::Index batch, const PerturbationSpec& spec,
                 AttackMethod attack, Rng& rng) {
  std::vector<Eigen::Index> idx(batch);
  for (Eigen::Index& i : idx) i = uniform_index(m.shard().size(), rng);
  return noise_sample(m, w, idx, spec, attack, risk_gradient(m, w, spec, attack));
}

NoiseStatistics estimate_covariance(const LossModel& m, const Vec& w, Eigen::Index batch,
                                    const PerturbationSpec& spec, AttackMethod attack, long n_samples,
                                    std::uint64_t seed, int threads) {
  if (n_samples < 2) throw Error("n_samples must be at least 2");
  const Eigen::Index M = w.size();
  const Eigen::Index N = m.shard().size();
  // Per-sample robust gradients are fixed at w, so tabulate them once.
  Mat grads(N, M);
  for (Eigen::Index i = 0; i < N; ++i) grads.row(i) = robust_grad(m, w, i, spec, attack).transpose();
  const Vec mean_gradient = grads.colwise().mean().transpose();

  const long chunks = (n_samples + kChunk - 1) / kChunk;
  std::vector<Moments> partial(chunks, Moments(M));
  parallel_for(static_cast<std::size_t>(chunks), threads, [&](std::size_t c) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(c)});
    const long begin = static_cast<long>(c) * kChunk;
    const long end = std::min(n_samples, begin + kChunk);
    Vec s(M);
    for (long draw = begin; draw < end; ++draw) {
      s.setZero();
      for (Eigen::Index b = 0; b < batch; ++b) s += grads.row(uniform_index(N, rng)).transpose();
      s = s / static_cast<double>(batch) - mean_gradient;
      partial[c].add(s);
    }
  });
  Moments total(M);
  for (const Moments& p : partial) total.merge(p);

  NoiseStatistics st;
  st.sample_count = n_samples;
  st.batch = batch;
  st.mean = total.sum / static_cast<double>(n_samples);
  st.second_moment = total.sq / static_cast<double>(n_samples);
  st.fourth_moment = total.quad / static_cast<double>(n_samples);
  st.covariance = unbiased_covariance(total, n_samples);
  return st;
}

Mat exact_noise_covariance(const LossModel& m, const Vec& w, const PerturbationSpec& spec, AttackMethod attack) {
  const Eigen::Index N = m.shard().size();
  Mat grads(N, w.size());
  for (Eigen::Index i = 0; i < N; ++i) grads.row(i) = robust_grad(m, w, i, spec, attack).transpose();
  const Mat centered = grads.rowwise() - grads.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(N);
}

NetworkCovariance network_covariance(const std::vector<LossModel>& models, const Vec& w_star,
                                     const PerturbationSpec& spec, AttackMethod attack, long n_samples,
                                     std::uint64_t seed, int threads) {
  if (n_samples < 2) throw Error("n_samples must be at least 2");
  const Eigen::Index M = w_star.size();
  const auto K = static_cast<Eigen::Index>(models.size());
  std::vector<Mat> grads(K);
  std::vector<Vec> means(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const Eigen::Index N = models[k].shard().size();
    grads[k].resize(N, M);
    for (Eigen::Index i = 0; i < N; ++i) grads[k].row(i) = robust_grad(models[k], w_star, i, spec, attack).transpose();
    means[k] = grads[k].colwise().mean().transpose();
  }

  const long chunks = (n_samples + kChunk - 1) / kChunk;
  std::vector<Moments> avg(chunks, Moments(M));
  std::vector<std::vector<Moments>> per_agent(chunks, std::vector<Moments>(K, Moments(M)));
  parallel_for(static_cast<std::size_t>(chunks), threads, [&](std::size_t c) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(c)});
    const long begin = static_cast<long>(c) * kChunk;
    const long end = std::min(n_samples, begin + kChunk);
    for (long draw = begin; draw < end; ++draw) {
      Vec network = Vec::Zero(M);
      for (Eigen::Index k = 0; k < K; ++k) {
        const Vec s = grads[k].row(uniform_index(grads[k].rows(), rng)).transpose() - means[k];
        per_agent[c][k].add(s);
        network += s;
      }
      avg[c].add(network / static_cast<double>(K));
    }
  });

  Moments total(M);
  for (const Moments& p : avg) total.merge(p);
  NetworkCovariance out;
  out.direct = unbiased_covariance(total, n_samples);
  out.from_agents = Mat::Zero(M, M);
  for (Eigen::Index k = 0; k < K; ++k) {
    Moments agent(M);
    for (long c = 0; c < chunks; ++c) agent.merge(per_agent[c][k]);
    out.from_agents += unbiased_covariance(agent, n_samples);
  }
  out.from_agents /= static_cast<double>(K * K);
  const double ref = out.from_agents.norm();
  out.relative_gap = ref > 0.0 ? (out.direct - out.from_agents).norm() / ref : out.direct.norm();
  return out;
}

Mat exact_network_covariance(const std::vector<LossModel>& models, const Vec& w_star, const PerturbationSpec& spec,
                             AttackMethod attack) {
  Mat R = Mat::Zero(w_star.size(), w_star.size());
  for (const LossModel& m : models) R += exact_noise_covariance(m, w_star, spec, attack);
  return R / static_cast<double>(models.size() * models.size());
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Vec lx(n), ly(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  const Vec cx = lx.array() - lx.mean();
  const Vec cy = ly.array() - ly.mean();
  return cx.dot(cy) / cx.squaredNorm();
}

}  // namespace escape
