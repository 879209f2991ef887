#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rdiff/error.hpp"
#include "rdiff/frechet.hpp"
#include "rdiff/manifolds.hpp"
#include "rdiff/network.hpp"
#include "rdiff/rng.hpp"

namespace rdiff {

/// Geodesic ball standing in for the convex domain. Iterates outside it are
/// reported, never projected back.
struct Domain {
  Point center;
  double radius = 0.0;
};

/// Empirical gradient bounds used by the theorem constants: delta bounds
/// ||grad f_i||, sigma^2 bounds the minibatch variance, G clips the oracle.
struct GradientBounds {
  double delta = 0.0;
  double sigma = 0.0;
  double g = 0.0;
};

/// Distributed PCA on G(d,p): f_i(X) = -(1/(2 m_i)) sum_j ||X^T z_j||^2.
/// Shard i stores its samples as the columns of a d x m_i matrix.
class PcaProblem {
 public:
  using manifold_type = Grassmann;

  PcaProblem(Grassmann m, std::vector<Eigen::MatrixXd> shards, std::optional<Point> optimum = {})
      : m_(m), shards_(std::move(shards)), optimum_(std::move(optimum)) {
    if (shards_.empty()) throw Error(ErrorCode::DimensionMismatch, "PCA problem needs at least one shard");
    moments_.reserve(shards_.size());
    for (const auto& z : shards_) {
      if (z.rows() != m_.rows())
        throw Error(ErrorCode::DimensionMismatch,
                    "PCA sample dimension " + std::to_string(z.rows()) + " != d = " +
                        std::to_string(m_.rows()));
      if (z.cols() < 1) throw Error(ErrorCode::DimensionMismatch, "empty PCA shard");
      if (!z.allFinite()) throw Error(ErrorCode::DimensionMismatch, "non-finite PCA sample");
      moments_.push_back(z * z.transpose() / static_cast<double>(z.cols()));
    }
  }

  const Grassmann& manifold() const { return m_; }
  int num_agents() const { return static_cast<int>(shards_.size()); }
  std::size_t shard_size(int i) const { return static_cast<std::size_t>(shards_[idx(i)].cols()); }
  const Eigen::MatrixXd& shard(int i) const { return shards_[idx(i)]; }
  const Eigen::MatrixXd& second_moment(int i) const { return moments_[idx(i)]; }
  const std::optional<Point>& optimum() const { return optimum_; }
  const std::optional<Domain>& domain() const { return domain_; }
  void set_domain(std::optional<Domain> d) { domain_ = std::move(d); }

  double local_objective(int i, const Point& x) const {
    m_.check_point(x);
    return -0.5 * (x.coords.transpose() * moments_[idx(i)] * x.coords).trace();
  }

  TangentVector local_grad(int i, const Point& x) const {
    return m_.project_tangent(x, -moments_[idx(i)] * x.coords);
  }

  /// Mean gradient of the listed samples (repeats allowed).
  TangentVector sample_grad(int i, const Point& x, std::span<const std::size_t> picks) const {
    const Eigen::MatrixXd& z = shards_[idx(i)];
    Eigen::MatrixXd zb(z.rows(), static_cast<Eigen::Index>(picks.size()));
    for (std::size_t k = 0; k < picks.size(); ++k) zb.col(static_cast<Eigen::Index>(k)) = z.col(static_cast<Eigen::Index>(picks[k]));
    const Eigen::MatrixXd ax = zb * (zb.transpose() * x.coords) / static_cast<double>(picks.size());
    return m_.project_tangent(x, -ax);
  }

  /// (1/m_i) sum_j ||g_j(x) - grad f_i(x)||^2 over single-sample gradients.
  double sample_grad_variance(int i, const Point& x) const {
    const Eigen::MatrixXd& z = shards_[idx(i)];
    const Eigen::MatrixXd full = local_grad(i, x).vec;
    const Eigen::MatrixXd proj = z - x.coords * (x.coords.transpose() * z);  // (I - XX^T) z_j
    const Eigen::MatrixXd coef = z.transpose() * x.coords;                   // z_j^T X
    double acc = 0.0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const Eigen::MatrixXd gj = -proj.col(j) * coef.row(j);
      acc += (gj - full).squaredNorm();
    }
    return acc / static_cast<double>(z.cols());
  }

  double objective(const Point& x) const {
    double acc = 0.0;
    for (int i = 0; i < num_agents(); ++i) acc += local_objective(i, x);
    return acc / num_agents();
  }

 private:
  std::size_t idx(int i) const {
    if (i < 0 || i >= num_agents()) throw Error(ErrorCode::DimensionMismatch, "agent index out of range");
    return static_cast<std::size_t>(i);
  }

  Grassmann m_;
  std::vector<Eigen::MatrixXd> shards_;
  std::vector<Eigen::MatrixXd> moments_;
  std::optional<Point> optimum_;
  std::optional<Domain> domain_;
};

/// Karcher-mean problem f_i(x) = (1/(2 m_i)) sum_j d^2(x, a_j), geodesically
/// convex inside a small enough ball.
template <class M>
class KarcherProblem {
 public:
  using manifold_type = M;

  KarcherProblem(M m, std::vector<std::vector<Point>> shards, std::optional<Domain> domain = {})
      : m_(std::move(m)), shards_(std::move(shards)), domain_(std::move(domain)) {
    if (shards_.empty()) throw Error(ErrorCode::DimensionMismatch, "Karcher problem needs at least one shard");
    std::vector<Point> pooled;
    std::vector<double> w;
    const double n = static_cast<double>(shards_.size());
    for (const auto& s : shards_) {
      if (s.empty()) throw Error(ErrorCode::DimensionMismatch, "empty Karcher shard");
      for (const Point& a : s) {
        m_.check_point(a);
        if (!a.coords.allFinite()) throw Error(ErrorCode::DimensionMismatch, "non-finite anchor");
        pooled.push_back(a);
        w.push_back(1.0 / (n * static_cast<double>(s.size())));
      }
    }
    FrechetOptions opt;
    opt.tol = 1e-13;
    opt.max_iter = 2000;
    optimum_ = frechet_mean(m_, std::span<const Point>(pooled), std::span<const double>(w), opt).mean;
  }

  const M& manifold() const { return m_; }
  int num_agents() const { return static_cast<int>(shards_.size()); }
  std::size_t shard_size(int i) const { return shards_[idx(i)].size(); }
  const std::vector<Point>& shard(int i) const { return shards_[idx(i)]; }
  const std::optional<Point>& optimum() const { return optimum_; }
  const std::optional<Domain>& domain() const { return domain_; }
  void set_domain(std::optional<Domain> d) { domain_ = std::move(d); }

  double local_objective(int i, const Point& x) const {
    double acc = 0.0;
    for (const Point& a : shards_[idx(i)]) {
      const double d = m_.dist(x, a);
      acc += d * d;
    }
    return acc / (2.0 * static_cast<double>(shard_size(i)));
  }

  TangentVector local_grad(int i, const Point& x) const {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(x.coords.rows(), x.coords.cols());
    for (const Point& a : shards_[idx(i)]) g -= m_.log(x, a).vec;
    return {x.coords, g / static_cast<double>(shard_size(i))};
  }

  TangentVector sample_grad(int i, const Point& x, std::span<const std::size_t> picks) const {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(x.coords.rows(), x.coords.cols());
    const auto& s = shards_[idx(i)];
    for (std::size_t k : picks) g -= m_.log(x, s[k]).vec;
    return {x.coords, g / static_cast<double>(picks.size())};
  }

  double sample_grad_variance(int i, const Point& x) const {
    const Eigen::MatrixXd full = local_grad(i, x).vec;
    double acc = 0.0;
    for (const Point& a : shards_[idx(i)]) acc += (-m_.log(x, a).vec - full).squaredNorm();
    return acc / static_cast<double>(shard_size(i));
  }

  double objective(const Point& x) const {
    double acc = 0.0;
    for (int i = 0; i < num_agents(); ++i) acc += local_objective(i, x);
    return acc / num_agents();
  }

 private:
  std::size_t idx(int i) const {
    if (i < 0 || i >= num_agents()) throw Error(ErrorCode::DimensionMismatch, "agent index out of range");
    return static_cast<std::size_t>(i);
  }

  M m_;
  std::vector<std::vector<Point>> shards_;
  std::optional<Domain> domain_;
  std::optional<Point> optimum_;
};

struct OracleSample {
  TangentVector grad;
  bool clipped = false;
};

/// Minibatch stochastic gradient: `batch` indices drawn uniformly with
/// replacement from the agent's shard, then radially clipped to norm G.
/// A batch covering the whole shard returns the exact local gradient.
/// Stateless; the caller supplies the (agent, iteration) substream.
template <class P>
class StochGradOracle {
 public:
  StochGradOracle(const P& problem, std::size_t batch, double clip)
      : problem_(&problem), batch_(batch), clip_(clip) {
    if (batch_ == 0) throw Error(ErrorCode::ConfigError, "batch size must be positive");
  }

  std::size_t batch() const { return batch_; }
  double clip() const { return clip_; }
  bool full_batch(int i) const { return batch_ >= problem_->shard_size(i); }

  OracleSample operator()(int i, const Point& x, Rng& rng) const {
    OracleSample out;
    if (full_batch(i)) {
      out.grad = problem_->local_grad(i, x);
    } else {
      std::vector<std::size_t> picks(batch_);
      const std::size_t m = problem_->shard_size(i);
      for (auto& k : picks) k = rng.index(m);
      out.grad = problem_->sample_grad(i, x, picks);
    }
    const double nrm = out.grad.vec.norm();
    if (clip_ > 0.0 && nrm > clip_) {
      out.grad.vec *= clip_ / nrm;
      out.clipped = true;
    }
    return out;
  }

  /// Conditional variance E||g_hat - grad f_i||^2 of the unclipped minibatch.
  double variance(int i, const Point& x) const {
    if (full_batch(i)) return 0.0;
    return problem_->sample_grad_variance(i, x) / static_cast<double>(batch_);
  }

 private:
  const P* problem_;
  std::size_t batch_;
  double clip_;
};

struct BoundEstimateOptions {
  int n_probe = 100;
  double safety = 1.1;
  double clip_factor = 2.0;  // G = clip_factor * delta_hat
};

/// Probes random domain points (all agents at each) for the largest gradient
/// norm and the largest minibatch variance, inflated by `safety`.
template <class P>
GradientBounds estimate_bounds(const P& problem, std::size_t batch, const Rng& rng,
                               BoundEstimateOptions opt = {}) {
  if (opt.n_probe < 100) throw Error(ErrorCode::ConfigError, "estimate_bounds needs n_probe >= 100");
  const auto& m = problem.manifold();
  const StochGradOracle<P> oracle(problem, batch, 0.0);
  double max_grad = 0.0;
  double max_var = 0.0;
  for (int k = 0; k < opt.n_probe; ++k) {
    Rng sub = rng.split({0xb0dULL, static_cast<std::uint64_t>(k)});
    const Point x = problem.domain() ? random_in_ball(m, problem.domain()->center, problem.domain()->radius, sub)
                                     : m.random_point(sub);
    for (int i = 0; i < problem.num_agents(); ++i) {
      max_grad = std::max(max_grad, problem.local_grad(i, x).vec.norm());
      max_var = std::max(max_var, oracle.variance(i, x));
    }
  }
  GradientBounds b;
  b.delta = opt.safety * max_grad;
  b.sigma = std::sqrt(opt.safety * max_var);
  b.g = opt.clip_factor * b.delta;
  return b;
}

/// Deterministic equal split of `total` shuffled indices into `parts` shards.
inline std::vector<std::vector<std::size_t>> equal_partition(std::size_t total, int parts, Rng& rng) {
  std::vector<std::size_t> perm(total);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t k = total; k > 1; --k) std::swap(perm[k - 1], perm[rng.index(k)]);
  const std::size_t per = total / static_cast<std::size_t>(parts);
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(parts));
  for (std::size_t a = 0; a < out.size(); ++a)
    out[a].assign(perm.begin() + static_cast<std::ptrdiff_t>(a * per),
                  perm.begin() + static_cast<std::ptrdiff_t>((a + 1) * per));
  return out;
}

struct SpikedData {
  std::vector<Eigen::MatrixXd> shards;
  Point optimum;
  Eigen::VectorXd spikes;
};

/// Spiked-covariance samples z = U diag(lambda) g + noise g'. The planted
/// subspace span(U) is the top-p eigenspace of the population covariance.
/// Spikes are lambda_k = spike * (1 + (p-1-k)/p), k = 0..p-1.
inline SpikedData gen_spiked_data(int d, int p, int n_agents, int m_per_agent, double spike, double noise,
                                  const Rng& rng) {
  if (!(d > p && p >= 1)) throw Error(ErrorCode::ConfigError, "spiked data requires d > p >= 1");
  if (n_agents < 1 || m_per_agent < 1) throw Error(ErrorCode::ConfigError, "need agents and samples");
  Rng basis_rng = rng.split({0x5b1ULL, 0});
  Rng sample_rng = rng.split({0x5b1ULL, 1});
  Rng split_rng = rng.split({0x5b1ULL, 2});
  const Eigen::MatrixXd u = Grassmann::orthonormalize(detail::gaussian(d, p, basis_rng));
  Eigen::VectorXd lambda(p);
  for (int k = 0; k < p; ++k) lambda(k) = spike * (1.0 + static_cast<double>(p - 1 - k) / p);
  const std::size_t total = static_cast<std::size_t>(n_agents) * static_cast<std::size_t>(m_per_agent);
  Eigen::MatrixXd z(d, static_cast<Eigen::Index>(total));
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    Eigen::VectorXd g(p);
    for (int k = 0; k < p; ++k) g(k) = sample_rng.normal();
    Eigen::VectorXd gp(d);
    for (int k = 0; k < d; ++k) gp(k) = sample_rng.normal();
    z.col(j) = u * lambda.cwiseProduct(g) + noise * gp;
  }
  SpikedData out;
  out.optimum = {u};
  out.spikes = lambda;
  for (const auto& part : equal_partition(total, n_agents, split_rng)) {
    Eigen::MatrixXd s(d, static_cast<Eigen::Index>(part.size()));
    for (std::size_t k = 0; k < part.size(); ++k) s.col(static_cast<Eigen::Index>(k)) = z.col(static_cast<Eigen::Index>(part[k]));
    out.shards.push_back(std::move(s));
  }
  return out;
}

/// Top-p eigenspace of the pooled second moment of all shards.
inline Point pooled_principal_subspace(std::span<const Eigen::MatrixXd> shards, int p) {
  const Eigen::Index d = shards.front().rows();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
  double count = 0.0;
  for (const auto& z : shards) {
    a += z * z.transpose();
    count += static_cast<double>(z.cols());
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a / count);
  return {Grassmann::orthonormalize(es.eigenvectors().rightCols(p))};
}

/// Real data ingestion: rows of `samples` are observations. Values are scaled
/// to [0,1] by the global min/max, centered by the global mean, shuffled and
/// split equally (the remainder is dropped). The optimum is the pooled PCA.
inline PcaProblem pca_from_matrix(const Eigen::MatrixXd& samples, int p, int n_agents, const Rng& rng) {
  if (samples.rows() < n_agents) throw Error(ErrorCode::ConfigError, "fewer samples than agents");
  if (!(samples.cols() > p)) throw Error(ErrorCode::ConfigError, "PCA requires d > p");
  const double lo = samples.minCoeff();
  const double hi = samples.maxCoeff();
  Eigen::MatrixXd z = samples.transpose();  // d x N
  if (hi > lo) z = (z.array() - lo) / (hi - lo);
  const Eigen::VectorXd mean = z.rowwise().mean();
  z.colwise() -= mean;
  Rng split_rng = rng.split({0xc5ULL, 2});
  std::vector<Eigen::MatrixXd> shards;
  for (const auto& part : equal_partition(static_cast<std::size_t>(z.cols()), n_agents, split_rng)) {
    Eigen::MatrixXd s(z.rows(), static_cast<Eigen::Index>(part.size()));
    for (std::size_t k = 0; k < part.size(); ++k) s.col(static_cast<Eigen::Index>(k)) = z.col(static_cast<Eigen::Index>(part[k]));
    shards.push_back(std::move(s));
  }
  Point opt = pooled_principal_subspace(shards, p);
  return PcaProblem(Grassmann(static_cast<int>(z.rows()), p), std::move(shards), std::move(opt));
}

/// Anchors drawn in a geodesic ball of radius `anchor_radius` around a random
/// center; the returned domain is the ball of radius D/2 around that center.
template <class M>
KarcherProblem<M> gen_karcher_problem(const M& m, int n_agents, int m_per_agent, double anchor_radius,
                                      double diameter, const Rng& rng) {
  if (!(anchor_radius <= 0.5 * diameter))
    throw Error(ErrorCode::ConfigError, "anchor radius must not exceed D/2");
  Rng center_rng = rng.split({0xa7cULL, 0});
  const Point center = m.random_point(center_rng);
  std::vector<std::vector<Point>> shards(static_cast<std::size_t>(n_agents));
  for (int i = 0; i < n_agents; ++i) {
    Rng sub = rng.split({0xa7cULL, 1, static_cast<std::uint64_t>(i)});
    for (int j = 0; j < m_per_agent; ++j)
      shards[static_cast<std::size_t>(i)].push_back(random_in_ball(m, center, anchor_radius, sub));
  }
  return KarcherProblem<M>(m, std::move(shards), Domain{center, 0.5 * diameter});
}

}  // namespace rdiff
