#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

#include "rdiff/error.hpp"
#include "rdiff/manifolds.hpp"

namespace rdiff {

struct FrechetResult {
  Point mean;
  double variance = 0.0;  // sum_i w_i d^2(x_i, mean)
  int iterations = 0;
  double residual_grad_norm = 0.0;
};

struct FrechetOptions {
  double tol = 1e-10;
  int max_iter = 200;
  /// When false, hitting max_iter returns the last iterate instead of
  /// throwing NoConvergence; check residual_grad_norm against tol.
  bool strict = true;
};

/// Weighted Frechet (Karcher) mean by the fixed-point iteration
/// x <- exp_x(sum_i w_i log_x(x_i)) started from points[0]. Deterministic.
template <class M>
FrechetResult frechet_mean(const M& m, std::span<const Point> points, std::span<const double> weights,
                           FrechetOptions opt = {}) {
  if (points.empty()) throw Error(ErrorCode::DimensionMismatch, "Frechet mean of an empty set");
  if (weights.size() != points.size())
    throw Error(ErrorCode::DimensionMismatch, "one weight per point is required");
  FrechetResult res;
  Point x = points[0];
  for (int it = 0;; ++it) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(x.coords.rows(), x.coords.cols());
    for (std::size_t i = 0; i < points.size(); ++i)
      if (weights[i] != 0.0) g += weights[i] * m.log(x, points[i]).vec;
    res.residual_grad_norm = g.norm();
    res.iterations = it;
    if (res.residual_grad_norm <= opt.tol) break;
    if (it >= opt.max_iter) {
      if (!opt.strict) break;
      throw Error(ErrorCode::NoConvergence,
                  "Frechet mean residual " + std::to_string(res.residual_grad_norm) + " after " +
                      std::to_string(opt.max_iter) + " iterations");
    }
    x = m.exp(x, TangentVector{x.coords, std::move(g)});
  }
  res.variance = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double di = m.dist(points[i], x);
    res.variance += weights[i] * di * di;
  }
  res.mean = std::move(x);
  return res;
}

template <class M>
FrechetResult frechet_mean(const M& m, std::span<const Point> points, FrechetOptions opt = {}) {
  const std::vector<double> w(points.size(), 1.0 / static_cast<double>(points.size()));
  return frechet_mean(m, points, std::span<const double>(w), opt);
}

/// Var({x_i}) = (1/n) sum_i d^2(x_i, xbar).
template <class M>
double frechet_variance(const M& m, std::span<const Point> points, FrechetOptions opt = {}) {
  return frechet_mean(m, points, opt).variance;
}

/// phi(x) = (1/n) sum_i d^2(x_i, x).
template <class M>
double frechet_objective(const M& m, std::span<const Point> points, const Point& x) {
  double acc = 0.0;
  for (const Point& p : points) {
    const double d = m.dist(p, x);
    acc += d * d;
  }
  return acc / static_cast<double>(points.size());
}

/// Network disagreement sum_ij w_ij d^2(x_i, x_j).
template <class M>
double weighted_disagreement(const M& m, std::span<const Point> points, const Eigen::MatrixXd& w) {
  double acc = 0.0;
  const auto n = static_cast<Eigen::Index>(points.size());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double wij = w(i, j) + w(j, i);
      if (wij == 0.0) continue;
      const double d = m.dist(points[static_cast<std::size_t>(i)], points[static_cast<std::size_t>(j)]);
      acc += wij * d * d;
    }
  return acc;
}

}  // namespace rdiff
