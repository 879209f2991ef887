#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

#include "rdiff/curvature.hpp"
#include "rdiff/frechet.hpp"
#include "rdiff/manifolds.hpp"
#include "rdiff/network.hpp"
#include "rdiff/optimizer.hpp"

namespace rdiff {

/// Both sides of the variance sandwich for a point configuration and the
/// contraction achieved by one consensus step with s = C2 / (2 C1).
struct VarianceCheck {
  double disagreement = 0.0;  // sum_ij w_ij d^2(y_i, y_j)
  double var_y = 0.0;
  double var_x = 0.0;
  double lower = 0.0;  // (i):  lower <= var_y
  double upper = 0.0;  // (ii): var_y <= upper
  double rho1 = 0.0;   // var_x <= rho1 var_y
  bool lower_ok = false;
  bool upper_ok = false;
  bool contraction_ok = false;
};

template <class M>
VarianceCheck check_variance_inequalities(const M& m, const GeometryConstants& gc, const MixingMatrix& mix,
                                          std::span<const Point> y) {
  const double n = static_cast<double>(y.size());
  const double dd = gc.diameter * gc.diameter;
  const double lo = 1.0 + gc.c3 * dd;
  const double hi = 1.0 + gc.c4 * dd;
  VarianceCheck out;
  out.disagreement = weighted_disagreement(m, y, mix.w);
  out.var_y = frechet_variance(m, y);
  out.lower = out.disagreement / (4.0 * n * lo * lo);
  out.upper = hi * hi * out.disagreement / (2.0 * n * (1.0 - mix.sigma2));
  const TheoremConstants tc = make_theorem_constants(gc, mix.sigma2, 0.0, 0.0, static_cast<int>(y.size()), 0.0);
  out.rho1 = tc.rho1;
  const std::vector<Point> x = consensus_step(m, y, mix.w, consensus_step(gc));
  out.var_x = frechet_variance(m, std::span<const Point>(x));
  out.lower_ok = out.lower <= out.var_y + kLemmaSlack;
  out.upper_ok = out.var_y <= out.upper + kLemmaSlack;
  out.contraction_ok = out.var_x <= out.rho1 * out.var_y + kLemmaSlack;
  return out;
}

struct VarianceSuiteResult {
  std::size_t configs = 0;
  std::size_t lower_failures = 0;
  std::size_t upper_failures = 0;
  std::size_t contraction_failures = 0;

  bool passed() const { return lower_failures == 0 && upper_failures == 0 && contraction_failures == 0; }
};

/// Random configurations of n = mix.n() points in a ball of diameter D
/// around a random center (one center per configuration).
template <class M>
VarianceSuiteResult variance_suite(const M& m, const GeometryConstants& gc, const MixingMatrix& mix,
                                   std::size_t configs, Rng& rng) {
  VarianceSuiteResult res;
  res.configs = configs;
  std::vector<Point> y(static_cast<std::size_t>(mix.n()));
  for (std::size_t k = 0; k < configs; ++k) {
    const Point center = m.random_point(rng);
    // vary the spread so near-consensus and near-diameter configurations both appear
    const double radius = 0.5 * gc.diameter * (k % 4 == 0 ? 1.0 : rng.uniform());
    for (auto& p : y) p = random_in_ball(m, center, radius, rng);
    const VarianceCheck c = check_variance_inequalities(m, gc, mix, std::span<const Point>(y));
    res.lower_failures += c.lower_ok ? 0 : 1;
    res.upper_failures += c.upper_ok ? 0 : 1;
    res.contraction_failures += c.contraction_ok ? 0 : 1;
  }
  return res;
}

}  // namespace rdiff
