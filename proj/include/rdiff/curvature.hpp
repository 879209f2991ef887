#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>

#include "rdiff/error.hpp"
#include "rdiff/manifolds.hpp"
#include "rdiff/rng.hpp"

namespace rdiff {

/// Comparison constants for the cosine law (C1, C2) and for the distortion
/// of the logarithm map (C3, C4) on a domain of diameter D.
struct GeometryConstants {
  double c1 = 1.0;
  double c2 = 1.0;
  double c3 = 0.0;
  double c4 = 0.0;
  double diameter = 1.0;
  double k_min = 0.0;
  double k_max = 0.0;
};

/// Constants entering the consensus and optimality-gap bounds.
struct TheoremConstants {
  double xi = 0.0;
  double c_of_xi = 0.0;
  double b = 0.0;
  double rho1 = 0.0;
  double rho2 = 0.0;
  double s = 0.0;
  double eta0 = 0.0;
  double sigma2w = 0.0;
  double delta = 0.0;
  double sigma = 0.0;
  int n = 1;
  double g = 0.0;
  GeometryConstants geometry;
};

inline GeometryConstants compute_constants(const ManifoldSpec& spec) {
  spec.validate();
  GeometryConstants gc;
  gc.diameter = spec.diameter;
  gc.k_min = spec.k_min;
  gc.k_max = spec.k_max;
  const double d = spec.diameter;
  if (spec.k_min < 0.0) {
    const double a = std::sqrt(-spec.k_min) * d;
    gc.c1 = a / std::tanh(a);
  }
  if (spec.k_max > 0.0) {
    const double a = std::sqrt(spec.k_max) * d;
    gc.c2 = a / std::tan(a);
  }
  gc.c3 = gc.c4 = std::max(std::abs(spec.k_min), spec.k_max);
  return gc;
}

/// Consensus step size C2 / (2 C1), always in (0, 1/2].
inline double consensus_step(const GeometryConstants& gc) { return gc.c2 / (2.0 * gc.c1); }

/// Diminishing gradient step eta0 / sqrt(t), t >= 1.
inline double step_schedule(double eta0, long t) {
  return eta0 / std::sqrt(static_cast<double>(t));
}

inline TheoremConstants make_theorem_constants(const GeometryConstants& gc, double sigma2w,
                                               double delta, double sigma, int n, double g) {
  TheoremConstants tc;
  tc.geometry = gc;
  tc.sigma2w = sigma2w;
  tc.delta = delta;
  tc.sigma = sigma;
  tc.n = n;
  tc.g = g;
  const double dd = gc.diameter * gc.diameter;
  const double lip = 1.0 + gc.c4 * dd;
  tc.xi = std::pow(gc.c2, 3) * (1.0 - sigma2w) / (4.0 * gc.c1 * lip * lip);
  tc.c_of_xi = (1.0 + tc.xi * tc.xi) / std::pow(tc.xi, 4);
  tc.b = (1.0 - tc.xi) *
         (2.0 * gc.c1 * (sigma * sigma + delta * delta) + delta * delta / tc.xi);
  tc.rho1 = 1.0 - tc.xi;
  tc.rho2 = 1.0 - tc.xi * tc.xi;
  tc.s = consensus_step(gc);
  tc.eta0 = g > 0.0 ? std::min(1.0, gc.diameter / g) : 1.0;
  return tc;
}

/// Upper bound on sum_i E d^2(x_i^t, xbar^t).
inline double consensus_bound(const TheoremConstants& tc, long t) {
  return tc.eta0 * tc.eta0 * tc.c_of_xi * tc.n * tc.b / static_cast<double>(t);
}

/// Upper bound on the eta-weighted ergodic gap after horizon T, given the
/// mean initial squared distance (1/n) sum_i d^2(x_i^1, x_*).
inline double gap_bound(const TheoremConstants& tc, long horizon, double init_dist_sq_mean) {
  const double rt = std::sqrt(static_cast<double>(horizon));
  const double s2d2 = tc.sigma * tc.sigma + tc.delta * tc.delta;
  return init_dist_sq_mean / (2.0 * tc.eta0 * rt) +
         tc.eta0 * (tc.delta * std::sqrt(tc.c_of_xi * tc.b) + tc.geometry.c1 * s2d2) *
             (1.0 + std::log(static_cast<double>(horizon))) / rt;
}

/// Names the first violated well-definedness guard (s D < inj, eta0 G <= D,
/// 0 < xi < 1), or returns an empty string.
inline std::string check_step_guards(const TheoremConstants& tc, double inj) {
  const double d = tc.geometry.diameter;
  if (!(tc.s * d < inj)) return "consensus displacement s*D must stay below inj";
  if (tc.g > 0.0 && !(tc.eta0 * tc.g <= d * (1.0 + 1e-12)))
    return "gradient displacement eta0*G must not exceed D";
  if (!(tc.xi > 0.0 && tc.xi < 1.0)) return "xi must lie in (0,1)";
  return {};
}

struct CosineLawCheck {
  bool upper_ok = false;
  bool lower_ok = false;
  double slack_upper = 0.0;
  double slack_lower = 0.0;
};

inline constexpr double kLemmaSlack = 1e-9;

/// Evaluates d^2(a,c) <= C1 d^2(b,c) + d^2(a,b) - 2<log_b a, log_b c> and the
/// matching lower inequality with C2.
template <class M>
CosineLawCheck check_cosine_law(const M& m, const GeometryConstants& gc, const Point& a,
                                const Point& b, const Point& c) {
  const double dac = m.dist(a, c);
  const double dbc = m.dist(b, c);
  const double dab = m.dist(a, b);
  const double cross = 2.0 * m.inner(b, m.log(b, a), m.log(b, c));
  const double lhs = dac * dac;
  CosineLawCheck out;
  out.slack_upper = gc.c1 * dbc * dbc + dab * dab - cross - lhs;
  out.slack_lower = lhs - (gc.c2 * dbc * dbc + dab * dab - cross);
  out.upper_ok = out.slack_upper >= -kLemmaSlack;
  out.lower_ok = out.slack_lower >= -kLemmaSlack;
  return out;
}

struct LogLipschitzCheck {
  bool ok = false;
  double ratio = 0.0;  // ||log_x y - log_x z|| / d(y,z), 1 when y == z
  double lower_ratio = 0.0;
  double upper_ratio = 0.0;
};

/// (1 + C3 D^2)^{-1} d(y,z) <= ||log_x(y) - log_x(z)|| <= (1 + C4 D^2) d(y,z).
template <class M>
LogLipschitzCheck check_log_lipschitz(const M& m, const GeometryConstants& gc, const Point& x,
                                      const Point& y, const Point& z) {
  const double dyz = m.dist(y, z);
  const double diff = (m.log(x, y).vec - m.log(x, z).vec).norm();
  const double dd = gc.diameter * gc.diameter;
  LogLipschitzCheck out;
  out.lower_ratio = 1.0 / (1.0 + gc.c3 * dd);
  out.upper_ratio = 1.0 + gc.c4 * dd;
  out.ratio = dyz > 0.0 ? diff / dyz : 1.0;
  out.ok = out.lower_ratio * dyz <= diff + kLemmaSlack && diff <= out.upper_ratio * dyz + kLemmaSlack;
  return out;
}

struct LemmaCertificate {
  std::size_t trials = 0;
  std::size_t cosine_upper_failures = 0;
  std::size_t cosine_lower_failures = 0;
  std::size_t log_lipschitz_failures = 0;
  double worst_cosine_slack = 0.0;

  bool certified() const {
    return cosine_upper_failures == 0 && cosine_lower_failures == 0 && log_lipschitz_failures == 0;
  }
};

/// Monte-Carlo certification of both comparison lemmas on random triples
/// drawn from a ball of diameter D around `center`.
template <class M>
LemmaCertificate certify_lemmas(const M& m, const GeometryConstants& gc, const Point& center,
                                std::size_t trials, Rng& rng) {
  LemmaCertificate cert;
  cert.trials = trials;
  cert.worst_cosine_slack = std::numeric_limits<double>::infinity();
  const double r = 0.5 * gc.diameter;
  for (std::size_t k = 0; k < trials; ++k) {
    const Point a = random_in_ball(m, center, r, rng);
    const Point b = random_in_ball(m, center, r, rng);
    const Point c = random_in_ball(m, center, r, rng);
    const CosineLawCheck cl = check_cosine_law(m, gc, a, b, c);
    cert.cosine_upper_failures += cl.upper_ok ? 0 : 1;
    cert.cosine_lower_failures += cl.lower_ok ? 0 : 1;
    cert.worst_cosine_slack =
        std::min({cert.worst_cosine_slack, cl.slack_upper, cl.slack_lower});
    cert.log_lipschitz_failures += check_log_lipschitz(m, gc, a, b, c).ok ? 0 : 1;
  }
  return cert;
}

}  // namespace rdiff
