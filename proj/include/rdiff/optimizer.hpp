#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rdiff/curvature.hpp"
#include "rdiff/error.hpp"
#include "rdiff/frechet.hpp"
#include "rdiff/manifolds.hpp"
#include "rdiff/network.hpp"
#include "rdiff/problems.hpp"
#include "rdiff/rng.hpp"

namespace rdiff {

enum class Algorithm { DiffusionDiminishing, DiffusionFixed, CentralizedRsgd };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::DiffusionDiminishing: return "diffusion_diminishing";
    case Algorithm::DiffusionFixed: return "diffusion_fixed";
    case Algorithm::CentralizedRsgd: return "centralized_rsgd";
  }
  return "?";
}

/// Bits of IterationRecord::flags. Raised whenever the corresponding
/// condition was seen since the previous record.
enum AssumptionFlag : std::uint32_t {
  kFlagOutOfDomain = 1u << 0,      // an x or y iterate left the domain ball
  kFlagStepGuard = 1u << 1,        // a displacement exceeded D or s*D
  kFlagContraction = 1u << 2,      // Var(x^{t+1}) > rho1 Var(y^{t+1}) + 1e-9
  kFlagFrechetResidual = 1u << 3,  // the Frechet mean did not reach its tolerance
};

inline std::string flags_to_string(std::uint32_t f) {
  if (f == 0) return "none";
  std::string s;
  auto add = [&](std::uint32_t bit, const char* name) {
    if (f & bit) s += (s.empty() ? "" : "|") + std::string(name);
  };
  add(kFlagOutOfDomain, "out_of_domain");
  add(kFlagStepGuard, "step_guard");
  add(kFlagContraction, "contraction");
  add(kFlagFrechetResidual, "frechet_residual");
  return s;
}

struct RunConfig {
  Algorithm algorithm = Algorithm::DiffusionDiminishing;
  long horizon = 1000;
  double eta0 = 0.1;        // diminishing: eta_t = eta0 / sqrt(t)
  double eta_fixed = 0.01;  // fixed-step baseline
  double s = 0.5;           // consensus step
  std::size_t batch = 32;
  double clip = 0.0;        // G; 0 disables clipping
  std::uint64_t seed = 0;
  int record_every = 10;
  bool enforce_assumptions = true;
  /// Run the variance-contraction check across every recorded consensus step.
  bool check_contraction = false;
  /// Stream key per agent; empty means agent i uses key i.
  std::vector<std::uint64_t> agent_streams;
  std::optional<Point> init;
  /// Theory constants for the bound columns; absent or uncertified bounds
  /// are reported as NaN.
  std::optional<TheoremConstants> theory;
  bool theory_certified = false;
  FrechetOptions frechet{1e-10, 500, false};

  double step(long t) const {
    return algorithm == Algorithm::DiffusionFixed ? eta_fixed : step_schedule(eta0, t);
  }
};

struct IterationRecord {
  long t = 0;
  double consensus = 0.0;    // sum_ij w_ij d^2(x_i, x_j)
  double frechet_var = 0.0;  // n Var = sum_i d^2(x_i, xbar)
  double msd = std::numeric_limits<double>::quiet_NaN();
  double fgap_bar = std::numeric_limits<double>::quiet_NaN();
  double bound_consensus = std::numeric_limits<double>::quiet_NaN();
  double bound_gap = std::numeric_limits<double>::quiet_NaN();
  long clip_count = 0;  // cumulative
  std::uint32_t flags = 0;
};

struct Trace {
  std::vector<IterationRecord> records;
  std::vector<Point> final_states;  // x^{T+1}
  long clip_count = 0;
  std::uint32_t flags = 0;
  double init_dist_sq_mean = std::numeric_limits<double>::quiet_NaN();
};

/// Per-agent state: current iterate x_i^t and the intermediate y_i^{t+1}.
struct AgentState {
  int id = 0;
  std::uint64_t stream = 0;
  Point x;
  Point y;
};

/// Local step y = exp_x(-eta * g).
template <class M>
Point gradient_step(const M& m, const Point& x, const TangentVector& g, double eta) {
  if (eta == 0.0) return x;
  return m.exp(x, g.scaled(-eta));
}

/// Synchronous consensus: x_i = exp_{y_i}(s sum_j w_ij log_{y_i}(y_j)), all
/// logs read from the same y snapshot. `max_displacement` receives the
/// largest ||s sum_j w_ij log(.)||.
template <class M>
std::vector<Point> consensus_step(const M& m, std::span<const Point> y, const Eigen::MatrixXd& w, double s,
                                  double* max_displacement = nullptr) {
  const auto n = static_cast<Eigen::Index>(y.size());
  if (w.rows() != n || w.cols() != n)
    throw Error(ErrorCode::DimensionMismatch, "mixing matrix size does not match the agent count");
  std::vector<Point> x(y.size());
  double worst = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Point& yi = y[static_cast<std::size_t>(i)];
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(yi.coords.rows(), yi.coords.cols());
    if (s != 0.0) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i || w(i, j) == 0.0) continue;
        try {
          v += w(i, j) * m.log(yi, y[static_cast<std::size_t>(j)]).vec;
        } catch (const Error& e) {
          throw Error(e.code(), "consensus edge (" + std::to_string(i) + "," + std::to_string(j) + "): " + e.what());
        }
      }
      v *= s;
    }
    worst = std::max(worst, v.norm());
    x[static_cast<std::size_t>(i)] = v.norm() == 0.0 ? yi : m.exp(yi, TangentVector{yi.coords, std::move(v)});
  }
  if (max_displacement) *max_displacement = worst;
  return x;
}

namespace detail {

template <class M>
bool outside(const M& m, const std::optional<Domain>& dom, const Point& x) {
  return dom && m.dist(dom->center, x) > dom->radius * (1.0 + 1e-12);
}

template <class P>
Point initial_point(const P& problem, const RunConfig& cfg) {
  if (cfg.init) return *cfg.init;
  Rng r = Rng(cfg.seed).split({0x1417ULL});
  const auto& m = problem.manifold();
  if (problem.domain()) return random_in_ball(m, problem.domain()->center, problem.domain()->radius, r);
  return m.random_point(r);
}

template <class P>
void fill_metrics(const P& problem, std::span<const Point> xs, const Eigen::MatrixXd* w, const RunConfig& cfg,
                  IterationRecord& rec, double init_dist_sq_mean) {
  const auto& m = problem.manifold();
  const auto n = static_cast<double>(xs.size());
  rec.consensus = w ? weighted_disagreement(m, xs, *w) : 0.0;
  const FrechetResult fm = frechet_mean(m, xs, cfg.frechet);
  if (fm.residual_grad_norm > cfg.frechet.tol) rec.flags |= kFlagFrechetResidual;
  rec.frechet_var = n * fm.variance;
  if (problem.optimum()) {
    double acc = 0.0;
    for (const Point& x : xs) {
      const double d = m.dist(x, *problem.optimum());
      acc += d * d;
    }
    rec.msd = acc / n;
    rec.fgap_bar = problem.objective(fm.mean) - problem.objective(*problem.optimum());
  }
  if (cfg.theory && cfg.theory_certified) {
    rec.bound_consensus = consensus_bound(*cfg.theory, rec.t);
    if (!std::isnan(init_dist_sq_mean)) rec.bound_gap = gap_bound(*cfg.theory, rec.t, init_dist_sq_mean);
  }
}

}  // namespace detail

/// Decentralized diffusion: for t = 1..T every agent takes a local stochastic
/// gradient step, then all agents take one synchronous consensus step. Records
/// x^t for t = 1, 1 + k, 1 + 2k, ... and always x^{T+1}.
template <class P>
Trace run(const P& problem, const MixingMatrix& mix, const RunConfig& cfg) {
  using M = typename P::manifold_type;
  const M& m = problem.manifold();
  const int n = problem.num_agents();
  if (cfg.horizon < 1) throw Error(ErrorCode::ConfigError, "horizon T must be >= 1");
  if (cfg.record_every < 1) throw Error(ErrorCode::ConfigError, "record_every must be >= 1");
  if (mix.n() != n) throw Error(ErrorCode::DimensionMismatch, "mixing matrix size does not match the agent count");
  if (!cfg.agent_streams.empty() && static_cast<int>(cfg.agent_streams.size()) != n)
    throw Error(ErrorCode::ConfigError, "agent_streams must list one key per agent");

  const StochGradOracle<P> oracle(problem, cfg.batch, cfg.clip);
  const Rng base(cfg.seed);
  const auto& dom = problem.domain();
  const double diameter = dom ? 2.0 * dom->radius : std::numeric_limits<double>::infinity();

  std::vector<AgentState> agents(static_cast<std::size_t>(n));
  const Point x1 = detail::initial_point(problem, cfg);
  for (int i = 0; i < n; ++i) {
    auto& a = agents[static_cast<std::size_t>(i)];
    a.id = i;
    a.stream = cfg.agent_streams.empty() ? static_cast<std::uint64_t>(i) : cfg.agent_streams[static_cast<std::size_t>(i)];
    a.x = x1;
  }

  Trace trace;
  if (problem.optimum()) {
    const double d = m.dist(x1, *problem.optimum());
    trace.init_dist_sq_mean = d * d;
  }

  std::uint32_t pending = 0;
  std::vector<Point> xs(static_cast<std::size_t>(n));
  std::vector<Point> ys(static_cast<std::size_t>(n));
  auto snapshot_x = [&] {
    for (int i = 0; i < n; ++i) xs[static_cast<std::size_t>(i)] = agents[static_cast<std::size_t>(i)].x;
  };
  auto record = [&](long t) {
    snapshot_x();
    IterationRecord rec;
    rec.t = t;
    rec.clip_count = trace.clip_count;
    rec.flags = pending;
    detail::fill_metrics(problem, std::span<const Point>(xs), &mix.w, cfg, rec, trace.init_dist_sq_mean);
    trace.flags |= rec.flags;
    pending = 0;
    trace.records.push_back(rec);
  };

  for (long t = 1; t <= cfg.horizon; ++t) {
    const bool recording = (t - 1) % cfg.record_every == 0;
    if (recording) record(t);
    const double eta = cfg.step(t);

    for (int i = 0; i < n; ++i) {
      auto& a = agents[static_cast<std::size_t>(i)];
      Rng r = base.split({a.stream, static_cast<std::uint64_t>(t)});
      OracleSample g = oracle(i, a.x, r);
      if (g.clipped) ++trace.clip_count;
      if (cfg.enforce_assumptions && eta * g.grad.vec.norm() > diameter) pending |= kFlagStepGuard;
      try {
        a.y = gradient_step(m, a.x, g.grad, eta);
      } catch (const Error& e) {
        throw Error(e.code(), "iteration " + std::to_string(t) + ", agent " + std::to_string(i) + ": " + e.what());
      }
      ys[static_cast<std::size_t>(i)] = a.y;
    }

    double disp = 0.0;
    std::vector<Point> next;
    try {
      next = consensus_step(m, std::span<const Point>(ys), mix.w, cfg.s, &disp);
    } catch (const Error& e) {
      throw Error(e.code(), "iteration " + std::to_string(t) + ": " + e.what());
    }
    if (cfg.enforce_assumptions) {
      if (disp > cfg.s * diameter) pending |= kFlagStepGuard;
      for (int i = 0; i < n; ++i)
        if (detail::outside(m, dom, ys[static_cast<std::size_t>(i)]) ||
            detail::outside(m, dom, next[static_cast<std::size_t>(i)]))
          pending |= kFlagOutOfDomain;
    }
    if (cfg.check_contraction && cfg.theory && recording) {
      const double vy = frechet_mean(m, std::span<const Point>(ys), cfg.frechet).variance;
      const double vx = frechet_mean(m, std::span<const Point>(next), cfg.frechet).variance;
      if (vx > cfg.theory->rho1 * vy + 1e-9) pending |= kFlagContraction;
    }
    for (int i = 0; i < n; ++i) agents[static_cast<std::size_t>(i)].x = std::move(next[static_cast<std::size_t>(i)]);
  }
  record(cfg.horizon + 1);
  snapshot_x();
  trace.final_states = xs;
  return trace;
}

/// Centralized reference: x^{t+1} = exp(x^t, -eta_t (1/n) sum_i g_hat_i(x^t)),
/// drawing agent i's oracle from the same substreams as run().
template <class P>
Trace run_centralized(const P& problem, const RunConfig& cfg) {
  using M = typename P::manifold_type;
  const M& m = problem.manifold();
  const int n = problem.num_agents();
  if (cfg.horizon < 1) throw Error(ErrorCode::ConfigError, "horizon T must be >= 1");
  if (cfg.record_every < 1) throw Error(ErrorCode::ConfigError, "record_every must be >= 1");
  const StochGradOracle<P> oracle(problem, cfg.batch, cfg.clip);
  const Rng base(cfg.seed);
  const auto& dom = problem.domain();
  const double diameter = dom ? 2.0 * dom->radius : std::numeric_limits<double>::infinity();

  Point x = detail::initial_point(problem, cfg);
  Trace trace;
  if (problem.optimum()) {
    const double d = m.dist(x, *problem.optimum());
    trace.init_dist_sq_mean = d * d;
  }
  std::uint32_t pending = 0;
  auto record = [&](long t) {
    IterationRecord rec;
    rec.t = t;
    rec.clip_count = trace.clip_count;
    rec.flags = pending;
    const Point one[] = {x};
    detail::fill_metrics(problem, std::span<const Point>(one), nullptr, cfg, rec, trace.init_dist_sq_mean);
    trace.flags |= rec.flags;
    pending = 0;
    trace.records.push_back(rec);
  };

  for (long t = 1; t <= cfg.horizon; ++t) {
    if ((t - 1) % cfg.record_every == 0) record(t);
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(x.coords.rows(), x.coords.cols());
    for (int i = 0; i < n; ++i) {
      const std::uint64_t key =
          cfg.agent_streams.empty() ? static_cast<std::uint64_t>(i) : cfg.agent_streams[static_cast<std::size_t>(i)];
      Rng r = base.split({key, static_cast<std::uint64_t>(t)});
      OracleSample s = oracle(i, x, r);
      if (s.clipped) ++trace.clip_count;
      g += s.grad.vec;
    }
    g /= static_cast<double>(n);
    const double eta = cfg.step(t);
    if (cfg.enforce_assumptions && eta * g.norm() > diameter) pending |= kFlagStepGuard;
    try {
      x = gradient_step(m, x, TangentVector{x.coords, std::move(g)}, eta);
    } catch (const Error& e) {
      throw Error(e.code(), "iteration " + std::to_string(t) + ": " + e.what());
    }
    if (cfg.enforce_assumptions && detail::outside(m, dom, x)) pending |= kFlagOutOfDomain;
  }
  record(cfg.horizon + 1);
  trace.final_states = {x};
  return trace;
}

/// sum_t eta_t gap_t / sum_t eta_t over t = 1..T; needs a record at every t.
inline double ergodic_gap(const Trace& trace, const std::function<double(long)>& eta, long horizon) {
  if (horizon < 1) throw Error(ErrorCode::ConfigError, "horizon must be >= 1");
  double num = 0.0;
  double den = 0.0;
  long next = 1;
  for (const auto& rec : trace.records) {
    if (rec.t > horizon) break;
    if (rec.t != next || std::isnan(rec.fgap_bar))
      throw Error(ErrorCode::MissingMetric, "fgap_bar missing at t = " + std::to_string(next));
    const double e = eta(rec.t);
    num += e * rec.fgap_bar;
    den += e;
    ++next;
  }
  if (next <= horizon) throw Error(ErrorCode::MissingMetric, "fgap_bar missing at t = " + std::to_string(next));
  return num / den;
}

}  // namespace rdiff
