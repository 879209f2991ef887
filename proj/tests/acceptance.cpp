// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: acceptance [output_dir]

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "flat_reference.hpp"
#include "rdiff/certify.hpp"
#include "rdiff/runner.hpp"

using namespace rdiff;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s  %-34s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void info(const std::string& text) {
  std::printf("      %s\n", text.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

struct GeometryTally {
  double roundtrip = 0.0;  // max ||log(x, exp(x,v)) - v|| / (1 + ||v||)
  double norm = 0.0;       // max | ||log(x,y)|| - d(x,y) |
  double symmetry = 0.0;
  double midpoint = 0.0;
  double representative = 0.0;
};

template <class M>
GeometryTally geometry_cases(const M& m, double max_norm, int cases, Rng& rng) {
  GeometryTally t;
  for (int k = 0; k < cases; ++k) {
    const Point x = m.random_point(rng);
    const TangentVector v = m.random_tangent(x, max_norm * rng.uniform(), rng);
    const Point y = m.exp(x, v);
    t.roundtrip = std::max(t.roundtrip, (m.log(x, y).vec - v.vec).norm() / (1.0 + v.norm()));
    const double dxy = m.dist(x, y);
    t.norm = std::max(t.norm, std::abs(m.log(x, y).norm() - dxy));
    t.symmetry = std::max(t.symmetry, std::abs(dxy - m.dist(y, x)));
    const Point mid = m.exp(x, m.log(x, y).scaled(0.5));
    t.midpoint = std::max(t.midpoint, std::abs(m.dist(x, mid) - 0.5 * dxy));
    if constexpr (std::is_same_v<M, Grassmann>) {
      const Eigen::MatrixXd q = Grassmann::orthonormalize(detail::gaussian(m.dim_p(), m.dim_p(), rng));
      t.representative = std::max(t.representative, std::abs(m.dist(Point{x.coords * q}, y) - dxy));
    }
  }
  return t;
}

void geometry_core() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  const GeometryTally e = geometry_cases(Euclidean(5), 10.0, 1000, rng);
  const GeometryTally s = geometry_cases(Sphere(4), 0.9 * std::numbers::pi, 1000, rng);
  const GeometryTally g = geometry_cases(Grassmann(10, 3), 0.9 * std::numbers::pi / 2, 1000, rng);
  const double secs = seconds_since(t0);
  bool ok = secs < 10.0;
  for (const auto* t : {&e, &s, &g})
    ok = ok && t->roundtrip <= 1e-8 && t->norm <= 1e-9 && t->symmetry <= 1e-12 && t->midpoint <= 1e-9;
  ok = ok && g.representative <= 1e-10;
  std::ostringstream d;
  d << "3x1000 cases, worst roundtrip " << std::max({e.roundtrip, s.roundtrip, g.roundtrip}) << ", norm "
    << std::max({e.norm, s.norm, g.norm}) << ", midpoint " << std::max({e.midpoint, s.midpoint, g.midpoint})
    << ", basis " << g.representative << ", " << fmt("%.2f s", secs);
  report("geometry core", ok, d.str());
}

// ---------------------------------------------------------------------------

template <class M>
LemmaCertificate lemma_run(const M& m, double diameter, std::uint64_t seed) {
  const GeometryConstants gc = compute_constants(m.spec(diameter));
  Rng rng(seed);
  const Point center = m.random_point(rng);
  return certify_lemmas(m, gc, center, 10000, rng);
}

void comparison_lemmas() {
  const auto t0 = std::chrono::steady_clock::now();
  struct Row {
    std::string name;
    LemmaCertificate cert;
  };
  const std::vector<Row> rows{{"euclidean D=4", lemma_run(Euclidean(3), 4.0, 1)},
                              {"sphere D=pi/4", lemma_run(Sphere(2), std::numbers::pi / 4, 2)},
                              {"sphere D=1.5", lemma_run(Sphere(4), 1.5, 3)},
                              {"grassmann(20,3) D=1", lemma_run(Grassmann(20, 3), 1.0, 4)}};
  const double secs = seconds_since(t0);
  std::size_t cos_fail = 0, lip_fail = 0;
  std::ostringstream d1, d2;
  for (const auto& r : rows) {
    cos_fail += r.cert.cosine_upper_failures + r.cert.cosine_lower_failures;
    lip_fail += r.cert.log_lipschitz_failures;
  }
  d1 << "10^4 triples x " << rows.size() << " geometries, " << cos_fail << " failures, " << fmt("%.2f s", secs);
  d2 << "10^4 triples x " << rows.size() << " geometries, " << lip_fail << " failures";
  report("cosine law (C1, C2)", cos_fail == 0 && secs < 30.0, d1.str());
  report("log-map distortion (C3, C4)", lip_fail == 0, d2.str());
}

// ---------------------------------------------------------------------------

void variance_lemmas() {
  const MixingMatrix er = metropolis_weights(gen_er(10, 0.5, Rng(4)));
  const MixingMatrix cyc = metropolis_weights(gen_cycle(10));
  std::size_t lower = 0, upper = 0, contraction = 0, total = 0;
  auto suite = [&](const auto& m, double diameter, std::uint64_t seed) {
    const GeometryConstants gc = compute_constants(m.spec(diameter));
    for (const MixingMatrix* mix : {&er, &cyc}) {
      Rng rng(seed);
      const VarianceSuiteResult r = variance_suite(m, gc, *mix, 500, rng);
      lower += r.lower_failures;
      upper += r.upper_failures;
      contraction += r.contraction_failures;
      total += r.configs;
    }
  };
  suite(Euclidean(3), 4.0, 11);
  suite(Sphere(2), std::numbers::pi / 4, 12);
  suite(Grassmann(20, 3), 1.0, 13);
  std::ostringstream d;
  d << total << " configurations (ER(10,0.5), cycle(10)); failures lower " << lower << ", upper " << upper
    << ", contraction " << contraction;
  report("variance bounds and contraction", lower + upper + contraction == 0, d.str());
}

// ---------------------------------------------------------------------------

double loglog_slope(const std::vector<IterationRecord>& recs, double lo, double hi,
                    const std::function<double(const IterationRecord&)>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
  for (const auto& r : recs) {
    if (r.t < lo || r.t > hi) continue;
    const double lx = std::log(static_cast<double>(r.t));
    const double ly = std::log(y(r));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    n += 1;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

void theorems(const fs::path& out) {
  ExperimentConfig c = make_preset("desk-sphere-karcher");
  c.output_dir = (out / "sphere").string();
  const auto t0 = std::chrono::steady_clock::now();
  const Setup s = build_setup(c);
  const ExperimentResult r = execute(c, s);
  const double secs = seconds_since(t0);
  const auto& agg = r.outcomes[0].aggregate;
  info("sphere Karcher: eta0=" + fmt("%.4g", s.theory.eta0) + " s=" + fmt("%.4g", s.theory.s) +
       " G=" + fmt("%.4g", s.theory.g) + " xi=" + fmt("%.4g", s.theory.xi) +
       " certified=" + (s.certified() ? std::string("yes") : std::string("no")) + fmt(", %.1f s", secs));

  std::size_t violations = 0;
  bool bounds_present = true;
  for (const auto& rec : agg) {
    if (std::isnan(rec.bound_consensus)) bounds_present = false;
    else if (rec.frechet_var > rec.bound_consensus) ++violations;
  }
  report("consensus bound", s.certified() && bounds_present && violations == 0 && secs < 300.0,
         std::to_string(agg.size()) + " recorded t, " + std::to_string(violations) + " above the bound");

  const double slope = loglog_slope(agg, 100, 10000, [](const IterationRecord& x) { return x.consensus; });
  report("consensus decay slope", slope <= -0.9, "slope over t in [1e2, 1e4] = " + fmt("%.4f", slope));

  const auto eta = [&](long t) { return step_schedule(s.theory.eta0, t); };
  Trace mean_trace;
  mean_trace.records = agg;
  const double g100 = ergodic_gap(mean_trace, eta, 100);
  const double g_t = ergodic_gap(mean_trace, eta, c.horizon);
  double init = 0.0;
  for (const auto& run : r.outcomes[0].runs) init += run.trace.init_dist_sq_mean / static_cast<double>(c.seeds.size());
  const double bound = gap_bound(s.theory, c.horizon, init);
  std::ostringstream d1, d2;
  d1 << "gap(T=1e4) = " << g_t << " <= bound " << bound;
  d2 << "gap(T=1e4) / gap(T=1e2) = " << g_t / g100 << " <= 0.6";
  report("ergodic gap bound", s.certified() && g_t <= bound && secs < 600.0, d1.str());
  report("ergodic gap decay", g_t <= 0.6 * g100, d2.str());
}

// ---------------------------------------------------------------------------

void flat_space() {
  const ExperimentConfig c = make_preset("desk-euclid-ring");
  const Setup s = build_setup(c);
  const auto& prob = std::get<KarcherProblem<Euclidean>>(s.problem);
  RunConfig rc = make_run_config(c, s, c.algorithms[0], 1);
  rc.init = detail::initial_point(prob, rc);

  std::vector<std::vector<flatref::Vec>> anchors;
  for (int i = 0; i < prob.num_agents(); ++i) {
    anchors.emplace_back();
    for (const Point& a : prob.shard(i)) anchors.back().emplace_back(a.coords.data(), a.coords.data() + a.coords.size());
  }
  const int n = s.mix.n();
  std::vector<flatref::Vec> w(static_cast<std::size_t>(n), flatref::Vec(static_cast<std::size_t>(n)));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) w[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = s.mix.w(i, j);
  const flatref::Vec init(rc.init->coords.data(), rc.init->coords.data() + rc.init->coords.size());
  const flatref::Result ref = flatref::run(anchors, w, init, rc.eta0, rc.s, rc.batch, rc.clip, rc.seed, c.horizon);

  double worst = 0.0;
  for (long t = 1; t <= c.horizon; ++t) {
    RunConfig rt = rc;
    rt.horizon = t;
    const Trace tr = run(prob, s.mix, rt);
    for (int i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < tr.final_states[static_cast<std::size_t>(i)].coords.size(); ++k)
        worst = std::max(worst, std::abs(tr.final_states[static_cast<std::size_t>(i)].coords(k) -
                                         ref.history[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]));
  }
  report("flat-space reference", worst <= 1e-10,
         std::to_string(c.horizon) + " iterations, worst coordinate gap " + fmt("%.3g", worst));
}

// ---------------------------------------------------------------------------

double final_msd_db(const ExperimentResult& r) { return to_db(r.outcomes[0].aggregate.back().msd); }

void desk_pca(const fs::path& out) {
  const auto t0 = std::chrono::steady_clock::now();
  double er_fixed = 0.0, er_dim = 0.0;
  for (const char* g : {"er10", "cycle10"}) {
    double db[2];
    int k = 0;
    for (const char* mode : {"fixed", "diminishing"}) {
      ExperimentConfig c = make_preset(std::string("desk-") + g + "/" + mode);
      c.output_dir = (out / "pca").string();
      const Setup s = build_setup(c);
      db[k++] = final_msd_db(execute(c, s));
    }
    info(std::string(g) + ": final seed-mean MSD fixed " + fmt("%.2f dB", db[0]) + ", diminishing " +
         fmt("%.2f dB", db[1]));
    if (std::string(g) == "er10") {
      er_fixed = db[0];
      er_dim = db[1];
    }
  }
  const double secs = seconds_since(t0);
  report("desk PCA step-size ordering", er_dim <= er_fixed - 5.0 && secs < 600.0,
         "ER(10,0.5): diminishing " + fmt("%.2f", er_dim) + " dB vs fixed " + fmt("%.2f", er_fixed) + " dB" +
             fmt(", %.0f s", secs));
}

// ---------------------------------------------------------------------------

void determinism(const fs::path& out) {
  // rerun one seed of each stochastic acceptance experiment and compare bytes
  struct Rerun {
    std::string preset;
    std::string subdir;
    std::uint64_t seed;
  };
  const std::vector<Rerun> reruns{{"desk-sphere-karcher", "sphere", 7},
                                  {"desk-er10/diminishing", "pca", 3},
                                  {"desk-cycle10/fixed", "pca", 9}};
  std::size_t same = 0;
  for (const auto& rr : reruns) {
    ExperimentConfig c = make_preset(rr.preset);
    c.seeds = {rr.seed};
    c.output_dir = (out / "rerun").string();
    execute(c, build_setup(c));
    const std::string file = trace_file_name(c.algorithms[0].algorithm, c.graph, rr.seed);
    const std::string a = slurp(out / rr.subdir / file);
    if (!a.empty() && a == slurp(out / "rerun" / file)) ++same;
  }
  report("determinism", same == reruns.size(),
         std::to_string(same) + "/" + std::to_string(reruns.size()) + " rerun traces byte-identical");
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::remove_all(out);
  fs::create_directories(out);
  try {
    geometry_core();
    comparison_lemmas();
    variance_lemmas();
    theorems(out);
    flat_space();
    desk_pca(out);
    determinism(out);
  } catch (const std::exception& e) {
    std::printf("FAIL  aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
