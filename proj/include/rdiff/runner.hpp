#pragma once

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "rdiff/certify.hpp"
#include "rdiff/curvature.hpp"
#include "rdiff/error.hpp"
#include "rdiff/manifolds.hpp"
#include "rdiff/network.hpp"
#include "rdiff/optimizer.hpp"
#include "rdiff/problems.hpp"

namespace rdiff {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Experiment configuration

struct ManifoldSelection {
  ManifoldKind kind = ManifoldKind::Sphere;
  int d = 2;
  int p = 1;
  double diameter = 0.7853981633974483;
};

struct ProblemSpec {
  std::string type = "karcher";  // karcher | pca | pca_csv
  int m = 20;                    // samples (anchors) per agent
  double radius = 0.3;           // karcher anchor radius
  double spike = 2.0;            // pca
  double noise = 1.0;            // pca
  std::string path;              // pca_csv
  std::uint64_t seed = 0;
};

struct GraphSpec {
  std::string type = "cycle";  // er | cycle | complete | csv
  int n = 10;
  double p = 0.3;
  std::string path;
  std::uint64_t seed = 0;

  std::string label() const {
    if (type == "csv") return "csv";
    return type + std::to_string(n);
  }
};

/// `eta` is eta0 for the diminishing schedule and the constant step for the
/// fixed baseline; an absent eta or s means "derive from the constants"
/// (eta0 = min{1, D/G}, s = C2/(2 C1)).
struct AlgorithmSpec {
  Algorithm algorithm = Algorithm::DiffusionDiminishing;
  std::optional<double> eta;
  std::optional<double> s;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ManifoldSelection manifold;
  ProblemSpec problem;
  GraphSpec graph;
  std::vector<AlgorithmSpec> algorithms{AlgorithmSpec{}};
  long horizon = 10000;
  std::size_t batch = 32;
  std::vector<std::uint64_t> seeds{1};
  int record_every = 10;
  bool enforce_assumptions = true;
  bool emit_bounds = true;
  bool check_contraction = false;
  std::optional<double> clip;
  double clip_factor = 2.0;
  double safety = 1.1;
  int n_probe = 100;
  int certify_triples = 2000;
  std::string output_dir = "out";
  int threads = 1;
};

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "diffusion_diminishing") return Algorithm::DiffusionDiminishing;
  if (s == "diffusion_fixed") return Algorithm::DiffusionFixed;
  if (s == "centralized_rsgd") return Algorithm::CentralizedRsgd;
  throw Error(ErrorCode::ConfigError, "unknown algorithm '" + s + "'");
}

inline ManifoldKind parse_manifold_kind(const std::string& s) {
  if (s == "euclidean") return ManifoldKind::Euclidean;
  if (s == "sphere") return ManifoldKind::Sphere;
  if (s == "grassmann") return ManifoldKind::Grassmann;
  throw Error(ErrorCode::ConfigError, "unknown manifold kind '" + s + "'");
}

namespace detail {

/// Typed access to one JSON object that remembers which keys were consumed,
/// so leftovers can be rejected by name.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorCode::ConfigError, path_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ConfigError, path_ + "." + key + ": " + e.what());
    }
  }

  template <class T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    if (j_.at(key).is_string() && j_.at(key).get<std::string>() == "auto") {
      out.reset();
      return;
    }
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ConfigError, path_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw Error(ErrorCode::ConfigError, path_ + "." + it.key() + ": unknown key");
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

/// Schema-checked conversion; unknown keys anywhere are rejected.
inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  detail::ObjectReader r(j, "config");
  r.get("name", c.name);
  if (const json* mj = r.child("manifold")) {
    detail::ObjectReader mr(*mj, "config.manifold");
    std::string kind = to_string(c.manifold.kind);
    mr.get("kind", kind);
    c.manifold.kind = parse_manifold_kind(kind);
    mr.get("d", c.manifold.d);
    mr.get("p", c.manifold.p);
    mr.get("diameter", c.manifold.diameter);
    mr.finish();
  }
  if (const json* pj = r.child("problem")) {
    detail::ObjectReader pr(*pj, "config.problem");
    pr.get("type", c.problem.type);
    pr.get("m", c.problem.m);
    pr.get("radius", c.problem.radius);
    pr.get("spike", c.problem.spike);
    pr.get("noise", c.problem.noise);
    pr.get("path", c.problem.path);
    pr.get("seed", c.problem.seed);
    pr.finish();
    if (c.problem.type != "karcher" && c.problem.type != "pca" && c.problem.type != "pca_csv")
      throw Error(ErrorCode::ConfigError, "config.problem.type: unknown problem '" + c.problem.type + "'");
  }
  if (const json* gj = r.child("graph")) {
    detail::ObjectReader gr(*gj, "config.graph");
    gr.get("type", c.graph.type);
    gr.get("n", c.graph.n);
    gr.get("p", c.graph.p);
    gr.get("path", c.graph.path);
    gr.get("seed", c.graph.seed);
    gr.finish();
    if (c.graph.type != "er" && c.graph.type != "cycle" && c.graph.type != "complete" && c.graph.type != "csv")
      throw Error(ErrorCode::ConfigError, "config.graph.type: unknown graph '" + c.graph.type + "'");
  }
  if (const json* aj = r.child("algorithms")) {
    if (!aj->is_array() || aj->empty())
      throw Error(ErrorCode::ConfigError, "config.algorithms: expected a non-empty array");
    c.algorithms.clear();
    for (std::size_t k = 0; k < aj->size(); ++k) {
      detail::ObjectReader ar((*aj)[k], "config.algorithms[" + std::to_string(k) + "]");
      std::string name = "diffusion_diminishing";
      ar.get("name", name);
      AlgorithmSpec a;
      a.algorithm = parse_algorithm(name);
      ar.get_optional("eta", a.eta);
      ar.get_optional("s", a.s);
      ar.finish();
      c.algorithms.push_back(a);
    }
  }
  r.get("horizon", c.horizon);
  r.get("batch", c.batch);
  r.get("seeds", c.seeds);
  r.get("record_every", c.record_every);
  r.get("enforce_assumptions", c.enforce_assumptions);
  r.get("emit_bounds", c.emit_bounds);
  r.get("check_contraction", c.check_contraction);
  r.get_optional("clip", c.clip);
  r.get("clip_factor", c.clip_factor);
  r.get("safety", c.safety);
  r.get("n_probe", c.n_probe);
  r.get("certify_triples", c.certify_triples);
  r.get("output_dir", c.output_dir);
  r.get("threads", c.threads);
  r.finish();
  if (c.horizon < 1) throw Error(ErrorCode::ConfigError, "config.horizon: must be >= 1");
  if (c.record_every < 1) throw Error(ErrorCode::ConfigError, "config.record_every: must be >= 1");
  if (c.batch < 1) throw Error(ErrorCode::ConfigError, "config.batch: must be >= 1");
  if (c.seeds.empty()) throw Error(ErrorCode::ConfigError, "config.seeds: must list at least one seed");
  for (const auto& a : c.algorithms) {
    if (a.eta && !(*a.eta > 0.0)) throw Error(ErrorCode::ConfigError, "config.algorithms: eta must be > 0");
    if (a.s && !(*a.s >= 0.0)) throw Error(ErrorCode::ConfigError, "config.algorithms: s must be >= 0");
  }
  return c;
}

inline json config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["manifold"] = {{"kind", to_string(c.manifold.kind)},
                   {"d", c.manifold.d},
                   {"p", c.manifold.p},
                   {"diameter", c.manifold.diameter}};
  j["problem"] = {{"type", c.problem.type}, {"m", c.problem.m},         {"radius", c.problem.radius},
                  {"spike", c.problem.spike}, {"noise", c.problem.noise}, {"path", c.problem.path},
                  {"seed", c.problem.seed}};
  j["graph"] = {{"type", c.graph.type}, {"n", c.graph.n}, {"p", c.graph.p}, {"path", c.graph.path}, {"seed", c.graph.seed}};
  j["algorithms"] = json::array();
  for (const auto& a : c.algorithms) {
    json aj = {{"name", to_string(a.algorithm)}};
    aj["eta"] = a.eta ? json(*a.eta) : json("auto");
    aj["s"] = a.s ? json(*a.s) : json("auto");
    j["algorithms"].push_back(aj);
  }
  j["horizon"] = c.horizon;
  j["batch"] = c.batch;
  j["seeds"] = c.seeds;
  j["record_every"] = c.record_every;
  j["enforce_assumptions"] = c.enforce_assumptions;
  j["emit_bounds"] = c.emit_bounds;
  j["check_contraction"] = c.check_contraction;
  j["clip"] = c.clip ? json(*c.clip) : json("auto");
  j["clip_factor"] = c.clip_factor;
  j["safety"] = c.safety;
  j["n_probe"] = c.n_probe;
  j["certify_triples"] = c.certify_triples;
  j["output_dir"] = c.output_dir;
  j["threads"] = c.threads;
  return j;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, path + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Presets

/// Experiment presets. The full-size names run Grassmann(784,5) PCA with
/// n in {35,70,100} and ER edge probability 0.3, on spiked synthetic data
/// shaped like MNIST. The desk-* names are small instances.
inline ExperimentConfig make_preset(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  c.horizon = 10000;
  c.batch = 32;
  c.record_every = 10;
  const auto slash = name.find('/');
  const std::string graph = name.substr(0, slash);
  const std::string mode = slash == std::string::npos ? "" : name.substr(slash + 1);

  auto pca_graph = [&](const std::string& g, int n_default) -> bool {
    if (g.rfind("er", 0) == 0) {
      c.graph.type = "er";
    } else if (g.rfind("cycle", 0) == 0) {
      c.graph.type = "cycle";
    } else {
      return false;
    }
    const std::string digits = g.substr(c.graph.type.size());
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) return false;
    c.graph.n = std::stoi(digits);
    (void)n_default;
    return true;
  };

  if (name == "desk-sphere-karcher") {
    // certified geodesically convex instance for the consensus / gap bounds
    c.manifold = {ManifoldKind::Sphere, 2, 1, 0.7853981633974483};
    c.problem.type = "karcher";
    c.problem.m = 400;
    c.problem.radius = 0.35;
    c.problem.seed = 11;
    c.graph.type = "cycle";
    c.graph.n = 10;
    c.algorithms = {AlgorithmSpec{Algorithm::DiffusionDiminishing, std::nullopt, std::nullopt}};
    c.batch = 1;
    c.record_every = 1;
    c.seeds.clear();
    for (std::uint64_t s = 1; s <= 20; ++s) c.seeds.push_back(s);
    return c;
  }
  if (name == "desk-euclid-ring") {
    c.manifold = {ManifoldKind::Euclidean, 3, 1, 4.0};
    c.problem.type = "karcher";
    c.problem.m = 8;
    c.problem.radius = 1.5;
    c.problem.seed = 5;
    c.graph.type = "cycle";
    c.graph.n = 4;
    c.algorithms = {AlgorithmSpec{Algorithm::DiffusionDiminishing, std::nullopt, std::nullopt}};
    c.batch = 2;
    c.horizon = 200;
    c.record_every = 1;
    return c;
  }
  if (name.rfind("desk-", 0) == 0 && (mode == "fixed" || mode == "diminishing")) {
    if (!pca_graph(graph.substr(5), 10) || c.graph.n != 10) throw Error(ErrorCode::UnknownPreset, name);
    c.manifold = {ManifoldKind::Grassmann, 20, 3, 1.0};
    c.problem.type = "pca";
    c.problem.m = 500;
    c.problem.spike = 2.0;
    c.problem.noise = 1.0;
    c.problem.seed = 3;
    if (c.graph.type == "er") c.graph.p = 0.5;
    c.graph.seed = 4;
    c.horizon = 5000;
    c.record_every = 10;
    c.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const bool er = c.graph.type == "er";
    if (mode == "fixed")
      c.algorithms = {AlgorithmSpec{Algorithm::DiffusionFixed, er ? 0.002 : 0.005, 0.005}};
    else
      c.algorithms = {AlgorithmSpec{Algorithm::DiffusionDiminishing, er ? 0.1 : 0.05, er ? 0.1 : 0.05}};
    return c;
  }
  if (mode == "fixed" || mode == "diminishing") {
    if (!pca_graph(graph, 0)) throw Error(ErrorCode::UnknownPreset, name);
    if (c.graph.n != 35 && c.graph.n != 70 && c.graph.n != 100) throw Error(ErrorCode::UnknownPreset, name);
    c.manifold = {ManifoldKind::Grassmann, 784, 5, 1.0};
    c.problem.type = "pca";
    c.problem.m = 60000 / c.graph.n;
    // unit noise in 784 dimensions swamps a batch-32 gradient; 0.25 is near
    // the per-pixel spread of scaled, centered MNIST
    c.problem.spike = 2.0;
    c.problem.noise = 0.25;
    if (c.graph.type == "er") c.graph.p = 0.3;
    const bool er = c.graph.type == "er";
    if (mode == "fixed")
      c.algorithms = {AlgorithmSpec{Algorithm::DiffusionFixed, er ? 0.002 : 0.005, 0.005}};
    else
      c.algorithms = {AlgorithmSpec{Algorithm::DiffusionDiminishing, er ? 0.1 : 0.05, er ? 0.1 : 0.05}};
    return c;
  }
  throw Error(ErrorCode::UnknownPreset, "unknown preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// Instantiation

using AnyProblem = std::variant<PcaProblem, KarcherProblem<Euclidean>, KarcherProblem<Sphere>, KarcherProblem<Grassmann>>;

struct Setup {
  AnyProblem problem;
  Graph graph;
  MixingMatrix mix;
  ManifoldSpec spec;
  GeometryConstants geometry;
  GradientBounds bounds;
  TheoremConstants theory;
  LemmaCertificate certificate;
  /// First violated step guard, empty when all hold.
  std::string guard_issue;

  bool certified() const { return certificate.certified() && guard_issue.empty(); }
};

inline Graph build_graph(const GraphSpec& g, Eigen::MatrixXd* imported) {
  if (g.type == "er") return gen_er(g.n, g.p, Rng(g.seed));
  if (g.type == "cycle") return gen_cycle(g.n);
  if (g.type == "complete") return gen_complete(g.n);
  if (g.type == "csv") {
    *imported = read_matrix_csv(g.path);
    validate_mixing(*imported);
    return graph_from_weights(*imported);
  }
  throw Error(ErrorCode::ConfigError, "unknown graph type " + g.type);
}

inline AnyProblem build_problem(const ExperimentConfig& c, int n_agents) {
  const auto& ms = c.manifold;
  const auto& ps = c.problem;
  const Rng rng(ps.seed);
  if (ps.type == "pca" || ps.type == "pca_csv") {
    if (ms.kind != ManifoldKind::Grassmann) throw Error(ErrorCode::ConfigError, "PCA requires the grassmann manifold");
    PcaProblem prob = [&] {
      if (ps.type == "pca") {
        SpikedData data = gen_spiked_data(ms.d, ms.p, n_agents, ps.m, ps.spike, ps.noise, rng);
        return PcaProblem(Grassmann(ms.d, ms.p), std::move(data.shards), std::move(data.optimum));
      }
      return pca_from_matrix(read_matrix_csv(ps.path), ms.p, n_agents, rng);
    }();
    if (prob.manifold().dim_d() != ms.d)
      throw Error(ErrorCode::ConfigError, "config.manifold.d does not match the data dimension");
    // the configured ball: common start, bound probes and domain flags all use it
    prob.set_domain(Domain{*prob.optimum(), 0.5 * ms.diameter});
    return prob;
  }
  switch (ms.kind) {
    case ManifoldKind::Euclidean:
      return gen_karcher_problem(Euclidean(ms.d), n_agents, ps.m, ps.radius, ms.diameter, rng);
    case ManifoldKind::Sphere:
      return gen_karcher_problem(Sphere(ms.d), n_agents, ps.m, ps.radius, ms.diameter, rng);
    case ManifoldKind::Grassmann:
      return gen_karcher_problem(Grassmann(ms.d, ms.p), n_agents, ps.m, ps.radius, ms.diameter, rng);
  }
  throw Error(ErrorCode::ConfigError, "unknown manifold");
}

/// Builds graph, W, problem and every constant, validating each assumption
/// on the way. Lemma certification failures are recorded, not thrown.
inline Setup build_setup(const ExperimentConfig& c) {
  Eigen::MatrixXd imported;
  Graph graph = build_graph(c.graph, &imported);
  MixingMatrix mix = c.graph.type == "csv" ? make_mixing(imported) : metropolis_weights(graph);
  validate_mixing(mix.w, &graph);
  AnyProblem problem = build_problem(c, graph.n);
  return std::visit(
      [&](auto& prob) -> Setup {
        const auto& m = prob.manifold();
        Setup s{prob, graph, mix, m.spec(c.manifold.diameter), {}, {}, {}, {}, {}};
        s.geometry = compute_constants(s.spec);
        BoundEstimateOptions bo;
        bo.n_probe = c.n_probe;
        bo.safety = c.safety;
        bo.clip_factor = c.clip_factor;
        s.bounds = estimate_bounds(prob, c.batch, Rng(c.problem.seed).split({0xe57ULL}), bo);
        if (c.clip) s.bounds.g = *c.clip;
        s.theory = make_theorem_constants(s.geometry, mix.sigma2, s.bounds.delta, s.bounds.sigma, graph.n, s.bounds.g);
        s.guard_issue = check_step_guards(s.theory, s.spec.inj);
        Rng cert_rng = Rng(c.problem.seed).split({0xce7ULL});
        const Point center = prob.domain() ? prob.domain()->center
                                           : (prob.optimum() ? *prob.optimum() : m.random_point(cert_rng));
        s.certificate = certify_lemmas(m, s.geometry, center, static_cast<std::size_t>(c.certify_triples), cert_rng);
        return s;
      },
      problem);
}

// ---------------------------------------------------------------------------
// Trace files

inline constexpr double kDbFloor = 1e-300;

inline double to_db(double x) { return 10.0 * std::log10(std::max(x, kDbFloor)); }

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline const char* kTraceHeader =
    "t,consensus,consensus_db,frechet_var,msd,msd_db,fgap_bar,bound_consensus,bound_gap,clip_count,flags";

inline std::string trace_csv(const std::vector<IterationRecord>& records) {
  std::string out = std::string(kTraceHeader) + "\n";
  for (const auto& r : records) {
    out += std::to_string(r.t) + "," + format_number(r.consensus) + "," + format_number(to_db(r.consensus)) + "," +
           format_number(r.frechet_var) + "," + format_number(r.msd) + "," +
           format_number(std::isnan(r.msd) ? r.msd : to_db(r.msd)) + "," + format_number(r.fgap_bar) + "," +
           format_number(r.bound_consensus) + "," + format_number(r.bound_gap) + "," +
           std::to_string(r.clip_count) + "," + flags_to_string(r.flags) + "\n";
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

inline std::uint32_t parse_flags(const std::string& s) {
  if (s == "none") return 0;
  std::uint32_t f = 0;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, '|')) {
    if (tok == "out_of_domain") f |= kFlagOutOfDomain;
    else if (tok == "step_guard") f |= kFlagStepGuard;
    else if (tok == "contraction") f |= kFlagContraction;
    else if (tok == "frechet_residual") f |= kFlagFrechetResidual;
    else throw Error(ErrorCode::IoError, "unknown flag '" + tok + "'");
  }
  return f;
}

inline std::vector<IterationRecord> read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader) throw Error(ErrorCode::IoError, path + ": bad header");
  std::vector<IterationRecord> out;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 11) throw Error(ErrorCode::IoError, path + ": expected 11 columns");
    IterationRecord r;
    r.t = std::stol(cells[0]);
    r.consensus = std::stod(cells[1]);
    r.frechet_var = std::stod(cells[3]);
    r.msd = std::stod(cells[4]);
    r.fgap_bar = std::stod(cells[6]);
    r.bound_consensus = std::stod(cells[7]);
    r.bound_gap = std::stod(cells[8]);
    r.clip_count = std::stol(cells[9]);
    r.flags = parse_flags(cells[10]);
    out.push_back(r);
  }
  return out;
}

/// Per-t arithmetic mean of the linear metrics over seeds; flags are OR-ed and
/// the dB columns are taken of the averaged values.
inline std::vector<IterationRecord> aggregate_records(const std::vector<const std::vector<IterationRecord>*>& runs) {
  if (runs.empty()) return {};
  const std::size_t len = runs.front()->size();
  for (const auto* r : runs)
    if (r->size() != len) throw Error(ErrorCode::DimensionMismatch, "seed traces have different record grids");
  std::vector<IterationRecord> agg(len);
  const double k = static_cast<double>(runs.size());
  for (std::size_t i = 0; i < len; ++i) {
    IterationRecord a;
    a.t = (*runs.front())[i].t;
    a.consensus = a.frechet_var = a.msd = a.fgap_bar = a.bound_consensus = a.bound_gap = 0.0;
    double clips = 0.0;
    for (const auto* r : runs) {
      const auto& x = (*r)[i];
      if (x.t != a.t) throw Error(ErrorCode::DimensionMismatch, "seed traces have different record grids");
      a.consensus += x.consensus;
      a.frechet_var += x.frechet_var;
      a.msd += x.msd;
      a.fgap_bar += x.fgap_bar;
      a.bound_consensus += x.bound_consensus;
      a.bound_gap += x.bound_gap;
      clips += static_cast<double>(x.clip_count);
      a.flags |= x.flags;
    }
    a.consensus /= k;
    a.frechet_var /= k;
    a.msd /= k;
    a.fgap_bar /= k;
    a.bound_consensus /= k;
    a.bound_gap /= k;
    a.clip_count = std::lround(clips / k);
    agg[i] = a;
  }
  return agg;
}

// ---------------------------------------------------------------------------
// Execution

struct SeedRun {
  Algorithm algorithm;
  std::uint64_t seed = 0;
  Trace trace;
};

struct AlgorithmOutcome {
  Algorithm algorithm;
  double eta = 0.0;
  double s = 0.0;
  std::vector<SeedRun> runs;
  std::vector<IterationRecord> aggregate;
};

struct ExperimentResult {
  std::vector<AlgorithmOutcome> outcomes;
  double wall_time_s = 0.0;
};

inline RunConfig make_run_config(const ExperimentConfig& c, const Setup& s, const AlgorithmSpec& a, std::uint64_t seed) {
  RunConfig rc;
  rc.algorithm = a.algorithm;
  rc.horizon = c.horizon;
  rc.eta0 = a.eta.value_or(s.theory.eta0);
  rc.eta_fixed = a.eta.value_or(s.theory.eta0);
  rc.s = a.s.value_or(s.theory.s);
  rc.batch = c.batch;
  rc.clip = s.bounds.g;
  rc.seed = seed;
  rc.record_every = c.record_every;
  rc.enforce_assumptions = c.enforce_assumptions;
  rc.check_contraction = c.check_contraction;
  if (c.emit_bounds) rc.theory = s.theory;
  // the bound only applies to the schedule it was derived for
  rc.theory_certified = s.certified() && a.algorithm == Algorithm::DiffusionDiminishing && !a.eta && !a.s;
  return rc;
}

inline Trace run_one(const Setup& s, const RunConfig& rc) {
  return std::visit(
      [&](const auto& prob) {
        return rc.algorithm == Algorithm::CentralizedRsgd ? run_centralized(prob, rc) : run(prob, s.mix, rc);
      },
      s.problem);
}

inline std::string trace_file_name(Algorithm a, const GraphSpec& g, std::uint64_t seed) {
  return std::string("trace_") + to_string(a) + "_" + g.label() + "_" + std::to_string(seed) + ".csv";
}

inline std::string aggregate_file_name(Algorithm a, const GraphSpec& g) {
  return std::string("aggregate_") + to_string(a) + "_" + g.label() + ".csv";
}

/// Runs every (algorithm, seed) pair, in parallel over `c.threads` workers.
/// Traces go to their own files as they finish; aggregates are written last.
inline ExperimentResult execute(const ExperimentConfig& c, const Setup& s, bool write_files = true) {
  const auto t0 = std::chrono::steady_clock::now();
  namespace fs = std::filesystem;
  const fs::path out_dir(c.output_dir);
  if (write_files) fs::create_directories(out_dir);

  ExperimentResult res;
  struct Job {
    std::size_t alg;
    std::size_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t a = 0; a < c.algorithms.size(); ++a) {
    AlgorithmOutcome o;
    o.algorithm = c.algorithms[a].algorithm;
    const RunConfig probe = make_run_config(c, s, c.algorithms[a], 0);
    o.eta = o.algorithm == Algorithm::DiffusionFixed ? probe.eta_fixed : probe.eta0;
    o.s = probe.s;
    o.runs.resize(c.seeds.size());
    res.outcomes.push_back(std::move(o));
    for (std::size_t k = 0; k < c.seeds.size(); ++k) jobs.push_back({a, k});
  }

  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::optional<Error> failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      const Job job = jobs[j];
      const auto& spec = c.algorithms[job.alg];
      const std::uint64_t seed = c.seeds[job.seed];
      try {
        SeedRun r{spec.algorithm, seed, run_one(s, make_run_config(c, s, spec, seed))};
        if (write_files)
          write_text(out_dir / trace_file_name(spec.algorithm, c.graph, seed), trace_csv(r.trace.records));
        res.outcomes[job.alg].runs[job.seed] = std::move(r);
      } catch (const Error& e) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!failure) failure = e;
      }
    }
  };
  const int threads = std::max(1, std::min<int>(c.threads, static_cast<int>(jobs.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) throw *failure;

  for (auto& o : res.outcomes) {
    std::vector<const std::vector<IterationRecord>*> runs;
    for (const auto& r : o.runs) runs.push_back(&r.trace.records);
    o.aggregate = aggregate_records(runs);
    if (write_files) write_text(out_dir / aggregate_file_name(o.algorithm, c.graph), trace_csv(o.aggregate));
  }
  res.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline json constants_json(const Setup& s) {
  const auto& g = s.geometry;
  const auto& t = s.theory;
  return {{"C1", g.c1},
          {"C2", g.c2},
          {"C3", g.c3},
          {"C4", g.c4},
          {"D", g.diameter},
          {"K_min", g.k_min},
          {"K_max", g.k_max},
          {"xi", t.xi},
          {"C_of_xi", t.c_of_xi},
          {"B", t.b},
          {"rho1", t.rho1},
          {"rho2", t.rho2},
          {"s", t.s},
          {"eta0", t.eta0},
          {"sigma2_W", t.sigma2w},
          {"delta", t.delta},
          {"sigma", t.sigma},
          {"G", t.g},
          {"n", t.n}};
}

inline json summary_json(const ExperimentConfig& c, const Setup& s, const ExperimentResult& r) {
  json j;
  j["name"] = c.name;
  j["graph"] = c.graph.label();
  j["constants"] = constants_json(s);
  j["certified"] = s.certified();
  j["lemma_certificate"] = {{"trials", s.certificate.trials},
                            {"cosine_upper_failures", s.certificate.cosine_upper_failures},
                            {"cosine_lower_failures", s.certificate.cosine_lower_failures},
                            {"log_lipschitz_failures", s.certificate.log_lipschitz_failures}};
  j["step_guard_issue"] = s.guard_issue;
  j["algorithms"] = json::array();
  for (const auto& o : r.outcomes) {
    json a;
    a["algorithm"] = to_string(o.algorithm);
    a["eta"] = o.eta;
    a["s"] = o.s;
    const IterationRecord& last = o.aggregate.back();
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    a["final"] = {{"t", last.t},
                  {"consensus", num(last.consensus)},
                  {"consensus_db", num(to_db(last.consensus))},
                  {"frechet_var", num(last.frechet_var)},
                  {"msd", num(last.msd)},
                  {"msd_db", std::isnan(last.msd) ? json(nullptr) : num(to_db(last.msd))},
                  {"fgap_bar", num(last.fgap_bar)}};
    long violations = 0;
    long clips = 0;
    std::uint32_t flags = 0;
    for (const auto& run : o.runs) {
      clips += run.trace.clip_count;
      flags |= run.trace.flags;
      for (const auto& rec : run.trace.records)
        if (!std::isnan(rec.bound_consensus) && rec.frechet_var > rec.bound_consensus) ++violations;
    }
    long mean_violations = 0;
    for (const auto& rec : o.aggregate)
      if (!std::isnan(rec.bound_consensus) && rec.frechet_var > rec.bound_consensus) ++mean_violations;
    a["bound_violations_per_seed_records"] = violations;
    a["bound_violations_seed_mean"] = mean_violations;
    a["clip_count"] = clips;
    a["flags"] = flags_to_string(flags);
    j["algorithms"].push_back(a);
  }
  j["wall_time_s"] = r.wall_time_s;
  return j;
}

}  // namespace rdiff
