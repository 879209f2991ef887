// Command-line front end: run, validate, constants, lemmas, preset.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rdiff/certify.hpp"
#include "rdiff/runner.hpp"

namespace {

struct CommonOptions {
  std::string config;
  std::string preset;
  std::string seeds;
  std::string out;
  int record_every = 0;
  int threads = 0;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("config_file", o.config, "Experiment config (JSON)");
  app->add_option("--config", o.config, "Experiment config (JSON)");
  app->add_option("--preset", o.preset, "Named preset, e.g. er35/diminishing or desk-er10/fixed");
  app->add_option("--seeds", o.seeds, "Comma-separated seed list overriding the config");
  app->add_option("--out", o.out, "Output directory");
  app->add_option("--record-every", o.record_every, "Record metrics every k iterations");
  app->add_option("--threads", o.threads, "Worker threads (seeds run in parallel)");
}

rdiff::ExperimentConfig resolve(const CommonOptions& o) {
  if (o.config.empty() == o.preset.empty())
    throw rdiff::Error(rdiff::ErrorCode::ConfigError, "give exactly one of a config file or --preset");
  rdiff::ExperimentConfig c = o.config.empty() ? rdiff::make_preset(o.preset) : rdiff::load_config(o.config);
  if (!o.seeds.empty()) {
    c.seeds.clear();
    std::stringstream ss(o.seeds);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        c.seeds.push_back(std::stoull(tok));
      } catch (const std::exception&) {
        throw rdiff::Error(rdiff::ErrorCode::ConfigError, "--seeds: not an integer: '" + tok + "'");
      }
    }
  }
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.record_every > 0) c.record_every = o.record_every;
  if (o.threads > 0) c.threads = o.threads;
  return c;
}

void print_constants(const rdiff::Setup& s) {
  const auto& g = s.geometry;
  const auto& t = s.theory;
  std::cout << "C1=" << g.c1 << "\nC2=" << g.c2 << "\nC3=" << g.c3 << "\nC4=" << g.c4 << "\nD=" << g.diameter
            << "\nxi=" << t.xi << "\nC(xi)=" << t.c_of_xi << "\nB=" << t.b << "\nrho1=" << t.rho1
            << "\nrho2=" << t.rho2 << "\ns=" << t.s << "\neta0=" << t.eta0 << "\nsigma2(W)=" << t.sigma2w
            << "\ndelta=" << t.delta << "\nsigma=" << t.sigma << "\nG=" << t.g << "\nn=" << t.n << "\n";
}

int cmd_validate(const rdiff::ExperimentConfig& c) {
  const rdiff::Setup s = rdiff::build_setup(c);
  std::cout << "network: n=" << s.graph.n << " edges=" << s.graph.edges.size() << " sigma2(W)=" << s.mix.sigma2
            << " ok\n";
  std::cout << "manifold: " << rdiff::to_string(s.spec.kind) << " D=" << s.spec.diameter << " inj=" << s.spec.inj
            << " ok\n";
  std::cout << "gradients: delta=" << s.bounds.delta << " sigma=" << s.bounds.sigma << " G=" << s.bounds.g << "\n";
  std::cout << "lemma certificate: " << (s.certificate.certified() ? "passed" : "FAILED") << " ("
            << s.certificate.trials << " triples)\n";
  if (!s.guard_issue.empty()) std::cout << "step guard: " << s.guard_issue << "\n";
  std::cout << "theory bounds: " << (s.certified() ? "certified" : "not certified") << "\n";
  return 0;
}

int cmd_lemmas(const rdiff::ExperimentConfig& c, std::size_t triples, std::size_t configs) {
  const rdiff::Setup s = rdiff::build_setup(c);
  bool all = true;
  std::visit(
      [&](const auto& prob) {
        const auto& m = prob.manifold();
        rdiff::Rng rng = rdiff::Rng(c.problem.seed).split({0x1e3ULL});
        const rdiff::Point center = prob.domain() ? prob.domain()->center : m.random_point(rng);
        const rdiff::LemmaCertificate cert = rdiff::certify_lemmas(m, s.geometry, center, triples, rng);
        auto rate = [](std::size_t fails, std::size_t n) {
          return 100.0 * static_cast<double>(n - fails) / static_cast<double>(n);
        };
        std::cout << "cosine law (upper, C1): " << rate(cert.cosine_upper_failures, triples) << "% of " << triples
                  << "\n";
        std::cout << "cosine law (lower, C2): " << rate(cert.cosine_lower_failures, triples) << "% of " << triples
                  << "\n";
        std::cout << "log-map Lipschitz (C3, C4): " << rate(cert.log_lipschitz_failures, triples) << "% of "
                  << triples << "\n";
        const rdiff::VarianceSuiteResult v = rdiff::variance_suite(m, s.geometry, s.mix, configs, rng);
        std::cout << "variance lower bound: " << rate(v.lower_failures, configs) << "% of " << configs << "\n";
        std::cout << "variance upper bound: " << rate(v.upper_failures, configs) << "% of " << configs << "\n";
        std::cout << "consensus contraction (rho1): " << rate(v.contraction_failures, configs) << "% of " << configs
                  << "\n";
        all = cert.certified() && v.passed();
      },
      s.problem);
  return all ? 0 : 3;
}

int cmd_run(const rdiff::ExperimentConfig& c) {
  const rdiff::Setup s = rdiff::build_setup(c);
  const rdiff::ExperimentResult r = rdiff::execute(c, s);
  const rdiff::json summary = rdiff::summary_json(c, s, r);
  rdiff::write_text(std::filesystem::path(c.output_dir) / "summary.json", summary.dump(2) + "\n");
  for (const auto& a : summary["algorithms"]) {
    std::cout << a["algorithm"].get<std::string>() << ": final consensus_db=" << a["final"]["consensus_db"]
              << " msd_db=" << a["final"]["msd_db"] << " clips=" << a["clip_count"] << "\n";
  }
  std::cout << "wrote " << c.output_dir << " in " << r.wall_time_s << " s\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized Riemannian diffusion with diminishing step sizes"};
  app.require_subcommand(1);

  CommonOptions run_o, val_o, const_o, lem_o;
  auto* run = app.add_subcommand("run", "Run an experiment and write trace CSVs and summary.json");
  add_common(run, run_o);
  auto* val = app.add_subcommand("validate", "Check every assumption for a config");
  add_common(val, val_o);
  auto* cst = app.add_subcommand("constants", "Print the geometric and theorem constants");
  add_common(cst, const_o);
  auto* lem = app.add_subcommand("lemmas", "Run the Monte-Carlo lemma suites and print pass rates");
  add_common(lem, lem_o);
  std::size_t triples = 10000;
  std::size_t configs = 500;
  lem->add_option("--triples", triples, "Random triples for the comparison lemmas");
  lem->add_option("--configs", configs, "Random configurations for the variance suites");
  std::string preset_name;
  auto* pre = app.add_subcommand("preset", "Print a preset as a JSON config");
  pre->add_option("name", preset_name)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(resolve(run_o));
    if (*val) return cmd_validate(resolve(val_o));
    if (*cst) {
      const rdiff::Setup s = rdiff::build_setup(resolve(const_o));
      print_constants(s);
      return 0;
    }
    if (*lem) return cmd_lemmas(resolve(lem_o), triples, configs);
    if (*pre) {
      std::cout << rdiff::config_to_json(rdiff::make_preset(preset_name)).dump(2) << "\n";
      return 0;
    }
  } catch (const rdiff::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
