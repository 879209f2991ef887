#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "rdiff/runner.hpp"

using namespace rdiff;
namespace fs = std::filesystem;

namespace {

struct Command {
  int status = 0;
  std::string output;
};

Command shell(const std::string& cmd) {
  Command c;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  std::array<char, 512> buf{};
  while (fgets(buf.data(), buf.size(), pipe)) c.output += buf.data();
  const int raw = pclose(pipe);
  c.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rdiff_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  c.manifold = {ManifoldKind::Sphere, 2, 1, 0.785};
  c.problem.m = 6;
  c.problem.radius = 0.3;
  c.problem.seed = 2;
  c.graph.type = "cycle";
  c.graph.n = 4;
  c.horizon = 60;
  c.batch = 2;
  c.record_every = 7;
  c.seeds = {1, 2, 3};
  c.certify_triples = 200;
  c.output_dir = out.string();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Presets, PublishedStepSizes) {
  const auto er_dim = make_preset("er35/diminishing");
  ASSERT_EQ(er_dim.algorithms.size(), 1u);
  EXPECT_EQ(er_dim.algorithms[0].algorithm, Algorithm::DiffusionDiminishing);
  EXPECT_EQ(*er_dim.algorithms[0].eta, 0.1);
  EXPECT_EQ(*er_dim.algorithms[0].s, 0.1);
  EXPECT_EQ(er_dim.graph.p, 0.3);
  EXPECT_EQ(er_dim.manifold.d, 784);
  EXPECT_EQ(er_dim.manifold.p, 5);

  const auto cyc_fixed = make_preset("cycle35/fixed");
  EXPECT_EQ(cyc_fixed.algorithms[0].algorithm, Algorithm::DiffusionFixed);
  EXPECT_EQ(*cyc_fixed.algorithms[0].eta, 0.005);

  const auto er_fixed = make_preset("er35/fixed");
  EXPECT_EQ(*er_fixed.algorithms[0].eta, 0.002);
  EXPECT_EQ(*er_fixed.algorithms[0].s, 0.005);

  for (const char* n : {"er70/fixed", "er100/diminishing", "cycle70/diminishing", "cycle100/fixed"})
    EXPECT_NO_THROW(make_preset(n)) << n;
}

TEST(Presets, UnknownNameIsRejected) {
  for (const char* n : {"er36/fixed", "ring35/fixed", "er35/adaptive", "nope"}) {
    try {
      make_preset(n);
      FAIL() << n;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::UnknownPreset);
    }
  }
}

TEST(Config, JsonRoundTrip) {
  const ExperimentConfig c = make_preset("desk-er10/diminishing");
  const json j = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(j)), j);
  const json auto_steps = config_to_json(make_preset("desk-sphere-karcher"));
  EXPECT_EQ(auto_steps["algorithms"][0]["eta"], "auto");
  EXPECT_FALSE(config_from_json(auto_steps).algorithms[0].eta.has_value());
}

TEST(Config, UnknownKeyIsNamed) {
  json j = config_to_json(make_preset("desk-sphere-karcher"));
  j["graph"]["prob"] = 0.3;
  try {
    config_from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
    EXPECT_NE(std::string(e.what()).find("config.graph.prob"), std::string::npos);
  }
}

TEST(Config, BadValuesAreRejected) {
  json j = config_to_json(make_preset("desk-sphere-karcher"));
  j["horizon"] = 0;
  EXPECT_THROW(config_from_json(j), Error);
  j = config_to_json(make_preset("desk-sphere-karcher"));
  j["manifold"]["diameter"] = 3.5;
  EXPECT_THROW(build_setup(config_from_json(j)), Error);
}

TEST(TraceCsv, RoundTripIsExact) {
  std::vector<IterationRecord> recs(3);
  // t, consensus, frechet_var, msd, fgap_bar, bound_consensus, bound_gap, clip_count, flags
  recs[0] = {1, 0.0, 0.25, 1.0 / 3.0, std::nan(""), std::nan(""), std::nan(""), 0, 0};
  recs[1] = {2, 1e-17, 0.1, 0.2, 123.456, 7.0, 8.0, 5, kFlagStepGuard};
  recs[2] = {3, 0.3, 1e-300, 2e-300, 1.0, 2.0, 3.0, 9, kFlagOutOfDomain | kFlagFrechetResidual};
  const fs::path dir = scratch("csv");
  write_text(dir / "t.csv", trace_csv(recs));
  const auto back = read_trace_csv((dir / "t.csv").string());
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(back[k].t, recs[k].t);
    EXPECT_EQ(back[k].consensus, recs[k].consensus);
    EXPECT_EQ(back[k].frechet_var, recs[k].frechet_var);
    EXPECT_EQ(back[k].msd, recs[k].msd);
    EXPECT_EQ(back[k].clip_count, recs[k].clip_count);
    EXPECT_EQ(back[k].flags, recs[k].flags);
  }
  EXPECT_TRUE(std::isnan(back[0].fgap_bar));
  EXPECT_EQ(back[1].fgap_bar, 123.456);
  EXPECT_EQ(trace_csv(back), trace_csv(recs));
}

TEST(TraceCsv, HeaderIsStable) {
  EXPECT_EQ(std::string(kTraceHeader),
            "t,consensus,consensus_db,frechet_var,msd,msd_db,fgap_bar,bound_consensus,bound_gap,clip_count,flags");
  EXPECT_EQ(format_number(0.1), "0.10000000000000001");
  EXPECT_DOUBLE_EQ(to_db(0.01), -20.0);
  EXPECT_DOUBLE_EQ(to_db(0.0), -3000.0);
}

TEST(Aggregate, MeansFlagsAndDb) {
  std::vector<IterationRecord> a(1), b(1);
  a[0].t = b[0].t = 5;
  a[0].consensus = 1.0;
  b[0].consensus = 3.0;
  a[0].msd = 0.01;
  b[0].msd = 0.03;
  a[0].clip_count = 2;
  b[0].clip_count = 5;
  a[0].flags = kFlagStepGuard;
  const auto agg = aggregate_records({&a, &b});
  EXPECT_DOUBLE_EQ(agg[0].consensus, 2.0);
  EXPECT_DOUBLE_EQ(agg[0].msd, 0.02);
  EXPECT_EQ(agg[0].clip_count, 4);  // 3.5 rounds away from zero
  EXPECT_EQ(agg[0].flags, kFlagStepGuard);
  // dB of the mean, not mean of the dB values
  EXPECT_NE(trace_csv(agg).find(format_number(to_db(0.02))), std::string::npos);
  std::vector<IterationRecord> c(2);
  EXPECT_THROW(aggregate_records({&a, &c}), Error);
}

TEST(Execute, WritesDeterministicFilesIndependentOfThreads) {
  const fs::path d1 = scratch("exec1");
  const fs::path d2 = scratch("exec2");
  ExperimentConfig c = tiny_config(d1);
  const rdiff::Setup s = build_setup(c);
  const ExperimentResult r1 = execute(c, s);
  c.output_dir = d2.string();
  c.threads = 3;
  execute(c, s);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(d1)) {
    EXPECT_EQ(slurp(e.path()), slurp(d2 / e.path().filename())) << e.path();
    ++files;
  }
  EXPECT_EQ(files, 4u);  // three seed traces and one aggregate
  EXPECT_TRUE(fs::exists(d1 / "trace_diffusion_diminishing_cycle4_2.csv"));
  EXPECT_TRUE(fs::exists(d1 / "aggregate_diffusion_diminishing_cycle4.csv"));

  // the aggregate file is the mean of the per-seed files
  const auto agg = read_trace_csv((d1 / "aggregate_diffusion_diminishing_cycle4.csv").string());
  double mean = 0.0;
  for (int seed = 1; seed <= 3; ++seed)
    mean += read_trace_csv((d1 / ("trace_diffusion_diminishing_cycle4_" + std::to_string(seed) + ".csv")).string())
                .back()
                .msd /
            3.0;
  EXPECT_NEAR(agg.back().msd, mean, 1e-15);
  EXPECT_EQ(r1.outcomes[0].runs.size(), 3u);
}

TEST(Execute, BoundsOnlyForTheCertifiedSchedule) {
  ExperimentConfig c = tiny_config(scratch("bounds"));
  c.algorithms = {AlgorithmSpec{Algorithm::DiffusionDiminishing, std::nullopt, std::nullopt},
                  AlgorithmSpec{Algorithm::DiffusionFixed, 0.01, 0.2}};
  const rdiff::Setup s = build_setup(c);
  ASSERT_TRUE(s.certified());
  const ExperimentResult r = execute(c, s, false);
  EXPECT_FALSE(std::isnan(r.outcomes[0].aggregate.back().bound_consensus));
  EXPECT_TRUE(std::isnan(r.outcomes[1].aggregate.back().bound_consensus));
  const json sj = summary_json(c, s, r);
  EXPECT_EQ(sj["constants"]["s"], s.theory.s);
}

#ifdef RDIFF_CLI_PATH

TEST(Cli, ValidateNamesTheSymmetryClause) {
  const fs::path dir = scratch("cli_validate");
  {
    std::ofstream w(dir / "w.csv");
    w << "0.5,0.5,0\n0.3,0.4,0.3\n0.2,0.1,0.7\n";
  }
  json j = config_to_json(make_preset("desk-sphere-karcher"));
  j["graph"] = {{"type", "csv"}, {"path", (dir / "w.csv").string()}};
  std::ofstream(dir / "c.json") << j.dump();
  const Command c = shell(std::string(RDIFF_CLI_PATH) + " validate " + (dir / "c.json").string());
  EXPECT_NE(c.status, 0);
  EXPECT_NE(c.output.find("symmetric"), std::string::npos) << c.output;
}

TEST(Cli, ConstantsForFlatSpace) {
  const Command c = shell(std::string(RDIFF_CLI_PATH) + " constants --preset desk-euclid-ring");
  EXPECT_EQ(c.status, 0) << c.output;
  EXPECT_NE(c.output.find("C1=1\n"), std::string::npos) << c.output;
  EXPECT_NE(c.output.find("C2=1\n"), std::string::npos);
  EXPECT_NE(c.output.find("\ns=0.5\n"), std::string::npos);
}

TEST(Cli, PresetPrintsLoadableJson) {
  const fs::path dir = scratch("cli_preset");
  const Command c = shell(std::string(RDIFF_CLI_PATH) + " preset er35/fixed");
  ASSERT_EQ(c.status, 0);
  const ExperimentConfig back = config_from_json(json::parse(c.output));
  EXPECT_EQ(*back.algorithms[0].eta, 0.002);
  EXPECT_NE(shell(std::string(RDIFF_CLI_PATH) + " preset bogus").status, 0);
}

TEST(Cli, RunWritesSummary) {
  const fs::path dir = scratch("cli_run");
  std::ofstream(dir / "c.json") << config_to_json(tiny_config(dir / "out")).dump();
  const Command c = shell(std::string(RDIFF_CLI_PATH) + " run " + (dir / "c.json").string() + " --seeds 4,5");
  ASSERT_EQ(c.status, 0) << c.output;
  const json s = json::parse(slurp(dir / "out" / "summary.json"));
  EXPECT_TRUE(s.contains("constants"));
  EXPECT_TRUE(fs::exists(dir / "out" / "trace_diffusion_diminishing_cycle4_5.csv"));
}

#endif
