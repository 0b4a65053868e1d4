#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "dyson/harness.hpp"

#ifndef DYSON_LAB_EXE
#error "DYSON_LAB_EXE must point at the dyson-lab binary"
#endif

namespace fs = std::filesystem;
using namespace dyson;
using harness::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dyson_harness_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

int run_lab(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(DYSON_LAB_EXE) + " " + args + " -q 2>/dev/null";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

json read_json(const fs::path& p) { return json::parse(io::read_file(p.string())); }

json verify_config() {
  return {{"ensemble", {{"law", "standard_gaussian"}}},
          {"query", {{"sizes", {8}}, {"z_per_matrix", 10}}},
          {"replicas", 20},
          {"seed", 1}};
}

json small_evolve() {
  return {{"ensemble", {{"n", 20}, {"sampler", "beta"}}},
          {"flow", {{"t_end", 0.2}, {"snapshot_times", {0.1, 0.2}}}},
          {"query", {{"shift", 0.5}}},
          {"replicas", 6},
          {"seed", 3}};
}

}  // namespace

TEST(Config, DefaultsAndValidation) {
  auto c = harness::config_from_json({{"experiment", "sample"}});
  EXPECT_EQ(c.replicas, 1u);
  EXPECT_EQ(c.query.at("write_matrices"), false);
  EXPECT_THROW(harness::config_from_json({{"experiment", "nope"}}), ValidationError);
  EXPECT_THROW(harness::config_from_json({{"experiment", "sample"}, {"replicas", 0}}), ValidationError);
  EXPECT_THROW(harness::config_from_json({{"experiment", "sample"}, {"replicas", -3}}), ValidationError);
  EXPECT_THROW(harness::config_from_json({{"experiment", "sample"}, {"bogus", 1}}), ValidationError);
  EXPECT_THROW(harness::config_from_json({{"experiment", "sample"}, {"query", {{"eta", 0.1}}}}), ValidationError);
  EXPECT_THROW(harness::config_from_json({{"experiment", "gaps"}, {"query", {{"E", "zero"}}}}), ValidationError);
  EXPECT_THROW(harness::config_from_json({{"experiment", "sample"}, {"ensemble", {{"law", "cauchy"}}}}), ValidationError);
  EXPECT_THROW(harness::config_from_json({{"experiment", "evolve"}, {"flow", {{"snapshot_times", {5.0}}}}}),
               ValidationError);
}

TEST(Config, ShippedConfigsLoad) {
  std::size_t seen = 0;
  for (const auto& e : fs::directory_iterator(DYSON_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    auto j = read_json(e.path());
    j["experiment"] = e.path().stem().string();
    EXPECT_NO_THROW(harness::config_from_json(j)) << e.path();
    ++seen;
  }
  EXPECT_EQ(seen, harness::experiment_names().size());
}

TEST(Config, HashIgnoresWorkersAndOutput) {
  auto a = harness::config_from_json({{"experiment", "sample"}, {"workers", 1}, {"out", "x"}});
  auto b = harness::config_from_json({{"experiment", "sample"}, {"workers", 4}, {"out", "y"}});
  auto c = harness::config_from_json({{"experiment", "sample"}, {"seed", 9}});
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
}

TEST(Config, OutputDirPrecedence) {
  ::unsetenv(harness::kOutEnv);
  EXPECT_EQ(harness::resolve_out_dir(std::nullopt, ""), harness::kDefaultOut);
  ::setenv(harness::kOutEnv, "from_env", 1);
  EXPECT_EQ(harness::resolve_out_dir(std::nullopt, ""), "from_env");
  EXPECT_EQ(harness::resolve_out_dir(std::nullopt, "from_cfg"), "from_cfg");
  EXPECT_EQ(harness::resolve_out_dir(std::string("from_cli"), "from_cfg"), "from_cli");
  ::unsetenv(harness::kOutEnv);
}

TEST(Replicas, PartialFailureKeepsCompleted) {
  for (std::size_t w : {1u, 3u}) {
    try {
      harness::run_replicas<int>(8, w, [](std::size_t i) {
        if (i == 2 || i == 5) throw NumericalError("boom");
        return static_cast<int>(i);
      });
      FAIL() << "expected ReplicaError";
    } catch (const harness::ReplicaError& e) {
      EXPECT_EQ(e.failed_index, 2u);
      EXPECT_EQ(e.completed, (std::vector<std::size_t>{0, 1, 3, 4, 6, 7}));
      EXPECT_THROW(std::rethrow_exception(e.first), NumericalError);
    }
  }
}

TEST(Replicas, ResultsIndexedNotScheduled) {
  auto v = harness::run_replicas<std::size_t>(50, 4, [](std::size_t i) { return i * i; });
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v[i], i * i);
}

TEST(Cli, VerifyIdentitiesPasses) {
  const auto dir = scratch("verify");
  const auto cfg = write_config(dir, verify_config());
  EXPECT_EQ(run_lab("verify-identities --config " + cfg.string() + " --out " + (dir / "out").string()), 0);
  const auto s = read_json(dir / "out" / "summary.json");
  EXPECT_EQ(s.at("failures"), 0);
  EXPECT_EQ(s.at("checks"), 20 * 8 * 11);
  EXPECT_LE(s.at("worst_resolvent_rel").get<double>(), 1e-10);
}

TEST(Cli, ZeroReplicasIsValidationError) {
  const auto dir = scratch("zero");
  auto j = small_evolve();
  const auto cfg = write_config(dir, j);
  EXPECT_EQ(run_lab("evolve --config " + cfg.string() + " --replicas 0 --out " + (dir / "o").string()), 2);
  j["replicas"] = 0;
  const auto cfg0 = write_config(dir, j);
  EXPECT_EQ(run_lab("evolve --config " + cfg0.string() + " --out " + (dir / "o").string()), 2);
}

TEST(Cli, UsageErrors) {
  const auto dir = scratch("usage");
  const auto cfg = write_config(dir, verify_config());
  EXPECT_EQ(run_lab("no-such-experiment --config " + cfg.string()), 2);
  EXPECT_EQ(run_lab("verify-identities --config " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(run_lab("verify-identities"), 2);
  std::ofstream(dir / "bad.json") << "{not json";
  EXPECT_EQ(run_lab("verify-identities --config " + (dir / "bad.json").string()), 2);
}

TEST(Cli, RepeatRunIsByteIdentical) {
  const auto dir = scratch("repeat");
  const auto cfg = write_config(dir, small_evolve());
  ASSERT_EQ(run_lab("evolve --config " + cfg.string() + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run_lab("evolve --config " + cfg.string() + " --out " + (dir / "b").string()), 0);
  for (const char* f : {"summary.json", "moments.csv", "estimates.csv"})
    EXPECT_EQ(io::read_file((dir / "a" / f).string()), io::read_file((dir / "b" / f).string())) << f;
  EXPECT_EQ(read_json(dir / "a" / "manifest.json").at("manifest_hash"),
            read_json(dir / "b" / "manifest.json").at("manifest_hash"));
}

TEST(Cli, WorkerCountDoesNotChangeSummary) {
  const auto dir = scratch("workers");
  const auto cfg = write_config(dir, small_evolve());
  ASSERT_EQ(run_lab("evolve --config " + cfg.string() + " --workers 1 --out " + (dir / "w1").string()), 0);
  ASSERT_EQ(run_lab("evolve --config " + cfg.string() + " --workers 3 --out " + (dir / "w3").string()), 0);
  const auto a = read_json(dir / "w1" / "summary.json"), b = read_json(dir / "w3" / "summary.json");
  ASSERT_EQ(a.at("moments").size(), b.at("moments").size());
  for (std::size_t k = 0; k < a.at("moments").size(); ++k)
    for (const char* key : {"sum", "sum_sq"})
      EXPECT_NEAR(a["moments"][k][key]["mean"].get<double>(), b["moments"][k][key]["mean"].get<double>(), 1e-12);
}

TEST(Cli, SeedFlagOverridesConfig) {
  const auto dir = scratch("seed");
  const auto cfg = write_config(dir, small_evolve());
  ASSERT_EQ(run_lab("evolve --config " + cfg.string() + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run_lab("evolve --config " + cfg.string() + " --seed 99 --out " + (dir / "b").string()), 0);
  EXPECT_EQ(read_json(dir / "b" / "manifest.json").at("config").at("seed"), 99);
  EXPECT_NE(io::read_file((dir / "a" / "summary.json").string()), io::read_file((dir / "b" / "summary.json").string()));
}

TEST(Cli, EnvVarSetsDefaultOutput) {
  const auto dir = scratch("env");
  const auto cfg = write_config(dir, verify_config());
  const auto target = dir / "env_out";
  EXPECT_EQ(run_lab("verify-identities --config " + cfg.string(), std::string(harness::kOutEnv) + "=" + target.string()),
            0);
  EXPECT_TRUE(fs::exists(target / "manifest.json"));
}

TEST(Cli, ManifestListsEveryOutput) {
  const auto dir = scratch("manifest");
  const auto cfg = write_config(dir, small_evolve());
  const auto out = dir / "o";
  ASSERT_EQ(run_lab("evolve --config " + cfg.string() + " --out " + out.string()), 0);
  const auto m = read_json(out / "manifest.json");
  EXPECT_EQ(m.at("schema_version"), harness::kSchemaVersion);
  EXPECT_EQ(m.at("status"), "ok");
  EXPECT_EQ(m.at("replica_seeds").size(), 6u);
  std::set<std::string> listed;
  std::uint64_t h = io::fnv1a(m.at("config").dump());
  for (const auto& o : m.at("outputs")) {
    const std::string path = o.at("path");
    listed.insert(path);
    EXPECT_EQ(o.at("fnv1a"), io::hex64(io::fnv1a(io::read_file((out / path).string())))) << path;
    h = io::fnv1a(path + ":" + o.at("fnv1a").get<std::string>(), h);
  }
  EXPECT_EQ(m.at("manifest_hash"), io::hex64(h));
  for (const auto& e : fs::directory_iterator(out)) {
    const std::string name = e.path().filename().string();
    if (name != "manifest.json") {
      EXPECT_TRUE(listed.count(name)) << name;
    }
  }
}

TEST(Cli, FailedRunStillWritesManifest) {
  const auto dir = scratch("failed");
  const json j = {{"ensemble", {{"n", 50}}}, {"query", {{"half_width", 3.0}}}, {"replicas", 3}, {"seed", 1}};
  const auto cfg = write_config(dir, j);
  EXPECT_EQ(run_lab("gaps --config " + cfg.string() + " --out " + (dir / "o").string()), 2);
  const auto m = read_json(dir / "o" / "manifest.json");
  EXPECT_EQ(m.at("status"), "failed");
  EXPECT_TRUE(m.at("completed_replicas").empty());
}

TEST(Cli, CsvFormat) {
  const auto dir = scratch("csv");
  const auto cfg = write_config(dir, small_evolve());
  ASSERT_EQ(run_lab("evolve --config " + cfg.string() + " --out " + (dir / "o").string()), 0);
  const std::string csv = io::read_file((dir / "o" / "estimates.csv").string());
  EXPECT_EQ(csv.find('\r'), std::string::npos);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "name,estimate,se,n_samples,config_hash");
}

TEST(Experiments, EachShippedKindRunsSmall) {
  const auto dir = scratch("kinds");
  const std::vector<std::pair<std::string, json>> cases = {
      {"sample", {{"ensemble", {{"n", 30}}}, {"replicas", 4}}},
      {"local-law", {{"ensemble", {{"n", 100}}}, {"query", {{"E_count", 5}}}, {"replicas", 2}}},
      {"rigidity", {{"ensemble", {{"n", 100}}}, {"replicas", 3}}},
      {"gaps",
       {{"ensemble", {{"n", 60}}}, {"flow", {{"t_end", 0.02}, {"snapshot_times", {0.02}}}}, {"replicas", 3}}},
      {"correlations", {{"ensemble", {{"n", 100}, {"sampler", "beta"}}}, {"replicas", 3}}},
      {"relaxation-diagnostics",
       {{"ensemble", {{"n", 100}}}, {"query", {{"hessian_n", 30}, {"hessian_trials", 5}, {"grid_points", 50}}},
        {"replicas", 2}}},
      {"reverse-flow", {{"query", {{"K", {2}}, {"t", {0.02, 0.05}}}}}},
      {"concentration", {{"query", {{"n_dim", 40}, {"m", 10}, {"trials", 200}}}}},
  };
  for (const auto& [name, j] : cases) {
    auto cfg = j;
    cfg["experiment"] = name;
    auto c = harness::config_from_json(cfg);
    c.out_dir = (dir / name).string();
    auto rec = harness::run_experiment(c);
    EXPECT_EQ(rec.status, "ok") << name;
    EXPECT_FALSE(rec.summary.empty()) << name;
    EXPECT_TRUE(fs::exists(dir / name / "manifest.json")) << name;
  }
}
