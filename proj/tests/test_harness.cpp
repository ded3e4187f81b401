#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "thinkedit/thinkedit.hpp"

using namespace thinkedit;
namespace fs = std::filesystem;

namespace {

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

std::string tiny_text() {
  return "G = 4\nT = 4\nhidden = 8\nbatch_tasks = 2\neval_tasks = 5\npretrain_steps = 20\n"
         "M = 3\neval_every = 2\ncheckpoint_every = 2\nseeds = 1, 2\nrv_pairs = 8\nrv_reps = 50\n";
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("thinkedit_test_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
  std::ifstream f(p);
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(f, line)) out.push_back(nlohmann::json::parse(line));
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

const nlohmann::json& schema() {
  static const nlohmann::json s = nlohmann::json::parse(slurp(THINKEDIT_SCHEMA_PATH));
  return s;
}

// Every record must match one of the record kinds listed for its file: the
// 'type' (and 'command') constants agree and every required key is present.
void expect_schema(const fs::path& file) {
  const auto& defs = schema()["$defs"];
  const auto kinds = schema()["files"].at(file.filename().string());
  for (const auto& rec : read_jsonl(file)) {
    bool matched = false;
    for (const auto& kind : kinds) {
      const auto& def = defs.at(kind.get<std::string>());
      bool ok = true;
      if (def.contains("properties"))
        for (const char* key : {"type", "command"})
          if (def["properties"].contains(key) && def["properties"][key].contains("const"))
            ok = ok && rec.contains(key) && rec[key] == def["properties"][key]["const"];
      for (const auto& req : def["required"]) ok = ok && rec.contains(req.get<std::string>());
      if (ok) {
        matched = true;
        break;
      }
    }
    EXPECT_TRUE(matched) << file << ": " << rec.dump().substr(0, 200);
  }
}

}  // namespace

TEST(Config, ParsesTypedValuesAndComments) {
  const RunConfig c = parse("# comment\n  G = 6   # trailing\nbeta_kl=0.5\nseed = 42\nshared_plan = true\n"
                            "variant = gen,und,ucpg\nseeds = 4,5\nflip_prob = 0.2\n\n");
  EXPECT_EQ(c.train.G, 6);
  EXPECT_EQ(c.train.beta_kl, 0.5);
  EXPECT_EQ(c.train.seed, 42u);
  EXPECT_TRUE(c.train.shared_plan);
  EXPECT_EQ(c.variant.to_string(), "gen,und,ucpg");
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{4, 5}));
  EXPECT_EQ(c.noise.flip_prob, 0.2);
  EXPECT_EQ(c.train.T, TrainConfig{}.T);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse("bogus = 1\n"), ConfigError);
  EXPECT_THROW(parse("G = 4\nG = 5\n"), ConfigError);
  EXPECT_THROW(parse("G 4\n"), ConfigError);
  EXPECT_THROW(parse("G =\n"), ConfigError);
  EXPECT_THROW(parse("G = four\n"), ConfigError);
  EXPECT_THROW(parse("G = 4.5\n"), ConfigError);
  EXPECT_THROW(parse("seed = -1\n"), ConfigError);
  EXPECT_THROW(parse("shared_plan = yes\n"), ConfigError);
  EXPECT_THROW(parse("G = 1\n"), ConfigError);
  EXPECT_THROW(parse("variant = gen,reflect\n"), ConfigError);
  EXPECT_THROW(parse("use_plan = false\n"), ConfigError);  // reflect without plan
  EXPECT_THROW(parse("flip_prob = 0.5\n"), ConfigError);
  EXPECT_THROW(parse("seeds = 1,,2\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/path.cfg"), ConfigError);
}

TEST(Config, EveryLoggedKeyRoundTrips) {
  RunConfig c = parse(tiny_text());
  c.train.beta_kl = 0.123456789012345;
  c.train.shared_plan = true;
  const nlohmann::json logged = config_json(c);
  std::ostringstream text;
  for (const auto& [key, value] : logged.items())
    text << key << " = " << (value.is_string() ? value.get<std::string>() : value.dump()) << '\n';
  const RunConfig back = parse(text.str());
  EXPECT_EQ(config_json(back), config_json(c));
  for (const auto& [key, value] : logged.items()) EXPECT_TRUE(detail::config_keys().count(key)) << key;
}

TEST(Config, OutDirComesFromTheEnvironment) {
  ::setenv(kOutDirEnv, "/tmp/somewhere", 1);
  EXPECT_EQ(default_out_dir(), fs::path("/tmp/somewhere"));
  ::unsetenv(kOutDirEnv);
  EXPECT_EQ(default_out_dir(), fs::path("runs"));
}

TEST(Train, WritesMetricsPlotAndCheckpoints) {
  const fs::path dir = scratch("train");
  std::ostringstream log;
  ASSERT_EQ(cmd_train(parse(tiny_text()), dir, log), kExitOk);
  for (const char* f : {"metrics.jsonl", "timing.jsonl", "plot.csv", "ckpt_2.tksn", "ckpt_3.tksn", "final.tksn"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto recs = read_jsonl(dir / "metrics.jsonl");
  EXPECT_EQ(recs.front()["type"], "header");
  EXPECT_EQ(recs.front()["seeds"], nlohmann::json::array({1}));
  EXPECT_EQ(recs.back()["type"], "summary");
  int iters = 0, evals = 0;
  for (const auto& r : recs) {
    iters += r["type"] == "iteration";
    evals += r["type"] == "eval";
    EXPECT_FALSE(r.contains("wall_ms"));
  }
  EXPECT_EQ(iters, 3);
  EXPECT_EQ(evals, 3);  // 0, 2, 3
  expect_schema(dir / "metrics.jsonl");
  expect_schema(dir / "timing.jsonl");
  std::ifstream plot(dir / "plot.csv");
  std::string header;
  std::getline(plot, header);
  EXPECT_EQ(header, "iteration,mean_IF,mean_VC,mean_VQ");
}

TEST(Train, SingleIterationOverride) {
  RunConfig c = parse(tiny_text());
  c.train.M = 1;
  const fs::path dir = scratch("train1");
  std::ostringstream log;
  ASSERT_EQ(cmd_train(c, dir, log), kExitOk);
  int iters = 0;
  for (const auto& r : read_jsonl(dir / "metrics.jsonl")) iters += r["type"] == "iteration";
  EXPECT_EQ(iters, 1);
}

TEST(Train, MetricsAreByteIdenticalAcrossRuns) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  std::ostringstream log;
  cmd_train(parse(tiny_text()), a, log);
  cmd_train(parse(tiny_text()), b, log);
  EXPECT_EQ(slurp(a / "metrics.jsonl"), slurp(b / "metrics.jsonl"));
  EXPECT_EQ(slurp(a / "final.tksn"), slurp(b / "final.tksn"));
}

TEST(Eval, ReproducesTheFinalTrainingEvaluation) {
  const RunConfig c = parse(tiny_text());
  const fs::path dir = scratch("eval");
  std::ostringstream log;
  cmd_train(c, dir, log);
  ASSERT_EQ(cmd_eval(c, dir / "final.tksn", dir / "e", log), kExitOk);
  const auto train = read_jsonl(dir / "metrics.jsonl");
  const auto ev = read_jsonl(dir / "e" / "eval.jsonl");
  EXPECT_EQ(ev.back()["mean_IF"], train.back()["final"]["mean_IF"]);
  EXPECT_EQ(ev.back()["mean_VC"], train.back()["final"]["mean_VC"]);
  EXPECT_EQ(ev.size(), 2u + 5u);
  expect_schema(dir / "e" / "eval.jsonl");
}

TEST(Eval, CorruptCheckpointMapsToExitTwo) {
  const RunConfig c = parse(tiny_text());
  const fs::path dir = scratch("corrupt");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.tksn") << "not a checkpoint";
  std::ostringstream log, err;
  EXPECT_THROW(cmd_eval(c, dir / "bad.tksn", dir, log), FormatError);
  EXPECT_EQ(guarded([&] { return cmd_eval(c, dir / "bad.tksn", dir, log); }, err), kExitConfig);
  EXPECT_EQ(guarded([&] { return cmd_eval(c, dir / "missing.tksn", dir, log); }, err), kExitConfig);
  // a well-formed snapshot of the wrong architecture
  save_snapshot(dir / "small.tksn", PolicySnapshot{Vec(3, 0.0), Vec(3, 0.0)});
  EXPECT_EQ(guarded([&] { return cmd_eval(c, dir / "small.tksn", dir, log); }, err), kExitConfig);
}

TEST(Guarded, ExitCodes) {
  std::ostringstream err;
  EXPECT_EQ(guarded([] { return 0; }, err), kExitOk);
  EXPECT_EQ(guarded([]() -> int { throw NumericError("nan"); }, err), kExitNumeric);
  EXPECT_EQ(guarded([]() -> int { throw ConfigError("bad"); }, err), kExitConfig);
  EXPECT_NE(err.str().find("numeric"), std::string::npos);
}

TEST(Ablate, EightRowsWithSeedHeader) {
  RunConfig c = parse(tiny_text());
  c.train.M = 1;
  const fs::path dir = scratch("ablate");
  std::ostringstream log;
  ASSERT_EQ(cmd_ablate(c, dir, log), kExitOk);
  const auto recs = read_jsonl(dir / "ablation.jsonl");
  ASSERT_EQ(recs.size(), 9u);
  EXPECT_EQ(recs[0]["seeds"], nlohmann::json::array({1, 2}));
  EXPECT_EQ(recs[1]["variant"], "empty");
  EXPECT_EQ(recs[1]["per_seed"].size(), 2u);
  // rows with identical flags report identical numbers
  EXPECT_EQ(recs[5]["IF_mean"], recs[8]["IF_mean"]);
  expect_schema(dir / "ablation.jsonl");
  std::ifstream t(dir / "ablation.txt");
  std::string first;
  std::getline(t, first);
  EXPECT_EQ(first, "# seeds: 1 2");
}

TEST(RewardVariance, NoiselessJudgesHaveNoVariance) {
  RunConfig c = parse(tiny_text() + "flip_prob = 0\ninterval_sigma = 0\n");
  const fs::path dir = scratch("rv0");
  std::ostringstream log;
  ASSERT_EQ(cmd_reward_variance(c, dir, log), kExitOk);
  const auto recs = read_jsonl(dir / "reward_variance.jsonl");
  EXPECT_EQ(recs.back()["checklist_var"], 0.0);
  EXPECT_EQ(recs.back()["interval_var"], 0.0);
  EXPECT_EQ(recs.back()["ratio"], 0.0);
  expect_schema(dir / "reward_variance.jsonl");
  EXPECT_NE(log.str().find("truth table"), std::string::npos);
}

TEST(RewardVariance, PanelAndChecklistVariance) {
  const auto panel = variance_panel(8, 2, 17);
  ASSERT_EQ(panel.size(), 8u);
  EXPECT_EQ(panel[0].kind, "oracle");
  EXPECT_EQ(panel[1].kind, "no-op");
  EXPECT_EQ(panel[2].kind, "perturbed");
  EXPECT_EQ(panel[1].candidate, panel[1].task.scene);
  // two objects -> four items -> per-pair variance p(1-p)/4
  const VarianceStudy st = reward_variance_study(8, 4000, 2, 17, JudgeNoise{});
  for (const auto& p : st.pairs) EXPECT_NEAR(p.checklist_var, 0.09 / 4, 0.004);
}

TEST(TaskDump, RecordCarriesScenePromptAndChecklist) {
  SceneLimits lim;
  RngStream r(3);
  const Task t = make_mixed_task(lim, r);
  const auto j = task_record_json(3, t);
  EXPECT_EQ(j["seed"], 3);
  EXPECT_EQ(j["scene"].size(), t.scene.size());
  EXPECT_EQ(j["checklist"].size(), build_checklist(t.scene, t.instruction).items.size());
  EXPECT_EQ(j["instruction"]["family"], family_name(t.instruction.family));
}
