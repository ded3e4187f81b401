#include <gtest/gtest.h>

#include <cmath>

#include "thinkedit/thinkedit.hpp"

using namespace thinkedit;

namespace {

TrainConfig tiny() {
  TrainConfig c;
  c.G = 4;
  c.T = 4;
  c.hidden = 8;
  c.batch_tasks = 3;
  c.eval_tasks = 6;
  c.pretrain_steps = 20;
  c.M = 2;
  c.eval_every = 1;
  return c;
}

struct Trainee {
  ModelSpec spec;
  TrainState st;
  std::unique_ptr<RewardProvider> rewards;
  RngStream tasks_rng;

  explicit Trainee(const TrainConfig& c, VariantFlags f = {})
      : spec(ModelSpec::from_config(c)),
        st(spec, c, f, make_base_snapshot(spec, c)),
        rewards(make_train_rewards(f, JudgeNoise{})),
        tasks_rng(c.seed + 1000) {}

  IterationMetrics step() { return train_iteration(st, training_batch(spec.limits, st.cfg.batch_tasks, tasks_rng), *rewards); }
};

double dist(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST(Trainer, ZeroLearningRatesLeaveParametersUnchanged) {
  TrainConfig c = tiny();
  c.eta = 0.0;
  c.eta_und = 0.0;
  Trainee r(c);
  const PolicySnapshot before = r.st.live;
  r.step();
  r.step();
  EXPECT_EQ(r.st.live, before);
  EXPECT_EQ(r.st.iteration, 2);
}

TEST(Trainer, UpdatesLiveAndKeepsReferenceFrozen) {
  Trainee r(tiny());
  const PolicySnapshot ref = r.st.ref;
  const IterationMetrics m = r.step();
  EXPECT_EQ(r.st.ref, ref);
  EXPECT_NE(r.st.live.und_params, ref.und_params);
  EXPECT_NE(r.st.live.gen_params, ref.gen_params);
  EXPECT_GT(m.und_samples, 0u);
  EXPECT_GT(m.gen_samples, 0u);
  EXPECT_EQ(m.timesteps.size(), tiny().selected_steps());
}

TEST(Trainer, FullTimestepRatioUsesEveryStep) {
  TrainConfig c = tiny();
  c.tau = 1.0;
  Trainee r(c);
  EXPECT_EQ(r.step().timesteps, (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(Trainer, DeterministicForASeed) {
  Trainee a(tiny()), b(tiny());
  a.step();
  b.step();
  EXPECT_EQ(a.st.live, b.st.live);
  TrainConfig c = tiny();
  c.seed = 2;
  Trainee d(c);
  d.tasks_rng = RngStream(tiny().seed + 1000);
  d.step();
  EXPECT_NE(a.st.live, d.st.live);
}

TEST(Trainer, StrongerKlKeepsTheUnderstandingPolicyCloser) {
  std::vector<double> drift;
  for (double beta : {0.0, 1.0, 100.0}) {
    TrainConfig c = tiny();
    c.beta_kl = beta;
    c.eta = 0.0;
    Trainee r(c);
    for (int i = 0; i < 6; ++i) r.step();
    drift.push_back(dist(r.st.live.und_params, r.st.ref.und_params));
  }
  EXPECT_GE(drift[0], drift[1]);
  EXPECT_GT(drift[1], drift[2]);
}

TEST(Trainer, DisabledModulesAreNotUpdated) {
  Trainee gen_only(tiny(), VariantFlags::parse("gen"));
  const Vec und = gen_only.st.live.und_params;
  const IterationMetrics m = gen_only.step();
  EXPECT_EQ(gen_only.st.live.und_params, und);
  EXPECT_EQ(m.und_samples, 0u);
  Trainee und_only(tiny(), VariantFlags::parse("und,plan,reflect,ucpg,checklist"));
  const Vec gen = und_only.st.live.gen_params;
  und_only.step();
  EXPECT_EQ(und_only.st.live.gen_params, gen);
}

TEST(Trainer, TimestepDraws) {
  RngStream r(1);
  for (int i = 0; i < 200; ++i) {
    const auto idx = detail::draw_timesteps(10, 6, r);
    ASSERT_EQ(idx.size(), 6u);
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
    EXPECT_LT(idx.back(), 10u);
  }
}

TEST(Variants, ParseAndPrint) {
  EXPECT_EQ(VariantFlags::parse("full"), VariantFlags{});
  EXPECT_EQ(VariantFlags::parse("none").to_string(), "none");
  const VariantFlags f = VariantFlags::parse(" gen , und,ucpg");
  EXPECT_EQ(f.to_string(), "gen,und,ucpg");
  EXPECT_EQ(VariantFlags::parse(f.to_string()), f);
  EXPECT_THROW(VariantFlags::parse("gen,bogus"), ConfigError);
  EXPECT_THROW(VariantFlags::parse("gen,und,reflect"), ConfigError);
  EXPECT_THROW(VariantFlags::parse("gen,plan"), ConfigError);
}

TEST(Variants, AblationMatrix) {
  const auto rows = ablation_matrix();
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_EQ(rows[0].name, "empty");
  EXPECT_EQ(rows[4].flags, VariantFlags{});
  EXPECT_EQ(rows[7].flags, VariantFlags{});
  EXPECT_FALSE(rows[5].flags.use_checklist);
  EXPECT_FALSE(rows[6].flags.use_ucpg);
  EXPECT_TRUE(rows[6].flags.use_checklist);
  EXPECT_EQ(rows[2].flags.pipeline().mode, PlanMode::Grounding);
  EXPECT_EQ(rows[1].flags.pipeline().mode, PlanMode::Noop);
}

TEST(Evaluation, AggregatesRecordsAndIsDeterministic) {
  const TrainConfig c = tiny();
  const ModelSpec spec = ModelSpec::from_config(c);
  const PolicySnapshot base = make_base_snapshot(spec, c);
  const auto tasks = eval_task_set(spec.limits, 10);
  const EvalResult a = evaluate(spec, base, tasks, c, PipelineOptions{}, true);
  const EvalResult b = evaluate(spec, base, tasks, c, PipelineOptions{});
  EXPECT_EQ(a.mean_if, b.mean_if);
  ASSERT_EQ(a.records.size(), 10u);
  double s = 0, noop = 0;
  for (const auto& rec : a.records) {
    s += rec.reward[RewardDim::IF];
    noop += is_noop_output(rec.reward) ? 1 : 0;
  }
  EXPECT_NEAR(a.mean_if, s / 10, 1e-12);
  EXPECT_NEAR(a.noop_rate, noop / 10, 1e-12);
  EXPECT_THROW(evaluate(spec, base, {}, c, PipelineOptions{}), ArgumentError);
}

TEST(Evaluation, HeldOutTasksAreFixed) {
  SceneLimits lim;
  const auto a = eval_task_set(lim, 5), b = eval_task_set(lim, 5);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a[i].scene, b[i].scene);
  EXPECT_TRUE(is_noop_output(RewardVector{0.25, 1.0, 1.0}));
  EXPECT_FALSE(is_noop_output(RewardVector{0.75, 1.0, 1.0}));
  EXPECT_FALSE(is_noop_output(RewardVector{0.25, 0.9, 1.0}));
}

TEST(Experiment, EvaluatesAtStartCadenceAndEnd) {
  TrainConfig c = tiny();
  c.M = 3;
  c.eval_every = 2;
  int iters = 0, ckpts = 0;
  ExperimentHooks hooks;
  hooks.on_iteration = [&](const IterationMetrics&, double) { ++iters; };
  hooks.on_checkpoint = [&](int, const PolicySnapshot&) { ++ckpts; };
  const ExperimentResult r = run_experiment(c, VariantFlags{}, hooks);
  EXPECT_EQ(iters, 3);
  EXPECT_EQ(ckpts, 1);
  ASSERT_EQ(r.evals.size(), 3u);
  EXPECT_EQ(r.evals[0].iteration, 0);
  EXPECT_EQ(r.evals[1].iteration, 2);
  EXPECT_EQ(r.evals[2].iteration, 3);
  EXPECT_EQ(r.iterations.size(), 3u);
}

TEST(Experiment, EmptyVariantTrainsNothing) {
  const ExperimentResult r = run_experiment(tiny(), VariantFlags::parse("none"));
  EXPECT_TRUE(r.iterations.empty());
  ASSERT_EQ(r.evals.size(), 1u);
  const TrainConfig c = tiny();
  EXPECT_EQ(r.final_snapshot, make_base_snapshot(ModelSpec::from_config(c), c));
}

TEST(Experiment, RejectsNoiselessSampler) {
  TrainConfig c = tiny();
  c.sigma_a = 0.0;
  EXPECT_THROW(run_experiment(c, VariantFlags{}), ConfigError);
  c = tiny();
  c.G = 1;
  EXPECT_THROW(run_experiment(c, VariantFlags{}), ConfigError);
}
