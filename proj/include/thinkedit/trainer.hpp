#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "env.hpp"
#include "flowgen.hpp"
#include "grouping.hpp"
#include "optim.hpp"
#include "pretrain.hpp"
#include "reason.hpp"
#include "rewards.hpp"
#include "rng.hpp"
#include "sampling.hpp"

namespace thinkedit {

// Which parts of the method are switched on for a run.
struct VariantFlags {
  bool use_gen = true;  // off: no parameter updates at all (the untrained row)
  bool use_und = true;
  bool use_plan = true;
  bool use_reflect = true;
  bool use_ucpg = true;
  bool use_checklist = true;

  void validate() const {
    if (use_reflect && !use_plan) throw ConfigError("variant: reflect requires plan");
    if (use_plan && !use_und) throw ConfigError("variant: plan requires und");
  }

  PipelineOptions pipeline() const {
    PipelineOptions p;
    p.mode = !use_und ? PlanMode::Noop : (use_plan ? PlanMode::Full : PlanMode::Grounding);
    p.reflect = use_reflect;
    return p;
  }

  // Comma-separated list of enabled flags (gen, und, plan, reflect, ucpg,
  // checklist), or one of the presets "full" and "none".
  static VariantFlags parse(const std::string& list) {
    VariantFlags f{false, false, false, false, false, false};
    if (list == "full") return VariantFlags{};
    if (list == "none") return f;
    std::stringstream ss(list);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok.erase(0, tok.find_first_not_of(" \t"));
      tok.erase(tok.find_last_not_of(" \t") + 1);
      if (tok == "gen") f.use_gen = true;
      else if (tok == "und") f.use_und = true;
      else if (tok == "plan") f.use_plan = true;
      else if (tok == "reflect") f.use_reflect = true;
      else if (tok == "ucpg") f.use_ucpg = true;
      else if (tok == "checklist") f.use_checklist = true;
      else throw ConfigError("unknown variant flag: '" + tok + "'");
    }
    f.validate();
    return f;
  }

  std::string to_string() const {
    std::string s;
    auto add = [&](bool on, const char* name) {
      if (!on) return;
      if (!s.empty()) s += ",";
      s += name;
    };
    add(use_gen, "gen");
    add(use_und, "und");
    add(use_plan, "plan");
    add(use_reflect, "reflect");
    add(use_ucpg, "ucpg");
    add(use_checklist, "checklist");
    return s.empty() ? "none" : s;
  }

  bool operator==(const VariantFlags&) const = default;
};

struct AblationRow {
  std::string name;
  VariantFlags flags;
};

// Module ablation (first five rows) followed by the reward-scheme ablation.
// The generation-only row uses the interval judge with weighted fusion.
inline std::vector<AblationRow> ablation_matrix() {
  return {
      {"empty", VariantFlags::parse("none")},
      {"gen", VariantFlags::parse("gen")},
      {"gen+und", VariantFlags::parse("gen,und,ucpg,checklist")},
      {"+plan", VariantFlags::parse("gen,und,plan,ucpg,checklist")},
      {"+reflect", VariantFlags::parse("full")},
      {"interval+weighted", VariantFlags::parse("gen,und,plan,reflect")},
      {"checklist+weighted", VariantFlags::parse("gen,und,plan,reflect,checklist")},
      {"checklist+ucpg", VariantFlags::parse("full")},
  };
}

// Reward provider used while training: noisy judges, IF from the checklist or
// the interval judge depending on the variant.
inline std::unique_ptr<RewardProvider> make_train_rewards(const VariantFlags& f, const JudgeNoise& noise) {
  if (f.use_checklist) return std::make_unique<ChecklistRewards>(noise);
  return std::make_unique<IntervalRewards>(noise);
}

struct IterationMetrics {
  int iteration = 0;
  std::array<double, kRewardDims> mean_reward{};  // over every candidate of the iteration
  double chain_len_mean = 0.0;
  double group_size = 0.0;
  double und_objective = 0.0;
  double gen_objective = 0.0;
  double und_kl = 0.0;
  double gen_kl = 0.0;
  double und_clip_fraction = 0.0;
  double gen_clip_fraction = 0.0;
  double und_grad_norm = 0.0;
  double gen_grad_norm = 0.0;
  std::size_t und_samples = 0;
  std::size_t gen_samples = 0;
  std::vector<std::size_t> timesteps;
};

struct TrainState {
  ModelSpec spec;
  TrainConfig cfg;
  VariantFlags flags;
  PolicySnapshot live;
  PolicySnapshot ref;  // frozen
  AdamW adam_und;
  AdamW adam_gen;
  RngStream rng{0};
  int iteration = 0;
  std::vector<IterationMetrics> metrics;

  TrainState(const ModelSpec& s, const TrainConfig& c, const VariantFlags& f, const PolicySnapshot& init)
      : spec(s), cfg(c), flags(f), live(s.check(init)), ref(init), rng(c.seed) {
    auto adam_cfg = [&](double lr) {
      return AdamWConfig{lr, c.adam_beta1, c.adam_beta2, c.adam_eps, c.weight_decay};
    };
    adam_und = AdamW(live.und_params.size(), adam_cfg(c.eta_und));
    adam_gen = AdamW(live.gen_params.size(), adam_cfg(c.eta));
  }
};

namespace detail {

inline void clip_gradient(Vec& g, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = l2_norm(g);
  if (n > max_norm)
    for (double& x : g) x *= max_norm / n;
}

struct TaskRollout {
  Task task;
  Checklist checklist;
  std::vector<Candidate> candidates;
  std::vector<RewardVector> rewards;
  Vec advantages;
  std::vector<std::size_t> members;  // candidates that receive a policy update
  UndConditioning plan_cond;
  std::vector<UndConditioning> reflect_cond;  // one per refined candidate
};

inline std::vector<std::size_t> draw_timesteps(int T, std::size_t k, RngStream& rng) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(T));
  std::iota(idx.begin(), idx.end(), 0);
  // partial Fisher-Yates
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

// One outer iteration: roll out with a frozen copy of the policy, score, group,
// then one understanding step followed by one generation step per selected timestep.
inline IterationMetrics train_iteration(TrainState& st, const std::vector<Task>& tasks, const RewardProvider& rewards) {
  if (tasks.empty()) throw ArgumentError("train_iteration: empty task batch");
  const ModelSpec& spec = st.spec;
  const TrainConfig& cfg = st.cfg;
  const PipelineOptions pipe = st.flags.pipeline();
  const PolicySnapshot old = st.live;

  IterationMetrics m;
  m.iteration = st.iteration + 1;

  std::vector<detail::TaskRollout> roll(tasks.size());
  std::size_t n_cand = 0;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    detail::TaskRollout& r = roll[ti];
    RngStream task_rng = st.rng.split();
    r.task = tasks[ti];
    const Scene& scene = r.task.scene;
    const Instruction& in = r.task.instruction;
    r.checklist = build_checklist(scene, in);
    r.candidates = cot_rollout(spec, old, scene, in, cfg, pipe, task_rng);
    const TaskContext ctx{&scene, &in, &r.checklist};
    for (Candidate& c : r.candidates) {
      c.reward = rewards.score(c.scene_out, ctx, task_rng);
      r.rewards.push_back(*c.reward);
      for (std::size_t k = 0; k < kRewardDims; ++k) m.mean_reward[k] += (*c.reward)[k];
    }
    n_cand += r.candidates.size();

    r.advantages.assign(r.candidates.size(), 0.0);
    if (st.flags.use_ucpg) {
      r.members = extract_consistent_chain(std::span<const RewardVector>(r.rewards));
      std::vector<RewardVector> chain;
      for (std::size_t i : r.members) chain.push_back(r.rewards[i]);
      const Vec a = compute_advantages(chain, cfg.sigma_floor);
      for (std::size_t i = 0; i < r.members.size(); ++i) r.advantages[r.members[i]] = a[i];
    } else {
      const Vec fused = weighted_fusion(r.rewards, kUniformWeights);
      r.advantages = group_advantages(fused, cfg.sigma_floor);
      r.members.resize(r.candidates.size());
      std::iota(r.members.begin(), r.members.end(), 0);
    }
    m.chain_len_mean += static_cast<double>(r.members.size());
    m.group_size += static_cast<double>(r.candidates.size());

    if (pipe.mode != PlanMode::Noop) {
      r.plan_cond = plan_conditioning(spec.und, scene, in);
      const std::size_t G = static_cast<std::size_t>(cfg.G);
      r.reflect_cond.resize(r.candidates.size());
      for (std::size_t i = G; i < r.candidates.size(); ++i)
        r.reflect_cond[i] = reflection_conditioning(spec.und, scene, r.candidates[i - G].scene_out, in,
                                                    r.candidates[i].trace_plan);
    }
  }
  for (double& x : m.mean_reward) x /= static_cast<double>(n_cand);
  m.chain_len_mean /= static_cast<double>(tasks.size());
  m.group_size /= static_cast<double>(tasks.size());

  // A first-pass member credits its plan. A refined member credits its
  // reflection and, unless switched off, the plan it was conditioned on.
  std::vector<UndSample> und_batch;
  std::vector<GenSample> gen_batch;
  for (const detail::TaskRollout& r : roll) {
    for (std::size_t i : r.members) {
      const Candidate& c = r.candidates[i];
      gen_batch.push_back({&c.trajectory, r.advantages[i]});
      if (pipe.mode == PlanMode::Noop) continue;
      if (c.pass_index == PassIndex::FirstPass)
        und_batch.push_back({&c.trace_plan, &r.plan_cond, r.advantages[i]});
      else {
        und_batch.push_back({&*c.trace_reflect, &r.reflect_cond[i], r.advantages[i]});
        if (cfg.refined_credits_plan) und_batch.push_back({&c.trace_plan, &r.plan_cond, r.advantages[i]});
      }
    }
  }
  m.und_samples = und_batch.size();
  m.gen_samples = gen_batch.size();

  if (st.flags.use_und && !und_batch.empty()) {
    UndObjectiveResult u = und_objective(spec.und, und_batch, st.live.und_params, st.ref.und_params, cfg);
    require_finite(u.value, "understanding objective");
    require_finite(u.gradient, "understanding gradient");
    m.und_objective = u.value;
    m.und_kl = u.mean_kl;
    m.und_clip_fraction = u.clip_fraction;
    m.und_grad_norm = l2_norm(u.gradient);
    detail::clip_gradient(u.gradient, cfg.grad_clip);
    st.adam_und.ascend(st.live.und_params, u.gradient);
    require_finite(st.live.und_params, "understanding parameters");
  }

  m.timesteps = detail::draw_timesteps(cfg.T, cfg.selected_steps(), st.rng);
  if (st.flags.use_gen && !gen_batch.empty()) {
    double grad_sq = 0.0;
    for (std::size_t k : m.timesteps) {
      const std::size_t one[1] = {k};
      ObjectiveResult g = gen_objective(spec.gen, gen_batch, st.live.gen_params, st.ref.gen_params, cfg, one);
      require_finite(g.value, "generation objective");
      require_finite(g.gradient, "generation gradient");
      const double norm = l2_norm(g.gradient);
      grad_sq += norm * norm;
      const double w = 1.0 / static_cast<double>(m.timesteps.size());
      m.gen_objective += w * g.value;
      m.gen_kl += w * g.mean_kl;
      m.gen_clip_fraction += w * g.clip_fraction;
      detail::clip_gradient(g.gradient, cfg.grad_clip);
      st.adam_gen.ascend(st.live.gen_params, g.gradient);
      require_finite(st.live.gen_params, "generation parameters");
    }
    m.gen_grad_norm = std::sqrt(grad_sq);
  }
  st.iteration = m.iteration;
  st.metrics.push_back(m);
  return m;
}

// --- evaluation -----------------------------------------------------------------

// Held-out tasks come from their own stream, independent of every run seed.
inline constexpr std::uint64_t kEvalSeed = 0x5eed'e7a1'0000'0001ULL;

inline std::vector<Task> eval_task_set(const SceneLimits& lim, int n, std::uint64_t seed = kEvalSeed) {
  RngStream rng(seed);
  std::vector<Task> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(make_mixed_task(lim, rng));
  return out;
}

inline std::vector<Task> training_batch(const SceneLimits& lim, int n, RngStream& rng) {
  std::vector<Task> out;
  for (int i = 0; i < n; ++i) out.push_back(make_mixed_task(lim, rng));
  return out;
}

// An output that kept every non-target in place but did not do the edit.
inline bool is_noop_output(const RewardVector& r) { return r[RewardDim::VC] > 0.98 && r[RewardDim::IF] < 0.5; }

struct EvalRecord {
  std::size_t task_index = 0;
  InferenceResult result;
  RewardVector reward;
};

struct EvalResult {
  double mean_if = 0.0;
  double mean_vc = 0.0;
  double mean_vq = 0.0;
  double noop_rate = 0.0;
  std::vector<EvalRecord> records;
};

// Noiseless reward means of deterministic inference over the held-out tasks.
inline EvalResult evaluate(const ModelSpec& spec, const PolicySnapshot& snap, const std::vector<Task>& tasks,
                           const TrainConfig& cfg, const PipelineOptions& pipe, bool keep_records = false) {
  if (tasks.empty()) throw ArgumentError("evaluate: no tasks");
  EvalResult res;
  RngStream unused(0);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const Task& t = tasks[i];
    InferenceResult out = inference_edit(spec, snap, t.scene, t.instruction, cfg, pipe);
    const Checklist cl = build_checklist(t.scene, t.instruction);
    const RewardVector r{eval_checklist(cl, t.scene, out.scene, nullptr, unused),
                         consistency_reward(t.scene, out.scene, t.instruction), quality_reward(out.scene)};
    res.mean_if += r[RewardDim::IF];
    res.mean_vc += r[RewardDim::VC];
    res.mean_vq += r[RewardDim::VQ];
    res.noop_rate += is_noop_output(r) ? 1.0 : 0.0;
    if (keep_records) res.records.push_back({i, std::move(out), r});
  }
  const double n = static_cast<double>(tasks.size());
  res.mean_if /= n;
  res.mean_vc /= n;
  res.mean_vq /= n;
  res.noop_rate /= n;
  return res;
}

// --- experiment driver ------------------------------------------------------------

struct EvalPoint {
  int iteration = 0;
  double mean_if = 0.0;
  double mean_vc = 0.0;
  double mean_vq = 0.0;
  double noop_rate = 0.0;
};

struct ExperimentHooks {
  std::function<void(const IterationMetrics&, double wall_ms)> on_iteration;
  std::function<void(const EvalPoint&)> on_eval;
  std::function<void(int iteration, const PolicySnapshot&)> on_checkpoint;
};

struct ExperimentResult {
  std::vector<IterationMetrics> iterations;
  std::vector<EvalPoint> evals;  // iteration 0 first, final iteration last
  PolicySnapshot final_snapshot;
};

inline EvalPoint to_point(int it, const EvalResult& e) { return {it, e.mean_if, e.mean_vc, e.mean_vq, e.noop_rate}; }

// Trains from the shared base snapshot for cfg.M iterations, evaluating at
// iteration 0, every eval_every iterations and at the end.
inline ExperimentResult run_experiment(const TrainConfig& cfg, const VariantFlags& flags,
                                       const ExperimentHooks& hooks = {}, const JudgeNoise& noise = {}) {
  cfg.validate();
  flags.validate();
  noise.validate();
  if (!(cfg.sigma_a > 0.0)) throw ConfigError("training needs sigma_a > 0");
  const ModelSpec spec = ModelSpec::from_config(cfg);
  TrainState st(spec, cfg, flags, make_base_snapshot(spec, cfg));
  const auto provider = make_train_rewards(flags, noise);
  const std::vector<Task> held_out = eval_task_set(spec.limits, cfg.eval_tasks);
  const PipelineOptions pipe = flags.pipeline();
  RngStream task_rng = st.rng.split();

  ExperimentResult res;
  auto eval_now = [&](int it) {
    const EvalPoint p = to_point(it, evaluate(spec, st.live, held_out, cfg, pipe));
    res.evals.push_back(p);
    if (hooks.on_eval) hooks.on_eval(p);
  };
  eval_now(0);
  const int iters = (flags.use_gen || flags.use_und) ? cfg.M : 0;  // nothing to train in the empty variant
  for (int it = 1; it <= iters; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<Task> batch = training_batch(spec.limits, cfg.batch_tasks, task_rng);
    const IterationMetrics m = train_iteration(st, batch, *provider);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (hooks.on_iteration) hooks.on_iteration(m, ms);
    if (it % cfg.eval_every == 0 || it == iters) eval_now(it);
    if (hooks.on_checkpoint && (it % cfg.checkpoint_every == 0 || it == iters)) hooks.on_checkpoint(it, st.live);
  }
  if (iters == 0 && hooks.on_checkpoint) hooks.on_checkpoint(0, st.live);
  res.iterations = std::move(st.metrics);
  res.final_snapshot = st.live;
  return res;
}

}  // namespace thinkedit
