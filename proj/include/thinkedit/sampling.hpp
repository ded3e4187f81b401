#pragma once

#include <optional>
#include <vector>

#include "core.hpp"
#include "env.hpp"
#include "flowgen.hpp"
#include "reason.hpp"
#include "rng.hpp"

namespace thinkedit {

// Architectures and scene limits shared by every stage of the pipeline.
struct ModelSpec {
  SceneLimits limits;
  GenArch gen;
  UndArch und;

  static ModelSpec from_config(const TrainConfig& cfg) {
    ModelSpec m;
    m.limits.n_obj = cfg.n_obj;
    m.gen = GenArch{cfg.n_obj, m.limits.n_colors, cfg.hidden, cfg.t_min};
    m.und = UndArch{cfg.n_obj, m.limits.n_colors, cfg.plan_len};
    return m;
  }

  PolicySnapshot check(const PolicySnapshot& s) const {
    if (s.und_params.size() != und.n_params() || s.gen_params.size() != gen.n_params())
      throw FormatError("snapshot does not match the configured architectures");
    return s;
  }
};

// How the understanding policy takes part in a rollout.
enum class PlanMode : int {
  Noop = 0,   // fixed NOOP trace; the generator sees only the instruction
  Grounding,  // one sampled token; only SELECT reaches the generator
  Full,       // full plan: SELECT then attribute edits
};

struct PipelineOptions {
  PlanMode mode = PlanMode::Full;
  bool reflect = true;
};

inline ReasoningTrace noop_trace(const UndArch& arch) {
  const PlanVocab v = arch.vocab();
  return ReasoningTrace{{v.noop(), v.end()}, {0.0, 0.0}, Phase::Plan};
}

// Tokens of a trace as seen by the generator under the given mode.
inline std::vector<int> generator_tokens(const UndArch& arch, const ReasoningTrace& tr, PlanMode mode) {
  if (mode != PlanMode::Grounding) return tr.tokens;
  const PlanVocab v = arch.vocab();
  std::vector<int> out;
  for (int tok : tr.tokens)
    if (v.info(tok).kind == TokenKind::Select) out.push_back(tok);
  return out;
}

inline ReasoningTrace draw_plan(const ModelSpec& spec, const PolicySnapshot& snap, const Scene& scene,
                                const Instruction& in, double temperature, PlanMode mode, RngStream& rng) {
  switch (mode) {
    case PlanMode::Noop: return noop_trace(spec.und);
    case PlanMode::Grounding: return sample_plan(spec.und, snap.und_params, scene, in, temperature, rng, 1);
    case PlanMode::Full: return sample_plan(spec.und, snap.und_params, scene, in, temperature, rng);
  }
  return noop_trace(spec.und);
}

// Plan -> generate -> reflect -> regenerate for every group member. Members
// 0..G-1 are first-pass candidates, G..2G-1 their refined counterparts (without
// reflection only the first G). Only `snapshot_old` is read.
inline std::vector<Candidate> cot_rollout(const ModelSpec& spec, const PolicySnapshot& snapshot_old,
                                          const Scene& scene, const Instruction& in, const TrainConfig& cfg,
                                          const PipelineOptions& opts, RngStream& rng) {
  if (cfg.G < 1) throw ArgumentError("cot_rollout needs G >= 1");
  const auto G = static_cast<std::size_t>(cfg.G);
  std::vector<RngStream> member_rng;
  member_rng.reserve(G);
  for (std::size_t i = 0; i < G; ++i) member_rng.push_back(rng.split());
  std::optional<ReasoningTrace> shared;
  if (cfg.shared_plan) shared = draw_plan(spec, snapshot_old, scene, in, cfg.temperature_plan, opts.mode, rng);

  std::vector<Candidate> out;
  out.reserve(opts.reflect ? 2 * G : G);
  for (std::size_t i = 0; i < G; ++i) {
    RngStream& r = member_rng[i];
    Candidate c;
    c.pass_index = PassIndex::FirstPass;
    c.trace_plan = shared ? *shared : draw_plan(spec, snapshot_old, scene, in, cfg.temperature_plan, opts.mode, r);
    const GenContext ctx = build_context(spec.gen, scene, in, generator_tokens(spec.und, c.trace_plan, opts.mode),
                                         nullptr, cfg.plan_len);
    c.trajectory = sample_trajectory(spec.gen, snapshot_old.gen_params, ctx, cfg.T, cfg.sigma_a, cfg.t_min, r);
    c.scene_out = decode_scene(c.trajectory.latents.back(), scene, spec.limits);
    out.push_back(std::move(c));
  }
  if (!opts.reflect) return out;
  for (std::size_t i = 0; i < G; ++i) {
    RngStream& r = member_rng[i];
    Candidate c;
    c.pass_index = PassIndex::Refined;
    c.trace_plan = out[i].trace_plan;
    c.trace_reflect = sample_reflection(spec.und, snapshot_old.und_params, scene, out[i].scene_out, in,
                                        c.trace_plan, cfg.temperature_plan, r);
    const auto plan_tokens = generator_tokens(spec.und, c.trace_plan, opts.mode);
    const GenContext ctx = build_context(spec.gen, scene, in, plan_tokens, &c.trace_reflect->tokens, cfg.plan_len);
    c.trajectory = sample_trajectory(spec.gen, snapshot_old.gen_params, ctx, cfg.T, cfg.sigma_a, cfg.t_min, r);
    c.scene_out = decode_scene(c.trajectory.latents.back(), scene, spec.limits);
    out.push_back(std::move(c));
  }
  return out;
}

struct InferenceResult {
  Scene scene;              // refined output (first-pass output when reflection is off)
  Scene first_pass;
  ReasoningTrace plan;
  ReasoningTrace reflection;  // empty when reflection is off
};

// Deterministic edit: argmax plan, ODE sampling from the prior mean, one
// reflection and one refined generation.
inline InferenceResult inference_edit(const ModelSpec& spec, const PolicySnapshot& snap, const Scene& scene,
                                      const Instruction& in, const TrainConfig& cfg,
                                      const PipelineOptions& opts = {}) {
  RngStream unused(0);
  const Vec x_start(spec.gen.d(), 0.0);
  InferenceResult res;
  res.plan = draw_plan(spec, snap, scene, in, 0.0, opts.mode, unused);
  const auto plan_tokens = generator_tokens(spec.und, res.plan, opts.mode);
  const GenContext ctx = build_context(spec.gen, scene, in, plan_tokens, nullptr, cfg.plan_len);
  const TrajectoryRecord first = sample_trajectory(spec.gen, snap.gen_params, ctx, cfg.T, 0.0, cfg.t_min, unused, &x_start);
  res.first_pass = decode_scene(first.latents.back(), scene, spec.limits);
  res.scene = res.first_pass;
  res.reflection.phase = Phase::Reflect;
  if (!opts.reflect) return res;
  res.reflection = sample_reflection(spec.und, snap.und_params, scene, res.first_pass, in, res.plan, 0.0, unused);
  const GenContext ctx2 = build_context(spec.gen, scene, in, plan_tokens, &res.reflection.tokens, cfg.plan_len);
  const TrajectoryRecord second =
      sample_trajectory(spec.gen, snap.gen_params, ctx2, cfg.T, 0.0, cfg.t_min, unused, &x_start);
  res.scene = decode_scene(second.latents.back(), scene, spec.limits);
  return res;
}

}  // namespace thinkedit
