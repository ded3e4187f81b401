#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include "core.hpp"
#include "env.hpp"
#include "flowgen.hpp"
#include "optim.hpp"
#include "reason.hpp"
#include "rng.hpp"
#include "sampling.hpp"
#include "vocab.hpp"

namespace thinkedit {

// Token sequence that carries out the instruction exactly: SELECT(r), one
// attribute token, END.
inline std::vector<int> oracle_plan(const PlanVocab& v, const Scene& scene, const Instruction& in) {
  const std::size_t r = resolve_referent(scene, in);
  const double goal = instructed_value(scene, in, r);
  int edit = v.noop();
  auto nearest = [](auto const& bins, double x) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < bins.size(); ++i)
      if (std::abs(bins[i] - x) < std::abs(bins[best] - x)) best = i;
    return static_cast<int>(best);
  };
  switch (target_attr(in)) {
    case Attr::PosX: edit = v.shift_x(nearest(kShiftBins, signed_magnitude(in))); break;
    case Attr::PosY: edit = v.shift_y(nearest(kShiftBins, signed_magnitude(in))); break;
    case Attr::Size: edit = v.set_size(nearest(kSizeBins, goal)); break;
    case Attr::Color: edit = v.set_color(static_cast<int>(goal)); break;
  }
  return {v.select(static_cast<int>(r)), edit, v.end()};
}

namespace detail {

inline int random_edit_token(const PlanVocab& v, RngStream& rng) {
  const int first = v.shift_x(0);
  return first + static_cast<int>(rng.below(static_cast<std::uint64_t>(v.noop() - first)));
}

// Plans the base generator is taught to execute: correct ones, wrong ones and
// empty ones, so that it follows whatever it is told.
inline std::vector<int> pretrain_plan(const PlanVocab& v, const Task& task, RngStream& rng) {
  const double u = rng.uniform();
  const int slot = static_cast<int>(rng.below(static_cast<std::uint64_t>(v.n_obj())));
  if (u < 0.4) return oracle_plan(v, task.scene, task.instruction);
  if (u < 0.7) {
    std::vector<int> p{v.select(slot), random_edit_token(v, rng)};
    if (rng.below(3) == 0) p.push_back(random_edit_token(v, rng));
    p.push_back(v.end());
    return p;
  }
  if (u < 0.8) return {v.select(slot), v.end()};
  if (u < 0.9) return {v.noop(), v.end()};
  return {v.end()};
}

inline std::vector<int> pretrain_reflection(const PlanVocab& v, RngStream& rng) {
  if (rng.below(2) == 0) return {v.end()};
  const int slot = static_cast<int>(rng.below(static_cast<std::uint64_t>(v.n_obj())));
  return {v.select(slot), random_edit_token(v, rng), v.end()};
}

}  // namespace detail

struct PretrainOptions {
  int steps = 4000;
  int batch = 32;
  double lr = 3e-3;
  double lr_final = 1e-4;
};

// Supervised flow matching toward the planned latent on x_t = t eps + (1 - t) x0.
// The loss |v - (eps - x0)|^2 t^2 equals the clean-latent error |x0hat - x0|^2.
// Half of the times are drawn from the sampling grid, the rest uniformly.
inline Vec pretrain_generator(const ModelSpec& spec, const TrainConfig& cfg, const PretrainOptions& opt,
                              RngStream& rng) {
  const GenArch& arch = spec.gen;
  const PlanVocab vocab = spec.und.vocab();
  Vec params = init_gen_params(arch, rng);
  AdamW adam(params.size(), AdamWConfig{opt.lr, 0.9, 0.999, 1e-8, 0.0});
  const Vec grid = time_grid(cfg.T, cfg.t_min);
  Vec grad(params.size());
  Vec xt(arch.d()), dv(arch.d());
  VelocityCache cache;
  for (int step = 0; step < opt.steps; ++step) {
    const double frac = opt.steps > 1 ? static_cast<double>(step) / (opt.steps - 1) : 1.0;
    adam.set_lr(opt.lr * std::pow(opt.lr_final / opt.lr, frac));
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int b = 0; b < opt.batch; ++b) {
      const Task task = make_mixed_task(spec.limits, rng);
      const std::vector<int> plan = detail::pretrain_plan(vocab, task, rng);
      std::vector<int> refl;
      const bool with_refl = rng.below(2) == 0;
      if (with_refl) refl = detail::pretrain_reflection(vocab, rng);
      const GenContext ctx =
          build_context(arch, task.scene, task.instruction, plan, with_refl ? &refl : nullptr, cfg.plan_len);
      const Vec x0 = plan_effect(vocab, task.scene, plan, with_refl ? &refl : nullptr).planned;
      const double t = rng.below(2) == 0 ? grid[rng.below(static_cast<std::uint64_t>(cfg.T))]
                                         : cfg.t_min + (1.0 - cfg.t_min) * rng.uniform();
      Vec eps(arch.d());
      for (std::size_t i = 0; i < arch.d(); ++i) {
        eps[i] = rng.normal();
        xt[i] = t * eps[i] + (1.0 - t) * x0[i];
      }
      const Vec v = velocity(arch, params, xt, t, ctx, &cache);
      for (std::size_t i = 0; i < arch.d(); ++i) dv[i] = t * t * (v[i] - (eps[i] - x0[i]));
      velocity_backward(arch, params, cache, dv, grad, -2.0 / opt.batch);  // ascent on -loss
    }
    adam.ascend(params, grad);
  }
  require_finite(params, "pretrained generator");
  return params;
}

// Starting point shared by every run: the format-prior planner and the
// pretrained generator, both keyed by base_seed.
inline PolicySnapshot make_base_snapshot(const ModelSpec& spec, const TrainConfig& cfg) {
  using Key = std::tuple<int, int, int, int, std::uint64_t, int, int, double>;
  static std::map<Key, PolicySnapshot> memo;
  static std::mutex mu;
  const Key key{spec.limits.n_obj, spec.limits.n_colors, spec.gen.hidden, spec.und.plan_len,
                cfg.base_seed,     cfg.pretrain_steps,   cfg.T,           cfg.t_min};
  std::lock_guard<std::mutex> lock(mu);
  if (auto it = memo.find(key); it != memo.end()) return it->second;
  RngStream root(cfg.base_seed);
  RngStream und_rng = root.split();
  RngStream gen_rng = root.split();
  PolicySnapshot snap;
  snap.und_params = init_und_params(spec.und, und_rng);
  PretrainOptions opt;
  opt.steps = cfg.pretrain_steps;
  snap.gen_params = pretrain_generator(spec, cfg, opt, gen_rng);
  memo.emplace(key, snap);
  return snap;
}

}  // namespace thinkedit
