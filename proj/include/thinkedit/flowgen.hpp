#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "core.hpp"
#include "rng.hpp"
#include "vocab.hpp"

namespace thinkedit {

// Architecture descriptor of the velocity network. It predicts the clean latent
//   x0hat = W2 tanh(W1 u + b1) + b2 + S u,   u = [x, t, ctx]
// and returns v = (x - x0hat) / max(t, t_min), the straight-path velocity.
// Flat layout: W1 (hidden x in, row-major) | b1 | W2 (d x hidden) | b2 | S (d x in).
struct GenArch {
  int n_obj = 3;
  int n_colors = 4;
  int hidden = 64;

  std::size_t d() const { return kAttrsPerObject * static_cast<std::size_t>(n_obj); }
  std::size_t d_ctx() const {
    const auto n = static_cast<std::size_t>(n_obj);
    const auto c = static_cast<std::size_t>(n_colors);
    // ref latent, planned latent, edit mask, selected slots, reflection activity,
    // family, descriptor, direction, magnitude, referent colour, target colour
    return 3 * d() + n + 1 + kNumFamilies + kNumDescriptors + kNumDirections + 1 + 2 * c;
  }
  std::size_t in_dim() const { return d() + 1 + d_ctx(); }
  std::size_t h() const { return static_cast<std::size_t>(hidden); }
  std::size_t n_params() const { return off_s() + d() * in_dim(); }

  std::size_t off_b1() const { return h() * in_dim(); }
  std::size_t off_w2() const { return off_b1() + h(); }
  std::size_t off_b2() const { return off_w2() + d() * h(); }
  std::size_t off_s() const { return off_b2() + d(); }
  double t_min = 1e-3;  // floor of the time divisor
};

struct GenContext {
  Vec values;
  bool operator==(const GenContext&) const = default;
};

// Conditioning vector for the generator: the reference scene, the effect of the
// plan (and reflection, when present) in latent space, and instruction features.
inline GenContext build_context(const GenArch& arch, const Scene& ref, const Instruction& in,
                                const std::vector<int>& plan, const std::vector<int>* reflection,
                                int plan_len) {
  const PlanVocab vocab(arch.n_obj, arch.n_colors);
  if (static_cast<int>(ref.size()) != arch.n_obj) throw ArgumentError("scene size differs from architecture");
  const PlanEffect eff = plan_effect(vocab, ref, plan, reflection);
  GenContext ctx;
  Vec& v = ctx.values;
  v.reserve(arch.d_ctx());
  const Vec lat = encode_scene(ref, arch.n_colors);
  v.insert(v.end(), lat.begin(), lat.end());
  v.insert(v.end(), eff.planned.begin(), eff.planned.end());
  v.insert(v.end(), eff.mask.begin(), eff.mask.end());
  v.insert(v.end(), eff.selected.begin(), eff.selected.end());
  int reflect_content = 0;
  if (reflection != nullptr) {
    for (int tok : *reflection) {
      if (tok == vocab.end()) break;
      ++reflect_content;
    }
  }
  v.push_back(static_cast<double>(reflect_content) / static_cast<double>(plan_len));
  auto one_hot = [&](int idx, int n) {
    for (int k = 0; k < n; ++k) v.push_back(k == idx ? 1.0 : 0.0);
  };
  one_hot(static_cast<int>(in.family), kNumFamilies);
  one_hot(static_cast<int>(in.referent), kNumDescriptors);
  const bool moves = in.family == Family::Move || in.family == Family::RelationalMove;
  one_hot(moves ? static_cast<int>(in.direction) : -1, kNumDirections);
  v.push_back(moves ? in.magnitude : 0.0);
  one_hot(in.referent_color, arch.n_colors);
  one_hot(in.target_color, arch.n_colors);
  return ctx;
}

// --- velocity network ------------------------------------------------------------

struct VelocityCache {
  Vec input;
  Vec hidden;  // tanh activations
  double t_div = 1.0;
};

inline Vec init_gen_params(const GenArch& arch, RngStream& rng) {
  Vec p(arch.n_params(), 0.0);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(arch.in_dim()));
  const double s2 = 0.5 / std::sqrt(static_cast<double>(arch.h()));
  for (std::size_t i = 0; i < arch.off_b1(); ++i) p[i] = s1 * rng.normal();
  for (std::size_t i = arch.off_w2(); i < arch.off_b2(); ++i) p[i] = s2 * rng.normal();
  return p;
}

inline Vec velocity(const GenArch& arch, std::span<const double> params, std::span<const double> x, double t,
                    const GenContext& ctx, VelocityCache* cache = nullptr) {
  if (params.size() != arch.n_params()) throw ArgumentError("velocity parameter count mismatch");
  if (x.size() != arch.d() || ctx.values.size() != arch.d_ctx()) throw ArgumentError("velocity input size mismatch");
  require_finite(t, "velocity time");
  for (double xi : x) require_finite(xi, "velocity input");

  const std::size_t in = arch.in_dim(), h = arch.h(), d = arch.d();
  VelocityCache local;
  VelocityCache& c = cache ? *cache : local;
  c.input.resize(in);
  std::copy(x.begin(), x.end(), c.input.begin());
  c.input[d] = t;
  std::copy(ctx.values.begin(), ctx.values.end(), c.input.begin() + static_cast<std::ptrdiff_t>(d + 1));

  c.hidden.resize(h);
  const double* w1 = params.data();
  const double* b1 = params.data() + arch.off_b1();
  for (std::size_t j = 0; j < h; ++j) {
    double a = b1[j];
    const double* row = w1 + j * in;
    for (std::size_t i = 0; i < in; ++i) a += row[i] * c.input[i];
    c.hidden[j] = std::tanh(a);
  }
  Vec v(d);
  const double* w2 = params.data() + arch.off_w2();
  const double* b2 = params.data() + arch.off_b2();
  const double* sk = params.data() + arch.off_s();
  c.t_div = std::max(t, arch.t_min);
  for (std::size_t o = 0; o < d; ++o) {
    double a = b2[o];
    const double* row = w2 + o * h;
    for (std::size_t j = 0; j < h; ++j) a += row[j] * c.hidden[j];
    const double* srow = sk + o * in;
    for (std::size_t i = 0; i < in; ++i) a += srow[i] * c.input[i];
    v[o] = (x[o] - a) / c.t_div;
  }
  return v;
}

// Accumulates scale * (dv)^T dv/dparams into grad.
inline void velocity_backward(const GenArch& arch, std::span<const double> params, const VelocityCache& c,
                              std::span<const double> dv, std::span<double> grad, double scale = 1.0) {
  const std::size_t in = arch.in_dim(), h = arch.h(), d = arch.d();
  const double* w2 = params.data() + arch.off_w2();
  double* gw1 = grad.data();
  double* gb1 = grad.data() + arch.off_b1();
  double* gw2 = grad.data() + arch.off_w2();
  double* gb2 = grad.data() + arch.off_b2();
  double* gs = grad.data() + arch.off_s();
  Vec dh(h, 0.0);
  for (std::size_t o = 0; o < d; ++o) {
    const double g = -scale * dv[o] / c.t_div;  // dv/dx0hat = -1 / t
    if (g == 0.0) continue;
    gb2[o] += g;
    double* srow = gs + o * in;
    for (std::size_t i = 0; i < in; ++i) srow[i] += g * c.input[i];
    double* grow = gw2 + o * h;
    const double* row = w2 + o * h;
    for (std::size_t j = 0; j < h; ++j) {
      grow[j] += g * c.hidden[j];
      dh[j] += g * row[j];
    }
  }
  for (std::size_t j = 0; j < h; ++j) {
    const double dpre = dh[j] * (1.0 - c.hidden[j] * c.hidden[j]);
    if (dpre == 0.0) continue;
    gb1[j] += dpre;
    double* grow = gw1 + j * in;
    for (std::size_t i = 0; i < in; ++i) grow[i] += dpre * c.input[i];
  }
}

// --- SDE transitions ---------------------------------------------------------------

inline double noise_level(double sigma_a, double t, double t_min) {
  const double tc = std::max(t, t_min);
  return sigma_a * std::sqrt(tc / (1.0 - tc + t_min));
}

struct StepDistribution {
  Vec mean;
  double sigma = 0.0;      // sigma_t
  double variance = 0.0;   // sigma_t^2 dt per coordinate
  double dmean_dv = 0.0;   // mean depends on v through this scalar factor
};

// Euler-Maruyama step of
//   dx = (v + sigma_t^2 / (2t) (x + (1 - t) v)) dt + sigma_t dw
// integrated backwards in time from t to t - dt.
inline StepDistribution step_distribution(const GenArch& arch, std::span<const double> params,
                                          std::span<const double> x, double t, double dt, double sigma_a,
                                          double t_min, const GenContext& ctx, VelocityCache* cache = nullptr) {
  if (!(dt > 0.0)) throw ArgumentError("step size must be positive");
  if (t - dt < -1e-12) throw ArgumentError("step would cross t = 0");
  const Vec v = velocity(arch, params, x, t, ctx, cache);
  StepDistribution s;
  s.sigma = noise_level(sigma_a, t, t_min);
  s.variance = s.sigma * s.sigma * dt;
  const double corr = s.sigma * s.sigma / (2.0 * std::max(t, t_min));
  s.dmean_dv = -dt * (1.0 + corr * (1.0 - t));
  s.mean.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) s.mean[i] = x[i] - dt * corr * x[i] + s.dmean_dv * v[i];
  return s;
}

inline double gaussian_logpdf(std::span<const double> x, std::span<const double> mean, double variance) {
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sq += (x[i] - mean[i]) * (x[i] - mean[i]);
  return -0.5 * sq / variance - 0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi * variance);
}

struct StepResult {
  Vec x_next;
  double logprob = 0.0;
};

inline StepResult sde_step(const GenArch& arch, std::span<const double> params, std::span<const double> x, double t,
                           double dt, double sigma_a, double t_min, const GenContext& ctx, RngStream& rng) {
  const StepDistribution s = step_distribution(arch, params, x, t, dt, sigma_a, t_min, ctx);
  StepResult r;
  if (s.variance == 0.0) {
    r.x_next = s.mean;
    r.logprob = 0.0;  // deterministic step; density undefined
    return r;
  }
  const double sd = std::sqrt(s.variance);
  r.x_next.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r.x_next[i] = s.mean[i] + sd * rng.normal();
  r.logprob = gaussian_logpdf(r.x_next, s.mean, s.variance);
  require_finite(r.logprob, "sde_step logprob");
  return r;
}

inline double transition_logprob(const GenArch& arch, std::span<const double> params, std::span<const double> x_t,
                                 std::span<const double> x_prev, double t, double dt, double sigma_a, double t_min,
                                 const GenContext& ctx) {
  if (!(sigma_a > 0.0)) throw ArgumentError("transition density is degenerate for sigma_a = 0");
  const StepDistribution s = step_distribution(arch, params, x_t, t, dt, sigma_a, t_min, ctx);
  return gaussian_logpdf(x_prev, s.mean, s.variance);
}

inline Vec time_grid(int T, double t_min) {
  Vec ts(static_cast<std::size_t>(T) + 1);
  for (int k = 0; k <= T; ++k) ts[static_cast<std::size_t>(k)] = 1.0 - (1.0 - t_min) * k / static_cast<double>(T);
  ts.back() = t_min;
  return ts;
}

inline TrajectoryRecord sample_trajectory(const GenArch& arch, std::span<const double> params, const GenContext& ctx,
                                          int T, double sigma_a, double t_min, RngStream& rng,
                                          const Vec* x_start = nullptr) {
  if (T < 1) throw ArgumentError("T must be >= 1");
  TrajectoryRecord rec;
  rec.times = time_grid(T, t_min);
  rec.context = ctx.values;
  Vec x(arch.d());
  if (x_start != nullptr) {
    if (x_start->size() != arch.d()) throw ArgumentError("initial latent size mismatch");
    x = *x_start;
  } else {
    for (auto& xi : x) xi = rng.normal();
  }
  rec.latents.push_back(x);
  for (int k = 0; k < T; ++k) {
    const double t = rec.times[static_cast<std::size_t>(k)];
    const double dt = t - rec.times[static_cast<std::size_t>(k) + 1];
    StepResult s = sde_step(arch, params, x, t, dt, sigma_a, t_min, ctx, rng);
    rec.logprobs_old.push_back(s.logprob);
    rec.noise_scale.push_back(noise_level(sigma_a, t, t_min));
    x = std::move(s.x_next);
    rec.latents.push_back(x);
  }
  return rec;
}

// --- decoding ----------------------------------------------------------------------

// Maps a latent to a scene; positions clamp to [-1, 1], sizes to [eps_size, s_max],
// colours to the nearest id. Every clamp is recorded in the scene's clamp flags.
inline Scene decode_scene(std::span<const double> x0, const Scene& tmpl, const SceneLimits& lim) {
  if (x0.size() != kAttrsPerObject * tmpl.size()) throw ArgumentError("latent dimension does not match template");
  std::vector<SceneObject> objs;
  std::vector<std::uint8_t> flags(x0.size(), 0);
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    const std::size_t b = kAttrsPerObject * i;
    SceneObject o;
    for (int a = 0; a < 2; ++a) {
      const double v = x0[b + a];
      require_finite(v, "decoded position");
      o.pos[a] = std::clamp(v, -1.0, 1.0);
      flags[b + a] = (v != o.pos[a]) ? 1 : 0;
    }
    require_finite(x0[b + 2], "decoded size");
    o.size = std::clamp(x0[b + 2], lim.eps_size, lim.s_max);
    flags[b + 2] = (o.size != x0[b + 2]) ? 1 : 0;
    require_finite(x0[b + 3], "decoded colour");
    if (lim.n_colors <= 1) {
      o.color_id = 0;
    } else {
      const double raw = (x0[b + 3] + 1.0) * 0.5 * static_cast<double>(lim.n_colors - 1);
      const long id = std::lround(raw);
      o.color_id = static_cast<int>(std::clamp<long>(id, 0, lim.n_colors - 1));
      flags[b + 3] = (o.color_id != id) ? 1 : 0;
    }
    o.shape_id = tmpl[i].shape_id;
    objs.push_back(o);
  }
  return Scene(std::move(objs), std::move(flags));
}

// --- generation objective ----------------------------------------------------------

struct GenSample {
  const TrajectoryRecord* trajectory = nullptr;
  double advantage = 0.0;
};

struct ObjectiveResult {
  double value = 0.0;
  Vec gradient;
  double clip_fraction = 0.0;
  double mean_kl = 0.0;
};

// Mean over samples and selected transitions of
//   min(r A, clip(r, 1-eps, 1+eps) A) - beta KL(new || ref)
// with r = exp(logp_new - logp_old) and the Gaussian KL at shared covariance.
// `steps` holds 0-based transition indices (0 is the step leaving t = 1).
inline ObjectiveResult gen_objective(const GenArch& arch, std::span<const GenSample> batch,
                                     std::span<const double> params_new, std::span<const double> params_ref,
                                     const TrainConfig& cfg, std::span<const std::size_t> steps) {
  if (batch.empty()) throw ArgumentError("gen_objective: empty batch");
  if (steps.empty()) throw ArgumentError("gen_objective: empty timestep subset");
  ObjectiveResult res;
  res.gradient.assign(arch.n_params(), 0.0);
  const double norm = 1.0 / static_cast<double>(batch.size() * steps.size());
  const std::size_t d = arch.d();
  std::size_t clipped = 0;
  VelocityCache cache;
  Vec dv(d);
  for (const GenSample& s : batch) {
    const TrajectoryRecord& tr = *s.trajectory;
    require_finite(s.advantage, "advantage");
    const GenContext ctx{tr.context};
    for (std::size_t k : steps) {
      if (k >= tr.steps()) throw ArgumentError("timestep index outside trajectory");
      const double t = tr.times[k];
      const double dt = t - tr.times[k + 1];
      const Vec& x = tr.latents[k];
      const Vec& x_prev = tr.latents[k + 1];
      const StepDistribution ref = step_distribution(arch, params_ref, x, t, dt, cfg.sigma_a, cfg.t_min, ctx);
      const StepDistribution cur = step_distribution(arch, params_new, x, t, dt, cfg.sigma_a, cfg.t_min, ctx, &cache);
      if (!(cur.variance > 0.0)) throw ArgumentError("gen_objective requires sigma_a > 0");
      const double lp = gaussian_logpdf(x_prev, cur.mean, cur.variance);
      const double ratio = std::exp(lp - tr.logprobs_old[k]);
      require_finite(ratio, "generation ratio");

      double kl = 0.0;
      for (std::size_t i = 0; i < d; ++i) kl += (cur.mean[i] - ref.mean[i]) * (cur.mean[i] - ref.mean[i]);
      kl /= 2.0 * cur.variance;

      const double unclipped = ratio * s.advantage;
      const double clipped_term = std::clamp(ratio, 1.0 - cfg.epsilon_clip, 1.0 + cfg.epsilon_clip) * s.advantage;
      const bool use_clip = clipped_branch_active(ratio, s.advantage, cfg.epsilon_clip);
      if (use_clip) ++clipped;
      res.value += norm * (std::min(unclipped, clipped_term) - cfg.beta_kl * kl);
      res.mean_kl += norm * kl;

      // d/dmean of the per-term objective, then chain through dmean/dv.
      const double surrogate_w = use_clip ? 0.0 : s.advantage * ratio;
      for (std::size_t i = 0; i < d; ++i) {
        const double dlp = (x_prev[i] - cur.mean[i]) / cur.variance;
        const double dkl = (cur.mean[i] - ref.mean[i]) / cur.variance;
        dv[i] = (surrogate_w * dlp - cfg.beta_kl * dkl) * cur.dmean_dv;
      }
      velocity_backward(arch, params_new, cache, dv, res.gradient, norm);
    }
  }
  res.clip_fraction = static_cast<double>(clipped) / static_cast<double>(batch.size() * steps.size());
  return res;
}

}  // namespace thinkedit
