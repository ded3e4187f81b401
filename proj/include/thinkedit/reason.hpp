#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "core.hpp"
#include "env.hpp"
#include "rng.hpp"
#include "vocab.hpp"

namespace thinkedit {

// Relational per-slot features the understanding policy can point with.
inline constexpr int kRelFeatures = 9;

// Understanding policy: a position-summed scorer over the plan vocabulary,
//   logit[v] = B[phase][pos][v] + E[phase][prev][v] + sum_f g_f W[f][v]
//              + [v = SELECT(j)] <u, phi(j)>
// where g are global (scene, instruction, discrepancy) features and phi(j) are
// per-slot features combining the referent descriptor with relational facts.
struct UndArch {
  int n_obj = 3;
  int n_colors = 4;
  int plan_len = 4;

  PlanVocab vocab() const { return PlanVocab(n_obj, n_colors); }
  std::size_t V() const { return static_cast<std::size_t>(vocab().size()); }
  std::size_t L() const { return static_cast<std::size_t>(plan_len); }
  std::size_t n_global() const {
    return 1 + kNumFamilies + kNumDescriptors + kNumDirections * 4 + 2 * static_cast<std::size_t>(n_colors) +
           kSizeGrid + 3;
  }
  std::size_t n_slot() const { return kNumDescriptors * kRelFeatures + 2; }

  std::size_t off_bias() const { return 0; }
  std::size_t off_prev() const { return off_bias() + 2 * L() * V(); }
  std::size_t off_w() const { return off_prev() + 2 * (V() + 1) * V(); }
  std::size_t off_u() const { return off_w() + n_global() * V(); }
  std::size_t n_params() const { return off_u() + n_slot(); }
};

struct UndConditioning {
  Vec global;
  std::vector<Vec> slots;
  Phase phase = Phase::Plan;
};

namespace detail {

inline std::vector<Vec> relational_slot_features(const Scene& s, const Instruction& in) {
  const std::size_t n = s.size();
  auto flag_extreme = [&](auto key, std::vector<double>& out) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) best = std::max(best, key(i));
    for (std::size_t i = 0; i < n; ++i) out[i] = std::abs(key(i) - best) <= 1e-9 ? 1.0 : 0.0;
  };
  std::vector<std::vector<double>> rel(kRelFeatures, std::vector<double>(n, 0.0));
  flag_extreme([&](std::size_t i) { return s[i].size; }, rel[0]);
  flag_extreme([&](std::size_t i) { return -s[i].size; }, rel[1]);
  flag_extreme([&](std::size_t i) { return -s[i].pos[0]; }, rel[2]);
  flag_extreme([&](std::size_t i) { return s[i].pos[0]; }, rel[3]);
  flag_extreme([&](std::size_t i) { return s[i].pos[1]; }, rel[4]);
  flag_extreme([&](std::size_t i) { return -s[i].pos[1]; }, rel[5]);
  for (std::size_t i = 0; i < n; ++i) rel[6][i] = s[i].color_id == in.referent_color ? 1.0 : 0.0;
  {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
      if (rel[6][i] > 0.0) best = std::min(best, s[i].pos[0]);
    for (std::size_t i = 0; i < n; ++i)
      rel[7][i] = (rel[6][i] > 0.0 && std::abs(s[i].pos[0] - best) <= 1e-9) ? 1.0 : 0.0;
  }
  if (n > 1) {
    std::size_t big = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (s[i].size > s[big].size) big = i;
    double best = std::numeric_limits<double>::infinity();
    auto dist = [&](std::size_t i) { return std::hypot(s[i].pos[0] - s[big].pos[0], s[i].pos[1] - s[big].pos[1]); };
    for (std::size_t i = 0; i < n; ++i)
      if (i != big) best = std::min(best, dist(i));
    for (std::size_t i = 0; i < n; ++i) rel[8][i] = (i != big && std::abs(dist(i) - best) <= 1e-9) ? 1.0 : 0.0;
  } else {
    rel[8][0] = 1.0;
  }
  std::vector<Vec> slots(n, Vec(kNumDescriptors * kRelFeatures + 2, 0.0));
  const int desc = static_cast<int>(in.referent);
  for (std::size_t i = 0; i < n; ++i)
    for (int r = 0; r < kRelFeatures; ++r) slots[i][static_cast<std::size_t>(desc * kRelFeatures + r)] = rel[r][i];
  return slots;
}

inline Vec global_features(const UndArch& arch, const Scene& s, const Instruction& in) {
  Vec g;
  g.reserve(arch.n_global());
  auto one_hot = [&](int idx, int n) {
    for (int k = 0; k < n; ++k) g.push_back(k == idx ? 1.0 : 0.0);
  };
  g.push_back(1.0);
  one_hot(static_cast<int>(in.family), kNumFamilies);
  one_hot(static_cast<int>(in.referent), kNumDescriptors);
  const bool moves = in.family == Family::Move || in.family == Family::RelationalMove;
  int dm = -1;
  if (moves) {
    int mag = 0;
    for (std::size_t k = 0; k < kMoveMagnitudes.size(); ++k)
      if (std::abs(kMoveMagnitudes[k] - in.magnitude) < 1e-9) mag = static_cast<int>(k);
    dm = static_cast<int>(in.direction) * 4 + mag;
  }
  one_hot(dm, kNumDirections * 4);
  one_hot(in.target_color, arch.n_colors);
  one_hot(in.referent_color, arch.n_colors);
  double biggest = 0.0;
  for (const auto& o : s.objects()) biggest = std::max(biggest, o.size);
  one_hot(std::clamp(static_cast<int>(std::lround((biggest - 0.2) / 0.1)), 0, kSizeGrid - 1), kSizeGrid);
  g.insert(g.end(), 3, 0.0);  // discrepancy summary, reflection only
  return g;
}

}  // namespace detail

inline UndConditioning plan_conditioning(const UndArch& arch, const Scene& scene, const Instruction& in) {
  return {detail::global_features(arch, scene, in), detail::relational_slot_features(scene, in), Phase::Plan};
}

// Discrepancy encoding: per-slot flag of objects whose attributes left tolerance.
inline Vec discrepancy(const Scene& ref, const Scene& out) {
  if (ref.size() != out.size()) throw ArgumentError("discrepancy needs scenes of equal size");
  Vec d(ref.size(), 0.0);
  for (std::size_t i = 0; i < ref.size(); ++i) d[i] = object_preserved(ref[i], out[i]) ? 0.0 : 1.0;
  return d;
}

inline UndConditioning reflection_conditioning(const UndArch& arch, const Scene& ref, const Scene& out,
                                               const Instruction& in, const ReasoningTrace& plan) {
  UndConditioning c = plan_conditioning(arch, ref, in);
  c.phase = Phase::Reflect;
  const Vec diff = discrepancy(ref, out);
  double changed = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    changed += diff[i];
    c.slots[i][arch.n_slot() - 2] = diff[i];
  }
  const PlanVocab vocab = arch.vocab();
  for (int tok : plan.tokens) {
    const TokenInfo t = vocab.info(tok);
    if (t.kind == TokenKind::End) break;
    if (t.kind == TokenKind::Select) c.slots[static_cast<std::size_t>(t.slot)][arch.n_slot() - 1] = 1.0;
  }
  const std::size_t base = arch.n_global() - 3;
  c.global[base + static_cast<std::size_t>(std::min(changed, 2.0))] = 1.0;
  return c;
}

// --- parameters ------------------------------------------------------------------

// Prior of the untrained planner. It writes SELECT, then an attribute token of
// the kind the instruction family calls for, then END. Which slot and which
// value are left uninformed; the reflection phase leans toward an empty trace.
inline Vec init_und_params(const UndArch& arch, RngStream& rng) {
  Vec p(arch.n_params(), 0.0);
  const PlanVocab vocab = arch.vocab();
  const std::size_t V = arch.V(), L = arch.L();
  auto bias = [&](int phase, std::size_t pos, int tok) -> double& {
    return p[arch.off_bias() + (static_cast<std::size_t>(phase) * L + pos) * V + static_cast<std::size_t>(tok)];
  };
  auto prev = [&](int phase, int prev_tok, int tok) -> double& {
    return p[arch.off_prev() + (static_cast<std::size_t>(phase) * (V + 1) + static_cast<std::size_t>(prev_tok + 1)) * V +
             static_cast<std::size_t>(tok)];
  };
  for (int ph = 0; ph < 2; ++ph) {
    for (int j = 0; j < vocab.n_obj(); ++j) bias(ph, 0, vocab.select(j)) = 5.0;
    if (ph == 1) bias(ph, 0, vocab.end()) = 6.5;
    for (int j = 0; j < vocab.n_obj(); ++j)
      for (int tok = vocab.shift_x(0); tok < vocab.noop(); ++tok) prev(ph, vocab.select(j), tok) = 4.0;
    for (int tok = vocab.shift_x(0); tok < vocab.noop(); ++tok) prev(ph, tok, vocab.end()) = 6.0;
    prev(ph, vocab.noop(), vocab.end()) = 6.0;
  }
  // family -> token kind, on the family one-hot of the global features
  auto family_row = [&](Family f) { return arch.off_w() + (1 + static_cast<std::size_t>(f)) * V; };
  auto favour = [&](Family f, int lo, int hi) {
    for (int tok = lo; tok < hi; ++tok) p[family_row(f) + static_cast<std::size_t>(tok)] = 2.0;
  };
  favour(Family::Move, vocab.shift_x(0), vocab.set_size(0));
  favour(Family::RelationalMove, vocab.shift_x(0), vocab.set_size(0));
  favour(Family::ResizeMatch, vocab.set_size(0), vocab.set_color(0));
  favour(Family::Delete, vocab.set_size(0), vocab.set_color(0));
  favour(Family::Recolor, vocab.set_color(0), vocab.noop());
  // weak grounding: each descriptor leans on its own relational feature
  constexpr std::array<int, kNumDescriptors> own_feature{6, 0, 1, 2, 3, 4, 5, 7, 8};
  constexpr double kGroundingPrior = 2.0;
  for (int d = 0; d < kNumDescriptors; ++d)
    p[arch.off_u() + static_cast<std::size_t>(d * kRelFeatures + own_feature[static_cast<std::size_t>(d)])] = kGroundingPrior;
  for (std::size_t i = arch.off_w(); i < arch.n_params(); ++i) p[i] += 0.01 * rng.normal();
  return p;
}

namespace detail {

// Logits for the next token given position and previous token.
inline void und_logits(const UndArch& arch, std::span<const double> p, const UndConditioning& c, std::size_t pos,
                       int prev_tok, Vec& out) {
  const std::size_t V = arch.V(), L = arch.L();
  const auto ph = static_cast<std::size_t>(c.phase);
  out.assign(V, 0.0);
  const double* b = p.data() + arch.off_bias() + (ph * L + std::min(pos, L - 1)) * V;
  const double* e = p.data() + arch.off_prev() + (ph * (V + 1) + static_cast<std::size_t>(prev_tok + 1)) * V;
  for (std::size_t v = 0; v < V; ++v) out[v] = b[v] + e[v];
  const double* w = p.data() + arch.off_w();
  for (std::size_t f = 0; f < c.global.size(); ++f) {
    const double g = c.global[f];
    if (g == 0.0) continue;
    const double* row = w + f * V;
    for (std::size_t v = 0; v < V; ++v) out[v] += g * row[v];
  }
  const double* u = p.data() + arch.off_u();
  for (std::size_t j = 0; j < c.slots.size(); ++j) {
    double s = 0.0;
    for (std::size_t q = 0; q < c.slots[j].size(); ++q) s += u[q] * c.slots[j][q];
    out[j] += s;
  }
  for (double l : out) require_finite(l, "understanding logits");
}

inline void und_logits_backward(const UndArch& arch, const UndConditioning& c, std::size_t pos, int prev_tok,
                                std::span<const double> dl, std::span<double> grad) {
  const std::size_t V = arch.V(), L = arch.L();
  const auto ph = static_cast<std::size_t>(c.phase);
  double* b = grad.data() + arch.off_bias() + (ph * L + std::min(pos, L - 1)) * V;
  double* e = grad.data() + arch.off_prev() + (ph * (V + 1) + static_cast<std::size_t>(prev_tok + 1)) * V;
  for (std::size_t v = 0; v < V; ++v) {
    b[v] += dl[v];
    e[v] += dl[v];
  }
  double* w = grad.data() + arch.off_w();
  for (std::size_t f = 0; f < c.global.size(); ++f) {
    const double g = c.global[f];
    if (g == 0.0) continue;
    double* row = w + f * V;
    for (std::size_t v = 0; v < V; ++v) row[v] += g * dl[v];
  }
  double* u = grad.data() + arch.off_u();
  for (std::size_t j = 0; j < c.slots.size(); ++j)
    for (std::size_t q = 0; q < c.slots[j].size(); ++q) u[q] += dl[j] * c.slots[j][q];
}

// Numerically stable log-softmax.
inline Vec log_softmax(const Vec& logits, double temperature = 1.0) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logits) mx = std::max(mx, l / temperature);
  double z = 0.0;
  for (double l : logits) z += std::exp(l / temperature - mx);
  const double lz = mx + std::log(z);
  Vec out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] / temperature - lz;
  return out;
}

}  // namespace detail

inline Vec softmax(const Vec& logits) {
  Vec lp = detail::log_softmax(logits);
  for (double& x : lp) x = std::exp(x);
  return lp;
}

inline Vec next_token_logits(const UndArch& arch, std::span<const double> params, const UndConditioning& c,
                             std::size_t pos, int prev_tok) {
  Vec out;
  detail::und_logits(arch, params, c, pos, prev_tok, out);
  return out;
}

// Samples until END or max_len tokens. temperature 0 means argmax decoding.
// Recorded logprobs are always at temperature 1.
inline ReasoningTrace sample_trace(const UndArch& arch, std::span<const double> params, const UndConditioning& c,
                                   double temperature, std::size_t max_len, RngStream& rng) {
  if (params.size() != arch.n_params()) throw ArgumentError("understanding parameter count mismatch");
  const PlanVocab vocab = arch.vocab();
  ReasoningTrace tr;
  tr.phase = c.phase;
  Vec logits;
  int prev = -1;
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    detail::und_logits(arch, params, c, pos, prev, logits);
    const Vec lp = detail::log_softmax(logits);
    int tok = 0;
    if (temperature <= 0.0) {
      tok = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    } else {
      const Vec lpt = detail::log_softmax(logits, temperature);
      double u = rng.uniform();
      tok = static_cast<int>(lpt.size()) - 1;
      for (std::size_t v = 0; v < lpt.size(); ++v) {
        u -= std::exp(lpt[v]);
        if (u < 0.0) {
          tok = static_cast<int>(v);
          break;
        }
      }
    }
    tr.tokens.push_back(tok);
    tr.logprobs_old.push_back(std::min(0.0, lp[static_cast<std::size_t>(tok)]));
    prev = tok;
    if (tok == vocab.end()) break;
  }
  return tr;
}

inline ReasoningTrace sample_plan(const UndArch& arch, std::span<const double> params, const Scene& scene,
                                  const Instruction& in, double temperature, RngStream& rng,
                                  std::size_t max_len = 0) {
  if (temperature < 0.0) throw ArgumentError("temperature must be non-negative");
  return sample_trace(arch, params, plan_conditioning(arch, scene, in), temperature,
                      max_len == 0 ? arch.L() : max_len, rng);
}

inline ReasoningTrace sample_reflection(const UndArch& arch, std::span<const double> params, const Scene& scene_ref,
                                        const Scene& scene_out, const Instruction& in, const ReasoningTrace& plan,
                                        double temperature, RngStream& rng) {
  return sample_trace(arch, params, reflection_conditioning(arch, scene_ref, scene_out, in, plan), temperature,
                      arch.L(), rng);
}

// Sum of per-token log-probabilities; accumulates scale * gradient when grad is non-empty.
inline double seq_logprob(const UndArch& arch, std::span<const double> params, const ReasoningTrace& trace,
                          const UndConditioning& c, std::span<double> grad = {}, double scale = 1.0) {
  const PlanVocab vocab = arch.vocab();
  double total = 0.0;
  Vec logits, dl(arch.V());
  int prev = -1;
  for (std::size_t pos = 0; pos < trace.tokens.size(); ++pos) {
    const int tok = trace.tokens[pos];
    if (!vocab.valid(tok)) throw ArgumentError("trace token outside vocabulary");
    detail::und_logits(arch, params, c, pos, prev, logits);
    const Vec lp = detail::log_softmax(logits);
    total += lp[static_cast<std::size_t>(tok)];
    if (!grad.empty()) {
      for (std::size_t v = 0; v < dl.size(); ++v) dl[v] = -scale * std::exp(lp[v]);
      dl[static_cast<std::size_t>(tok)] += scale;
      detail::und_logits_backward(arch, c, pos, prev, dl, grad);
    }
    prev = tok;
  }
  return total;
}

// Sum over realised positions of KL(p_new(.|prefix) || p_ref(.|prefix)).
inline double seq_kl(const UndArch& arch, std::span<const double> params_new, std::span<const double> params_ref,
                     const ReasoningTrace& trace, const UndConditioning& c, std::span<double> grad = {},
                     double scale = 1.0) {
  double total = 0.0;
  Vec ln, lr, dl(arch.V());
  int prev = -1;
  for (std::size_t pos = 0; pos < trace.tokens.size(); ++pos) {
    detail::und_logits(arch, params_new, c, pos, prev, ln);
    detail::und_logits(arch, params_ref, c, pos, prev, lr);
    const Vec lpn = detail::log_softmax(ln), lpr = detail::log_softmax(lr);
    double kl = 0.0;
    for (std::size_t v = 0; v < lpn.size(); ++v) kl += std::exp(lpn[v]) * (lpn[v] - lpr[v]);
    total += kl;
    if (!grad.empty()) {
      for (std::size_t v = 0; v < dl.size(); ++v) dl[v] = scale * std::exp(lpn[v]) * (lpn[v] - lpr[v] - kl);
      detail::und_logits_backward(arch, c, pos, prev, dl, grad);
    }
    prev = trace.tokens[pos];
  }
  return total;
}

struct UndSample {
  const ReasoningTrace* trace = nullptr;
  const UndConditioning* conditioning = nullptr;
  double advantage = 0.0;
};

struct UndObjectiveResult {
  double value = 0.0;
  Vec gradient;
  double clip_fraction = 0.0;
  double mean_kl = 0.0;
};

// Sequence-level clipped surrogate minus beta times the mean per-sequence KL.
inline UndObjectiveResult und_objective(const UndArch& arch, std::span<const UndSample> batch,
                                        std::span<const double> params_new, std::span<const double> params_ref,
                                        const TrainConfig& cfg) {
  if (batch.empty()) throw ArgumentError("und_objective: empty batch");
  UndObjectiveResult res;
  res.gradient.assign(arch.n_params(), 0.0);
  const double norm = 1.0 / static_cast<double>(batch.size());
  std::size_t clipped = 0;
  Vec g(arch.n_params());
  for (const UndSample& s : batch) {
    require_finite(s.advantage, "advantage");
    std::fill(g.begin(), g.end(), 0.0);
    const double lp_new = seq_logprob(arch, params_new, *s.trace, *s.conditioning, g, 1.0);
    const double ratio = std::exp(lp_new - s.trace->total_logprob());
    require_finite(ratio, "understanding ratio");
    const double unclipped = ratio * s.advantage;
    const double clipped_term = std::clamp(ratio, 1.0 - cfg.epsilon_clip, 1.0 + cfg.epsilon_clip) * s.advantage;
    const bool use_clip = clipped_branch_active(ratio, s.advantage, cfg.epsilon_clip);
    if (use_clip) ++clipped;
    const double kl = seq_kl(arch, params_new, params_ref, *s.trace, *s.conditioning, res.gradient,
                             -norm * cfg.beta_kl);
    res.value += norm * (std::min(unclipped, clipped_term) - cfg.beta_kl * kl);
    res.mean_kl += norm * kl;
    if (!use_clip) {
      const double w = norm * s.advantage * ratio;
      for (std::size_t i = 0; i < g.size(); ++i) res.gradient[i] += w * g[i];
    }
  }
  res.clip_fraction = static_cast<double>(clipped) / static_cast<double>(batch.size());
  return res;
}

}  // namespace thinkedit
