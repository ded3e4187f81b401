#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "core.hpp"
#include "env.hpp"
#include "rng.hpp"

namespace thinkedit {

// Consistency normalisation: a non-target displaced by this much costs a full point.
inline constexpr double kConsistencyDMax = 0.5;

// Noise model standing in for a VLM judge.
struct JudgeNoise {
  double flip_prob = 0.1;       // per-item verdict flip for checklist judging
  double interval_sigma = 0.8;  // additive noise on the 1-5 interval scale

  void validate() const {
    if (!(flip_prob >= 0.0 && flip_prob < 0.5)) throw ConfigError("flip_prob must lie in [0, 0.5)");
    if (!(interval_sigma >= 0.0)) throw ConfigError("interval_sigma must be >= 0");
  }
};

inline std::vector<bool> checklist_verdicts(const Checklist& cl, const Scene& ref, const Scene& out) {
  std::vector<bool> v;
  v.reserve(cl.items.size());
  for (const auto& it : cl.items) v.push_back(evaluate_item(it, ref, out));
  return v;
}

// Fraction of checklist items judged true; with noise every verdict flips
// independently with probability flip_prob.
inline double eval_checklist(const Checklist& cl, const Scene& ref, const Scene& out, const JudgeNoise* noise,
                             RngStream& rng) {
  if (cl.items.empty()) throw ArgumentError("checklist is empty");
  std::size_t yes = 0;
  for (const auto& it : cl.items) {
    bool v = evaluate_item(it, ref, out);
    if (noise != nullptr && noise->flip_prob > 0.0 && rng.uniform() < noise->flip_prob) v = !v;
    yes += v ? 1 : 0;
  }
  return static_cast<double>(yes) / static_cast<double>(cl.items.size());
}

// Interval judge: latent quality u in [0,1] -> 1 + 4u, plus Gaussian noise,
// rounded and clamped to {1..5}, reported as (s - 1) / 4.
inline double interval_from_quality(double u, const JudgeNoise* noise, RngStream& rng) {
  double s = 1.0 + 4.0 * u;
  if (noise != nullptr && noise->interval_sigma > 0.0) s += noise->interval_sigma * rng.normal();
  const double r = std::clamp(std::round(s), 1.0, 5.0);
  return (r - 1.0) / 4.0;
}

inline double interval_score(const Scene& ref, const Scene& out, const Instruction& in, const JudgeNoise* noise,
                             RngStream& rng) {
  const Checklist cl = build_checklist(ref, in);
  const auto v = checklist_verdicts(cl, ref, out);
  const double u = static_cast<double>(std::count(v.begin(), v.end(), true)) / static_cast<double>(v.size());
  return interval_from_quality(u, noise, rng);
}

inline double consistency_reward(const Scene& ref, const Scene& out, const Instruction& in) {
  if (ref.size() != out.size()) throw ArgumentError("consistency_reward: object counts differ");
  const std::size_t target = resolve_referent(ref, in);
  if (ref.size() <= 1) return 1.0;
  double total = 0.0;
  for (std::size_t j = 0; j < ref.size(); ++j) {
    if (j == target) continue;
    const auto& a = ref[j];
    const auto& b = out[j];
    double disp = std::hypot(a.pos[0] - b.pos[0], a.pos[1] - b.pos[1]) + std::abs(a.size - b.size);
    if (a.color_id != b.color_id) disp += kConsistencyDMax;
    total += disp / kConsistencyDMax;
  }
  const double mean = total / static_cast<double>(ref.size() - 1);
  return 1.0 - std::clamp(mean, 0.0, 1.0);
}

// 1 - fraction of attributes that hit a clamp bound while decoding.
inline double quality_reward(const Scene& out) {
  const auto& flags = out.clamp_flags();
  if (flags.empty()) return 1.0;
  const auto hits = std::count_if(flags.begin(), flags.end(), [](std::uint8_t f) { return f != 0; });
  return 1.0 - static_cast<double>(hits) / static_cast<double>(flags.size());
}

struct TaskContext {
  const Scene* scene = nullptr;
  const Instruction* instruction = nullptr;
  const Checklist* checklist = nullptr;
};

// Reward-provider contract: (candidate, task) -> RewardVector, with no side
// effects beyond drawing from the supplied stream.
class RewardProvider {
 public:
  virtual ~RewardProvider() = default;
  virtual RewardVector score(const Scene& scene_out, const TaskContext& task, RngStream& rng) const = 0;
};

// IF from the checklist judge.
class ChecklistRewards final : public RewardProvider {
 public:
  explicit ChecklistRewards(std::optional<JudgeNoise> noise = std::nullopt) : noise_(noise) {}
  RewardVector score(const Scene& out, const TaskContext& task, RngStream& rng) const override {
    const JudgeNoise* n = noise_ ? &*noise_ : nullptr;
    return {eval_checklist(*task.checklist, *task.scene, out, n, rng),
            consistency_reward(*task.scene, out, *task.instruction), quality_reward(out)};
  }

 private:
  std::optional<JudgeNoise> noise_;
};

// IF from the 1-5 interval judge.
class IntervalRewards final : public RewardProvider {
 public:
  explicit IntervalRewards(std::optional<JudgeNoise> noise = std::nullopt) : noise_(noise) {}
  RewardVector score(const Scene& out, const TaskContext& task, RngStream& rng) const override {
    const JudgeNoise* n = noise_ ? &*noise_ : nullptr;
    return {interval_score(*task.scene, out, *task.instruction, n, rng),
            consistency_reward(*task.scene, out, *task.instruction), quality_reward(out)};
  }

 private:
  std::optional<JudgeNoise> noise_;
};

inline RewardVector reward_candidate(const Candidate& c, const Scene& ref, const Instruction& in,
                                     const Checklist& cl, const JudgeNoise* noise, RngStream& rng) {
  return {eval_checklist(cl, ref, c.scene_out, noise, rng), consistency_reward(ref, c.scene_out, in),
          quality_reward(c.scene_out)};
}

}  // namespace thinkedit
