#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace thinkedit {

using Vec = std::vector<double>;

inline constexpr std::size_t kRewardDims = 3;
inline constexpr std::size_t kAttrsPerObject = 4;

// --- errors -----------------------------------------------------------------

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ResolutionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what);
}

inline void require_finite(const Vec& v, const char* what) {
  for (double x : v) require_finite(x, what);
}

// True when min(r A, clip(r, 1-eps, 1+eps) A) takes the clipped (flat) branch.
inline bool clipped_branch_active(double ratio, double adv, double eps) {
  return (adv > 0.0 && ratio > 1.0 + eps) || (adv < 0.0 && ratio < 1.0 - eps);
}

// --- scene ------------------------------------------------------------------

enum class Attr : int { PosX = 0, PosY = 1, Size = 2, Color = 3 };

struct SceneLimits {
  int n_obj = 3;
  int n_colors = 4;
  int n_shapes = 3;
  double s_max = 1.0;
  double eps_size = 0.01;
};

struct SceneObject {
  std::array<double, 2> pos{0.0, 0.0};
  double size = 0.5;
  int color_id = 0;
  int shape_id = 0;

  bool operator==(const SceneObject&) const = default;
};

class Scene {
 public:
  Scene() = default;

  explicit Scene(std::vector<SceneObject> objects, std::vector<std::uint8_t> clamp_flags = {})
      : objects_(std::move(objects)), clamp_flags_(std::move(clamp_flags)) {
    for (const auto& o : objects_) {
      require_finite(o.pos[0], "scene position");
      require_finite(o.pos[1], "scene position");
      require_finite(o.size, "scene size");
      if (o.pos[0] < -1.0 || o.pos[0] > 1.0 || o.pos[1] < -1.0 || o.pos[1] > 1.0)
        throw ArgumentError("scene position outside [-1, 1]");
      if (!(o.size > 0.0)) throw ArgumentError("scene size must be positive");
      if (o.color_id < 0 || o.shape_id < 0) throw ArgumentError("negative vocabulary id");
    }
    if (!clamp_flags_.empty() && clamp_flags_.size() != kAttrsPerObject * objects_.size())
      throw ArgumentError("clamp flag count does not match object count");
  }

  const std::vector<SceneObject>& objects() const { return objects_; }
  const SceneObject& operator[](std::size_t i) const { return objects_.at(i); }
  std::size_t size() const { return objects_.size(); }

  // Per-attribute flags recorded when the scene was decoded from a latent;
  // empty for scenes that were never decoded.
  const std::vector<std::uint8_t>& clamp_flags() const { return clamp_flags_; }

  Scene with_object(std::size_t i, const SceneObject& o) const {
    auto objs = objects_;
    objs.at(i) = o;
    return Scene(std::move(objs));
  }

  void validate(const SceneLimits& lim) const {
    if (static_cast<int>(objects_.size()) != lim.n_obj)
      throw ArgumentError("scene object count differs from configured n_obj");
    for (const auto& o : objects_) {
      if (o.color_id >= lim.n_colors) throw ArgumentError("color id out of vocabulary");
      if (o.shape_id >= lim.n_shapes) throw ArgumentError("shape id out of vocabulary");
      if (o.size > lim.s_max) throw ArgumentError("size above s_max");
    }
  }

  // Equality ignores decoding metadata.
  bool operator==(const Scene& other) const { return objects_ == other.objects_; }

 private:
  std::vector<SceneObject> objects_;
  std::vector<std::uint8_t> clamp_flags_;
};

inline double attr_value(const SceneObject& o, Attr a) {
  switch (a) {
    case Attr::PosX: return o.pos[0];
    case Attr::PosY: return o.pos[1];
    case Attr::Size: return o.size;
    case Attr::Color: return static_cast<double>(o.color_id);
  }
  return 0.0;
}

// --- instructions -----------------------------------------------------------

enum class Family : int { Move = 0, ResizeMatch, Recolor, RelationalMove, Delete };
inline constexpr int kNumFamilies = 5;

enum class Descriptor : int {
  ByColor = 0,
  Largest,
  Smallest,
  Leftmost,
  Rightmost,
  Topmost,
  Bottommost,
  LeftmostOfColor,
  NearestToLargest,
};
inline constexpr int kNumDescriptors = 9;

enum class Direction : int { PosX = 0, NegX, PosY, NegY };
inline constexpr int kNumDirections = 4;

struct Instruction {
  Family family = Family::Move;
  Descriptor referent = Descriptor::ByColor;
  int referent_color = -1;  // ByColor / LeftmostOfColor
  Direction direction = Direction::PosX;
  double magnitude = 0.0;   // Move / RelationalMove
  int target_color = -1;    // Recolor

  bool operator==(const Instruction&) const = default;
};

inline Attr target_attr(const Instruction& in) {
  switch (in.family) {
    case Family::Move:
    case Family::RelationalMove:
      return (in.direction == Direction::PosX || in.direction == Direction::NegX) ? Attr::PosX
                                                                                   : Attr::PosY;
    case Family::ResizeMatch:
    case Family::Delete: return Attr::Size;
    case Family::Recolor: return Attr::Color;
  }
  return Attr::PosX;
}

inline double signed_magnitude(const Instruction& in) {
  return (in.direction == Direction::PosX || in.direction == Direction::PosY) ? in.magnitude
                                                                              : -in.magnitude;
}

// --- traces, trajectories, rewards ------------------------------------------

enum class Phase : int { Plan = 0, Reflect = 1 };

struct ReasoningTrace {
  std::vector<int> tokens;
  Vec logprobs_old;
  Phase phase = Phase::Plan;

  void validate() const {
    if (tokens.size() != logprobs_old.size())
      throw ArgumentError("trace logprob count differs from token count");
    for (double lp : logprobs_old) {
      require_finite(lp, "trace logprob");
      if (lp > 0.0) throw ArgumentError("trace logprob above zero");
    }
  }
  double total_logprob() const {
    double s = 0.0;
    for (double lp : logprobs_old) s += lp;
    return s;
  }
};

struct TrajectoryRecord {
  std::vector<Vec> latents;  // x_T ... x_0
  Vec times;                 // matching, strictly decreasing
  Vec logprobs_old;          // one per transition
  Vec noise_scale;           // sigma_t per transition
  Vec context;

  std::size_t steps() const { return logprobs_old.size(); }

  void validate() const {
    const std::size_t T = logprobs_old.size();
    if (latents.size() != T + 1 || times.size() != T + 1 || noise_scale.size() != T)
      throw ArgumentError("trajectory length mismatch");
    for (std::size_t k = 1; k < times.size(); ++k)
      if (!(times[k] < times[k - 1])) throw ArgumentError("trajectory times not decreasing");
    require_finite(logprobs_old, "trajectory logprob");
  }
};

enum class RewardDim : int { IF = 0, VC = 1, VQ = 2 };

struct RewardVector {
  std::array<double, kRewardDims> values{};

  RewardVector() = default;
  RewardVector(double instruction_following, double consistency, double quality)
      : values{instruction_following, consistency, quality} {
    for (double v : values) {
      require_finite(v, "reward");
      if (v < 0.0 || v > 1.0) throw ArgumentError("reward component outside [0, 1]");
    }
  }

  double operator[](std::size_t k) const { return values[k]; }
  double operator[](RewardDim k) const { return values[static_cast<std::size_t>(k)]; }
  double sum() const { return values[0] + values[1] + values[2]; }
  bool operator==(const RewardVector&) const = default;
};

enum class PassIndex : int { FirstPass = 0, Refined = 1 };

struct Candidate {
  ReasoningTrace trace_plan;
  std::optional<ReasoningTrace> trace_reflect;
  TrajectoryRecord trajectory;
  Scene scene_out;
  std::optional<RewardVector> reward;
  PassIndex pass_index = PassIndex::FirstPass;
};

struct PolicySnapshot {
  Vec und_params;
  Vec gen_params;

  bool operator==(const PolicySnapshot&) const = default;
};

// --- configuration ----------------------------------------------------------

struct TrainConfig {
  int G = 8;                      // group size
  int T = 10;                     // sampling steps
  double tau = 0.6;               // timestep selection ratio
  double epsilon_clip = 0.2;
  double beta_kl = 0.01;
  double sigma_a = 0.1;
  double eta = 1e-5;              // generation learning rate
  double eta_und = 2e-2;          // understanding learning rate
  int M = 300;                    // iterations
  std::uint64_t seed = 1;
  double t_min = 1e-3;
  double temperature_plan = 1.0;
  double sigma_floor = 1e-6;

  int batch_tasks = 16;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  double grad_clip = 0.0;         // 0 disables gradient-norm clipping
  bool shared_plan = false;       // one plan per task instead of one per member
  bool refined_credits_plan = true;  // refined members also credit the plan they were conditioned on

  int n_obj = 3;
  int hidden = 64;
  int plan_len = 4;               // L_max for plan and reflection traces

  int eval_every = 50;
  int eval_tasks = 64;
  int checkpoint_every = 100;

  std::uint64_t base_seed = 20240601;  // seed of the pretrained base generator
  int pretrain_steps = 4000;

  void validate() const {
    if (G < 2) throw ConfigError("G must be >= 2");
    if (T < 1) throw ConfigError("T must be >= 1");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
    if (!(epsilon_clip > 0.0)) throw ConfigError("epsilon_clip must be positive");
    if (!(beta_kl >= 0.0)) throw ConfigError("beta_kl must be non-negative");
    if (!(sigma_a >= 0.0)) throw ConfigError("sigma_a must be non-negative");
    if (!(t_min > 0.0 && t_min < 1.0)) throw ConfigError("t_min must lie in (0, 1)");
    if (!(eta >= 0.0) || !(eta_und >= 0.0)) throw ConfigError("learning rates must be >= 0");
    if (M < 0) throw ConfigError("M must be >= 0");
    if (!(temperature_plan >= 0.0)) throw ConfigError("temperature_plan must be >= 0");
    if (!(sigma_floor > 0.0)) throw ConfigError("sigma_floor must be positive");
    if (batch_tasks < 1) throw ConfigError("batch_tasks must be >= 1");
    if (n_obj < 1 || n_obj > 5) throw ConfigError("n_obj must lie in [1, 5]");
    if (hidden < 1) throw ConfigError("hidden must be >= 1");
    if (plan_len < 2) throw ConfigError("plan_len must be >= 2");
    if (eval_every < 1 || eval_tasks < 1 || checkpoint_every < 1)
      throw ConfigError("eval/checkpoint cadence must be >= 1");
  }

  std::size_t selected_steps() const {
    return static_cast<std::size_t>(std::ceil(tau * static_cast<double>(T) - 1e-12));
  }
};

}  // namespace thinkedit
