#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "core.hpp"
#include "rng.hpp"

namespace thinkedit {

// Tolerances used by checklist predicates and the task generator.
inline constexpr double kPosTolerance = 0.05;
inline constexpr double kSizeRelTolerance = 0.10;
inline constexpr double kDeleteSize = 0.05;
inline constexpr double kDeleteTolerance = 0.05;
inline constexpr double kPlacementLimit = 0.9;  // instructed positions stay inside this box
inline constexpr std::array<double, 4> kMoveMagnitudes{0.2, 0.3, 0.4, 0.5};
inline constexpr int kSizeGrid = 8;             // sizes 0.2, 0.3, ..., 0.9
inline constexpr int kMaxPreserveItems = 3;

inline const char* family_name(Family f) {
  switch (f) {
    case Family::Move: return "MOVE";
    case Family::ResizeMatch: return "RESIZE-MATCH";
    case Family::Recolor: return "RECOLOR";
    case Family::RelationalMove: return "RELATIONAL-MOVE";
    case Family::Delete: return "DELETE";
  }
  return "?";
}

inline Family family_from_name(const std::string& s) {
  for (int f = 0; f < kNumFamilies; ++f)
    if (s == family_name(static_cast<Family>(f))) return static_cast<Family>(f);
  throw ConfigError("unregistered task family: " + s);
}

inline const char* descriptor_name(Descriptor d) {
  switch (d) {
    case Descriptor::ByColor: return "by-color";
    case Descriptor::Largest: return "largest";
    case Descriptor::Smallest: return "smallest";
    case Descriptor::Leftmost: return "leftmost";
    case Descriptor::Rightmost: return "rightmost";
    case Descriptor::Topmost: return "topmost";
    case Descriptor::Bottommost: return "bottommost";
    case Descriptor::LeftmostOfColor: return "leftmost-of-color";
    case Descriptor::NearestToLargest: return "nearest-to-largest";
  }
  return "?";
}

inline bool is_relational(Descriptor d) { return d != Descriptor::ByColor; }

inline double size_tolerance(double goal) { return kSizeRelTolerance * goal; }

// --- referent resolution ------------------------------------------------------

namespace detail {

// Index of the unique extremum of key over candidates; throws on ties.
template <class Key>
std::size_t unique_argmax(const std::vector<std::size_t>& cands, Key key) {
  if (cands.empty()) throw ResolutionError("no object matches the referent descriptor");
  std::size_t best = cands[0];
  double best_v = key(cands[0]);
  bool tie = false;
  for (std::size_t k = 1; k < cands.size(); ++k) {
    const double v = key(cands[k]);
    if (v > best_v + 1e-9) {
      best = cands[k];
      best_v = v;
      tie = false;
    } else if (std::abs(v - best_v) <= 1e-9) {
      tie = true;
    }
  }
  if (tie) throw ResolutionError("ambiguous referent: tie in relational descriptor");
  return best;
}

inline std::vector<std::size_t> all_indices(const Scene& s) {
  std::vector<std::size_t> idx(s.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

}  // namespace detail

// The single resolver shared by oracle edits, checklists and rewards.
inline std::size_t resolve_referent(const Scene& scene, const Instruction& in) {
  using detail::unique_argmax;
  const auto all = detail::all_indices(scene);
  auto of_color = [&](int c) {
    std::vector<std::size_t> out;
    for (std::size_t i : all)
      if (scene[i].color_id == c) out.push_back(i);
    return out;
  };
  switch (in.referent) {
    case Descriptor::ByColor: {
      const auto m = of_color(in.referent_color);
      if (m.size() != 1) throw ResolutionError("color descriptor does not name exactly one object");
      return m[0];
    }
    case Descriptor::Largest:
      return unique_argmax(all, [&](std::size_t i) { return scene[i].size; });
    case Descriptor::Smallest:
      return unique_argmax(all, [&](std::size_t i) { return -scene[i].size; });
    case Descriptor::Leftmost:
      return unique_argmax(all, [&](std::size_t i) { return -scene[i].pos[0]; });
    case Descriptor::Rightmost:
      return unique_argmax(all, [&](std::size_t i) { return scene[i].pos[0]; });
    case Descriptor::Topmost:
      return unique_argmax(all, [&](std::size_t i) { return scene[i].pos[1]; });
    case Descriptor::Bottommost:
      return unique_argmax(all, [&](std::size_t i) { return -scene[i].pos[1]; });
    case Descriptor::LeftmostOfColor:
      return unique_argmax(of_color(in.referent_color), [&](std::size_t i) { return -scene[i].pos[0]; });
    case Descriptor::NearestToLargest: {
      if (scene.size() == 1) return 0;
      const std::size_t big = unique_argmax(all, [&](std::size_t i) { return scene[i].size; });
      std::vector<std::size_t> others;
      for (std::size_t i : all)
        if (i != big) others.push_back(i);
      return unique_argmax(others, [&](std::size_t i) {
        return -std::hypot(scene[i].pos[0] - scene[big].pos[0], scene[i].pos[1] - scene[big].pos[1]);
      });
    }
  }
  throw ResolutionError("unknown descriptor");
}

// Instructed value of the target attribute for the referent.
inline double instructed_value(const Scene& scene, const Instruction& in, std::size_t referent) {
  const SceneObject& o = scene[referent];
  switch (in.family) {
    case Family::Move:
    case Family::RelationalMove:
      return attr_value(o, target_attr(in)) + signed_magnitude(in);
    case Family::ResizeMatch: {
      const auto big = detail::unique_argmax(detail::all_indices(scene),
                                             [&](std::size_t i) { return scene[i].size; });
      return scene[big].size;
    }
    case Family::Recolor: return static_cast<double>(in.target_color);
    case Family::Delete: return kDeleteSize;
  }
  return 0.0;
}

inline SceneObject set_attr(SceneObject o, Attr a, double v) {
  switch (a) {
    case Attr::PosX: o.pos[0] = v; break;
    case Attr::PosY: o.pos[1] = v; break;
    case Attr::Size: o.size = v; break;
    case Attr::Color: o.color_id = static_cast<int>(std::lround(v)); break;
  }
  return o;
}

inline Scene oracle_edit(const Scene& scene, const Instruction& in) {
  const std::size_t r = resolve_referent(scene, in);
  const double goal = instructed_value(scene, in, r);
  return scene.with_object(r, set_attr(scene[r], target_attr(in), goal));
}

// --- task generation ----------------------------------------------------------

struct Task {
  Scene scene;
  Instruction instruction;
};

namespace detail {

inline Scene random_scene(const SceneLimits& lim, RngStream& rng) {
  for (;;) {
    std::vector<SceneObject> objs;
    bool ok = true;
    for (int i = 0; i < lim.n_obj && ok; ++i) {
      SceneObject o;
      o.pos = {-0.8 + 0.1 * static_cast<double>(rng.below(17)),
               -0.8 + 0.1 * static_cast<double>(rng.below(17))};
      o.size = 0.2 + 0.1 * static_cast<double>(rng.below(kSizeGrid));
      o.color_id = static_cast<int>(rng.below(static_cast<std::uint64_t>(lim.n_colors)));
      o.shape_id = static_cast<int>(rng.below(static_cast<std::uint64_t>(lim.n_shapes)));
      for (const auto& p : objs)
        if (std::hypot(p.pos[0] - o.pos[0], p.pos[1] - o.pos[1]) < 0.2 - 1e-9) ok = false;
      objs.push_back(o);
    }
    if (ok) return Scene(std::move(objs));
  }
}

inline Descriptor random_descriptor(RngStream& rng, bool relational_only) {
  // ByColor with probability 1/4; everything else needs relational resolution.
  if (!relational_only && rng.below(4) == 0) return Descriptor::ByColor;
  return static_cast<Descriptor>(1 + rng.below(kNumDescriptors - 1));
}

}  // namespace detail

inline Task make_task(Family family, const SceneLimits& lim, RngStream& rng) {
  if (static_cast<int>(family) < 0 || static_cast<int>(family) >= kNumFamilies)
    throw ConfigError("unregistered task family");
  if (family == Family::ResizeMatch && lim.n_obj < 2)
    throw ConfigError("RESIZE-MATCH needs at least two objects");
  for (;;) {
    Scene scene = detail::random_scene(lim, rng);
    Instruction in;
    in.family = family;
    switch (family) {
      case Family::ResizeMatch:
        in.referent = Descriptor::Smallest;
        break;
      case Family::RelationalMove:
        in.referent = rng.below(2) == 0 ? Descriptor::NearestToLargest : Descriptor::LeftmostOfColor;
        break;
      default:
        in.referent = detail::random_descriptor(rng, false);
        if (lim.n_obj == 1 && in.referent == Descriptor::NearestToLargest) in.referent = Descriptor::Largest;
    }
    if (in.referent == Descriptor::ByColor || in.referent == Descriptor::LeftmostOfColor)
      in.referent_color = scene[rng.below(scene.size())].color_id;

    std::size_t r = 0;
    try {
      r = resolve_referent(scene, in);
      if (family == Family::ResizeMatch) instructed_value(scene, in, r);
    } catch (const ResolutionError&) {
      continue;  // ties are rejected by resampling
    }

    if (family == Family::Move || family == Family::RelationalMove) {
      in.direction = static_cast<Direction>(rng.below(kNumDirections));
      in.magnitude = kMoveMagnitudes[rng.below(kMoveMagnitudes.size())];
      const double goal = instructed_value(scene, in, r);
      if (std::abs(goal) > kPlacementLimit + 1e-9) continue;
    } else if (family == Family::Recolor) {
      const int cur = scene[r].color_id;
      in.target_color = static_cast<int>(rng.below(static_cast<std::uint64_t>(lim.n_colors - 1)));
      if (in.target_color >= cur) ++in.target_color;
    } else if (family == Family::ResizeMatch) {
      if (std::abs(instructed_value(scene, in, r) - scene[r].size) < 1e-9) continue;
    }
    return Task{std::move(scene), in};
  }
}

// Draws a family uniformly, then a task of that family.
inline Task make_mixed_task(const SceneLimits& lim, RngStream& rng) {
  Family f;
  do {
    f = static_cast<Family>(rng.below(kNumFamilies));
  } while (f == Family::ResizeMatch && lim.n_obj < 2);
  return make_task(f, lim, rng);
}

// --- checklists ---------------------------------------------------------------

enum class Predicate : int {
  TargetValue = 0,   // referent's target attribute within tolerance of the instructed value
  TargetChanged,     // referent's target attribute moved away from its reference value
  TargetProgress,    // referent closed at least half the gap towards the instructed value
  Preserve,          // a non-target object kept all its attributes
};

inline const char* predicate_name(Predicate p) {
  switch (p) {
    case Predicate::TargetValue: return "target-value";
    case Predicate::TargetChanged: return "target-changed";
    case Predicate::TargetProgress: return "target-progress";
    case Predicate::Preserve: return "preserve";
  }
  return "?";
}

struct ChecklistItem {
  Predicate predicate = Predicate::Preserve;
  std::size_t object = 0;
  Attr attr = Attr::PosX;
  double goal = 0.0;       // instructed value (target items)
  double reference = 0.0;  // reference value of the attribute
  double threshold = 0.0;  // tolerance

  bool operator==(const ChecklistItem&) const = default;
};

struct Checklist {
  std::vector<ChecklistItem> items;
};

namespace detail {

inline double attr_tolerance(Attr a, double v) {
  switch (a) {
    case Attr::PosX:
    case Attr::PosY: return kPosTolerance;
    case Attr::Size: return size_tolerance(v);
    case Attr::Color: return 0.0;
  }
  return 0.0;
}

inline bool within(Attr a, double out, double target, double tol) {
  if (a == Attr::Color) return std::lround(out) == std::lround(target);
  return std::abs(out - target) <= tol + 1e-12;
}

}  // namespace detail

inline bool object_preserved(const SceneObject& ref, const SceneObject& out) {
  for (int a = 0; a < 4; ++a) {
    const Attr at = static_cast<Attr>(a);
    const double rv = attr_value(ref, at);
    if (!detail::within(at, attr_value(out, at), rv, detail::attr_tolerance(at, rv))) return false;
  }
  return true;
}

inline bool evaluate_item(const ChecklistItem& it, const Scene& ref, const Scene& out) {
  if (it.object >= ref.size() || it.object >= out.size())
    throw ArgumentError("checklist item references a missing object");
  const double v = attr_value(out[it.object], it.attr);
  switch (it.predicate) {
    case Predicate::TargetValue:
      return detail::within(it.attr, v, it.goal, it.threshold);
    case Predicate::TargetChanged:
      return !detail::within(it.attr, v, it.reference, it.threshold);
    case Predicate::TargetProgress:
      return std::abs(v - it.goal) <= 0.5 * std::abs(it.reference - it.goal) + 1e-12;
    case Predicate::Preserve:
      return object_preserved(ref[it.object], out[it.object]);
  }
  return false;
}

inline Checklist build_checklist(const Scene& scene, const Instruction& in) {
  const std::size_t r = resolve_referent(scene, in);
  const Attr a = target_attr(in);
  const double goal = instructed_value(scene, in, r);
  const double refv = attr_value(scene[r], a);

  double value_tol = detail::attr_tolerance(a, goal);
  if (in.family == Family::Delete) value_tol = kDeleteTolerance;
  const double change_tol = detail::attr_tolerance(a, refv);

  Checklist cl;
  cl.items.push_back({Predicate::TargetValue, r, a, goal, refv, value_tol});
  cl.items.push_back({Predicate::TargetChanged, r, a, goal, refv, change_tol});
  cl.items.push_back({Predicate::TargetProgress, r, a, goal, refv, 0.0});
  int kept = 0;
  for (std::size_t j = 0; j < scene.size() && kept < kMaxPreserveItems; ++j) {
    if (j == r) continue;
    cl.items.push_back({Predicate::Preserve, j, a, 0.0, 0.0, 0.0});
    ++kept;
  }
  return cl;
}

}  // namespace thinkedit
