#include <gtest/gtest.h>

#include <map>

#include "thinkedit/thinkedit.hpp"

using namespace thinkedit;

namespace {

SceneObject obj(double x, double y, double size, int color, int shape = 0) {
  SceneObject o;
  o.pos = {x, y};
  o.size = size;
  o.color_id = color;
  o.shape_id = shape;
  return o;
}

constexpr int kRed = 0, kBlue = 1, kGreen = 2;

Instruction move_by_color(int color, Direction d, double mag) {
  Instruction in;
  in.family = Family::Move;
  in.referent = Descriptor::ByColor;
  in.referent_color = color;
  in.direction = d;
  in.magnitude = mag;
  return in;
}

double score(const Checklist& cl, const Scene& ref, const Scene& out) {
  RngStream unused(0);
  return eval_checklist(cl, ref, out, nullptr, unused);
}

}  // namespace

TEST(Env, MoveRedPlusX) {
  const Scene s({obj(0, 0, 0.3, kRed), obj(0.5, 0.5, 0.4, kBlue)});
  const Scene out = oracle_edit(s, move_by_color(kRed, Direction::PosX, 0.5));
  EXPECT_DOUBLE_EQ(out[0].pos[0], 0.5);
  EXPECT_DOUBLE_EQ(out[0].pos[1], 0.0);
  EXPECT_EQ(out[1], s[1]);
}

TEST(Env, ResizeMatchSmallestBecomesLargest) {
  const Scene s({obj(-0.5, 0, 0.1, kRed), obj(0, 0, 0.9, kBlue), obj(0.5, 0, 0.4, kGreen)});
  Instruction in;
  in.family = Family::ResizeMatch;
  in.referent = Descriptor::Smallest;
  const Scene out = oracle_edit(s, in);
  EXPECT_DOUBLE_EQ(out[0].size, 0.9);
  EXPECT_EQ(out[1], s[1]);
  EXPECT_EQ(out[2], s[2]);
}

TEST(Env, TiedLargestIsAResolutionError) {
  const Scene s({obj(-0.5, 0, 0.6, kRed), obj(0.5, 0, 0.6, kBlue)});
  Instruction in;
  in.family = Family::Delete;
  in.referent = Descriptor::Largest;
  EXPECT_THROW(oracle_edit(s, in), ResolutionError);
  EXPECT_THROW(build_checklist(s, in), ResolutionError);
}

TEST(Env, SingleObjectMoveResolvesToIt) {
  SceneLimits lim;
  lim.n_obj = 1;
  RngStream r(4);
  for (int i = 0; i < 50; ++i) {
    const Task t = make_task(Family::Move, lim, r);
    EXPECT_EQ(resolve_referent(t.scene, t.instruction), 0u);
  }
  EXPECT_THROW(make_task(Family::ResizeMatch, lim, r), ConfigError);
}

TEST(Env, UnregisteredFamilyIsAConfigError) {
  SceneLimits lim;
  RngStream r(1);
  EXPECT_THROW(make_task(static_cast<Family>(9), lim, r), ConfigError);
  EXPECT_THROW(family_from_name("ROTATE"), ConfigError);
  EXPECT_EQ(family_from_name("RECOLOR"), Family::Recolor);
}

TEST(Env, ResizeMatchFormIsFixed) {
  SceneLimits lim;
  RngStream r(8);
  for (int i = 0; i < 100; ++i) {
    const Task t = make_task(Family::ResizeMatch, lim, r);
    EXPECT_EQ(t.instruction.referent, Descriptor::Smallest);
    const Scene out = oracle_edit(t.scene, t.instruction);
    double biggest = 0;
    for (const auto& o : t.scene.objects()) biggest = std::max(biggest, o.size);
    EXPECT_DOUBLE_EQ(out[resolve_referent(t.scene, t.instruction)].size, biggest);
  }
}

TEST(Env, FamiliesAreRoughlyUniform) {
  SceneLimits lim;
  RngStream r(2024);
  std::map<Family, int> hist;
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++hist[make_mixed_task(lim, r).instruction.family];
  ASSERT_EQ(hist.size(), static_cast<std::size_t>(kNumFamilies));
  for (auto [f, c] : hist) {
    EXPECT_GT(c, 0.8 * n / kNumFamilies) << family_name(f);
    EXPECT_LT(c, 1.2 * n / kNumFamilies) << family_name(f);
  }
}

TEST(Env, RelationalReferentsAreTheMajority) {
  SceneLimits lim;
  RngStream r(77);
  for (int f = 0; f < kNumFamilies; ++f) {
    int rel = 0;
    for (int i = 0; i < 1000; ++i) rel += is_relational(make_task(static_cast<Family>(f), lim, r).instruction.referent);
    EXPECT_GE(rel, 500) << family_name(static_cast<Family>(f));
  }
}

TEST(Env, OracleScoresOneOnItsChecklist) {
  RngStream r(31);
  for (int n_obj = 1; n_obj <= 5; ++n_obj) {
    SceneLimits lim;
    lim.n_obj = n_obj;
    for (int i = 0; i < 200; ++i) {
      const Task t = make_mixed_task(lim, r);
      const Checklist cl = build_checklist(t.scene, t.instruction);
      ASSERT_GE(cl.items.size(), 3u);
      ASSERT_LE(cl.items.size(), 6u);
      EXPECT_DOUBLE_EQ(score(cl, t.scene, oracle_edit(t.scene, t.instruction)), 1.0);
    }
  }
}

TEST(Env, ChecklistCoversTargetAndNonTarget) {
  RngStream r(32);
  SceneLimits lim;
  for (int i = 0; i < 200; ++i) {
    const Task t = make_mixed_task(lim, r);
    const Checklist cl = build_checklist(t.scene, t.instruction);
    const std::size_t target = resolve_referent(t.scene, t.instruction);
    bool on_target = false, off_target = false;
    for (const auto& it : cl.items) {
      if (it.predicate == Predicate::Preserve) {
        off_target = true;
        EXPECT_NE(it.object, target);
      } else {
        on_target = true;
        EXPECT_EQ(it.object, target);  // same resolver as oracle_edit
      }
    }
    EXPECT_TRUE(on_target);
    EXPECT_TRUE(off_target);
  }
}

TEST(Env, UneditedSceneFailsTargetItemsKeepsPreservation) {
  RngStream r(33);
  SceneLimits lim;
  for (int i = 0; i < 200; ++i) {
    const Task t = make_mixed_task(lim, r);
    const Checklist cl = build_checklist(t.scene, t.instruction);
    const auto v = checklist_verdicts(cl, t.scene, t.scene);
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (cl.items[k].predicate == Predicate::Preserve)
        EXPECT_TRUE(v[k]);
      else
        EXPECT_FALSE(v[k]);
    }
  }
}

TEST(Env, MovedBystanderCostsItsPreservationItem) {
  const Scene s({obj(0, 0, 0.3, kRed), obj(0.5, 0.5, 0.4, kBlue)});
  const Instruction in = move_by_color(kRed, Direction::PosX, 0.5);
  const Checklist cl = build_checklist(s, in);
  ASSERT_EQ(cl.items.size(), 4u);
  const Scene out({obj(0.5, 0, 0.3, kRed), obj(0.2, 0.5, 0.4, kBlue)});
  EXPECT_DOUBLE_EQ(score(cl, s, out), 0.75);
}

TEST(Env, TaskGenerationIsDeterministic) {
  SceneLimits lim;
  RngStream a(5), b(5);
  for (int i = 0; i < 100; ++i) {
    const Task x = make_mixed_task(lim, a), y = make_mixed_task(lim, b);
    EXPECT_EQ(x.scene, y.scene);
    EXPECT_EQ(x.instruction, y.instruction);
  }
}

TEST(Env, GeneratedScenesRespectLimits) {
  SceneLimits lim;
  RngStream r(6);
  for (int i = 0; i < 500; ++i) {
    const Task t = make_mixed_task(lim, r);
    EXPECT_NO_THROW(t.scene.validate(lim));
    const Scene out = oracle_edit(t.scene, t.instruction);
    EXPECT_NO_THROW(out.validate(lim));
  }
}
