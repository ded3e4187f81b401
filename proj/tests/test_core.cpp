#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "thinkedit/thinkedit.hpp"

using namespace thinkedit;

TEST(Rng, SameSeedSameDraws) {
  RngStream a = seed_rng(42), b = seed_rng(42);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiffer) {
  RngStream a(42), b(43);
  int same = 0;
  for (int i = 0; i < 10; ++i) same += a.next_u64() == b.next_u64();
  EXPECT_EQ(same, 0);
}

TEST(Rng, SplitChildrenShareNoValues) {
  RngStream root(7);
  RngStream c1 = root.split(), c2 = root.split();
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 100000; ++i) {
    seen.insert(c1.next_u64());
    seen.insert(c2.next_u64());
  }
  // 2e5 draws of 64 bits: a collision has probability ~1e-9
  EXPECT_EQ(seen.size(), 200000u);
}

TEST(Rng, UniformAndNormalMoments) {
  RngStream r(3);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 5 * std::sqrt(1.0 / 12 / n));
  EXPECT_NEAR(sn / n, 0.0, 5 / std::sqrt(n));
  EXPECT_NEAR(sn2 / n, 1.0, 5 * std::sqrt(2.0 / n));
}

TEST(Rng, BelowStaysInRange) {
  RngStream r(9);
  std::array<int, 7> hist{};
  for (int i = 0; i < 70000; ++i) ++hist[r.below(7)];
  for (int h : hist) EXPECT_NEAR(h, 10000, 500);
  EXPECT_EQ(r.below(1), 0u);
}

namespace {

PolicySnapshot random_snapshot(RngStream& r, std::size_t nu, std::size_t ng) {
  PolicySnapshot s;
  for (std::size_t i = 0; i < nu; ++i) s.und_params.push_back(r.normal() * 1e3);
  for (std::size_t i = 0; i < ng; ++i) s.gen_params.push_back(r.normal() * 1e-7);
  return s;
}

}  // namespace

TEST(Snapshot, RoundTripIsBitExact) {
  RngStream r(1);
  for (int trial = 0; trial < 50; ++trial) {
    const PolicySnapshot s = random_snapshot(r, r.below(40), r.below(40));
    const auto bytes = serialize_snapshot(s);
    EXPECT_EQ(bytes.size(), 5 + 16 + 8 * (s.und_params.size() + s.gen_params.size()));
    EXPECT_EQ(deserialize_snapshot(bytes), s);
  }
}

TEST(Snapshot, ZeroParametersIsHeaderOnly) {
  const PolicySnapshot s;
  const auto bytes = serialize_snapshot(s);
  EXPECT_EQ(bytes.size(), 21u);
  EXPECT_EQ(deserialize_snapshot(bytes), s);
}

TEST(Snapshot, LittleEndianLayout) {
  PolicySnapshot s;
  s.und_params = {1.0};
  const auto b = serialize_snapshot(s);
  EXPECT_EQ(b[0], 'T');
  EXPECT_EQ(b[3], 'N');
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[5], 1);  // n_und low byte
  for (int i = 6; i < 13; ++i) EXPECT_EQ(b[i], 0);
  // 1.0 = 0x3ff0000000000000
  EXPECT_EQ(b[13 + 6], 0xf0);
  EXPECT_EQ(b[13 + 7], 0x3f);
}

TEST(Snapshot, TruncationIsAFormatError) {
  RngStream r(2);
  const auto bytes = serialize_snapshot(random_snapshot(r, 5, 7));
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_THROW(deserialize_snapshot(cut), FormatError) << "length " << n;
  }
}

TEST(Snapshot, BadHeaderAndTrailingBytes) {
  RngStream r(2);
  auto bytes = serialize_snapshot(random_snapshot(r, 2, 2));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_snapshot(bad), FormatError);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(deserialize_snapshot(bad), FormatError);
  bytes.push_back(0);
  EXPECT_THROW(deserialize_snapshot(bytes), FormatError);
}

TEST(Snapshot, HugeLengthPrefixRejected) {
  std::vector<std::uint8_t> b{'T', 'K', 'S', 'N', 1};
  for (int i = 0; i < 8; ++i) b.push_back(0xff);
  EXPECT_THROW(deserialize_snapshot(b), FormatError);
}

TEST(Snapshot, NonFiniteRefused) {
  PolicySnapshot s;
  s.gen_params = {1.0, std::nan("")};
  EXPECT_THROW(serialize_snapshot(s), NumericError);
}

TEST(Snapshot, FileRoundTrip) {
  RngStream r(5);
  const PolicySnapshot s = random_snapshot(r, 10, 20);
  const auto path = std::filesystem::temp_directory_path() / "thinkedit_core_test.tksn";
  save_snapshot(path.string(), s);
  EXPECT_EQ(load_snapshot(path.string()), s);
  std::filesystem::resize_file(path, 30);
  EXPECT_THROW(load_snapshot(path.string()), FormatError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_snapshot(path.string()), FormatError);
}

TEST(Types, RewardVectorRejectsOutOfRange) {
  EXPECT_THROW(RewardVector(1.1, 0, 0), ArgumentError);
  EXPECT_THROW(RewardVector(0, -0.1, 0), ArgumentError);
  EXPECT_THROW(RewardVector(0, 0, std::nan("")), NumericError);
  EXPECT_NO_THROW(RewardVector(0, 1, 0.5));
}

TEST(Types, SceneRejectsBadObjects) {
  SceneObject o;
  o.size = 0.0;
  EXPECT_THROW(Scene({o}), ArgumentError);
  o.size = 0.3;
  o.pos = {1.5, 0.0};
  EXPECT_THROW(Scene({o}), ArgumentError);
  o.pos = {0.0, std::nan("")};
  EXPECT_THROW(Scene({o}), NumericError);
}

TEST(Types, TrainConfigValidation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.G = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.t_min = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.tau = 1.0;
  EXPECT_EQ(c.selected_steps(), static_cast<std::size_t>(c.T));
  c.tau = 0.25;
  c.T = 10;
  EXPECT_EQ(c.selected_steps(), 3u);  // ceil(2.5)
}

// Two-parameter toy with the supplement's moments: one step by hand.
TEST(Optim, AdamWSingleStepMatchesHandComputation) {
  AdamW opt(2, AdamWConfig{3e-4, 0.9, 0.999, 1e-8, 1e-4});
  Vec theta{0.5, -2.0};
  const Vec g{0.2, -3.0};
  opt.ascend(theta, g);
  // m = 0.1 g, v = 0.001 g^2; bias-corrected mhat = g, vhat = g^2
  const double e0 = 0.5 * (1 - 3e-4 * 1e-4) + 3e-4 * 0.2 / (0.2 + 1e-8);
  const double e1 = -2.0 * (1 - 3e-4 * 1e-4) + 3e-4 * -3.0 / (3.0 + 1e-8);
  EXPECT_NEAR(theta[0], e0, 1e-12);
  EXPECT_NEAR(theta[1], e1, 1e-12);
}

TEST(Optim, AdamWSecondStepMatchesRecurrence) {
  AdamW opt(1, AdamWConfig{0.01, 0.9, 0.999, 1e-8, 0.0});
  Vec th{1.0};
  opt.ascend(th, Vec{1.0});
  opt.ascend(th, Vec{-0.5});
  const double m = 0.9 * 0.1 + 0.1 * -0.5;
  const double v = 0.999 * 0.001 + 0.001 * 0.25;
  const double step = 0.01 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.998001)) + 1e-8);
  EXPECT_NEAR(th[0], 1.0 + 0.01 * 1.0 / (1.0 + 1e-8) + step, 1e-12);
  EXPECT_EQ(opt.step_count(), 2);
}

TEST(Optim, ZeroLearningRateLeavesParameters) {
  AdamW opt(3, AdamWConfig{0.0, 0.9, 0.999, 1e-8, 1e-4});
  Vec th{1, 2, 3};
  opt.ascend(th, Vec{5, -5, 1});
  EXPECT_EQ(th, (Vec{1, 2, 3}));
  EXPECT_THROW(opt.ascend(th, Vec{1}), ArgumentError);
}
