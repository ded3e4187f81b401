#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "core.hpp"

namespace thinkedit {

// Componentwise weak dominance: a >= b on every dimension.
template <std::size_t K>
bool dominates(const std::array<double, K>& a, const std::array<double, K>& b) {
  for (std::size_t k = 0; k < K; ++k)
    if (a[k] < b[k]) return false;
  return true;
}

inline bool dominates(const RewardVector& a, const RewardVector& b) { return dominates(a.values, b.values); }

template <std::size_t K>
double vector_sum(const std::array<double, K>& a) {
  return std::accumulate(a.begin(), a.end(), 0.0);
}

// Longest chain of the dominance partial order. Among chains of maximal length
// the one with the largest total reward sum wins; remaining ties go to the
// lexicographically smallest index set. Returned ascending by reward sum.
template <std::size_t K>
std::vector<std::size_t> extract_consistent_chain(std::span<const std::array<double, K>> rewards) {
  const std::size_t n = rewards.size();
  if (n == 0) throw ArgumentError("extract_consistent_chain: empty input");

  // Topological order: by sum, identical vectors by index. If v dominates u and
  // they differ, sum(v) > sum(u), so every chain is a path in this order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> sums(n);
  for (std::size_t i = 0; i < n; ++i) sums[i] = vector_sum(rewards[i]);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sums[a] != sums[b]) return sums[a] < sums[b];
    return rewards[a] < rewards[b];
  });

  struct Best {
    std::size_t len = 0;
    double sum = 0.0;
    std::vector<std::size_t> members;  // sorted by index
    std::size_t prev = SIZE_MAX;
  };
  auto better = [](const Best& a, const Best& b) {
    if (a.len != b.len) return a.len > b.len;
    if (a.sum != b.sum) return a.sum > b.sum;
    return a.members < b.members;
  };

  std::vector<Best> best(n);
  for (std::size_t oi = 0; oi < n; ++oi) {
    const std::size_t v = order[oi];
    Best cur{1, sums[v], {v}, SIZE_MAX};
    for (std::size_t oj = 0; oj < oi; ++oj) {
      const std::size_t u = order[oj];
      if (!dominates(rewards[v], rewards[u])) continue;
      Best cand{best[u].len + 1, 0.0, best[u].members, u};
      cand.members.insert(std::upper_bound(cand.members.begin(), cand.members.end(), v), v);
      for (std::size_t m : cand.members) cand.sum += sums[m];  // index order, so equal sets sum equally
      if (better(cand, cur)) cur = std::move(cand);
    }
    best[v] = std::move(cur);
  }
  std::size_t end = order[0];
  for (std::size_t i : order)
    if (better(best[i], best[end])) end = i;

  std::vector<std::size_t> chain;
  for (std::size_t v = end; v != SIZE_MAX; v = best[v].prev) chain.push_back(v);
  std::reverse(chain.begin(), chain.end());
  return chain;
}

inline std::vector<std::size_t> extract_consistent_chain(std::span<const RewardVector> rewards) {
  std::vector<std::array<double, kRewardDims>> raw;
  raw.reserve(rewards.size());
  for (const auto& r : rewards) raw.push_back(r.values);
  return extract_consistent_chain<kRewardDims>(std::span<const std::array<double, kRewardDims>>(raw));
}

// z-score of scalar rewards with a floored population std; zeros when the
// group is a singleton or has no spread.
inline Vec group_advantages(std::span<const double> scores, double sigma_floor) {
  const std::size_t n = scores.size();
  Vec adv(n, 0.0);
  if (n < 2) return adv;
  const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));
  if (sd == 0.0) return adv;
  const double denom = std::max(sd, sigma_floor);
  for (std::size_t i = 0; i < n; ++i) adv[i] = (scores[i] - mean) / denom;
  return adv;
}

// A_i = (S_i - K mu) / (K sigma), S_i the reward sum, mu = mean(S)/K and
// sigma = max(std(S)/K, sigma_floor).
inline Vec compute_advantages(std::span<const RewardVector> chain, double sigma_floor) {
  const std::size_t n = chain.size();
  Vec adv(n, 0.0);
  if (n < 2) return adv;
  const double K = static_cast<double>(kRewardDims);
  Vec S(n);
  for (std::size_t i = 0; i < n; ++i) S[i] = chain[i].sum();
  const double mu = std::accumulate(S.begin(), S.end(), 0.0) / static_cast<double>(n) / K;
  double var = 0.0;
  for (double s : S) var += (s - K * mu) * (s - K * mu);
  const double sd = std::sqrt(var / static_cast<double>(n));
  if (sd == 0.0) return adv;
  const double sigma = std::max(sd / K, sigma_floor);
  for (std::size_t i = 0; i < n; ++i) adv[i] = (S[i] - K * mu) / (K * sigma);
  return adv;
}

inline Vec weighted_fusion(std::span<const RewardVector> rewards, const std::array<double, kRewardDims>& weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ArgumentError("fusion weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw ArgumentError("fusion weights must not all be zero");
  Vec out;
  out.reserve(rewards.size());
  for (const auto& r : rewards) {
    double s = 0.0;
    for (std::size_t k = 0; k < kRewardDims; ++k) s += weights[k] * r[k];
    out.push_back(s);
  }
  return out;
}

inline constexpr std::array<double, kRewardDims> kUniformWeights{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};

}  // namespace thinkedit
