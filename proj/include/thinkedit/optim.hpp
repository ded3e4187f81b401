#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "core.hpp"

namespace thinkedit {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Adaptive-moment gradient *ascent* with decoupled weight decay:
//   theta <- theta (1 - lr wd) + lr mhat / (sqrt(vhat) + eps)
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::size_t n, AdamWConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void ascend(std::span<double> params, std::span<const double> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) throw ArgumentError("optimizer size mismatch");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      params[i] = params[i] * (1.0 - cfg_.lr * cfg_.weight_decay) + cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  long step_count() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_{};
  std::vector<double> m_;
  std::vector<double> v_;
  long step_ = 0;
};

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace thinkedit
