#pragma once

#include <cmath>
#include <vector>

#include "dplan/tensor.hpp"

namespace dplan {

struct OptimConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Adaptive-moment update with decoupled weight decay. A non-finite gradient
// anywhere skips the whole step (counted, moments untouched).
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, OptimConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  const OptimConfig& config() const { return cfg_; }
  int64_t step_count() const { return step_; }
  int64_t skipped_steps() const { return skipped_; }

  // grads[i] aligns with params[i]; empty gradients read as zero.
  bool step(const std::vector<std::vector<double>>& grads) {
    require(grads.size() == params_.size(), "optimizer: gradient count mismatch");
    for (size_t i = 0; i < grads.size(); ++i) {
      require(grads[i].empty() || grads[i].size() == params_[i].numel(),
              "optimizer: gradient shape mismatch");
      for (double g : grads[i])
        if (!std::isfinite(g)) {
          ++skipped_;
          return false;
        }
    }
    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto p = params_[i].mutable_data();
      auto& m = m_[i];
      auto& v = v_[i];
      for (size_t j = 0; j < p.size(); ++j) {
        double g = grads[i].empty() ? 0.0 : grads[i][j];
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
        double mh = m[j] / bc1;
        double vh = v[j] / bc2;
        p[j] -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * p[j]);
      }
    }
    return true;
  }

  // Moment state, exposed for checkpointing.
  std::vector<std::vector<double>>& moments_m() { return m_; }
  std::vector<std::vector<double>>& moments_v() { return v_; }
  void restore_counters(int64_t steps, int64_t skipped) {
    step_ = steps;
    skipped_ = skipped;
  }

 private:
  std::vector<Tensor> params_;
  OptimConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int64_t step_ = 0;
  int64_t skipped_ = 0;
};

}  // namespace dplan
