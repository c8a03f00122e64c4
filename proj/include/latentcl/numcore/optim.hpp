#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "latentcl/numcore/tensor.hpp"

namespace latentcl {

// Linear warm-up over `warmup_steps`, then linear decay to zero at `total_steps`.
struct LinearSchedule {
  double base_lr = 1e-3;
  std::size_t warmup_steps = 10;
  std::size_t total_steps = 1;

  double at(std::size_t step) const {
    if (warmup_steps > 0 && step < warmup_steps) {
      return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    if (total_steps <= warmup_steps) return base_lr;
    const double frac = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return base_lr * std::max(0.0, 1.0 - frac);
  }
};

/// Adam with decoupled weight decay. Holds references to leaf parameters.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double max_grad_norm = 1.0;  // <= 0 disables clipping
  };

  explicit AdamW(std::vector<Tensor> params) : AdamW(std::move(params), Options{}) {}
  AdamW(std::vector<Tensor> params, Options opts) : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  // Returns the pre-clipping global gradient norm.
  double step(double lr) {
    double sq = 0.0;
    for (const auto& p : params_)
      if (p.has_grad())
        for (double g : p.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    const double clip = (opts_.max_grad_norm > 0.0 && norm > opts_.max_grad_norm) ? opts_.max_grad_norm / norm : 1.0;

    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      auto w = p.mutable_data();
      const bool has = p.has_grad();
      auto g = p.grad();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = has ? g[j] * clip : 0.0;
        m_[i][j] = opts_.beta1 * m_[i][j] + (1.0 - opts_.beta1) * gj;
        v_[i][j] = opts_.beta2 * v_[i][j] + (1.0 - opts_.beta2) * gj * gj;
        w[j] -= lr * opts_.weight_decay * w[j];
        w[j] -= lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + opts_.eps);
      }
    }
    return norm;
  }

  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  Options opts_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace latentcl
