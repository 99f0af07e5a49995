#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "nern/error.hpp"
#include "nern/tensor.hpp"

namespace nern {

// lr(t) = lr_max * 0.5 * (1 + cos(pi * t / T)); lr(0) = lr_max, lr(T) = 0,
// monotone non-increasing.
struct CosineSchedule {
  double lr_max = 1e-3;
  int64_t total_steps = 1;
  bool enabled = true;

  double lr(int64_t step) const {
    if (!enabled) return lr_max;
    if (step >= total_steps) return 0.0;
    return lr_max * 0.5 * (1.0 + std::cos(M_PI * double(step) / double(total_steps)));
  }
};

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<TensorF*> params, const std::vector<const TensorF*>& grads, double lr) {
    if (params.size() != grads.size()) fail(ErrorCode::InvalidArgument, "adam param/grad count");
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->shape);
        v_.emplace_back(p->shape);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      TensorF& p = *params[i];
      const TensorF& g = *grads[i];
      TensorF& m = m_[i];
      TensorF& v = v_[i];
      for (size_t j = 0; j < p.numel(); ++j) {
        const double gj = g[j];
        m[j] = float(beta1_ * m[j] + (1.0 - beta1_) * gj);
        v[j] = float(beta2_ * v[j] + (1.0 - beta2_) * gj * gj);
        const double mh = m[j] / bc1;
        const double vh = v[j] / bc2;
        p[j] = float(p[j] - lr * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<TensorF> m_, v_;
};

// Lookahead wrapper state (k=6, alpha=0.5 by default): every k inner steps the
// slow weights absorb half the fast-weight move and the fast weights reset.
class Lookahead {
 public:
  Lookahead(int k = 6, double alpha = 0.5) : k_(k), alpha_(alpha) {}

  void after_step(std::vector<TensorF*> params) {
    if (slow_.empty())
      for (auto* p : params) slow_.push_back(*p);
    if (++n_ % k_ != 0) return;
    for (size_t i = 0; i < params.size(); ++i) {
      TensorF& s = slow_[i];
      TensorF& p = *params[i];
      for (size_t j = 0; j < p.numel(); ++j) {
        s[j] = float(s[j] + alpha_ * (p[j] - s[j]));
        p[j] = s[j];
      }
    }
  }

 private:
  int k_;
  double alpha_;
  int64_t n_ = 0;
  std::vector<TensorF> slow_;
};

}  // namespace nern
