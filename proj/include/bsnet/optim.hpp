#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bsnet/tensor.hpp"

namespace bsnet {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

// Adam with bias correction. Holds first/second moment buffers for every
// attached parameter plus the shared step count and learning rate.
template <typename T>
class Adam {
 public:
  explicit Adam(T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void attach(const ParamList<T>& params) {
    params_.clear();
    m_.clear();
    v_.clear();
    step_count_ = 0;
    for (const auto& p : params) {
      if (!p.tensor.requires_grad()) continue;
      params_.push_back(p.tensor);
      m_.emplace_back(p.tensor.numel(), T(0));
      v_.emplace_back(p.tensor.numel(), T(0));
    }
  }

  size_t attached() const { return params_.size(); }
  T lr() const { return lr_; }
  void set_lr(T lr) { lr_ = lr; }
  long step_count() const { return step_count_; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    contract(!params_.empty(), "Adam::step: no parameters attached");
    ++step_count_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(step_count_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(step_count_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& p = params_[i];
      contract(p.has_grad(), "Adam::step: parameter is missing its gradient");
      T* w = p.data().data();
      const T* g = p.grad().data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      const size_t n = p.numel();
      for (size_t k = 0; k < n; ++k) {
        m[k] = beta1_ * m[k] + (T(1) - beta1_) * g[k];
        v[k] = beta2_ * v[k] + (T(1) - beta2_) * g[k] * g[k];
        const T mh = m[k] / bc1;
        const T vh = v[k] / bc2;
        w[k] -= lr_ * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  long step_count_ = 0;
  T lr_, beta1_, beta2_, eps_;
};

}  // namespace bsnet
