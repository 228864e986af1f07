#pragma once

#include <cmath>
#include <vector>

#include "mivb/nn/layers.hpp"

namespace mivb::nn {

template <typename T>
void zero_grads(const std::vector<Parameter<T>*>& params) {
  for (auto* p : params) p->zero_grad();
}

// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Parameter<T>*> params, double momentum, double weight_decay)
      : params_(std::move(params)), momentum_(momentum), wd_(weight_decay) {
    for (auto* p : params_) velocity_.emplace_back(p->value.n(), p->value.c(), p->value.h(), p->value.w());
  }

  void step(double lr) {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& v = params_[k]->value;
      auto& g = params_[k]->grad;
      auto& m = velocity_[k];
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double d = g[i] + wd_ * v[i];
        m[i] = static_cast<T>(momentum_ * m[i] + d);
        v[i] -= static_cast<T>(lr * m[i]);
      }
    }
  }

 private:
  std::vector<Parameter<T>*> params_;
  double momentum_, wd_;
  std::vector<Tensor<T>> velocity_;
};

template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
       double weight_decay = 0.0)
      : params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.n(), p->value.c(), p->value.h(), p->value.w());
      v_.emplace_back(p->value.n(), p->value.c(), p->value.h(), p->value.w());
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& w = params_[k]->value;
      auto& g = params_[k]->grad;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = g[i] + wd_ * w[i];
        m_[k][i] = static_cast<T>(b1_ * m_[k][i] + (1 - b1_) * d);
        v_[k][i] = static_cast<T>(b2_ * v_[k][i] + (1 - b2_) * d * d);
        w[i] -= static_cast<T>(lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps_));
      }
    }
  }

 private:
  std::vector<Parameter<T>*> params_;
  double b1_, b2_, eps_, wd_;
  long t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace mivb::nn
