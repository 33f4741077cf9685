#pragma once

#include <cmath>
#include <vector>

#include "facet/tensor.hpp"

namespace facet {

template <class T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p.has_grad()) continue;
      auto w = p.data();
      auto g = p.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        const double update = lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  double learning_rate() const { return lr_; }

 private:
  std::vector<Tensor<T>> params_;
  double lr_, beta1_, beta2_, eps_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

template <class T>
class Sgd {
 public:
  Sgd(std::vector<Tensor<T>> params, double lr, double momentum = 0.0)
      : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    for (const auto& p : params_) velocity_.emplace_back(p.size(), 0.0);
  }

  void step() {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p.has_grad()) continue;
      auto w = p.data();
      auto g = p.grad();
      auto& vel = velocity_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        vel[i] = momentum_ * vel[i] + static_cast<double>(g[i]);
        w[i] = static_cast<T>(static_cast<double>(w[i]) - lr_ * vel[i]);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  double learning_rate() const { return lr_; }

 private:
  std::vector<Tensor<T>> params_;
  double lr_, momentum_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace facet
