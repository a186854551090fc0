#pragma once

#include <cmath>
#include <vector>

#include "drivex/nn/layers.hpp"

namespace drivex::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam over the trainable entries of a ParamStore.
/// Gradients are scaled by `grad_scale` before use (batch averaging).
template <typename T>
class Adam {
 public:
  explicit Adam(const ParamStore<T>& store, AdamConfig config = {}) : config_(config) {
    for (const auto& [name, v] : store.entries()) {
      m_.push_back(Matrix<T>::Zero(v.rows(), v.cols()));
      v_.push_back(Matrix<T>::Zero(v.rows(), v.cols()));
    }
  }

  void step(ParamStore<T>& store, double lr, double grad_scale = 1.0) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(config_.beta1);
    const T b2 = static_cast<T>(config_.beta2);
    const T gs = static_cast<T>(grad_scale);
    size_t i = 0;
    for (const auto& [name, param] : store.entries()) {
      Var<T> p = param;
      Matrix<T>& m = m_[i];
      Matrix<T>& v = v_[i];
      ++i;
      if (!p.requires_grad() || p.grad().size() == 0) continue;
      const Matrix<T> g = p.grad() * gs;
      m = b1 * m + (T(1) - b1) * g;
      v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
      if (lr == 0.0) continue;
      const T step = static_cast<T>(lr / c1);
      const T inv_c2 = static_cast<T>(1.0 / c2);
      const T eps = static_cast<T>(config_.epsilon);
      auto& w = p.mutable_value();
      w.array() -= step * m.array() / ((v.array() * inv_c2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<Matrix<T>> m_;
  std::vector<Matrix<T>> v_;
  long t_ = 0;
};

}  // namespace drivex::nn
