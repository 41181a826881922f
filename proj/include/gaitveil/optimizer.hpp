#pragma once

#include <cmath>
#include <stdexcept>

#include "gaitveil/tensor.hpp"

namespace gaitveil {

struct AdamWConfig {
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // kept at 0: decaying the latent drifts it off the content

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr))
      throw std::invalid_argument("AdamW: learning rate must be finite and > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw std::invalid_argument("AdamW: moment decays must lie in [0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("AdamW: eps must be > 0");
    if (weight_decay < 0.0) throw std::invalid_argument("AdamW: negative weight decay");
  }
};

// Adaptive-moment update with bias correction and decoupled weight decay.
class AdamW {
 public:
  AdamW(std::size_t dim, AdamWConfig cfg) : cfg_(cfg), m_(Tensor::zeros({dim})),
                                            v_(Tensor::zeros({dim})) {
    cfg.validate();
  }

  std::size_t steps_taken() const { return t_; }

  void step(Tensor& param, const Tensor& grad) {
    require_same_shape("AdamW::step", param, grad);
    if (param.shape != m_.shape) throw ShapeError("AdamW::step", param.shape, m_.shape);
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < param.size(); ++i) {
      double g = grad[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
      double m_hat = m_[i] / bc1;
      double v_hat = v_[i] / bc2;
      param[i] -= cfg_.lr * cfg_.weight_decay * param[i];  // decoupled decay
      param[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
    require_finite(param, "AdamW::step");
  }

 private:
  AdamWConfig cfg_;
  Tensor m_, v_;
  std::size_t t_ = 0;
};

}  // namespace gaitveil
