#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cdla/error.hpp"
#include "cdla/params.hpp"

namespace cdla {

struct AdamWConfig {
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

// AdamW with decoupled weight decay (Loshchilov & Hutter). One instance per
// model; moment buffers are created on the first step.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const noexcept { return cfg_; }
  std::uint64_t step_count() const noexcept { return t_; }

  // Updates every parameter from its gradient, then clears the gradients.
  void step(ModelParams& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value.rows(), p.value.cols());
        v_.emplace_back(p.value.rows(), p.value.cols());
      }
    }
    if (m_.size() != params.size()) throw ConfigError("optimizer bound to a different parameter set");
    for (const auto& p : params) {
      if (!p.grad) throw Error("optimizer", "parameter '" + p.name + "' has no gradient");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double decay = 1.0 - cfg_.learning_rate * cfg_.weight_decay;
    std::size_t k = 0;
    for (auto& p : params) {
      Tensor& m = m_[k];
      Tensor& v = v_[k];
      ++k;
      if (!m.same_shape(p.value)) throw ShapeError("moment buffer shape mismatch for '" + p.name + "'");
      const Tensor& g = *p.grad;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p.value[i] = p.value[i] * decay - cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
      p.grad.reset();
    }
  }

 private:
  AdamWConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace cdla
