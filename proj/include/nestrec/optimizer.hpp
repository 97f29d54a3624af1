#pragma once

// Bias-corrected Adam, global-norm gradient clipping and decoupled l2 decay.

#include <cmath>
#include <span>
#include <unordered_map>
#include <utility>

#include "nestrec/tape.hpp"

namespace nestrec {

inline double global_grad_norm(std::span<Parameter* const> params) {
  double sq = 0;
  for (const Parameter* p : params) sq += p->grad.l2_norm_squared();
  return std::sqrt(sq);
}

// Scales all gradients by threshold/norm when the global L2 norm exceeds the
// threshold; direction is preserved exactly. Returns the pre-clip norm.
inline double clip_global_norm(std::span<Parameter* const> params, double threshold = 3.0) {
  double norm = global_grad_norm(params);
  if (norm > threshold && norm > 0.0) {
    double scale = threshold / norm;
    for (Parameter* p : params)
      for (double& g : p->grad.v) g *= scale;
  }
  return norm;
}

// The l2 term applied as decoupled decay once per update step.
inline void apply_weight_decay(std::span<Parameter* const> params, double lambda) {
  if (lambda == 0.0) return;
  for (Parameter* p : params)
    for (double& v : p->value.v) v -= lambda * v;
}

struct AdamConfig {
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Per-parameter first/second moments plus the shared step counter.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  long long steps_taken() const { return t_; }

  void step(std::span<Parameter* const> params) {
    ++t_;
    double correction1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    double correction2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (Parameter* p : params) {
      auto& [m, v] = moments(p);
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        double g = p->grad.v[i];
        m.v[i] = config_.beta1 * m.v[i] + (1.0 - config_.beta1) * g;
        v.v[i] = config_.beta2 * v.v[i] + (1.0 - config_.beta2) * g * g;
        double m_hat = m.v[i] / correction1;
        double v_hat = v.v[i] / correction2;
        p->value.v[i] -= config_.alpha * m_hat / (std::sqrt(v_hat) + config_.epsilon);
      }
    }
  }

 private:
  std::pair<Tensor, Tensor>& moments(const Parameter* p) {
    auto it = moments_.find(p);
    if (it == moments_.end())
      it = moments_.emplace(p, std::make_pair(Tensor::zeros(p->value.shape),
                                              Tensor::zeros(p->value.shape))).first;
    return it->second;
  }

  AdamConfig config_;
  long long t_ = 0;
  std::unordered_map<const Parameter*, std::pair<Tensor, Tensor>> moments_;
};

}  // namespace nestrec
