#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedbiot/compute/array.hpp"

namespace fedbiot {

enum class OptimizerKind { AdamW, SGD };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::AdamW ? "adamw" : "sgd"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adamw") return OptimizerKind::AdamW;
  if (s == "sgd") return OptimizerKind::SGD;
  throw ConfigError("unknown optimizer '" + s + "' (expected adamw or sgd)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::AdamW;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("optimizer lr must be > 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("optimizer betas must lie in [0, 1)");
    if (!(eps > 0)) throw ConfigError("optimizer eps must be > 0");
    if (weight_decay < 0) throw ConfigError("optimizer weight_decay must be >= 0");
  }
};

// AdamW with decoupled weight decay, or plain SGD. Moments are kept per
// parameter slot in the order parameters are passed to step().
template <class T>
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const OptimizerConfig& config() const noexcept { return cfg_; }
  std::uint64_t steps() const noexcept { return t_; }

  void reset() {
    t_ = 0;
    m_.clear();
    v_.clear();
  }

  void step(const std::vector<Array<T>*>& params, const std::vector<const Array<T>*>& grads) {
    if (params.size() != grads.size()) throw DimensionError("optimizer: parameter and gradient counts differ");
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
      }
    }
    if (m_.size() != params.size()) throw DimensionError("optimizer: parameter list changed between steps");
    ++t_;
    const T lr = static_cast<T>(cfg_.lr);
    if (cfg_.kind == OptimizerKind::SGD) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        Array<T>& p = *params[i];
        const Array<T>& g = *grads[i];
        require_same_shape(p, g, "optimizer");
        for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
      }
      return;
    }
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T bc1 = T{1} - static_cast<T>(std::pow(cfg_.beta1, static_cast<double>(t_)));
    const T bc2 = T{1} - static_cast<T>(std::pow(cfg_.beta2, static_cast<double>(t_)));
    const T eps = static_cast<T>(cfg_.eps);
    const T decay = T{1} - lr * static_cast<T>(cfg_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Array<T>& p = *params[i];
      const Array<T>& g = *grads[i];
      require_same_shape(p, g, "optimizer");
      Array<T>& m = m_[i];
      Array<T>& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = b1 * m[j] + (T{1} - b1) * g[j];
        v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
        const T mhat = m[j] / bc1;
        const T vhat = v[j] / bc2;
        p[j] = p[j] * decay - lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  // Moment buffers, exposed for checkpointing.
  std::vector<Array<T>>& first_moments() noexcept { return m_; }
  std::vector<Array<T>>& second_moments() noexcept { return v_; }
  const std::vector<Array<T>>& first_moments() const noexcept { return m_; }
  const std::vector<Array<T>>& second_moments() const noexcept { return v_; }
  void set_steps(std::uint64_t t) noexcept { t_ = t; }

 private:
  OptimizerConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<Array<T>> m_;
  std::vector<Array<T>> v_;
};

}  // namespace fedbiot
