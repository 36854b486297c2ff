#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fedbiot/compute/ops.hpp"
#include "fedbiot/model/split_plan.hpp"
#include "fedbiot/model/transformer.hpp"

namespace fedbiot {

struct LoraKey {
  std::size_t layer;
  Projection projection;

  friend auto operator<=>(const LoraKey&, const LoraKey&) = default;
};

inline std::string lora_key_name(const LoraKey& k) {
  return "layer" + std::to_string(k.layer) + "." + projection_name(k.projection);
}

// Low-rank pair for one projection: delta = (alpha / r) * B * A with
// A [r x d_in] and B [d_out x r].
template <class T>
struct LoraFactor {
  Array<T> a;
  Array<T> b;

  friend bool operator==(const LoraFactor&, const LoraFactor&) = default;
};

struct LoraSpec {
  std::size_t rank = 8;
  double alpha = 16.0;
  std::vector<Projection> targets{Projection::Query, Projection::Value};

  void validate() const {
    if (rank < 1) throw ConfigError("lora.rank must be >= 1");
    if (!(alpha > 0)) throw ConfigError("lora.alpha must be > 0");
    if (targets.empty()) throw ConfigError("lora.targets must name at least one projection");
    std::set<Projection> seen(targets.begin(), targets.end());
    if (seen.size() != targets.size()) throw ConfigError("lora.targets contains a duplicate projection");
  }
};

// Trainable low-rank factors keyed by (layer, projection). Iteration order of
// the underlying map is the canonical order used for flattening, aggregation,
// optimizer slots and serialization.
template <class T>
class LoraSet {
 public:
  LoraSet() = default;
  LoraSet(std::size_t rank, double alpha) : rank_(rank), alpha_(alpha) {}

  std::size_t rank() const noexcept { return rank_; }
  double alpha() const noexcept { return alpha_; }
  T scale() const noexcept { return static_cast<T>(alpha_ / static_cast<double>(rank_)); }

  bool empty() const noexcept { return factors_.empty(); }
  std::size_t size() const noexcept { return factors_.size(); }
  bool contains(const LoraKey& k) const { return factors_.count(k) != 0; }
  bool has_layer(std::size_t layer) const {
    auto it = factors_.lower_bound(LoraKey{layer, Projection::Query});
    return it != factors_.end() && it->first.layer == layer;
  }

  const LoraFactor<T>& at(const LoraKey& k) const { return factors_.at(k); }
  LoraFactor<T>& at(const LoraKey& k) { return factors_.at(k); }
  const std::map<LoraKey, LoraFactor<T>>& factors() const noexcept { return factors_; }
  std::map<LoraKey, LoraFactor<T>>& factors() noexcept { return factors_; }

  void insert(const LoraKey& k, LoraFactor<T> f) {
    if (!factors_.emplace(k, std::move(f)).second) {
      throw ConfigError("LoRA already injected at " + lora_key_name(k));
    }
  }

  std::set<std::size_t> layers() const {
    std::set<std::size_t> out;
    for (const auto& [k, f] : factors_) out.insert(k.layer);
    return out;
  }

  // Sum over projections of r * (d_in + d_out).
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [k, f] : factors_) n += f.a.size() + f.b.size();
    return n;
  }

  // A then B for every factor, in canonical order.
  std::vector<Array<T>*> parameters() {
    std::vector<Array<T>*> out;
    for (auto& [k, f] : factors_) {
      out.push_back(&f.a);
      out.push_back(&f.b);
    }
    return out;
  }
  std::vector<const Array<T>*> parameters() const {
    std::vector<const Array<T>*> out;
    for (const auto& [k, f] : factors_) {
      out.push_back(&f.a);
      out.push_back(&f.b);
    }
    return out;
  }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> out;
    for (const auto& [k, f] : factors_) {
      out.push_back(lora_key_name(k) + ".A");
      out.push_back(lora_key_name(k) + ".B");
    }
    return out;
  }

  // Throws AggregationError naming the first difference in keys, rank or shapes.
  void require_same_structure(const LoraSet& other, const std::string& who) const {
    if (rank_ != other.rank_ || alpha_ != other.alpha_) {
      throw AggregationError(who + ": LoRA rank/alpha differ from the reference set");
    }
    if (factors_.size() != other.factors_.size()) {
      throw AggregationError(who + ": holds " + std::to_string(other.factors_.size()) + " LoRA factors, expected " +
                             std::to_string(factors_.size()));
    }
    for (auto it = factors_.begin(), jt = other.factors_.begin(); it != factors_.end(); ++it, ++jt) {
      if (!(it->first == jt->first)) {
        throw AggregationError(who + ": unexpected record " + lora_key_name(jt->first) + " where " +
                               lora_key_name(it->first) + " was expected");
      }
      if (it->second.a.shape() != jt->second.a.shape() || it->second.b.shape() != jt->second.b.shape()) {
        throw AggregationError(who + ": record " + lora_key_name(it->first) + " has mismatched factor shapes");
      }
    }
  }

  void zero() {
    for (auto& [k, f] : factors_) {
      f.a.fill(T{0});
      f.b.fill(T{0});
    }
  }

  template <class U>
  LoraSet<U> cast() const {
    LoraSet<U> out(rank_, alpha_);
    for (const auto& [k, f] : factors_) out.insert(k, {f.a.template cast<U>(), f.b.template cast<U>()});
    return out;
  }

  friend bool operator==(const LoraSet&, const LoraSet&) = default;

 private:
  std::size_t rank_ = 0;
  double alpha_ = 0;
  std::map<LoraKey, LoraFactor<T>> factors_;
};

// Adds LoRA factors for `spec.targets` on every layer of `layers`. A is drawn
// from N(0, 1/d_in), B is zero, so the injected model initially computes
// exactly what the base model does.
template <class T>
void inject_lora(LoraSet<T>& into, const TransformerStack<T>& base, const LayerList& layers, const LoraSpec& spec,
                 std::uint64_t seed) {
  spec.validate();
  if (into.rank() != spec.rank || into.alpha() != spec.alpha) {
    throw ConfigError("inject_lora: target set uses a different rank/alpha");
  }
  std::set<std::size_t> seen;
  for (std::size_t l : layers) {
    if (l >= base.n_layers()) {
      throw ConfigError("inject_lora: layer " + std::to_string(l) + " does not exist in a " +
                        std::to_string(base.n_layers()) + "-layer model");
    }
    if (!seen.insert(l).second || into.has_layer(l)) {
      throw ConfigError("inject_lora: duplicate injection on layer " + std::to_string(l));
    }
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l : layers) {
    for (Projection p : spec.targets) {
      const auto dims = projection_dims(p, base.config.d_model, base.config.d_ff);
      LoraFactor<T> f{Array<T>({spec.rank, dims.d_in}), Array<T>({dims.d_out, spec.rank})};
      const double stddev = 1.0 / std::sqrt(static_cast<double>(dims.d_in));
      for (auto& v : f.a.values()) v = static_cast<T>(normal(rng) * stddev);
      into.insert({l, p}, std::move(f));
    }
  }
}

template <class T>
LoraSet<T> inject_lora(const TransformerStack<T>& base, const LayerList& layers, const LoraSpec& spec,
                       std::uint64_t seed) {
  spec.validate();
  LoraSet<T> out(spec.rank, spec.alpha);
  inject_lora(out, base, layers, spec, seed);
  return out;
}

// Per-layer trainable count for a model width, without materialising weights.
inline std::size_t lora_params_per_layer(const LoraSpec& spec, std::size_t d_model, std::size_t d_ff) {
  std::size_t n = 0;
  for (Projection p : spec.targets) {
    const auto dims = projection_dims(p, d_model, d_ff);
    n += spec.rank * (dims.d_in + dims.d_out);
  }
  return n;
}

}  // namespace fedbiot
