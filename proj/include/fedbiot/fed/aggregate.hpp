#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fedbiot/data/partition.hpp"
#include "fedbiot/model/lora.hpp"

namespace fedbiot {

template <class T>
struct ClientUpdate {
  std::size_t client_id = 0;
  double weight = 0;  // p_m
  const LoraSet<T>* lora = nullptr;
};

// Factorwise weighted average sum_m p_m * w_m. Summation runs in increasing
// client id, so the result does not depend on the order updates arrive in.
template <class T>
LoraSet<T> aggregate(std::vector<ClientUpdate<T>> updates) {
  if (updates.empty()) throw AggregationError("aggregate: no client updates");
  std::sort(updates.begin(), updates.end(), [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  double total = 0;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    const auto& u = updates[i];
    if (!u.lora) throw AggregationError("aggregate: client " + std::to_string(u.client_id) + " sent no LoRA set");
    if (i > 0 && updates[i - 1].client_id == u.client_id) {
      throw AggregationError("aggregate: duplicate update from client " + std::to_string(u.client_id));
    }
    if (!(u.weight > 0)) {
      throw AggregationError("aggregate: client " + std::to_string(u.client_id) + " has non-positive weight");
    }
    total += u.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw AggregationError("aggregate: client weights sum to " + std::to_string(total) + ", expected 1");
  }
  const LoraSet<T>& ref = *updates.front().lora;
  for (const auto& u : updates) ref.require_same_structure(*u.lora, "client " + std::to_string(u.client_id));

  LoraSet<T> out = ref;
  auto dst = out.parameters();
  for (std::size_t p = 0; p < dst.size(); ++p) {
    Array<T>& acc = *dst[p];
    std::vector<double> sum(acc.size(), 0.0);
    for (const auto& u : updates) {
      const Array<T>& src = *u.lora->parameters()[p];
      for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += u.weight * static_cast<double>(src[j]);
    }
    for (std::size_t j = 0; j < sum.size(); ++j) acc[j] = static_cast<T>(sum[j]);
  }
  return out;
}

// Weights from exact shard shares; they must add up to exactly one.
template <class T>
LoraSet<T> aggregate(const std::vector<ShardWeight>& weights, const std::vector<const LoraSet<T>*>& loras) {
  if (weights.size() != loras.size()) throw AggregationError("aggregate: weight and update counts differ");
  std::size_t num = 0;
  for (const auto& w : weights) {
    if (w.denominator != weights.front().denominator) throw AggregationError("aggregate: shard weights use different totals");
    num += w.numerator;
  }
  if (!weights.empty() && num != weights.front().denominator) {
    throw AggregationError("aggregate: shard sizes sum to " + std::to_string(num) + " of " +
                           std::to_string(weights.front().denominator));
  }
  std::vector<ClientUpdate<T>> updates;
  for (std::size_t m = 0; m < loras.size(); ++m) updates.push_back({m, weights[m].value(), loras[m]});
  return aggregate(std::move(updates));
}

}  // namespace fedbiot
