#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "fedbiot/data/tasks.hpp"

namespace fedbiot {

enum class PartitionScheme { IID, ByCategory };

inline std::string to_string(PartitionScheme s) { return s == PartitionScheme::IID ? "iid" : "by_category"; }

inline PartitionScheme parse_partition(const std::string& s) {
  if (s == "iid") return PartitionScheme::IID;
  if (s == "by_category") return PartitionScheme::ByCategory;
  throw ConfigError("unknown partition scheme '" + s + "' (expected iid or by_category)");
}

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::IID;
  std::size_t clients = 1;
  std::uint64_t seed = 0;
};

// Exact share |D_m| / |D|.
struct ShardWeight {
  std::size_t numerator = 0;
  std::size_t denominator = 1;

  double value() const noexcept { return static_cast<double>(numerator) / static_cast<double>(denominator); }
  friend bool operator==(const ShardWeight&, const ShardWeight&) = default;
};

struct Partition {
  std::vector<Dataset> shards;
  std::vector<ShardWeight> weights;
  // Original dataset indices held by each shard.
  std::vector<std::vector<std::size_t>> indices;
};

// iid: shuffled, equal-size shards (sizes differ by at most one).
// by_category: whole categories dealt round-robin in order of decreasing size.
inline Partition partition(const Dataset& data, const PartitionSpec& spec) {
  if (spec.clients < 1) throw PartitionError("partition: need at least one client");
  std::vector<std::vector<std::size_t>> groups(spec.clients);
  if (spec.scheme == PartitionScheme::IID) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(spec.seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t base = data.size() / spec.clients, extra = data.size() % spec.clients;
    std::size_t pos = 0;
    for (std::size_t m = 0; m < spec.clients; ++m) {
      const std::size_t n = base + (m < extra ? 1 : 0);
      groups[m].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                       order.begin() + static_cast<std::ptrdiff_t>(pos + n));
      std::sort(groups[m].begin(), groups[m].end());
      pos += n;
    }
  } else {
    std::map<TaskKind, std::vector<std::size_t>> by_kind;
    for (std::size_t i = 0; i < data.size(); ++i) by_kind[data[i].category].push_back(i);
    if (spec.clients > by_kind.size()) {
      throw PartitionError("by_category partition: " + std::to_string(spec.clients) + " clients but only " +
                           std::to_string(by_kind.size()) + " categories");
    }
    std::vector<std::pair<TaskKind, std::vector<std::size_t>>> cats(by_kind.begin(), by_kind.end());
    std::stable_sort(cats.begin(), cats.end(),
                     [](const auto& a, const auto& b) { return a.second.size() > b.second.size(); });
    for (std::size_t c = 0; c < cats.size(); ++c) {
      auto& g = groups[c % spec.clients];
      g.insert(g.end(), cats[c].second.begin(), cats[c].second.end());
    }
    for (auto& g : groups) std::sort(g.begin(), g.end());
  }
  Partition out;
  for (std::size_t m = 0; m < spec.clients; ++m) {
    if (groups[m].empty()) throw PartitionError("partition: client " + std::to_string(m) + " received an empty shard");
    Dataset shard;
    shard.reserve(groups[m].size());
    for (std::size_t i : groups[m]) shard.push_back(data[i]);
    out.weights.push_back(ShardWeight{shard.size(), data.size()});
    out.shards.push_back(std::move(shard));
  }
  out.indices = std::move(groups);
  return out;
}

}  // namespace fedbiot
