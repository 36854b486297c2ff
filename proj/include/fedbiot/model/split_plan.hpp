#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "fedbiot/errors.hpp"

namespace fedbiot {

using LayerList = std::vector<std::size_t>;

// Layer partition produced by extract(). Indices refer to the original stack.
// `top_adapter` is empty for FedBiOT (adapter only at the output end) and holds
// the leading layers for the offsite-tuning baselines.
struct SplitPlan {
  std::size_t n_layers = 0;
  LayerList top_adapter;
  LayerList bottom_adapter;
  LayerList emulator;        // compressed, strictly increasing
  LayerList noncompressed;   // every layer between the adapters
  double keep_ratio = 1.0;

  std::size_t adapter_size() const noexcept { return top_adapter.size() + bottom_adapter.size(); }

  LayerList adapter() const {
    LayerList out = top_adapter;
    out.insert(out.end(), bottom_adapter.begin(), bottom_adapter.end());
    return out;
  }

  // Number of decoder layers executed by AdapEmu.
  std::size_t emulator_path_length() const noexcept { return adapter_size() + emulator.size(); }

  friend bool operator==(const SplitPlan&, const SplitPlan&) = default;
};

namespace detail {

inline std::size_t kept_layer_count(double keep_ratio, std::size_t span) {
  // Absorb representation error so e.g. 0.7 * 10 counts as 7, not 6.
  return static_cast<std::size_t>(std::floor(keep_ratio * static_cast<double>(span) + 1e-9));
}

}  // namespace detail

// Uniform layer dropout over the layers between `top` leading and `bottom`
// trailing adapter layers. The emulator keeps floor(keep_ratio * span) layers
// chosen at floor(j * stride), stride = (span - 1) / (kept - 1), with the
// floor taken on exact integer arithmetic.
inline SplitPlan extract_split(std::size_t n_layers, std::size_t top, std::size_t bottom, double keep_ratio) {
  if (bottom < 1) throw ConfigError("adapter must contain at least one output-side layer");
  if (top + bottom + 2 > n_layers) {
    throw ConfigError("adapter of " + std::to_string(top + bottom) + " layers leaves fewer than 2 emulator layers in a " +
                      std::to_string(n_layers) + "-layer model (need 1 <= s <= n-2)");
  }
  if (!(keep_ratio > 0.0) || keep_ratio > 1.0) {
    throw ConfigError("keep ratio must satisfy 0 < kappa <= 1, got " + std::to_string(keep_ratio));
  }
  const std::size_t span = n_layers - top - bottom;
  const std::size_t kept = detail::kept_layer_count(keep_ratio, span);
  if (kept < 2) {
    throw ConfigError("emulator would keep floor(kappa * (n - s)) = " + std::to_string(kept) +
                      " layers; at least 2 are required for the stride walk");
  }
  SplitPlan plan;
  plan.n_layers = n_layers;
  plan.keep_ratio = keep_ratio;
  for (std::size_t i = 0; i < top; ++i) plan.top_adapter.push_back(i);
  for (std::size_t i = n_layers - bottom; i < n_layers; ++i) plan.bottom_adapter.push_back(i);
  for (std::size_t i = top; i < top + span; ++i) plan.noncompressed.push_back(i);
  for (std::size_t j = 0; j < kept; ++j) plan.emulator.push_back(top + (j * (span - 1)) / (kept - 1));
  return plan;
}

// FedBiOT split: the last `adapter_size` layers form the adapter.
inline SplitPlan extract(std::size_t n_layers, std::size_t adapter_size, double keep_ratio) {
  if (adapter_size < 1 || adapter_size + 2 > n_layers) {
    throw ConfigError("adapter size s = " + std::to_string(adapter_size) + " out of range [1, n-2] for n = " +
                      std::to_string(n_layers));
  }
  return extract_split(n_layers, 0, adapter_size, keep_ratio);
}

// Offsite-tuning / FedOT split: the first two and the last two layers.
inline SplitPlan extract_offsite(std::size_t n_layers, double keep_ratio) {
  return extract_split(n_layers, 2, 2, keep_ratio);
}

inline std::string format_layers(const LayerList& layers) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < layers.size(); ++i) os << (i ? "," : "") << layers[i];
  os << '}';
  return os.str();
}

}  // namespace fedbiot
