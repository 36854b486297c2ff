#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedbiot/fed/client.hpp"
#include "fedbiot/model/lora.hpp"
#include "fedbiot/model/split_plan.hpp"

namespace fedbiot {

// Widths needed for analytic accounting; no weights are materialised.
struct CostDims {
  std::size_t d_model = 4096;
  std::size_t d_ff = 11008;
};

inline constexpr double kBytesPerMB = 1e6;

// Dense parameters of one decoder layer: q, k, v, o plus gated feed-forward.
inline std::uint64_t dense_params_per_layer(const CostDims& dims) {
  return 4ull * dims.d_model * dims.d_model + 3ull * dims.d_model * dims.d_ff;
}

enum class CostScope { Client, Server };

// Client scope counts the adapter LoRA, server scope the emulator LoRA.
inline std::uint64_t count_trainable(const SplitPlan& plan, const LoraSpec& lora, const CostDims& dims,
                                     CostScope scope) {
  const std::uint64_t per_layer = lora_params_per_layer(lora, dims.d_model, dims.d_ff);
  return per_layer * (scope == CostScope::Client ? plan.adapter_size() : plan.emulator.size());
}

struct CostReport {
  std::string method;
  double keep_ratio = 1;
  std::size_t adapter_layers = 0;
  std::size_t emulator_layers = 0;
  std::uint64_t trainable_params = 0;
  std::uint64_t comm_down_bytes = 0;
  std::uint64_t comm_up_bytes = 0;
  double comm_total_mb = 0;
  double flop_per_token_forward = 0;
  double flop_per_token_backward = 0;

  double flop_per_token_total() const { return flop_per_token_forward + flop_per_token_backward; }
};

struct CommCost {
  std::uint64_t down_bytes = 0;
  std::uint64_t up_bytes = 0;
  std::uint64_t total_bytes() const { return down_bytes + up_bytes; }
  double total_mb() const { return static_cast<double>(total_bytes()) / kBytesPerMB; }
};

// FedBiOT sends adapter and emulator LoRA down and receives the adapter LoRA
// back; the offsite-tuning baselines exchange the adapter LoRA only.
inline CommCost comm_per_round(const SplitPlan& plan, const LoraSpec& lora, const CostDims& dims, Method method,
                               std::size_t bytes_per_param = 4) {
  const std::uint64_t per_layer = lora_params_per_layer(lora, dims.d_model, dims.d_ff);
  const std::uint64_t adapter = per_layer * plan.adapter_size();
  const std::uint64_t emulator = per_layer * plan.emulator.size();
  CommCost c;
  c.up_bytes = adapter * bytes_per_param;
  c.down_bytes = (method == Method::FedBiOT ? adapter + emulator : adapter) * bytes_per_param;
  return c;
}

struct FlopEstimate {
  double forward = 0;
  double backward = 0;
  double total() const { return forward + backward; }
};

// Dense approximation: 2 FLOP per parameter per token forward through every
// executed layer, 4 per parameter backward through every layer the gradient
// must traverse. With the adapter at the output only the adapter layers are on
// that path; with an input-side adapter the gradient crosses the whole stack.
// Embedding, head, attention-score and LoRA FLOPs are not counted.
inline FlopEstimate flop_per_token(const SplitPlan& plan, const CostDims& dims, Method method) {
  const double p = static_cast<double>(dense_params_per_layer(dims));
  const double executed = static_cast<double>(plan.emulator_path_length());
  const double grad_path = (method == Method::FedBiOT && plan.top_adapter.empty())
                               ? static_cast<double>(plan.bottom_adapter.size())
                               : executed;
  return {2.0 * p * executed, 4.0 * p * grad_path};
}

inline CostReport cost_report(const SplitPlan& plan, const LoraSpec& lora, const CostDims& dims, Method method,
                              std::size_t bytes_per_param = 4) {
  CostReport r;
  r.method = to_string(method);
  r.keep_ratio = plan.keep_ratio;
  r.adapter_layers = plan.adapter_size();
  r.emulator_layers = plan.emulator.size();
  r.trainable_params = count_trainable(plan, lora, dims, CostScope::Client);
  const CommCost c = comm_per_round(plan, lora, dims, method, bytes_per_param);
  r.comm_down_bytes = c.down_bytes;
  r.comm_up_bytes = c.up_bytes;
  r.comm_total_mb = c.total_mb();
  const FlopEstimate f = flop_per_token(plan, dims, method);
  r.flop_per_token_forward = f.forward;
  r.flop_per_token_backward = f.backward;
  return r;
}

// Method / split combinations of the reference cost table at a given depth:
// offsite-tuning (2 + 2 adapter) and FedBiOT with 2 or 4 output-side adapter
// layers, each at dropout 0.2 and 0.5 (keep ratio 0.8 and 0.5).
inline std::vector<CostReport> reference_cost_table(std::size_t n_layers, const LoraSpec& lora, const CostDims& dims) {
  std::vector<CostReport> rows;
  for (double keep : {0.8, 0.5}) {
    rows.push_back(cost_report(extract_offsite(n_layers, keep), lora, dims, Method::FedOT));
    rows.push_back(cost_report(extract(n_layers, 2, keep), lora, dims, Method::FedBiOT));
    rows.push_back(cost_report(extract(n_layers, 4, keep), lora, dims, Method::FedBiOT));
  }
  return rows;
}

}  // namespace fedbiot
