#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fedbiot/compute/optim.hpp"
#include "fedbiot/data/partition.hpp"
#include "fedbiot/model/lm.hpp"
#include "fedbiot/seeds.hpp"

namespace fedbiot {

enum class Method { FedBiOT, FedOT, OffsiteSingle };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::FedBiOT: return "FedBiOT";
    case Method::FedOT: return "FedOT";
    case Method::OffsiteSingle: return "OffsiteSingle";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "FedBiOT" || s == "fedbiot") return Method::FedBiOT;
  if (s == "FedOT" || s == "fedot") return Method::FedOT;
  if (s == "OffsiteSingle" || s == "offsite" || s == "offsite_single") return Method::OffsiteSingle;
  throw ConfigError("unknown mode '" + s + "' (expected FedBiOT, FedOT or OffsiteSingle)");
}

struct RoundConfig {
  std::size_t local_steps = 30;  // K
  std::size_t batch_size = 10;
  std::size_t rounds = 500;      // R; 0 runs pre-alignment only
  double epsilon = 0.0;          // proximal weight
  OptimizerConfig optimizer{};
  Method mode = Method::FedBiOT;

  void validate() const {
    if (local_steps < 1) throw ConfigError("federation.local_steps (K) must be >= 1");
    if (batch_size < 1) throw ConfigError("federation.batch_size must be >= 1");
    if (epsilon < 0) throw ConfigError("federation.epsilon must be >= 0");
    optimizer.validate();
  }
};

// Effective weight deltas (alpha / r) * B * A, one [d_out x d_in] matrix per
// targeted projection.
template <class T>
std::map<LoraKey, Array<T>> lora_deltas(const LoraSet<T>& lora) {
  std::map<LoraKey, Array<T>> out;
  const T s = lora.scale();
  for (const auto& [k, f] : lora.factors()) {
    Array<T> d({f.b.rows(), f.a.cols()});
    kernel::gemm_nn(f.b.data(), f.a.data(), d.data(), f.b.rows(), f.b.cols(), f.a.cols());
    for (auto& v : d.values()) v *= s;
    out.emplace(k, std::move(d));
  }
  return out;
}

// Flattened concatenation of every delta in canonical order.
template <class T>
Array<T> reconstruct(const LoraSet<T>& lora) {
  std::vector<T> flat;
  for (const auto& [k, d] : lora_deltas(lora)) flat.insert(flat.end(), d.values().begin(), d.values().end());
  const std::size_t n = flat.size();
  return Array<T>({n}, std::move(flat));
}

template <class T>
double l2_norm(const Array<T>& a) {
  double s = 0;
  for (T v : a.values()) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

// State the server sends at the start of round t. Clients read it concurrently
// and never modify it.
template <class T>
struct BroadcastSnapshot {
  LoraSet<T> adapter;
  LoraSet<T> emulator;
  std::map<LoraKey, Array<T>> adapter_deltas;  // proximal anchor
  std::size_t round = 0;

  static BroadcastSnapshot make(const LoraSet<T>& adapter, const LoraSet<T>& emulator, std::size_t round) {
    return BroadcastSnapshot{adapter, emulator, lora_deltas(adapter), round};
  }
};

template <class T>
struct ClientState {
  std::size_t id = 0;
  std::uint64_t seed = 0;  // keys this client's batch draws
  Dataset shard;
  ShardWeight weight;
  LoraSet<T> adapter;
  Optimizer<T> optimizer;
};

// Local initialisation: adapter copied from the broadcast, optimizer state reset.
template <class T>
void initialize_client(ClientState<T>& client, const BroadcastSnapshot<T>& snapshot, const OptimizerConfig& opt) {
  client.adapter = snapshot.adapter;
  client.optimizer = Optimizer<T>(opt);
}

template <class T>
struct ClientObjective {
  Var<T> total;
  Var<T> task;
  std::optional<Var<T>> proximal;
  BoundLora<T> adapter;
};

// F_m on `batch` through AdapEmu plus (epsilon / 2) * ||w_hat - w_hat_t||^2 on
// the reconstructed adapter deltas. The gradient reaches the LoRA factors
// through the product B * A. With epsilon = 0 the proximal term is omitted.
template <class T>
ClientObjective<T> client_objective(Tape<T>& tape, const SplitPlan& plan, const TransformerStack<T>& base,
                                    const LoraSet<T>& adapter, const BroadcastSnapshot<T>& snapshot,
                                    const std::vector<const Sample*>& batch, double epsilon) {
  const auto model = assemble(plan, base, adapter, &snapshot.emulator, Assembly::AdapEmu);
  auto binding = model.bind(tape, Trainable::Adapter);
  ClientObjective<T> out;
  out.task = batch_lm_loss(model, binding, batch);
  out.total = out.task;
  if (epsilon > 0) {
    Var<T> prox;
    bool first = true;
    for (const auto& [k, ab] : binding.adapter.vars) {
      Var<T> delta = scale(matmul(ab.second, ab.first), binding.adapter.scale);
      Var<T> anchor = tape.constant_ref(snapshot.adapter_deltas.at(k));
      Var<T> d = l2_distance_sq(delta, anchor);
      prox = first ? d : add(prox, d);
      first = false;
    }
    out.proximal = scale(prox, static_cast<T>(epsilon / 2.0));
    out.total = add(out.task, *out.proximal);
  }
  out.adapter = binding.adapter;
  return out;
}

struct LocalResult {
  std::vector<double> task_loss;      // F_m per step, before the update
  std::vector<double> proximal_loss;  // (epsilon/2)||.||^2 per step, before the update
  double final_loss() const { return task_loss.empty() ? 0.0 : task_loss.back(); }
};

// K optimizer steps on the client's adapter LoRA. Batches are keyed by
// (client seed, round, step), so the result does not depend on which thread
// runs the client or in what order.
template <class T>
LocalResult local_update(ClientState<T>& client, const BroadcastSnapshot<T>& snapshot, const SplitPlan& plan,
                         const TransformerStack<T>& base, const RoundConfig& cfg) {
  if (client.shard.empty()) throw ConfigError("client " + std::to_string(client.id) + " has an empty shard");
  LocalResult result;
  auto params = client.adapter.parameters();
  for (std::size_t k = 0; k < cfg.local_steps; ++k) {
    std::mt19937_64 rng(derive_seed(client.seed, 0xC11E, snapshot.round, k));
    const auto batch = sample_batch(client.shard, cfg.batch_size, rng);
    Tape<T> tape;
    auto obj = client_objective(tape, plan, base, client.adapter, snapshot, batch, cfg.epsilon);
    tape.backward(obj.total);
    result.task_loss.push_back(static_cast<double>(obj.task.value().item()));
    result.proximal_loss.push_back(obj.proximal ? static_cast<double>(obj.proximal->value().item()) : 0.0);
    const auto grads = obj.adapter.gradients(tape);
    std::vector<const Array<T>*> gptr;
    for (const auto& g : grads) gptr.push_back(&g);
    client.optimizer.step(params, gptr);
  }
  return result;
}

}  // namespace fedbiot
