#pragma once

#include <functional>
#include <vector>

#include "fedbiot/fed/round.hpp"

namespace fedbiot {

struct TrainingConfig {
  RoundConfig round{};
  AlignConfig align{};
  LoraSpec lora{};
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

// Fresh server state: LoRA on the adapter and emulator layers (B = 0, so both
// start as exact no-ops).
template <class T>
ServerState<T> initial_server_state(const TransformerStack<T>& base, const SplitPlan& plan, const TrainingConfig& cfg) {
  ServerState<T> s;
  s.adapter = inject_lora(base, plan.adapter(), cfg.lora, derive_seed(cfg.seed, 0x1A));
  s.emulator = inject_lora(base, plan.emulator, cfg.lora, derive_seed(cfg.seed, 0x1E));
  s.align_optimizer = Optimizer<T>(cfg.align.optimizer);
  return s;
}

// Clients with shard weights p_m = |D_m| / |D| and per-client seeds.
template <class T>
std::vector<ClientState<T>> make_clients(const Partition& part, std::uint64_t seed) {
  std::vector<ClientState<T>> clients;
  for (std::size_t m = 0; m < part.shards.size(); ++m) {
    ClientState<T> c;
    c.id = m;
    c.seed = derive_seed(seed, 0xC1, m);
    c.shard = part.shards[m];
    c.weight = part.weights[m];
    clients.push_back(std::move(c));
  }
  return clients;
}

struct TrainingResult {
  std::vector<double> prealign_losses;
  std::vector<RoundReport> reports;
};

template <class T>
struct TrainingHooks {
  // Called once pre-alignment has finished (skipped when resuming past it).
  std::function<void(const std::vector<double>&, const ServerState<T>&)> on_prealign;
  // Called after every round with the updated server state.
  std::function<void(const RoundReport&, const ServerState<T>&)> on_round;
};

// Pre-alignment followed by rounds next_round..R-1. `server` may come from a
// checkpoint, in which case finished phases are skipped.
template <class T>
TrainingResult run_training(const TrainingConfig& cfg, const TransformerStack<T>& base, const SplitPlan& plan,
                            std::vector<ClientState<T>>& clients, const Dataset& public_data, ServerState<T>& server,
                            const TrainingHooks<T>& hooks = {}) {
  cfg.round.validate();
  cfg.align.validate();
  TrainingResult result;
  if (!server.prealigned) {
    result.prealign_losses = align_emulator(cfg.align, cfg.align.pre_align_iters, public_data, plan, base,
                                            server.adapter, server.emulator, server.align_optimizer,
                                            derive_seed(cfg.seed, 0xA0));
    server.prealigned = true;
    if (hooks.on_prealign) hooks.on_prealign(result.prealign_losses, server);
  }
  for (std::size_t t = server.next_round; t < cfg.round.rounds; ++t) {
    RoundReport r = run_round(t, server, clients, plan, base, public_data, cfg.round, cfg.align, cfg.seed, cfg.threads);
    if (hooks.on_round) hooks.on_round(r, server);
    result.reports.push_back(std::move(r));
  }
  return result;
}

}  // namespace fedbiot
