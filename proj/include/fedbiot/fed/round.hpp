#pragma once

#include <chrono>
#include <exception>
#include <functional>
#include <optional>
#include <thread>
#include <vector>

#include "fedbiot/align/align.hpp"
#include "fedbiot/fed/aggregate.hpp"
#include "fedbiot/fed/client.hpp"

namespace fedbiot {

template <class T>
struct ServerState {
  LoraSet<T> adapter;
  LoraSet<T> emulator;
  Optimizer<T> align_optimizer;
  std::size_t next_round = 0;
  bool prealigned = false;
};

struct RoundReport {
  std::size_t round = 0;
  std::vector<double> client_losses;  // final local task loss per client, by client id
  std::vector<double> align_losses;
  double adapter_norm = 0;  // ||w_hat|| of the aggregated adapter
  double wall_time_s = 0;
};

// Round-by-round alignment only runs for FedBiOT; the offsite-tuning baselines
// keep the emulator fixed after pre-alignment and use no proximal term.
inline std::size_t alignment_iters_per_round(Method m, const AlignConfig& a) {
  return m == Method::FedBiOT ? a.per_round_iters : 0;
}

inline double effective_epsilon(const RoundConfig& cfg) { return cfg.mode == Method::FedBiOT ? cfg.epsilon : 0.0; }

namespace detail {

template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& body) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  const std::size_t workers = std::min(threads, n);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

// One communication round, in order: server alignment against the current
// aggregated adapter, broadcast, independent client updates, weighted
// aggregation.
template <class T>
RoundReport run_round(std::size_t t, ServerState<T>& server, std::vector<ClientState<T>>& clients,
                      const SplitPlan& plan, const TransformerStack<T>& base, const Dataset& public_data,
                      const RoundConfig& round_cfg, const AlignConfig& align_cfg, std::uint64_t seed,
                      std::size_t threads = 1) {
  if (t >= round_cfg.rounds) {
    throw ConfigError("round " + std::to_string(t) + " is past the configured " + std::to_string(round_cfg.rounds) +
                      " rounds");
  }
  if (clients.empty()) throw ConfigError("run_round: no clients");
  const auto start = std::chrono::steady_clock::now();
  RoundReport report;
  report.round = t;

  const std::size_t align_iters = alignment_iters_per_round(round_cfg.mode, align_cfg);
  if (align_iters > 0) {
    report.align_losses = align_emulator(align_cfg, align_iters, public_data, plan, base, server.adapter,
                                         server.emulator, server.align_optimizer, derive_seed(seed, 0xA1, t));
  }

  const auto snapshot = BroadcastSnapshot<T>::make(server.adapter, server.emulator, t);
  RoundConfig local_cfg = round_cfg;
  local_cfg.epsilon = effective_epsilon(round_cfg);
  std::vector<LocalResult> results(clients.size());
  detail::parallel_for(clients.size(), threads, [&](std::size_t i) {
    initialize_client(clients[i], snapshot, round_cfg.optimizer);
    results[i] = local_update(clients[i], snapshot, plan, base, local_cfg);
  });

  std::vector<ClientUpdate<T>> updates;
  for (const auto& c : clients) updates.push_back({c.id, c.weight.value(), &c.adapter});
  server.adapter = aggregate(std::move(updates));

  std::vector<std::size_t> order(clients.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return clients[a].id < clients[b].id; });
  for (std::size_t i : order) report.client_losses.push_back(results[i].final_loss());
  report.adapter_norm = l2_norm(reconstruct(server.adapter));
  server.next_round = t + 1;
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace fedbiot
