// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedbiot/cli/commands.hpp"
#include "test_support.hpp"

using namespace fedbiot;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <class T>
bool same_bits(const Array<T>& a, const Array<T>& b) {
  return a.shape() == b.shape() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
}

template <class T>
bool same_bits(const std::vector<const Array<T>*>& a, const std::vector<const Array<T>*>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!same_bits(*a[i], *b[i])) return false;
  return true;
}

template <class T>
bool same_bits(const LoraSet<T>& a, const LoraSet<T>& b) {
  return same_bits(a.parameters(), b.parameters());
}

template <class T>
bool same_bits(const TransformerStack<T>& a, const TransformerStack<T>& b) {
  return same_bits(a.parameters(), b.parameters());
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

ModelConfig toy_model() {
  return ModelConfig{.n_layers = 8, .d_model = 64, .n_heads = 4, .d_ff = 192, .vocab_size = 64, .max_seq_len = 64,
                     .rng_seed = 11};
}

template <class T>
void randomize(LoraSet<T>& set, std::mt19937_64& rng, double stddev) {
  for (auto* p : set.parameters()) *p = fedbiot::testing::random_array(p->shape(), rng, stddev).template cast<T>();
}

// ------------------------------------------------------------------ 1

Outcome extraction_oracle() {
  struct Case {
    std::size_t s;
    double beta;
    std::size_t expected;
  };
  const Case cases[] = {{4, 0.2, 22}, {2, 0.2, 24}, {4, 0.5, 14}, {2, 0.5, 15}};
  Outcome o{true, ""};
  for (const auto& c : cases) {
    const std::size_t got = extract(32, c.s, 1.0 - c.beta).emulator.size();
    o.pass = o.pass && got == c.expected;
    o.detail += "(s=" + std::to_string(c.s) + ",beta=" + fmt(c.beta) + ")->" + std::to_string(got) + " ";
  }
  return o;
}

// ------------------------------------------------------------------ 2

Outcome cost_table() {
  const LoraSpec lora{.rank = 8, .alpha = 16, .targets = {Projection::Query, Projection::Value}};
  const CostDims dims{4096, 11008};
  struct Case {
    SplitPlan plan;
    Method method;
    double mb;
  };
  const Case cases[] = {{extract_offsite(32, 0.8), Method::FedOT, 4.19},
                        {extract(32, 2, 0.8), Method::FedBiOT, 14.68},
                        {extract(32, 4, 0.8), Method::FedBiOT, 15.73},
                        {extract(32, 2, 0.5), Method::FedBiOT, 9.96},
                        {extract(32, 4, 0.5), Method::FedBiOT, 11.53}};
  Outcome o{true, "MB/round"};
  for (const auto& c : cases) {
    const double mb = comm_per_round(c.plan, lora, dims, c.method).total_mb();
    o.pass = o.pass && std::abs(mb - c.mb) <= 0.01 * c.mb;
    o.detail += " " + fmt(mb);
  }
  const auto t2 = count_trainable(extract(32, 2, 0.8), lora, dims, CostScope::Client);
  const auto t4 = count_trainable(extract(32, 4, 0.8), lora, dims, CostScope::Client);
  o.pass = o.pass && t2 == 262144 && t4 == 524288;
  o.detail += "; trainable " + fmt(t2 / 1e6) + "M " + fmt(t4 / 1e6) + "M";
  return o;
}

// ------------------------------------------------------------------ 3

Outcome gradient_check() {
  const auto t0 = Clock::now();
  const ModelConfig cfg = toy_model();
  const auto base = TransformerStack<double>::init(cfg);
  const SplitPlan plan = extract(cfg.n_layers, 2, 0.5);
  const LoraSpec lora{};
  std::mt19937_64 rng(21);
  auto adapter = inject_lora(base, plan.adapter(), lora, 1);
  auto emulator = inject_lora(base, plan.emulator, lora, 2);
  randomize(adapter, rng, 0.05);
  randomize(emulator, rng, 0.05);
  const Dataset data = generate_mixture({TaskKind::Copy, TaskKind::Sort, TaskKind::ModularAdd}, 1, 5);
  const auto batch = all_of(data);

  // Client: task loss plus the proximal term, measured away from the anchor.
  const double epsilon = 2.0;
  const auto snapshot = BroadcastSnapshot<double>::make(adapter, emulator, 0);
  auto local = adapter;
  randomize(local, rng, 0.05);
  std::vector<Array<double>> client_grads;
  {
    Tape<double> tape;
    auto obj = client_objective(tape, plan, base, local, snapshot, batch, epsilon);
    tape.backward(obj.total);
    client_grads = obj.adapter.gradients(tape);
  }
  auto client_value = [&] {
    Tape<double> tape;
    return client_objective(tape, plan, base, local, snapshot, batch, epsilon).total.value().item();
  };
  std::vector<Array<double>*> client_params = local.parameters();
  const double client_err =
      fedbiot::testing::directional_gradient_error(client_params, client_grads, client_value, 20, 31);

  // Alignment: representation plus distillation terms, emulator LoRA trainable.
  const auto lg = alignment_loss_and_grad(plan, base, adapter, emulator, batch, 1.0);
  auto align_value = [&] { return alignment_loss_value(plan, base, adapter, emulator, batch, 1.0); };
  std::vector<Array<double>*> align_params = emulator.parameters();
  const double align_err = fedbiot::testing::directional_gradient_error(align_params, lg.grads, align_value, 20, 32);

  const double elapsed = seconds_since(t0);
  return {client_err < 1e-4 && align_err < 1e-4 && elapsed < 120,
          "client rel err " + fmt(client_err) + ", alignment rel err " + fmt(align_err) + " over 20 directions, " +
              fmt(elapsed) + " s"};
}

// ------------------------------------------------------------------ 4

Outcome identity_invariants() {
  const ModelConfig cfg = toy_model();
  const auto base = TransformerStack<double>::init(cfg);
  const LoraSpec lora{};
  const Dataset data = generate_mixture({std::begin(kAllTasks), std::end(kAllTasks)}, 2, 8);

  const SplitPlan full = extract(cfg.n_layers, 2, 1.0);
  const auto adapter_full = inject_lora(base, full.adapter(), lora, 3);
  const auto emulator_full = inject_lora(base, full.emulator, lora, 4);
  const auto emu_full = assemble(full, base, adapter_full, &emulator_full, Assembly::AdapEmu);

  const SplitPlan half = extract(cfg.n_layers, 2, 0.5);
  const auto adapter_half = inject_lora(base, half.adapter(), lora, 5);
  const auto emulator_half = inject_lora(base, half.emulator, lora, 6);
  const auto emu_half = assemble(half, base, adapter_half, &emulator_half, Assembly::AdapEmu);
  const auto fu_half = assemble(half, base, adapter_half, nullptr, Assembly::AdapFu);

  bool emu_is_full = true, injection_exact = true;
  for (const Sample& s : data) {
    const Array<double> reference = full_model_logits(base, s.inputs());
    emu_is_full = emu_is_full && same_bits(emu_full.logits(s.inputs()), reference);
    // Same layers with and without zero-initialised LoRA.
    Tape<double> tape;
    auto b = StackBinding<double>::bind(tape, base);
    const Array<double> plain =
        output_logits(b, run_layers(b, embed(b, s.inputs()), emu_half.executed_layers(),
                                    static_cast<const BoundLora<double>*>(nullptr)))
            .value();
    injection_exact = injection_exact && same_bits(emu_half.logits(s.inputs()), plain) &&
                      same_bits(fu_half.logits(s.inputs()), reference);
  }
  const double align_at_identity = alignment_loss_value(full, base, adapter_full, emulator_full, all_of(data), 1.0);
  return {emu_is_full && injection_exact && align_at_identity == 0.0,
          std::string("AdapEmu(kappa=1) == full: ") + (emu_is_full ? "bitwise" : "differs") +
              "; zero LoRA injection: " + (injection_exact ? "bitwise" : "differs") + "; alignment loss " +
              fmt(align_at_identity)};
}

// ------------------------------------------------------------------ 5

Outcome aggregation_properties() {
  const ModelConfig cfg = toy_model();
  const auto base = TransformerStack<double>::init(cfg);
  const SplitPlan plan = extract(cfg.n_layers, 2, 0.5);
  std::mt19937_64 rng(41);
  std::vector<LoraSet<double>> sets;
  for (int i = 0; i < 3; ++i) {
    sets.push_back(inject_lora(base, plan.adapter(), LoraSpec{}, 50 + i));
    randomize(sets.back(), rng, 1.0);
  }
  bool ok = true;
  std::string detail;

  const double w[] = {0.2, 0.3, 0.5};
  const auto forward = aggregate<double>({{0, w[0], &sets[0]}, {1, w[1], &sets[1]}, {2, w[2], &sets[2]}});
  const auto shuffled = aggregate<double>({{2, w[2], &sets[2]}, {0, w[0], &sets[0]}, {1, w[1], &sets[1]}});
  const bool perm = same_bits(forward, shuffled);
  ok = ok && perm;
  detail += std::string("permutation ") + (perm ? "ok" : "FAIL");

  const bool identity = same_bits(aggregate<double>({{7, 1.0, &sets[1]}}), sets[1]);
  ok = ok && identity;
  detail += std::string(", single client ") + (identity ? "ok" : "FAIL");

  auto negated = sets[0];
  for (auto* p : negated.parameters())
    for (auto& v : p->values()) v = -v;
  bool zero = true;
  const auto cancelled = aggregate<double>({{0, 0.5, &sets[0]}, {1, 0.5, &negated}});
  for (const auto* p : cancelled.parameters())
    for (double v : p->values()) zero = zero && v == 0.0;
  ok = ok && zero;
  detail += std::string(", antisymmetric ") + (zero ? "zero" : "FAIL");

  // Hand-built: constant factors 1, 2, 3 with p = (0.2, 0.3, 0.5) give 2.3;
  // two clients with p = (0.25, 0.75) and values 4, 8 give 7.
  std::vector<LoraSet<double>> constants = sets;
  for (int i = 0; i < 3; ++i)
    for (auto* p : constants[i].parameters()) p->fill(i + 1.0);
  double worst = 0;
  const auto three =
      aggregate<double>({{0, w[0], &constants[0]}, {1, w[1], &constants[1]}, {2, w[2], &constants[2]}});
  for (const auto* p : three.parameters())
    for (double v : p->values()) worst = std::max(worst, std::abs(v - 2.3));
  auto four = constants[0], eight = constants[0];
  for (auto* p : four.parameters()) p->fill(4.0);
  for (auto* p : eight.parameters()) p->fill(8.0);
  const auto two = aggregate<double>({{0, 0.25, &four}, {1, 0.75, &eight}});
  for (const auto* p : two.parameters())
    for (double v : p->values()) worst = std::max(worst, std::abs(v - 7.0));
  // Three equal shards of 2491 out of 7473: the plain mean.
  const ShardWeight third{2491, 7473};
  const auto mean = aggregate<double>({third, third, third}, {&sets[0], &sets[1], &sets[2]});
  const auto mp = mean.parameters();
  const auto p0 = sets[0].parameters(), p1 = sets[1].parameters(), p2 = sets[2].parameters();
  for (std::size_t i = 0; i < mp.size(); ++i)
    for (std::size_t j = 0; j < mp[i]->size(); ++j)
      worst = std::max(worst, std::abs((*mp[i])[j] - ((*p0[i])[j] + (*p1[i])[j] + (*p2[i])[j]) / 3.0));
  ok = ok && worst < 1e-12;
  detail += ", convex cases max err " + fmt(worst);
  return {ok, detail};
}

// ------------------------------------------------------------------ 6

Outcome proximal_pinning() {
  const auto t0 = Clock::now();
  const ModelConfig cfg = toy_model();
  const auto base = TransformerStack<double>::init(cfg);
  const SplitPlan plan = extract(cfg.n_layers, 2, 0.5);
  TrainingConfig tc;
  tc.seed = 3;
  const auto server = initial_server_state(base, plan, tc);
  const auto snapshot = BroadcastSnapshot<double>::make(server.adapter, server.emulator, 0);
  const Dataset shard = generate_mixture({TaskKind::Copy, TaskKind::Reverse}, 20, 12);
  // Plain SGD with a step small enough to stay stable at the largest weight.
  RoundConfig rc{.local_steps = 30,
                 .batch_size = 10,
                 .optimizer = {.kind = OptimizerKind::SGD, .lr = 1e-7, .weight_decay = 0.0}};
  const Array<double> anchor = reconstruct(snapshot.adapter);
  std::vector<double> dist;
  for (double eps : {1.0, 10.0, 1e3, 1e6}) {
    ClientState<double> client;
    client.seed = 77;
    client.shard = shard;
    rc.epsilon = eps;
    initialize_client(client, snapshot, rc.optimizer);
    local_update(client, snapshot, plan, base, rc);
    const Array<double> w = reconstruct(client.adapter);
    double sq = 0;
    for (std::size_t i = 0; i < w.size(); ++i) sq += (w[i] - anchor[i]) * (w[i] - anchor[i]);
    dist.push_back(std::sqrt(sq));
  }
  bool monotone = dist.front() > 0;
  for (std::size_t i = 1; i < dist.size(); ++i) monotone = monotone && dist[i] <= dist[i - 1];
  const double elapsed = seconds_since(t0);
  return {monotone && dist.back() < dist.front() && elapsed < 120,
          "||w_K - w_t|| at eps 1,10,1e3,1e6: " + fmt(dist[0]) + ", " + fmt(dist[1]) + ", " + fmt(dist[2]) + ", " +
              fmt(dist[3])};
}

// ------------------------------------------------------------------ 7, 8

RunConfig trend_config(const fs::path& root, std::uint64_t seed, const std::string& base) {
  RunConfig cfg;  // toy model, s = 2, kappa = 0.5, K = 30, batch 10, 4 category clients
  cfg.federation.rounds = 50;
  cfg.seed = seed;
  cfg.base_checkpoint = base;
  cfg.output_dir = (root / ("seed" + std::to_string(seed))).string();
  return cfg;
}

struct TrendState {
  std::string shared_base;
};

Outcome end_to_end_trend(const fs::path& root, TrendState& state) {
  const auto t0 = Clock::now();
  int passed = 0;
  std::string detail;
  std::ostringstream quiet;
  for (std::uint64_t seed : {0, 1, 2}) {
    const RunConfig cfg = trend_config(root, seed, state.shared_base);
    const auto s = cli::cmd_train(cfg, {.fresh = true, .quiet = true}, quiet);
    if (state.shared_base.empty()) state.shared_base = cli::paths::base(s.run_dir).string();
    const double before = s.prealigned_eval.adapemu.loss, emu = s.final_eval.adapemu.loss,
                 fu = s.final_eval.adapfu.loss;
    const bool ok = emu < before && fu <= emu;
    passed += ok;
    detail += "seed " + std::to_string(seed) + ": AdapEmu " + fmt(before) + "->" + fmt(emu) + ", AdapFu " + fmt(fu) +
              (ok ? " ok; " : " miss; ");
  }
  const double elapsed = seconds_since(t0);
  detail += std::to_string(passed) + "/3 seeds, " + fmt(elapsed) + " s";
  return {passed >= 2 && elapsed < 900, detail};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

Outcome determinism(const fs::path& root, const TrendState& state) {
  RunConfig cfg = trend_config(root, 0, state.shared_base);
  cfg.federation.rounds = 5;
  cfg.output_dir = (root / "determinism").string();
  std::ostringstream quiet;
  const fs::path run = cli::cmd_train(cfg, {.fresh = true, .quiet = true}, quiet).run_dir;
  const std::string first = slurp(cli::paths::metrics(run));
  cli::cmd_train(cfg, {.fresh = true, .quiet = true}, quiet);
  const std::string second = slurp(cli::paths::metrics(run));
  // Resuming from the round-0 checkpoint must not change anything either.
  for (std::size_t r : cli::list_checkpoints(run))
    if (r > 0) fs::remove(cli::paths::round_checkpoint(run, r));
  cli::cmd_train(cfg, {.quiet = true}, quiet);
  const std::string resumed = slurp(cli::paths::metrics(run));
  const bool ok = !first.empty() && first == second && first == resumed;
  return {ok, "metrics " + std::to_string(first.size()) + " bytes; rerun " + (first == second ? "identical" : "DIFFERS") +
                  ", resume " + (first == resumed ? "identical" : "DIFFERS")};
}

// ------------------------------------------------------------------ 9

Outcome frozen_audit() {
  using Real = cli::Real;
  const ModelConfig cfg = toy_model();
  const auto base = TransformerStack<Real>::init(cfg);
  const auto base_copy = base;
  const SplitPlan plan = extract(cfg.n_layers, 2, 0.5);
  TrainingConfig tc;
  tc.round.rounds = 3;
  tc.round.local_steps = 5;
  tc.round.epsilon = 0.1;
  tc.align.pre_align_iters = 10;
  tc.align.per_round_iters = 5;
  tc.seed = 9;
  const Dataset data = generate_mixture({std::begin(kAllTasks), std::end(kAllTasks)}, 20, 13);
  const Dataset pub = public_dataset(PublicDataOptions{}, 40, 14);
  auto clients = make_clients<Real>(partition(data, {PartitionScheme::ByCategory, 4, 0}), 15);

  bool base_frozen = true, emulator_frozen = true, adapter_moved = false;
  auto server = initial_server_state(base, plan, tc);
  TrainingHooks<Real> hooks;
  hooks.on_prealign = [&](const std::vector<double>&, const ServerState<Real>&) {
    base_frozen = base_frozen && same_bits(base, base_copy);
  };
  hooks.on_round = [&](const RoundReport&, const ServerState<Real>&) {
    base_frozen = base_frozen && same_bits(base, base_copy);
  };
  run_training(tc, base, plan, clients, pub, server, hooks);

  // Client phase in isolation: local updates never write the emulator LoRA.
  const auto snapshot = BroadcastSnapshot<Real>::make(server.adapter, server.emulator, tc.round.rounds);
  const auto emulator_before = snapshot.emulator;
  RoundConfig rc = tc.round;
  for (auto& c : clients) {
    initialize_client(c, snapshot, rc.optimizer);
    local_update(c, snapshot, plan, base, rc);
    emulator_frozen = emulator_frozen && same_bits(snapshot.emulator, emulator_before);
    adapter_moved = adapter_moved || !same_bits(c.adapter, snapshot.adapter);
  }
  // A whole round without server alignment leaves the emulator untouched.
  TrainingConfig no_align = tc;
  no_align.round.rounds = tc.round.rounds + 1;
  no_align.align.per_round_iters = 0;
  const auto server_emulator = server.emulator;
  run_round(tc.round.rounds, server, clients, plan, base, pub, no_align.round, no_align.align, tc.seed);
  emulator_frozen = emulator_frozen && same_bits(server.emulator, server_emulator);
  base_frozen = base_frozen && same_bits(base, base_copy);

  return {base_frozen && emulator_frozen && adapter_moved,
          std::string("base/embedding/head ") + (base_frozen ? "bit-identical" : "CHANGED") +
              "; emulator LoRA across client phases " + (emulator_frozen ? "bit-identical" : "CHANGED") +
              "; adapter " + (adapter_moved ? "trained" : "DID NOT MOVE")};
}

}  // namespace

// Optional arguments select criteria by number; none runs all of them.
int main(int argc, char** argv) {
  const fs::path root = fs::temp_directory_path() / "fedbiot_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  TrendState trend;

  struct Criterion {
    int id;
    std::string name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "extraction oracle", extraction_oracle},
      {2, "cost table", cost_table},
      {3, "gradient correctness", gradient_check},
      {4, "identity invariants", identity_invariants},
      {5, "aggregation properties", aggregation_properties},
      {6, "proximal pinning", proximal_pinning},
      {7, "end-to-end trend", [&] { return end_to_end_trend(root, trend); }},
      {8, "determinism", [&] { return determinism(root, trend); }},
      {9, "frozen-parameter audit", frozen_audit},
  };

  int failures = 0;
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  for (const auto& c : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << " ("
              << fmt(seconds_since(t0)) << " s)" << std::endl;
  }
  if (!std::getenv("FEDBIOT_KEEP_ACCEPTANCE")) fs::remove_all(root);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
