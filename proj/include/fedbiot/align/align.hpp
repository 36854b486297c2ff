#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "fedbiot/compute/optim.hpp"
#include "fedbiot/model/lm.hpp"
#include "fedbiot/seeds.hpp"

namespace fedbiot {

struct AlignConfig {
  double lambda = 1.0;  // weight of the output-distribution (KL) term
  std::size_t pre_align_iters = 500;
  std::size_t per_round_iters = 10;
  std::size_t batch_size = 10;
  OptimizerConfig optimizer{};

  void validate() const {
    if (lambda < 0) throw ConfigError("align.lambda must be >= 0, got " + std::to_string(lambda));
    if (batch_size < 1) throw ConfigError("align.batch_size must be >= 1");
    optimizer.validate();
  }
};

// Grid exposed for the KL weight search.
inline constexpr double kLambdaGrid[] = {0.1, 1.0, 10.0};

template <class T>
struct AlignmentTerms {
  Var<T> total;
  Var<T> representation;
  Var<T> distillation;
};

// Emulator distillation loss for one sample, restricted to supervised
// positions:
//
//   ||E(x) - E*(x)||^2 / (|mask| * d)  +  lambda * KL(M(x; A, E*) || M(x; A, E))
//
// Only leaves bound as trainable in `b` (normally the emulator LoRA) receive
// gradient; the adapter and the non-compressed reference stay constant.
template <class T>
AlignmentTerms<T> alignment_terms(const SplitPlan& plan, const AssembledBinding<T>& b, const Sample& s, T lambda) {
  const auto ids = s.inputs();
  const auto mask = s.target_mask();
  Var<T> top = run_layers(b.stack, embed(b.stack, ids), plan.top_adapter, &b.adapter);
  Var<T> compressed = run_layers(b.stack, top, plan.emulator, &b.emulator);
  Var<T> reference = run_layers(b.stack, top, plan.noncompressed, static_cast<const BoundLora<T>*>(nullptr));
  const std::size_t count = detail::mask_count(mask);
  const std::size_t d = compressed.value().cols();
  const T norm = count ? T{1} / static_cast<T>(count * d) : T{0};
  AlignmentTerms<T> out;
  out.representation = scale(l2_distance_sq(compressed, reference, mask), norm);
  Var<T> q_logits = output_logits(b.stack, run_layers(b.stack, compressed, plan.bottom_adapter, &b.adapter));
  Var<T> p_logits = output_logits(b.stack, run_layers(b.stack, reference, plan.bottom_adapter, &b.adapter));
  out.distillation = kl_divergence(p_logits, q_logits, mask);
  out.total = add(out.representation, scale(out.distillation, lambda));
  return out;
}

// Batch mean of the per-sample alignment loss, with the emulator LoRA trainable.
template <class T>
Var<T> alignment_loss(Tape<T>& tape, const SplitPlan& plan, const TransformerStack<T>& base,
                      const LoraSet<T>& adapter_lora, const LoraSet<T>& emulator_lora,
                      const std::vector<const Sample*>& batch, double lambda, BoundLora<T>* emulator_out = nullptr) {
  if (lambda < 0) throw ConfigError("alignment lambda must be >= 0, got " + std::to_string(lambda));
  if (batch.empty()) throw ConfigError("alignment_loss: empty batch");
  AssembledBinding<T> b;
  b.stack = StackBinding<T>::bind(tape, base);
  b.adapter = BoundLora<T>::bind(tape, adapter_lora, false);
  b.emulator = BoundLora<T>::bind(tape, emulator_lora, true);
  Var<T> total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Var<T> l = alignment_terms(plan, b, *batch[i], static_cast<T>(lambda)).total;
    total = i == 0 ? l : add(total, l);
  }
  if (emulator_out) *emulator_out = b.emulator;
  return scale(total, T{1} / static_cast<T>(batch.size()));
}

template <class T>
double alignment_loss_value(const SplitPlan& plan, const TransformerStack<T>& base, const LoraSet<T>& adapter_lora,
                            const LoraSet<T>& emulator_lora, const std::vector<const Sample*>& batch, double lambda) {
  Tape<T> tape;
  return static_cast<double>(alignment_loss(tape, plan, base, adapter_lora, emulator_lora, batch, lambda).value().item());
}

template <class T>
struct LossAndGrad {
  double loss = 0;
  std::vector<Array<T>> grads;  // LoraSet::parameters() order
};

template <class T>
LossAndGrad<T> alignment_loss_and_grad(const SplitPlan& plan, const TransformerStack<T>& base,
                                       const LoraSet<T>& adapter_lora, const LoraSet<T>& emulator_lora,
                                       const std::vector<const Sample*>& batch, double lambda) {
  Tape<T> tape;
  BoundLora<T> emu;
  Var<T> loss = alignment_loss(tape, plan, base, adapter_lora, emulator_lora, batch, lambda, &emu);
  tape.backward(loss);
  return {static_cast<double>(loss.value().item()), emu.gradients(tape)};
}

// Runs `iters` optimizer steps on the emulator LoRA against batches drawn from
// the public dataset. Batch draws are keyed by (seed, iteration). Returns the
// loss measured before each step.
template <class T>
std::vector<double> align_emulator(const AlignConfig& cfg, std::size_t iters, const Dataset& public_data,
                                   const SplitPlan& plan, const TransformerStack<T>& base,
                                   const LoraSet<T>& adapter_lora, LoraSet<T>& emulator_lora, Optimizer<T>& optimizer,
                                   std::uint64_t seed) {
  cfg.validate();
  if (public_data.empty()) throw ConfigError("align_emulator: public dataset is empty");
  std::vector<double> trace;
  trace.reserve(iters);
  auto params = emulator_lora.parameters();
  for (std::size_t it = 0; it < iters; ++it) {
    std::mt19937_64 rng(derive_seed(seed, 0xA11, it));
    const auto batch = sample_batch(public_data, cfg.batch_size, rng);
    auto lg = alignment_loss_and_grad(plan, base, adapter_lora, emulator_lora, batch, cfg.lambda);
    trace.push_back(lg.loss);
    std::vector<const Array<T>*> gptr;
    for (const auto& g : lg.grads) gptr.push_back(&g);
    optimizer.step(params, gptr);
  }
  return trace;
}

}  // namespace fedbiot
