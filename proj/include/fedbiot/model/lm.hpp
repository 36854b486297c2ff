#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "fedbiot/compute/optim.hpp"
#include "fedbiot/data/tasks.hpp"
#include "fedbiot/model/assemble.hpp"
#include "fedbiot/seeds.hpp"

namespace fedbiot {

// Mean over samples of each sample's masked next-token cross-entropy.
template <class T>
Var<T> batch_lm_loss(const AssembledModel<T>& model, const AssembledBinding<T>& binding,
                     const std::vector<const Sample*>& batch) {
  if (batch.empty()) throw ConfigError("batch_lm_loss: empty batch");
  Var<T> total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sample& s = *batch[i];
    Var<T> logits = model.forward(binding, s.inputs()).logits;
    Var<T> loss = softmax_cross_entropy(logits, s.targets(), s.target_mask());
    total = i == 0 ? loss : add(total, loss);
  }
  return scale(total, T{1} / static_cast<T>(batch.size()));
}

inline std::vector<const Sample*> all_of(const Dataset& data) {
  std::vector<const Sample*> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(&s);
  return out;
}

// `size` distinct samples drawn uniformly (the whole dataset if it is smaller).
inline std::vector<const Sample*> sample_batch(const Dataset& data, std::size_t size, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const std::size_t n = std::min(size, data.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + std::uniform_int_distribution<std::size_t>(0, idx.size() - 1 - i)(rng);
    std::swap(idx[i], idx[j]);
  }
  std::vector<const Sample*> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(&data[idx[i]]);
  return out;
}

struct EvalResult {
  double loss = 0;
  double exact_match = 0;
  std::size_t samples = 0;
};

// Greedy continuation of `prompt` for `steps` tokens.
template <class T>
std::vector<int> greedy_decode(const AssembledModel<T>& model, std::span<const int> prompt, std::size_t steps,
                               std::size_t max_seq_len) {
  std::vector<int> seq(prompt.begin(), prompt.end());
  std::vector<int> out;
  for (std::size_t s = 0; s < steps && seq.size() < max_seq_len; ++s) {
    const Array<T> logits = model.logits(seq);
    const auto last = logits.row(logits.rows() - 1);
    const int next = static_cast<int>(std::max_element(last.begin(), last.end()) - last.begin());
    out.push_back(next);
    seq.push_back(next);
    if (next == tok::kEnd) break;
  }
  return out;
}

// Masked loss averaged over samples, and the fraction of samples whose greedy
// answer matches exactly. Set `decode` to false to skip the (slower) decoding.
template <class T>
EvalResult evaluate(const AssembledModel<T>& model, const Dataset& data, std::size_t max_seq_len, bool decode = true) {
  EvalResult r;
  r.samples = data.size();
  if (data.empty()) return r;
  double loss = 0;
  std::size_t hits = 0;
  for (const Sample& s : data) {
    Tape<T> tape;
    auto b = model.bind(tape);
    loss += static_cast<double>(softmax_cross_entropy(model.forward(b, s.inputs()).logits, s.targets(),
                                                      s.target_mask()).value().item());
    if (decode) {
      const auto answer = s.answer();
      const auto got = greedy_decode(model, s.prompt(), answer.size(), max_seq_len);
      if (std::equal(got.begin(), got.end(), answer.begin(), answer.end())) ++hits;
    }
  }
  r.loss = loss / static_cast<double>(data.size());
  r.exact_match = static_cast<double>(hits) / static_cast<double>(data.size());
  return r;
}

struct PretrainConfig {
  std::size_t steps = 300;
  std::size_t batch_size = 16;
  std::size_t samples_per_task = 256;
  OptimizerConfig optimizer{.lr = 3e-3, .weight_decay = 0.0};
};

// Full-parameter training of the base stack on a task mixture; stands in for
// the pre-trained model that the federated procedure starts from.
template <class T>
std::vector<double> pretrain_base(TransformerStack<T>& stack, const Dataset& corpus, const PretrainConfig& cfg,
                                  std::uint64_t seed) {
  std::vector<double> trace;
  if (cfg.steps == 0) return trace;
  if (corpus.empty()) throw ConfigError("pretrain: empty corpus");
  Optimizer<T> opt(cfg.optimizer);
  auto params = stack.parameters();
  const LayerList layers = all_layers(stack.n_layers());
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::mt19937_64 rng(derive_seed(seed, 0x5052, step));
    auto batch = sample_batch(corpus, cfg.batch_size, rng);
    Tape<T> tape;
    auto binding = StackBinding<T>::bind(tape, stack, true);
    Var<T> total;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Sample& s = *batch[i];
      Var<T> h = run_layers(binding, embed(binding, s.inputs()), layers,
                            static_cast<const BoundLora<T>*>(nullptr));
      Var<T> loss = softmax_cross_entropy(output_logits(binding, h), s.targets(), s.target_mask());
      total = i == 0 ? loss : add(total, loss);
    }
    Var<T> loss = scale(total, T{1} / static_cast<T>(batch.size()));
    tape.backward(loss);
    trace.push_back(static_cast<double>(loss.value().item()));
    const auto grads = binding.gradients(tape);
    std::vector<const Array<T>*> gptr;
    for (const auto& g : grads) gptr.push_back(&g);
    opt.step(params, gptr);
  }
  return trace;
}

}  // namespace fedbiot
