#pragma once

#include <map>
#include <span>
#include <utility>
#include <vector>

#include "fedbiot/compute/ops.hpp"
#include "fedbiot/model/lora.hpp"
#include "fedbiot/model/transformer.hpp"

namespace fedbiot {

// LoRA factors registered on a tape, either as differentiable leaves or as
// constants.
template <class T>
struct BoundLora {
  T scale{0};
  std::map<LoraKey, std::pair<Var<T>, Var<T>>> vars;

  static BoundLora bind(Tape<T>& tape, const LoraSet<T>& set, bool trainable) {
    BoundLora out;
    out.scale = set.scale();
    for (const auto& [k, f] : set.factors()) {
      out.vars.emplace(k, trainable ? std::pair{tape.leaf_ref(f.a), tape.leaf_ref(f.b)}
                                    : std::pair{tape.constant_ref(f.a), tape.constant_ref(f.b)});
    }
    return out;
  }

  const std::pair<Var<T>, Var<T>>* find(const LoraKey& k) const {
    auto it = vars.find(k);
    return it == vars.end() ? nullptr : &it->second;
  }

  // Gradients in LoraSet::parameters() order. Copies, so they survive the tape.
  std::vector<Array<T>> gradients(Tape<T>& tape) const {
    std::vector<Array<T>> out;
    for (const auto& [k, ab] : vars) {
      out.push_back(tape.grad(ab.first));
      out.push_back(tape.grad(ab.second));
    }
    return out;
  }
};

template <class T>
struct BoundLayer {
  Var<T> attn_norm, wq, wk, wv, wo, ffn_norm, w_gate, w_up, w_down;

  Var<T> weight(Projection p) const {
    switch (p) {
      case Projection::Query: return wq;
      case Projection::Key: return wk;
      case Projection::Value: return wv;
      case Projection::Output: return wo;
      case Projection::Gate: return w_gate;
      case Projection::Up: return w_up;
      case Projection::Down: return w_down;
    }
    return wq;
  }
};

// Base weights registered on a tape. Frozen weights are referenced, not copied.
template <class T>
struct StackBinding {
  const TransformerStack<T>* stack = nullptr;
  Var<T> embedding;
  std::vector<BoundLayer<T>> layers;
  Var<T> final_norm;
  Var<T> head;

  static StackBinding bind(Tape<T>& tape, const TransformerStack<T>& s, bool trainable = false) {
    auto reg = [&](const Array<T>& a) { return trainable ? tape.leaf_ref(a) : tape.constant_ref(a); };
    StackBinding b;
    b.stack = &s;
    b.embedding = reg(s.embedding);
    for (const auto& l : s.layers) {
      b.layers.push_back(BoundLayer<T>{reg(l.attn_norm), reg(l.wq), reg(l.wk), reg(l.wv), reg(l.wo), reg(l.ffn_norm),
                                       reg(l.w_gate), reg(l.w_up), reg(l.w_down)});
    }
    b.final_norm = reg(s.final_norm);
    b.head = reg(s.head);
    return b;
  }

  // Gradients in TransformerStack::parameters() order.
  std::vector<Array<T>> gradients(Tape<T>& tape) const {
    std::vector<Array<T>> out{tape.grad(embedding)};
    for (const auto& l : layers)
      for (Var<T> v : {l.attn_norm, l.wq, l.wk, l.wv, l.wo, l.ffn_norm, l.w_gate, l.w_up, l.w_down})
        out.push_back(tape.grad(v));
    out.push_back(tape.grad(final_norm));
    out.push_back(tape.grad(head));
    return out;
  }
};

// x * W plus the low-rank path (alpha / r) * (x A^T) B^T when LoRA is attached.
template <class T>
Var<T> project(Var<T> x, Var<T> weight, const BoundLora<T>* lora, const LoraKey& key) {
  Var<T> y = matmul(x, weight);
  if (lora) {
    if (const auto* ab = lora->find(key)) {
      y = add(y, scale(matmul_nt(matmul_nt(x, ab->first), ab->second), lora->scale));
    }
  }
  return y;
}

template <class T>
Var<T> decoder_forward(Var<T> x, const BoundLayer<T>& w, const BoundLora<T>* lora, std::size_t layer,
                       std::size_t n_heads) {
  auto key = [layer](Projection p) { return LoraKey{layer, p}; };
  Var<T> h = rms_norm(x, w.attn_norm);
  Var<T> q = rope(project(h, w.wq, lora, key(Projection::Query)), n_heads);
  Var<T> k = rope(project(h, w.wk, lora, key(Projection::Key)), n_heads);
  Var<T> v = project(h, w.wv, lora, key(Projection::Value));
  Var<T> attn = causal_attention(q, k, v, n_heads);
  x = add(x, project(attn, w.wo, lora, key(Projection::Output)));
  Var<T> h2 = rms_norm(x, w.ffn_norm);
  Var<T> gate = silu(project(h2, w.w_gate, lora, key(Projection::Gate)));
  Var<T> up = project(h2, w.w_up, lora, key(Projection::Up));
  return add(x, project(mul(gate, up), w.w_down, lora, key(Projection::Down)));
}

template <class T>
Var<T> embed(const StackBinding<T>& b, std::span<const int> ids) {
  b.stack->check_input(ids);
  return gather_rows(b.embedding, ids);
}

template <class T>
Var<T> run_layers(const StackBinding<T>& b, Var<T> h, const LayerList& layers, const BoundLora<T>* lora) {
  for (std::size_t l : layers) h = decoder_forward(h, b.layers.at(l), lora, l, b.stack->config.n_heads);
  return h;
}

template <class T>
Var<T> output_logits(const StackBinding<T>& b, Var<T> h) {
  return matmul(rms_norm(h, b.final_norm), b.head);
}

inline LayerList all_layers(std::size_t n) {
  LayerList out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

// Logits of the original stack, optionally with LoRA on any of its layers.
template <class T>
Array<T> full_model_logits(const TransformerStack<T>& s, std::span<const int> ids, const LoraSet<T>* lora = nullptr) {
  Tape<T> tape;
  auto b = StackBinding<T>::bind(tape, s);
  BoundLora<T> bl;
  if (lora) bl = BoundLora<T>::bind(tape, *lora, false);
  Var<T> h = run_layers(b, embed(b, ids), all_layers(s.n_layers()), lora ? &bl : nullptr);
  return output_logits(b, h).value();
}

}  // namespace fedbiot
