#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedbiot/compute/ops.hpp"

namespace fedbiot {

struct ModelConfig {
  std::size_t n_layers = 8;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 192;
  std::size_t vocab_size = 64;
  std::size_t max_seq_len = 64;
  std::uint64_t rng_seed = 1;

  void validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 || vocab_size < 1 || max_seq_len < 1) {
      throw ConfigError("model dimensions must all be >= 1");
    }
    if (d_model % n_heads != 0) {
      throw ConfigError("model.d_model (" + std::to_string(d_model) + ") must be divisible by model.n_heads (" +
                        std::to_string(n_heads) + ")");
    }
    if ((d_model / n_heads) % 2 != 0) throw ConfigError("rotary positions need an even head width");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Linear projections inside a decoder layer that LoRA can target.
enum class Projection : std::uint8_t { Query, Key, Value, Output, Gate, Up, Down };

inline constexpr std::array<Projection, 7> kAllProjections{Projection::Query, Projection::Key,  Projection::Value,
                                                           Projection::Output, Projection::Gate, Projection::Up,
                                                           Projection::Down};

inline std::string projection_name(Projection p) {
  switch (p) {
    case Projection::Query: return "q";
    case Projection::Key: return "k";
    case Projection::Value: return "v";
    case Projection::Output: return "o";
    case Projection::Gate: return "gate";
    case Projection::Up: return "up";
    case Projection::Down: return "down";
  }
  return "?";
}

inline Projection parse_projection(const std::string& s) {
  for (Projection p : kAllProjections)
    if (projection_name(p) == s) return p;
  throw ConfigError("unknown projection '" + s + "' (expected one of q,k,v,o,gate,up,down)");
}

struct ProjectionDims {
  std::size_t d_in;
  std::size_t d_out;
};

inline ProjectionDims projection_dims(Projection p, std::size_t d_model, std::size_t d_ff) {
  switch (p) {
    case Projection::Gate:
    case Projection::Up: return {d_model, d_ff};
    case Projection::Down: return {d_ff, d_model};
    default: return {d_model, d_model};
  }
}

// One pre-norm decoder block. Projection weights are stored [d_in x d_out] so
// a projection is x * W.
template <class T>
struct DecoderLayer {
  Array<T> attn_norm;
  Array<T> wq, wk, wv, wo;
  Array<T> ffn_norm;
  Array<T> w_gate, w_up, w_down;

  const Array<T>& weight(Projection p) const {
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
  Array<T>& weight(Projection p) { return const_cast<Array<T>&>(std::as_const(*this).weight(p)); }

  std::vector<Array<T>*> parameters() { return {&attn_norm, &wq, &wk, &wv, &wo, &ffn_norm, &w_gate, &w_up, &w_down}; }
  std::vector<const Array<T>*> parameters() const {
    return {&attn_norm, &wq, &wk, &wv, &wo, &ffn_norm, &w_gate, &w_up, &w_down};
  }

  friend bool operator==(const DecoderLayer&, const DecoderLayer&) = default;
};

inline std::vector<std::string> decoder_parameter_names() {
  return {"attn_norm", "wq", "wk", "wv", "wo", "ffn_norm", "w_gate", "w_up", "w_down"};
}

// Decoder-only transformer. Layer 0 is nearest the input, layer n-1 nearest the
// output head.
template <class T>
struct TransformerStack {
  ModelConfig config;
  Array<T> embedding;  // [vocab x d]
  std::vector<DecoderLayer<T>> layers;
  Array<T> final_norm;  // [d]
  Array<T> head;        // [d x vocab]

  static TransformerStack init(const ModelConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.rng_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto gaussian = [&](Shape shape, double stddev) {
      Array<T> a(std::move(shape));
      for (auto& v : a.values()) v = static_cast<T>(normal(rng) * stddev);
      return a;
    };
    const std::size_t d = cfg.d_model, f = cfg.d_ff;
    const double residual = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
    TransformerStack s;
    s.config = cfg;
    s.embedding = gaussian({cfg.vocab_size, d}, 1.0);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      DecoderLayer<T> layer;
      layer.attn_norm = Array<T>({d}, T{1});
      layer.wq = gaussian({d, d}, 1.0 / std::sqrt(double(d)));
      layer.wk = gaussian({d, d}, 1.0 / std::sqrt(double(d)));
      layer.wv = gaussian({d, d}, 1.0 / std::sqrt(double(d)));
      layer.wo = gaussian({d, d}, residual / std::sqrt(double(d)));
      layer.ffn_norm = Array<T>({d}, T{1});
      layer.w_gate = gaussian({d, f}, 1.0 / std::sqrt(double(d)));
      layer.w_up = gaussian({d, f}, 1.0 / std::sqrt(double(d)));
      layer.w_down = gaussian({f, d}, residual / std::sqrt(double(f)));
      s.layers.push_back(std::move(layer));
    }
    s.final_norm = Array<T>({d}, T{1});
    s.head = gaussian({d, cfg.vocab_size}, 1.0 / std::sqrt(double(d)));
    return s;
  }

  std::size_t n_layers() const noexcept { return layers.size(); }

  std::vector<Array<T>*> parameters() {
    std::vector<Array<T>*> out{&embedding};
    for (auto& l : layers)
      for (auto* p : l.parameters()) out.push_back(p);
    out.push_back(&final_norm);
    out.push_back(&head);
    return out;
  }

  std::vector<const Array<T>*> parameters() const {
    std::vector<const Array<T>*> out{&embedding};
    for (const auto& l : layers)
      for (const auto* p : l.parameters()) out.push_back(p);
    out.push_back(&final_norm);
    out.push_back(&head);
    return out;
  }

  // Canonical names matching parameters() order.
  std::vector<std::string> parameter_names() const {
    std::vector<std::string> out{"embedding"};
    for (std::size_t l = 0; l < layers.size(); ++l)
      for (const auto& n : decoder_parameter_names()) out.push_back("layer" + std::to_string(l) + "." + n);
    out.push_back("final_norm");
    out.push_back("head");
    return out;
  }

  void check_input(std::span<const int> ids) const {
    if (ids.empty()) throw InputError("empty token sequence");
    if (ids.size() > config.max_seq_len) {
      throw InputError("sequence of " + std::to_string(ids.size()) + " tokens exceeds max_seq_len " +
                       std::to_string(config.max_seq_len));
    }
    for (int id : ids)
      if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size)
        throw InputError("token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(config.vocab_size));
  }

  template <class U>
  TransformerStack<U> cast() const {
    TransformerStack<U> s;
    s.config = config;
    s.embedding = embedding.template cast<U>();
    for (const auto& l : layers) {
      DecoderLayer<U> o;
      o.attn_norm = l.attn_norm.template cast<U>();
      o.wq = l.wq.template cast<U>();
      o.wk = l.wk.template cast<U>();
      o.wv = l.wv.template cast<U>();
      o.wo = l.wo.template cast<U>();
      o.ffn_norm = l.ffn_norm.template cast<U>();
      o.w_gate = l.w_gate.template cast<U>();
      o.w_up = l.w_up.template cast<U>();
      o.w_down = l.w_down.template cast<U>();
      s.layers.push_back(std::move(o));
    }
    s.final_norm = final_norm.template cast<U>();
    s.head = head.template cast<U>();
    return s;
  }

  friend bool operator==(const TransformerStack&, const TransformerStack&) = default;
};

}  // namespace fedbiot
