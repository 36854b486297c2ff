#pragma once

#include <set>
#include <span>
#include <string>
#include <type_traits>

#include "fedbiot/model/forward.hpp"
#include "fedbiot/model/split_plan.hpp"

namespace fedbiot {

// AdapEmu runs adapter + compressed emulator (the model clients train on);
// AdapFu plugs the adapter back onto the non-compressed layers.
enum class Assembly { AdapEmu, AdapFu };

inline std::string to_string(Assembly a) { return a == Assembly::AdapEmu ? "AdapEmu" : "AdapFu"; }

inline Assembly parse_assembly(const std::string& s) {
  if (s == "AdapEmu" || s == "adapemu") return Assembly::AdapEmu;
  if (s == "AdapFu" || s == "adapfu") return Assembly::AdapFu;
  throw ConfigError("unknown assembly '" + s + "' (expected AdapEmu or AdapFu)");
}

// Which LoRA set receives gradients in a forward pass.
enum class Trainable { None, Adapter, Emulator };

template <class T>
struct AssembledPass {
  Var<T> hidden;  // output of the emulator section, input to the output-side adapter
  Var<T> logits;
};

// Weights of an assembled model registered once on a tape, so a batch of
// forward passes shares the same LoRA leaves.
template <class T>
struct AssembledBinding {
  StackBinding<T> stack;
  BoundLora<T> adapter;
  BoundLora<T> emulator;
};

// Non-owning view that runs a split model. All referenced objects must outlive it.
template <class T>
class AssembledModel {
 public:
  AssembledModel(const SplitPlan& plan, const TransformerStack<T>& base, const LoraSet<T>& adapter_lora,
                 const LoraSet<T>* emulator_lora, Assembly mode)
      : plan_(&plan), base_(&base), adapter_(&adapter_lora), emulator_(emulator_lora), mode_(mode) {
    if (plan.n_layers != base.n_layers()) {
      throw ConfigError("split plan is for " + std::to_string(plan.n_layers) + " layers but the model has " +
                        std::to_string(base.n_layers()));
    }
    const LayerList adapter_layers = plan.adapter();
    if (adapter_lora.layers() != std::set<std::size_t>(adapter_layers.begin(), adapter_layers.end())) {
      throw ConfigError("adapter LoRA layers do not match the plan's adapter " + format_layers(adapter_layers));
    }
    if (mode == Assembly::AdapEmu) {
      if (!emulator_lora) throw ConfigError("AdapEmu assembly requires an emulator LoRA set");
      if (emulator_lora->layers() != std::set<std::size_t>(plan.emulator.begin(), plan.emulator.end())) {
        throw ConfigError("emulator LoRA layers do not match the plan's emulator " + format_layers(plan.emulator));
      }
    } else if (emulator_lora) {
      throw ConfigError("AdapFu assembly runs the non-compressed layers and takes no emulator LoRA");
    }
  }

  Assembly mode() const noexcept { return mode_; }
  const SplitPlan& plan() const noexcept { return *plan_; }

  const LayerList& middle_layers() const { return mode_ == Assembly::AdapEmu ? plan_->emulator : plan_->noncompressed; }

  LayerList executed_layers() const {
    LayerList out = plan_->top_adapter;
    const LayerList& mid = middle_layers();
    out.insert(out.end(), mid.begin(), mid.end());
    out.insert(out.end(), plan_->bottom_adapter.begin(), plan_->bottom_adapter.end());
    return out;
  }

  AssembledBinding<T> bind(Tape<T>& tape, Trainable trainable = Trainable::None) const {
    AssembledBinding<T> b;
    b.stack = StackBinding<T>::bind(tape, *base_);
    b.adapter = BoundLora<T>::bind(tape, *adapter_, trainable == Trainable::Adapter);
    if (emulator_) b.emulator = BoundLora<T>::bind(tape, *emulator_, trainable == Trainable::Emulator);
    return b;
  }

  AssembledPass<T> forward(const AssembledBinding<T>& b, std::span<const int> ids) const {
    AssembledPass<T> pass;
    Var<T> h = embed(b.stack, ids);
    h = run_layers(b.stack, h, plan_->top_adapter, &b.adapter);
    h = run_layers(b.stack, h, middle_layers(), emulator_ ? &b.emulator : nullptr);
    pass.hidden = h;
    h = run_layers(b.stack, h, plan_->bottom_adapter, &b.adapter);
    pass.logits = output_logits(b.stack, h);
    return pass;
  }

  Array<T> logits(std::span<const int> ids) const {
    Tape<T> tape;
    return forward(bind(tape), ids).logits.value();
  }

 private:
  const SplitPlan* plan_;
  const TransformerStack<T>* base_;
  const LoraSet<T>* adapter_;
  const LoraSet<T>* emulator_;
  Assembly mode_;
};

template <class T>
AssembledModel<T> assemble(const SplitPlan& plan, const TransformerStack<T>& base, const LoraSet<T>& adapter_lora,
                           const std::type_identity_t<LoraSet<T>>* emulator_lora, Assembly mode) {
  return AssembledModel<T>(plan, base, adapter_lora, emulator_lora, mode);
}

template <class T>
struct EmulatorActivations {
  Array<T> compressed;     // after the emulator layers, with emulator LoRA
  Array<T> noncompressed;  // after the non-compressed layers, base weights only
};

// Hidden states entering the output-side adapter, for both emulator variants.
// The adapter LoRA only matters for a plan with leading adapter layers.
template <class T>
EmulatorActivations<T> emulator_activations(const SplitPlan& plan, const TransformerStack<T>& base,
                                            const LoraSet<T>& adapter_lora, const LoraSet<T>& emulator_lora,
                                            std::span<const int> ids) {
  Tape<T> tape;
  auto stack = StackBinding<T>::bind(tape, base);
  auto adapter = BoundLora<T>::bind(tape, adapter_lora, false);
  auto emulator = BoundLora<T>::bind(tape, emulator_lora, false);
  Var<T> top = run_layers(stack, embed(stack, ids), plan.top_adapter, &adapter);
  EmulatorActivations<T> out;
  out.compressed = run_layers(stack, top, plan.emulator, &emulator).value();
  out.noncompressed = run_layers(stack, top, plan.noncompressed, static_cast<const BoundLora<T>*>(nullptr)).value();
  return out;
}

}  // namespace fedbiot
