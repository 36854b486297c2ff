#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "fedbiot/model/assemble.hpp"
#include "fedbiot/model/lora.hpp"
#include "fedbiot/model/split_plan.hpp"
#include "fedbiot/model/transformer.hpp"
#include "test_support.hpp"

namespace fedbiot {
namespace {

using testing::random_array;
using testing::tiny_model_config;

bool bit_identical(const Array<double>& a, const Array<double>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::vector<int> tokens(std::size_t n, int vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, vocab - 1);
  std::vector<int> ids(n);
  for (auto& i : ids) i = d(rng);
  return ids;
}

void randomize(LoraSet<double>& set, std::uint64_t seed, double stddev = 0.3) {
  std::mt19937_64 rng(seed);
  for (Array<double>* p : set.parameters()) *p = random_array(p->shape(), rng, stddev);
}

// Independent oracle: the walk recomputed from a rational stride.
LayerList stride_walk(std::size_t span, std::size_t kept) {
  LayerList out;
  for (std::size_t j = 0; j < kept; ++j) {
    const long double stride = static_cast<long double>(span - 1) / static_cast<long double>(kept - 1);
    out.push_back(static_cast<std::size_t>(j * stride + 1e-12L));
  }
  return out;
}

TEST(Extract, ReferenceEmulatorSizes) {
  EXPECT_EQ(extract(32, 4, 0.8).emulator.size(), 22u);
  EXPECT_EQ(extract(32, 2, 0.8).emulator.size(), 24u);
  EXPECT_EQ(extract(32, 4, 0.5).emulator.size(), 14u);
  EXPECT_EQ(extract(32, 2, 0.5).emulator.size(), 15u);
}

TEST(Extract, HandTracedHalfKeep) {
  const SplitPlan p = extract(32, 2, 0.5);
  EXPECT_EQ(p.emulator, (LayerList{0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24, 26, 29}));
  EXPECT_EQ(p.bottom_adapter, (LayerList{30, 31}));
  EXPECT_TRUE(p.top_adapter.empty());
  EXPECT_EQ(p.noncompressed.size(), 30u);
}

TEST(Extract, FullKeepIsNoCompression) {
  const SplitPlan p = extract(32, 2, 1.0);
  EXPECT_EQ(p.emulator, all_layers(30));
  EXPECT_EQ(p.emulator, p.noncompressed);
}

TEST(Extract, EndpointsAndStrictOrderOverGrid) {
  for (std::size_t n = 4; n <= 40; ++n) {
    for (std::size_t s = 1; s + 2 <= n; ++s) {
      for (double k : {0.1, 0.25, 0.3, 0.5, 0.7, 0.8, 0.9, 1.0}) {
        const std::size_t span = n - s;
        const auto kept = static_cast<std::size_t>(k * span + 1e-9);
        if (kept < 2) {
          EXPECT_THROW(extract(n, s, k), ConfigError);
          continue;
        }
        const SplitPlan p = extract(n, s, k);
        ASSERT_EQ(p.emulator.size(), kept);
        EXPECT_EQ(p.emulator.front(), 0u);
        EXPECT_EQ(p.emulator.back(), span - 1);
        for (std::size_t i = 1; i < p.emulator.size(); ++i) EXPECT_LT(p.emulator[i - 1], p.emulator[i]);
        EXPECT_EQ(p.emulator, stride_walk(span, kept)) << "n=" << n << " s=" << s << " k=" << k;
        EXPECT_EQ(p, extract(n, s, k));
      }
    }
  }
}

TEST(Extract, InvalidArguments) {
  EXPECT_THROW(extract(32, 0, 0.5), ConfigError);
  EXPECT_THROW(extract(32, 31, 0.5), ConfigError);
  EXPECT_THROW(extract(32, 2, 0.0), ConfigError);
  EXPECT_THROW(extract(32, 2, 1.5), ConfigError);
  EXPECT_THROW(extract(32, 2, 0.05), ConfigError);
}

TEST(Extract, OffsiteSplitKeepsTwoLayersAtEachEnd) {
  const SplitPlan p = extract_offsite(32, 0.8);
  EXPECT_EQ(p.top_adapter, (LayerList{0, 1}));
  EXPECT_EQ(p.bottom_adapter, (LayerList{30, 31}));
  EXPECT_EQ(p.emulator.size(), 22u);
  EXPECT_EQ(p.emulator.front(), 2u);
  EXPECT_EQ(p.emulator.back(), 29u);
  EXPECT_EQ(extract_offsite(32, 0.5).emulator.size(), 14u);
}

TEST(ModelConfig, Validation) {
  ModelConfig c = tiny_model_config();
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_model_config();
  c.n_layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Transformer, InitIsDeterministicInSeed) {
  EXPECT_EQ(TransformerStack<double>::init(tiny_model_config(3)), TransformerStack<double>::init(tiny_model_config(3)));
  EXPECT_FALSE(TransformerStack<double>::init(tiny_model_config(3)) ==
               TransformerStack<double>::init(tiny_model_config(4)));
}

TEST(Transformer, ForwardIsCausal) {
  const auto stack = TransformerStack<double>::init(tiny_model_config());
  std::vector<int> ids = tokens(10, 64, 1);
  const Array<double> a = full_model_logits(stack, ids);
  ids[7] = (ids[7] + 5) % 64;
  const Array<double> b = full_model_logits(stack, ids);
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 64; ++c) EXPECT_EQ(a(r, c), b(r, c));
  bool changed = false;
  for (std::size_t c = 0; c < 64; ++c) changed |= a(7, c) != b(7, c);
  EXPECT_TRUE(changed);
}

TEST(Transformer, RejectsBadInput) {
  const auto stack = TransformerStack<double>::init(tiny_model_config());
  EXPECT_THROW(full_model_logits(stack, std::vector<int>(33, 1)), InputError);
  EXPECT_THROW(full_model_logits(stack, std::vector<int>{1, 64}), InputError);
  EXPECT_THROW(full_model_logits(stack, std::vector<int>{}), InputError);
}

TEST(Lora, ParameterCounts) {
  EXPECT_EQ(lora_params_per_layer(LoraSpec{}, 4096, 11008), 131072u);
  EXPECT_EQ(lora_params_per_layer(LoraSpec{.rank = 4}, 32, 96), 512u);
  const auto stack = TransformerStack<double>::init(
      ModelConfig{.n_layers = 3, .d_model = 32, .n_heads = 4, .d_ff = 96, .vocab_size = 64, .max_seq_len = 16});
  const auto set = inject_lora(stack, {0, 2}, LoraSpec{.rank = 4}, 1);
  EXPECT_EQ(set.parameter_count(), 1024u);
  const LoraSpec all{.rank = 2, .targets = {Projection::Up, Projection::Down}};
  EXPECT_EQ(lora_params_per_layer(all, 32, 96), 2u * (32 + 96) * 2);
}

TEST(Lora, InitHasZeroUpFactorAndScaledGaussianDown) {
  const auto stack = TransformerStack<double>::init(tiny_model_config());
  const auto set = inject_lora(stack, {1, 3}, LoraSpec{}, 9);
  EXPECT_EQ(set.size(), 4u);
  EXPECT_DOUBLE_EQ(set.scale(), 2.0);
  for (const auto& [k, f] : set.factors()) {
    EXPECT_EQ(f.a.shape(), (Shape{8, 16}));
    EXPECT_EQ(f.b.shape(), (Shape{16, 8}));
    for (double v : f.b.values()) EXPECT_EQ(v, 0.0);
  }
  EXPECT_EQ(set, inject_lora(stack, {1, 3}, LoraSpec{}, 9));
}

TEST(Lora, InjectionPreservesForwardBitwise) {
  const auto stack = TransformerStack<double>::init(tiny_model_config());
  const auto set = inject_lora(stack, all_layers(4), LoraSpec{}, 5);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto ids = tokens(12, 64, s);
    EXPECT_TRUE(bit_identical(full_model_logits(stack, ids, &set), full_model_logits(stack, ids)));
  }
}

TEST(Lora, DuplicateOrMissingLayerIsConfigError) {
  const auto stack = TransformerStack<double>::init(tiny_model_config());
  auto set = inject_lora(stack, {0}, LoraSpec{}, 1);
  EXPECT_THROW(inject_lora(set, stack, {0}, LoraSpec{}, 2), ConfigError);
  EXPECT_THROW(inject_lora(stack, {1, 1}, LoraSpec{}, 2), ConfigError);
  EXPECT_THROW(inject_lora(stack, {4}, LoraSpec{}, 2), ConfigError);
}

TEST(Lora, DeltaEqualsScaledProductOfFactors) {
  // Folding (alpha/r) B A into W must give the same logits as the LoRA path.
  auto stack = TransformerStack<double>::init(tiny_model_config());
  auto set = inject_lora(stack, {2}, LoraSpec{.rank = 2, .alpha = 3}, 4);
  randomize(set, 8);
  const auto ids = tokens(6, 64, 3);
  const Array<double> with_lora = full_model_logits(stack, ids, &set);
  for (const auto& [k, f] : set.factors()) {
    Array<double>& w = stack.layers[k.layer].weight(k.projection);
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t o = 0; o < w.cols(); ++o) {
        double d = 0;
        for (std::size_t r = 0; r < 2; ++r) d += f.b(o, r) * f.a(r, i);
        w(i, o) += 1.5 * d;
      }
  }
  const Array<double> folded = full_model_logits(stack, ids);
  for (std::size_t i = 0; i < folded.size(); ++i) EXPECT_NEAR(with_lora[i], folded[i], 1e-10);
}

class AssembleTest : public ::testing::Test {
 protected:
  TransformerStack<double> base = TransformerStack<double>::init(
      ModelConfig{.n_layers = 8, .d_model = 16, .n_heads = 2, .d_ff = 24, .vocab_size = 64, .max_seq_len = 32});
  std::vector<int> ids = tokens(9, 64, 21);
};

TEST_F(AssembleTest, FullKeepZeroLoraEqualsFullModel) {
  const SplitPlan plan = extract(8, 2, 1.0);
  const auto adapter = inject_lora(base, plan.adapter(), LoraSpec{}, 1);
  const auto emulator = inject_lora(base, plan.emulator, LoraSpec{}, 2);
  const auto emu = assemble(plan, base, adapter, &emulator, Assembly::AdapEmu);
  EXPECT_TRUE(bit_identical(emu.logits(ids), full_model_logits(base, ids)));
}

TEST_F(AssembleTest, AdapFuWithZeroAdapterEqualsFullModel) {
  const SplitPlan plan = extract(8, 2, 0.5);
  const auto adapter = inject_lora(base, plan.adapter(), LoraSpec{}, 1);
  const auto fu = assemble(plan, base, adapter, nullptr, Assembly::AdapFu);
  EXPECT_TRUE(bit_identical(fu.logits(ids), full_model_logits(base, ids)));
}

TEST_F(AssembleTest, AdapFuWithTrainedAdapterEqualsFullModelWithSameLora) {
  const SplitPlan plan = extract(8, 3, 0.5);
  auto adapter = inject_lora(base, plan.adapter(), LoraSpec{}, 1);
  randomize(adapter, 3);
  const auto fu = assemble(plan, base, adapter, nullptr, Assembly::AdapFu);
  EXPECT_TRUE(bit_identical(fu.logits(ids), full_model_logits(base, ids, &adapter)));
}

TEST_F(AssembleTest, ExecutedLayers) {
  const SplitPlan plan = extract(32, 2, 0.5);
  const auto big = TransformerStack<double>::init(
      ModelConfig{.n_layers = 32, .d_model = 8, .n_heads = 2, .d_ff = 8, .vocab_size = 64, .max_seq_len = 8});
  const auto adapter = inject_lora(big, plan.adapter(), LoraSpec{.rank = 1}, 1);
  const auto emulator = inject_lora(big, plan.emulator, LoraSpec{.rank = 1}, 2);
  EXPECT_EQ(assemble(plan, big, adapter, &emulator, Assembly::AdapEmu).executed_layers().size(), 17u);
  EXPECT_EQ(assemble(plan, big, adapter, nullptr, Assembly::AdapFu).executed_layers().size(), 32u);
}

TEST_F(AssembleTest, ModeAndLoraMismatchAreConfigErrors) {
  const SplitPlan plan = extract(8, 2, 0.5);
  const auto adapter = inject_lora(base, plan.adapter(), LoraSpec{}, 1);
  const auto emulator = inject_lora(base, plan.emulator, LoraSpec{}, 2);
  const auto wrong = inject_lora(base, {0, 1}, LoraSpec{}, 3);
  EXPECT_THROW(assemble(plan, base, adapter, nullptr, Assembly::AdapEmu), ConfigError);
  EXPECT_THROW(assemble(plan, base, adapter, &emulator, Assembly::AdapFu), ConfigError);
  EXPECT_THROW(assemble(plan, base, wrong, &emulator, Assembly::AdapEmu), ConfigError);
  EXPECT_THROW(assemble(plan, base, adapter, &wrong, Assembly::AdapEmu), ConfigError);
  EXPECT_THROW(assemble(extract(10, 2, 0.5), base, adapter, &emulator, Assembly::AdapEmu), ConfigError);
}

TEST_F(AssembleTest, EmulatorActivationsContracts) {
  const SplitPlan full = extract(8, 2, 1.0);
  auto adapter = inject_lora(base, full.adapter(), LoraSpec{}, 1);
  const auto emulator = inject_lora(base, full.emulator, LoraSpec{}, 2);
  const auto same = emulator_activations(full, base, adapter, emulator, ids);
  EXPECT_TRUE(bit_identical(same.compressed, same.noncompressed));
  EXPECT_EQ(same.compressed.shape(), (Shape{ids.size(), 16}));

  const SplitPlan half = extract(8, 2, 0.5);
  auto a2 = inject_lora(base, half.adapter(), LoraSpec{}, 1);
  auto e2 = inject_lora(base, half.emulator, LoraSpec{}, 2);
  randomize(e2, 4);
  const auto before = emulator_activations(half, base, a2, e2, ids);
  randomize(a2, 5);
  const auto after = emulator_activations(half, base, a2, e2, ids);
  EXPECT_TRUE(bit_identical(before.compressed, after.compressed));
  EXPECT_TRUE(bit_identical(before.noncompressed, after.noncompressed));
  EXPECT_FALSE(bit_identical(before.compressed, before.noncompressed));
  EXPECT_THROW(emulator_activations(half, base, a2, e2, std::vector<int>(40, 1)), InputError);
}

TEST_F(AssembleTest, HiddenIsEmulatorOutput) {
  const SplitPlan plan = extract(8, 2, 0.5);
  auto adapter = inject_lora(base, plan.adapter(), LoraSpec{}, 1);
  auto emulator = inject_lora(base, plan.emulator, LoraSpec{}, 2);
  randomize(emulator, 6);
  const auto model = assemble(plan, base, adapter, &emulator, Assembly::AdapEmu);
  Tape<double> tape;
  const auto pass = model.forward(model.bind(tape), ids);
  EXPECT_TRUE(bit_identical(pass.hidden.value(), emulator_activations(plan, base, adapter, emulator, ids).compressed));
}

TEST_F(AssembleTest, GradientsReachOnlyTheTrainableSet) {
  const SplitPlan plan = extract(8, 2, 0.5);
  auto adapter = inject_lora(base, plan.adapter(), LoraSpec{}, 1);
  auto emulator = inject_lora(base, plan.emulator, LoraSpec{}, 2);
  randomize(adapter, 3);
  const auto model = assemble(plan, base, adapter, &emulator, Assembly::AdapEmu);
  Tape<double> tape;
  const auto b = model.bind(tape, Trainable::Adapter);
  const auto pass = model.forward(b, ids);
  std::vector<int> targets(ids.begin() + 1, ids.end());
  targets.push_back(0);
  const Mask mask(ids.size(), 1);
  tape.backward(softmax_cross_entropy(pass.logits, targets, mask));
  EXPECT_EQ(b.adapter.gradients(tape).size(), adapter.parameters().size());
  for (const auto& g : b.emulator.gradients(tape))
    for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

}  // namespace
}  // namespace fedbiot
