#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

#include "fedbiot/compute/ops.hpp"
#include "fedbiot/data/dataset_io.hpp"
#include "fedbiot/data/partition.hpp"
#include "fedbiot/data/tasks.hpp"
#include "test_support.hpp"

namespace fedbiot {
namespace {

TEST(Vocabulary, RoundTripAndSpecialIds) {
  EXPECT_EQ(kAlphabet.size(), 64u);
  EXPECT_EQ(decode(encode("C.=abc")), "C.=abc");
  EXPECT_EQ(char_to_token('.'), tok::kEnd);
  EXPECT_EQ(char_to_token('='), tok::kSep);
  EXPECT_EQ(char_to_token('0'), tok::kDigit0);
  EXPECT_EQ(char_to_token('a'), tok::kLetterA);
  EXPECT_THROW(char_to_token('!'), InputError);
}

TEST(Tasks, CopyAnswerAndMask) {
  const Sample s = make_sample(TaskKind::Copy, encode("abc"), encode("abc"));
  EXPECT_EQ(decode(s.tokens), "Cabc=abc.");
  EXPECT_EQ(decode(s.answer()), "abc.");
  EXPECT_EQ(s.gt_mask, (Mask{0, 0, 0, 0, 0, 1, 1, 1, 1}));
}

TEST(Tasks, GeneratedSamplesSolveTheirTask) {
  for (TaskKind k : kAllTasks) {
    for (const Sample& s : generate_task(k, 200, 3)) {
      const std::string text = decode(s.tokens);
      const auto sep = text.find('=');
      ASSERT_NE(sep, std::string::npos);
      const std::string prompt = text.substr(1, sep - 1), answer = text.substr(sep + 1, text.size() - sep - 2);
      EXPECT_EQ(text.back(), '.');
      EXPECT_EQ(s.category, k);
      std::string expected = prompt;
      if (k == TaskKind::Reverse) std::reverse(expected.begin(), expected.end());
      if (k == TaskKind::Sort) std::sort(expected.begin(), expected.end());
      if (k == TaskKind::ModularAdd) {
        ASSERT_EQ(prompt.size(), 3u);
        EXPECT_EQ(prompt[1], '+');
        expected = std::string(1, static_cast<char>('0' + ((prompt[0] - '0') + (prompt[2] - '0')) % 10));
      }
      EXPECT_EQ(answer, expected) << text;
      const std::size_t first = static_cast<std::size_t>(
          std::find(s.gt_mask.begin(), s.gt_mask.end(), std::uint8_t{1}) - s.gt_mask.begin());
      EXPECT_EQ(first, sep + 1);
      EXPECT_TRUE(std::all_of(s.gt_mask.begin() + static_cast<long>(first), s.gt_mask.end(),
                              [](std::uint8_t m) { return m == 1; }));
    }
  }
}

TEST(Tasks, ModularAddExample) {
  const Sample s = make_sample(TaskKind::ModularAdd, encode("3+4"), encode("7"));
  EXPECT_EQ(decode(s.answer()), "7.");
}

TEST(Tasks, DeterministicPerSeed) {
  for (TaskKind k : kAllTasks) {
    EXPECT_EQ(generate_task(k, 50, 9), generate_task(k, 50, 9));
    EXPECT_NE(generate_task(k, 50, 9), generate_task(k, 50, 10));
  }
}

TEST(Tasks, Errors) {
  EXPECT_THROW(generate_task(TaskKind::Copy, 0, 1), ConfigError);
  EXPECT_THROW(generate_task(TaskKind::Copy, 5, 1, TaskOptions{.vocab = 20}), ConfigError);
  EXPECT_NO_THROW(generate_task(TaskKind::ModularAdd, 5, 1, TaskOptions{.vocab = 20}));
  EXPECT_THROW(parse_task("divide"), ConfigError);
}

TEST(Tasks, NextTokenViewShiftsByOne) {
  const Sample s = make_sample(TaskKind::Copy, encode("ab"), encode("ab"));
  EXPECT_EQ(s.inputs().size(), s.tokens.size() - 1);
  EXPECT_EQ(s.targets().front(), s.tokens[1]);
  EXPECT_EQ(Mask(s.target_mask().begin(), s.target_mask().end()), Mask(s.gt_mask.begin() + 1, s.gt_mask.end()));
}

TEST(Tasks, PromptLogitsDoNotAffectLossGradient) {
  std::mt19937_64 rng(5);
  const Sample s = generate_task(TaskKind::Reverse, 1, 2).front();
  const auto targets = s.targets();
  const auto mask = s.target_mask();
  Array<double> logits = testing::random_array({targets.size(), 64}, rng);
  auto grad_at = [&](const Array<double>& l) {
    Tape<double> t;
    auto x = t.leaf(l);
    t.backward(softmax_cross_entropy(x, targets, mask));
    return t.grad(x);
  };
  const Array<double> g0 = grad_at(logits);
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (mask[r]) continue;
    for (std::size_t c = 0; c < 64; ++c) EXPECT_EQ(g0(r, c), 0.0);
    for (std::size_t c = 0; c < 64; ++c) logits(r, c) += 10.0 * static_cast<double>(c % 3);
  }
  EXPECT_EQ(grad_at(logits), g0);
}

TEST(PublicData, ShiftedByDefault) {
  const Dataset pub = public_dataset(PublicDataOptions{}, 300, 1, {TaskKind::ModularAdd});
  for (const Sample& s : pub) EXPECT_TRUE(s.category == TaskKind::Copy || s.category == TaskKind::Reverse);
  EXPECT_EQ(pub, public_dataset(PublicDataOptions{}, 300, 1, {TaskKind::ModularAdd}));
  PublicDataOptions overlap;
  overlap.overlap = true;
  for (const Sample& s : public_dataset(overlap, 50, 1, {TaskKind::ModularAdd}))
    EXPECT_EQ(s.category, TaskKind::ModularAdd);
  EXPECT_THROW(public_dataset(PublicDataOptions{}, 0, 1), ConfigError);
}

Dataset numbered(std::size_t n) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s = make_sample(kAllTasks[i % 4], {static_cast<int>(i % 64)}, {static_cast<int>((i / 64) % 64)});
    d.push_back(s);
  }
  return d;
}

void expect_disjoint_cover(const Partition& p, std::size_t n) {
  std::vector<std::size_t> all;
  for (const auto& idx : p.indices) all.insert(all.end(), idx.begin(), idx.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expected(n);
  std::iota(expected.begin(), expected.end(), 0);
  EXPECT_EQ(all, expected);
  std::size_t num = 0;
  for (const auto& w : p.weights) {
    EXPECT_EQ(w.denominator, n);
    num += w.numerator;
  }
  EXPECT_EQ(num, n);
}

TEST(Partition, IidEqualShards) {
  const Dataset d = numbered(7473);
  const Partition p = partition(d, {PartitionScheme::IID, 3, 1});
  ASSERT_EQ(p.shards.size(), 3u);
  for (const auto& s : p.shards) EXPECT_EQ(s.size(), 2491u);
  expect_disjoint_cover(p, d.size());
  for (std::size_t m = 0; m < 3; ++m)
    for (std::size_t j = 0; j < p.shards[m].size(); ++j) EXPECT_EQ(p.shards[m][j], d[p.indices[m][j]]);
}

TEST(Partition, IidUnevenSizesDifferByAtMostOne) {
  const Partition p = partition(numbered(10), {PartitionScheme::IID, 4, 2});
  std::vector<std::size_t> sizes;
  for (const auto& s : p.shards) sizes.push_back(s.size());
  EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1u);
  expect_disjoint_cover(p, 10);
}

TEST(Partition, ByCategoryOneCategoryPerClient) {
  const Dataset d = generate_mixture({TaskKind::Copy, TaskKind::Reverse, TaskKind::ModularAdd, TaskKind::Sort}, 25, 1);
  const Partition p = partition(d, {PartitionScheme::ByCategory, 4, 1});
  std::set<TaskKind> seen;
  for (const auto& shard : p.shards) {
    std::set<TaskKind> cats;
    for (const Sample& s : shard) cats.insert(s.category);
    ASSERT_EQ(cats.size(), 1u);
    EXPECT_TRUE(seen.insert(*cats.begin()).second);
  }
  expect_disjoint_cover(p, d.size());
}

TEST(Partition, ByCategoryRoundRobinBySize) {
  Dataset d;
  auto add = [&](TaskKind k, std::size_t n) {
    for (const Sample& s : generate_task(k, n, 1)) d.push_back(s);
  };
  add(TaskKind::Copy, 10);
  add(TaskKind::Reverse, 40);
  add(TaskKind::Sort, 20);
  add(TaskKind::ModularAdd, 30);
  const Partition p = partition(d, {PartitionScheme::ByCategory, 2, 1});
  // Sizes descending: reverse 40, add 30, sort 20, copy 10 -> {reverse, sort}, {add, copy}.
  EXPECT_EQ(p.shards[0].size(), 60u);
  EXPECT_EQ(p.shards[1].size(), 40u);
  EXPECT_EQ(p.weights[0], (ShardWeight{60, 100}));
}

TEST(Partition, Errors) {
  const Dataset d = generate_mixture({TaskKind::Copy, TaskKind::Reverse}, 5, 1);
  EXPECT_THROW(partition(d, {PartitionScheme::ByCategory, 3, 1}), PartitionError);
  EXPECT_THROW(partition(numbered(2), {PartitionScheme::IID, 3, 1}), PartitionError);
  EXPECT_THROW(partition(d, {PartitionScheme::IID, 0, 1}), PartitionError);
}

TEST(DatasetIo, RoundTrip) {
  const Dataset d = generate_mixture({TaskKind::Copy, TaskKind::ModularAdd}, 20, 4);
  std::stringstream ss;
  write_dataset(ss, d);
  EXPECT_EQ(read_dataset(ss), d);
}

TEST(DatasetIo, RejectsMalformedInput) {
  std::stringstream missing_header("copy\t1 2\t01\n");
  EXPECT_THROW(read_dataset(missing_header), FileError);
  std::stringstream bad_mask(std::string(kDatasetHeader) + "\ncopy\t4 5 6\t01\n");
  EXPECT_THROW(read_dataset(bad_mask), FileError);
  std::stringstream bad_category(std::string(kDatasetHeader) + "\nfoo\t4 5\t01\n");
  EXPECT_THROW(read_dataset(bad_category), FileError);
}

}  // namespace
}  // namespace fedbiot
