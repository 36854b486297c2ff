#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedbiot/compute/ops.hpp"

namespace fedbiot {

// Character-level vocabulary. Token id = position in this string.
inline constexpr std::string_view kAlphabet =
    "_.=+CRAS0123456789abcdefghijklmnopqrstuvwxyzBDEFGHIJKLMNOPQTUVWX";
static_assert(kAlphabet.size() == 64);

namespace tok {
inline constexpr int kPad = 0;
inline constexpr int kEnd = 1;
inline constexpr int kSep = 2;
inline constexpr int kPlus = 3;
inline constexpr int kDigit0 = 8;
inline constexpr int kLetterA = 18;
inline constexpr int kLetters = 16;  // task alphabet a..p
}  // namespace tok

inline int char_to_token(char c) {
  const auto pos = kAlphabet.find(c);
  if (pos == std::string_view::npos) throw InputError(std::string("character '") + c + "' is not in the vocabulary");
  return static_cast<int>(pos);
}

inline char token_to_char(int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= kAlphabet.size()) return '?';
  return kAlphabet[static_cast<std::size_t>(id)];
}

inline std::vector<int> encode(std::string_view text) {
  std::vector<int> out;
  for (char c : text) out.push_back(char_to_token(c));
  return out;
}

inline std::string decode(std::span<const int> ids) {
  std::string out;
  for (int id : ids) out.push_back(token_to_char(id));
  return out;
}

enum class TaskKind : std::uint8_t { Copy, Reverse, ModularAdd, Sort };

inline constexpr TaskKind kAllTasks[] = {TaskKind::Copy, TaskKind::Reverse, TaskKind::ModularAdd, TaskKind::Sort};

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Copy: return "copy";
    case TaskKind::Reverse: return "reverse";
    case TaskKind::ModularAdd: return "modular_add";
    case TaskKind::Sort: return "sort";
  }
  return "?";
}

inline TaskKind parse_task(const std::string& s) {
  for (TaskKind k : kAllTasks)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown task kind '" + s + "' (expected copy, reverse, modular_add or sort)");
}

inline int task_marker(TaskKind k) {
  switch (k) {
    case TaskKind::Copy: return char_to_token('C');
    case TaskKind::Reverse: return char_to_token('R');
    case TaskKind::ModularAdd: return char_to_token('A');
    case TaskKind::Sort: return char_to_token('S');
  }
  return 0;
}

// Smallest vocabulary that holds every token a task kind emits.
inline std::size_t required_vocab(TaskKind k) {
  return k == TaskKind::ModularAdd ? static_cast<std::size_t>(tok::kDigit0 + 10)
                                   : static_cast<std::size_t>(tok::kLetterA + tok::kLetters);
}

// Prompt tokens first, answer tokens last. gt_mask flags the answer region
// (including the terminating '.'), which is the only supervised part.
struct Sample {
  std::vector<int> tokens;
  Mask gt_mask;
  TaskKind category = TaskKind::Copy;

  // Next-token view: position t predicts tokens[t + 1]; supervised when that
  // token is ground truth.
  std::span<const int> inputs() const { return {tokens.data(), tokens.size() - 1}; }
  std::span<const int> targets() const { return {tokens.data() + 1, tokens.size() - 1}; }
  std::span<const std::uint8_t> target_mask() const { return {gt_mask.data() + 1, gt_mask.size() - 1}; }

  // Tokens up to and including the separator, i.e. what a decoder is prompted with.
  std::span<const int> prompt() const {
    const auto it = std::find(gt_mask.begin(), gt_mask.end(), std::uint8_t{1});
    return {tokens.data(), static_cast<std::size_t>(it - gt_mask.begin())};
  }
  std::span<const int> answer() const {
    const std::size_t p = prompt().size();
    return {tokens.data() + p, tokens.size() - p};
  }

  friend bool operator==(const Sample&, const Sample&) = default;
};

using Dataset = std::vector<Sample>;

struct TaskOptions {
  std::size_t min_len = 2;  // instance length (number of symbols) for copy/reverse/sort
  std::size_t max_len = 5;
  std::size_t vocab = 64;
  int modulus = 10;

  void validate() const {
    if (min_len < 1 || max_len < min_len) throw ConfigError("task lengths must satisfy 1 <= min_len <= max_len");
    if (modulus < 2 || modulus > 10) throw ConfigError("modular_add modulus must lie in [2, 10]");
  }
};

inline Sample make_sample(TaskKind kind, std::vector<int> prompt_body, std::vector<int> answer_body) {
  Sample s;
  s.category = kind;
  s.tokens.push_back(task_marker(kind));
  s.tokens.insert(s.tokens.end(), prompt_body.begin(), prompt_body.end());
  s.tokens.push_back(tok::kSep);
  const std::size_t answer_start = s.tokens.size();
  s.tokens.insert(s.tokens.end(), answer_body.begin(), answer_body.end());
  s.tokens.push_back(tok::kEnd);
  s.gt_mask.assign(s.tokens.size(), 0);
  std::fill(s.gt_mask.begin() + static_cast<std::ptrdiff_t>(answer_start), s.gt_mask.end(), std::uint8_t{1});
  return s;
}

inline Sample make_task_sample(TaskKind kind, std::mt19937_64& rng, const TaskOptions& opt) {
  auto uniform = [&rng](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  if (kind == TaskKind::ModularAdd) {
    const int a = static_cast<int>(uniform(0, static_cast<std::size_t>(opt.modulus - 1)));
    const int b = static_cast<int>(uniform(0, static_cast<std::size_t>(opt.modulus - 1)));
    return make_sample(kind, {tok::kDigit0 + a, tok::kPlus, tok::kDigit0 + b}, {tok::kDigit0 + (a + b) % opt.modulus});
  }
  const std::size_t len = uniform(opt.min_len, opt.max_len);
  std::vector<int> body(len);
  for (auto& t : body) t = tok::kLetterA + static_cast<int>(uniform(0, tok::kLetters - 1));
  std::vector<int> answer = body;
  if (kind == TaskKind::Reverse) std::reverse(answer.begin(), answer.end());
  if (kind == TaskKind::Sort) std::sort(answer.begin(), answer.end());
  return make_sample(kind, std::move(body), std::move(answer));
}

// Deterministic synthetic instruction-style samples of a single kind.
inline Dataset generate_task(TaskKind kind, std::size_t count, std::uint64_t seed, const TaskOptions& opt = {}) {
  opt.validate();
  if (count < 1) throw ConfigError("generate_task: count must be >= 1");
  if (opt.vocab < required_vocab(kind)) {
    throw ConfigError("vocabulary of " + std::to_string(opt.vocab) + " tokens is too small for task " +
                      to_string(kind) + " (needs " + std::to_string(required_vocab(kind)) + ")");
  }
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(kind) + 1)));
  Dataset out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(make_task_sample(kind, rng, opt));
  return out;
}

// `count_per_kind` samples of every kind in `kinds`, grouped by kind.
inline Dataset generate_mixture(const std::vector<TaskKind>& kinds, std::size_t count_per_kind, std::uint64_t seed,
                                const TaskOptions& opt = {}) {
  Dataset out;
  for (TaskKind k : kinds) {
    Dataset part = generate_task(k, count_per_kind, seed, opt);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

struct PublicDataOptions {
  std::vector<TaskKind> kinds{TaskKind::Copy, TaskKind::Reverse};
  TaskOptions task{.min_len = 4, .max_len = 8};
  // Ablation: draw from the client mixture instead of a shifted one.
  bool overlap = false;
};

// Server-held alignment data. Each sample's kind is drawn uniformly from the
// public mixture, which by default differs from the clients' tasks.
inline Dataset public_dataset(const PublicDataOptions& opt, std::size_t count, std::uint64_t seed,
                              const std::vector<TaskKind>& client_kinds = {}, const TaskOptions& client_task = {}) {
  if (count < 1) throw ConfigError("public_dataset: count must be >= 1");
  const std::vector<TaskKind>& kinds = opt.overlap && !client_kinds.empty() ? client_kinds : opt.kinds;
  const TaskOptions& task = opt.overlap ? client_task : opt.task;
  if (kinds.empty()) throw ConfigError("public_dataset: empty task mixture");
  task.validate();
  for (TaskKind k : kinds)
    if (task.vocab < required_vocab(k)) throw ConfigError("vocabulary too small for public task " + to_string(k));
  std::mt19937_64 rng(seed ^ 0xD1B54A32D192ED03ull);
  Dataset out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const TaskKind k = kinds[std::uniform_int_distribution<std::size_t>(0, kinds.size() - 1)(rng)];
    out.push_back(make_task_sample(k, rng, task));
  }
  return out;
}

}  // namespace fedbiot
