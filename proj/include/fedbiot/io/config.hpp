#pragma once

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fedbiot/costs/costs.hpp"
#include "fedbiot/fed/training.hpp"

namespace fedbiot {

struct DataConfig {
  std::vector<TaskKind> tasks{std::begin(kAllTasks), std::end(kAllTasks)};
  std::size_t samples_per_task = 100;
  std::size_t eval_samples_per_task = 25;
  PartitionScheme partition = PartitionScheme::ByCategory;
  std::vector<TaskKind> public_tasks{TaskKind::Copy, TaskKind::Reverse};
  std::size_t public_samples = 200;
  std::size_t public_min_len = 4;
  std::size_t public_max_len = 8;
  bool public_overlap = false;
  TaskOptions task{};
};

struct SplitConfig {
  std::size_t adapter_size = 2;
  double keep_ratio = 0.5;
};

// Everything that determines a run. Two runs with equal RunConfig produce
// identical metrics; `threads` and `output_dir` do not affect results.
struct RunConfig {
  ModelConfig model{};
  SplitConfig split{};
  LoraSpec lora{};
  AlignConfig align{};
  RoundConfig federation{};
  std::size_t clients = 4;
  DataConfig data{};
  PretrainConfig pretrain{};
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string output_dir = "runs/default";
  std::size_t checkpoint_every = 10;
  std::size_t keep_checkpoints = 3;
  std::size_t eval_every = 0;  // 0: evaluate only before and after training
  std::string base_checkpoint;  // optional pre-trained base instead of pretraining

  // The offsite-tuning baselines put the adapter at both ends.
  SplitPlan plan() const {
    return federation.mode == Method::FedBiOT ? extract(model.n_layers, split.adapter_size, split.keep_ratio)
                                              : extract_offsite(model.n_layers, split.keep_ratio);
  }

  std::size_t effective_clients() const { return federation.mode == Method::OffsiteSingle ? 1 : clients; }

  TrainingConfig training() const {
    TrainingConfig t;
    t.round = federation;
    t.align = align;
    t.lora = lora;
    t.seed = seed;
    t.threads = threads;
    return t;
  }

  void validate() const {
    model.validate();
    lora.validate();
    align.validate();
    federation.validate();
    if (clients < 1) throw ConfigError("federation.clients must be >= 1");
    if (threads < 1) throw ConfigError("run.threads must be >= 1");
    if (data.tasks.empty()) throw ConfigError("data.tasks must name at least one task");
    if (data.public_tasks.empty()) throw ConfigError("data.public_tasks must name at least one task");
    if (data.samples_per_task < 1) throw ConfigError("data.samples_per_task must be >= 1");
    if (data.public_samples < 1) throw ConfigError("data.public_samples must be >= 1");
    if (data.task.vocab != model.vocab_size) throw ConfigError("data vocabulary must equal model.vocab_size");
    data.task.validate();
    TaskOptions pub = data.task;
    pub.min_len = data.public_min_len;
    pub.max_len = data.public_max_len;
    pub.validate();
    if (checkpoint_every < 1) throw ConfigError("run.checkpoint_every must be >= 1");
    if (keep_checkpoints < 1) throw ConfigError("run.keep_checkpoints must be >= 1");
    plan();
  }

  PublicDataOptions public_options() const {
    PublicDataOptions p;
    p.kinds = data.public_tasks;
    p.task = data.task;
    p.task.min_len = data.public_min_len;
    p.task.max_len = data.public_max_len;
    p.overlap = data.public_overlap;
    return p;
  }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline double parse_f64(const std::string& key, const std::string& v) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <class E, class Parse>
std::vector<E> parse_list(const std::string& v, Parse parse) {
  std::vector<E> out;
  std::istringstream is(v);
  for (std::string item; std::getline(is, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse(item));
  }
  return out;
}

template <class E, class Name>
std::string join_list(const std::vector<E>& xs, Name name) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + name(xs[i]);
  return out;
}

struct ConfigField {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
  bool affects_results = true;
};

template <class M>
ConfigField size_field(std::string key, M member) {
  return {key, [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
          [member, key](RunConfig& c, const std::string& v) {
            member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_u64(key, v));
          }};
}

template <class M>
ConfigField double_field(std::string key, M member) {
  return {key, [member](const RunConfig& c) { return format_double(member(const_cast<RunConfig&>(c))); },
          [member, key](RunConfig& c, const std::string& v) { member(c) = parse_f64(key, v); }};
}

inline void add_optimizer_fields(std::vector<ConfigField>& out, const std::string& prefix,
                                 OptimizerConfig& (*opt)(RunConfig&)) {
  out.push_back({prefix + ".optimizer", [opt](const RunConfig& c) { return to_string(opt(const_cast<RunConfig&>(c)).kind); },
                 [opt](RunConfig& c, const std::string& v) { opt(c).kind = parse_optimizer(v); }});
  out.push_back(double_field(prefix + ".lr", [opt](RunConfig& c) -> double& { return opt(c).lr; }));
  out.push_back(double_field(prefix + ".beta1", [opt](RunConfig& c) -> double& { return opt(c).beta1; }));
  out.push_back(double_field(prefix + ".beta2", [opt](RunConfig& c) -> double& { return opt(c).beta2; }));
  out.push_back(double_field(prefix + ".eps", [opt](RunConfig& c) -> double& { return opt(c).eps; }));
  out.push_back(double_field(prefix + ".weight_decay", [opt](RunConfig& c) -> double& { return opt(c).weight_decay; }));
}

inline std::vector<ConfigField> make_config_fields() {
  using R = RunConfig;
  std::vector<ConfigField> f;
  f.push_back(size_field("model.n_layers", [](R& c) -> auto& { return c.model.n_layers; }));
  f.push_back(size_field("model.d_model", [](R& c) -> auto& { return c.model.d_model; }));
  f.push_back(size_field("model.n_heads", [](R& c) -> auto& { return c.model.n_heads; }));
  f.push_back(size_field("model.d_ff", [](R& c) -> auto& { return c.model.d_ff; }));
  f.push_back(size_field("model.vocab_size", [](R& c) -> auto& { return c.model.vocab_size; }));
  f.push_back(size_field("model.max_seq_len", [](R& c) -> auto& { return c.model.max_seq_len; }));
  f.push_back(size_field("model.seed", [](R& c) -> auto& { return c.model.rng_seed; }));

  f.push_back(size_field("split.adapter_size", [](R& c) -> auto& { return c.split.adapter_size; }));
  f.push_back(double_field("split.keep_ratio", [](R& c) -> auto& { return c.split.keep_ratio; }));

  f.push_back(size_field("lora.rank", [](R& c) -> auto& { return c.lora.rank; }));
  f.push_back(double_field("lora.alpha", [](R& c) -> auto& { return c.lora.alpha; }));
  f.push_back({"lora.targets", [](const R& c) { return join_list(c.lora.targets, projection_name); },
               [](R& c, const std::string& v) { c.lora.targets = parse_list<Projection>(v, parse_projection); }});

  f.push_back(double_field("align.lambda", [](R& c) -> auto& { return c.align.lambda; }));
  f.push_back(size_field("align.pre_align_iters", [](R& c) -> auto& { return c.align.pre_align_iters; }));
  f.push_back(size_field("align.per_round_iters", [](R& c) -> auto& { return c.align.per_round_iters; }));
  f.push_back(size_field("align.batch_size", [](R& c) -> auto& { return c.align.batch_size; }));
  add_optimizer_fields(f, "align", [](R& c) -> OptimizerConfig& { return c.align.optimizer; });

  f.push_back({"federation.mode", [](const R& c) { return to_string(c.federation.mode); },
               [](R& c, const std::string& v) { c.federation.mode = parse_method(v); }});
  f.push_back(size_field("federation.clients", [](R& c) -> auto& { return c.clients; }));
  f.push_back(size_field("federation.local_steps", [](R& c) -> auto& { return c.federation.local_steps; }));
  f.push_back(size_field("federation.batch_size", [](R& c) -> auto& { return c.federation.batch_size; }));
  f.push_back(size_field("federation.rounds", [](R& c) -> auto& { return c.federation.rounds; }));
  f.push_back(double_field("federation.epsilon", [](R& c) -> auto& { return c.federation.epsilon; }));
  add_optimizer_fields(f, "federation", [](R& c) -> OptimizerConfig& { return c.federation.optimizer; });

  auto task_name = [](TaskKind k) { return to_string(k); };
  f.push_back({"data.tasks", [task_name](const R& c) { return join_list(c.data.tasks, task_name); },
               [](R& c, const std::string& v) { c.data.tasks = parse_list<TaskKind>(v, parse_task); }});
  f.push_back(size_field("data.samples_per_task", [](R& c) -> auto& { return c.data.samples_per_task; }));
  f.push_back(size_field("data.eval_samples_per_task", [](R& c) -> auto& { return c.data.eval_samples_per_task; }));
  f.push_back({"data.partition", [](const R& c) { return to_string(c.data.partition); },
               [](R& c, const std::string& v) { c.data.partition = parse_partition(v); }});
  f.push_back({"data.public_tasks", [task_name](const R& c) { return join_list(c.data.public_tasks, task_name); },
               [](R& c, const std::string& v) { c.data.public_tasks = parse_list<TaskKind>(v, parse_task); }});
  f.push_back(size_field("data.public_samples", [](R& c) -> auto& { return c.data.public_samples; }));
  f.push_back(size_field("data.public_min_len", [](R& c) -> auto& { return c.data.public_min_len; }));
  f.push_back(size_field("data.public_max_len", [](R& c) -> auto& { return c.data.public_max_len; }));
  f.push_back({"data.public_overlap", [](const R& c) { return std::string(c.data.public_overlap ? "true" : "false"); },
               [](R& c, const std::string& v) { c.data.public_overlap = parse_bool("data.public_overlap", v); }});
  f.push_back(size_field("data.min_len", [](R& c) -> auto& { return c.data.task.min_len; }));
  f.push_back(size_field("data.max_len", [](R& c) -> auto& { return c.data.task.max_len; }));
  f.push_back({"data.modulus", [](const R& c) { return std::to_string(c.data.task.modulus); },
               [](R& c, const std::string& v) { c.data.task.modulus = static_cast<int>(parse_u64("data.modulus", v)); }});

  f.push_back(size_field("pretrain.steps", [](R& c) -> auto& { return c.pretrain.steps; }));
  f.push_back(size_field("pretrain.batch_size", [](R& c) -> auto& { return c.pretrain.batch_size; }));
  f.push_back(size_field("pretrain.samples_per_task", [](R& c) -> auto& { return c.pretrain.samples_per_task; }));
  add_optimizer_fields(f, "pretrain", [](R& c) -> OptimizerConfig& { return c.pretrain.optimizer; });

  f.push_back(size_field("run.seed", [](R& c) -> auto& { return c.seed; }));
  f.push_back(size_field("run.threads", [](R& c) -> auto& { return c.threads; }));
  f.back().affects_results = false;
  f.push_back({"run.output_dir", [](const R& c) { return c.output_dir; },
               [](R& c, const std::string& v) { c.output_dir = v; }, false});
  f.push_back(size_field("run.checkpoint_every", [](R& c) -> auto& { return c.checkpoint_every; }));
  f.back().affects_results = false;
  f.push_back(size_field("run.keep_checkpoints", [](R& c) -> auto& { return c.keep_checkpoints; }));
  f.back().affects_results = false;
  f.push_back(size_field("run.eval_every", [](R& c) -> auto& { return c.eval_every; }));
  f.push_back({"run.base_checkpoint", [](const R& c) { return c.base_checkpoint; },
               [](R& c, const std::string& v) { c.base_checkpoint = v; }});
  return f;
}

}  // namespace detail

inline const std::vector<detail::ConfigField>& config_fields() {
  static const std::vector<detail::ConfigField> fields = detail::make_config_fields();
  return fields;
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : config_fields()) out.push_back(f.key);
  return out;
}

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : config_fields()) {
    if (f.key == key) {
      f.set(cfg, detail::trim(value));
      if (key == "model.vocab_size") cfg.data.task.vocab = cfg.model.vocab_size;
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

inline std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  for (const auto& f : config_fields())
    if (f.key == key) return f.get(cfg);
  throw ConfigError("unknown configuration key '" + key + "'");
}

// Applies a `key = value` override as given on the command line.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  set_config_value(cfg, detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

// `key = value` lines; `[section]` prefixes following keys with "section.";
// `#` starts a comment.
inline void apply_config_text(RunConfig& cfg, std::istream& is, const std::string& source = "config") {
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    std::string key = detail::trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    try {
      set_config_value(cfg, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  apply_config_text(cfg, is);
  return cfg;
}

inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FileError("cannot read config file " + path.string());
  apply_config_text(cfg, is, path.string());
}

// Defaults, then the file (if any), then command-line overrides.
inline RunConfig load_config(const std::string& file, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!file.empty()) apply_config_file(cfg, file);
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

// Every key in canonical order; parsing the result reproduces `cfg`.
inline std::string to_config_text(const RunConfig& cfg, bool results_only = false) {
  std::ostringstream os;
  for (const auto& f : config_fields()) {
    if (results_only && !f.affects_results) continue;
    os << f.key << " = " << f.get(cfg) << '\n';
  }
  return os.str();
}

inline bool same_results_config(const RunConfig& a, const RunConfig& b) {
  return to_config_text(a, true) == to_config_text(b, true);
}

inline constexpr const char* kOutputRootEnv = "FEDBIOT_OUTPUT_ROOT";

// Relative output directories are placed under $FEDBIOT_OUTPUT_ROOT when set.
inline std::filesystem::path resolve_output_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) return std::filesystem::path(root) / p;
  }
  return p;
}

}  // namespace fedbiot
