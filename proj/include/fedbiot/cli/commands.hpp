#pragma once

// Subcommand implementations, kept separate from argument parsing so they can
// be driven directly from tests.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "fedbiot/costs/costs.hpp"
#include "fedbiot/data/dataset_io.hpp"
#include "fedbiot/fed/training.hpp"
#include "fedbiot/io/checkpoint.hpp"
#include "fedbiot/io/config.hpp"
#include "fedbiot/io/metrics.hpp"

namespace fedbiot::cli {

namespace fs = std::filesystem;

// Training and evaluation precision.
using Real = float;

namespace paths {
inline fs::path config(const fs::path& run) { return run / "config.txt"; }
inline fs::path metrics(const fs::path& run) { return run / "metrics.jsonl"; }
inline fs::path timings(const fs::path& run) { return run / "timings.jsonl"; }
inline fs::path base(const fs::path& run) { return run / "base.ckpt"; }
inline fs::path checkpoints(const fs::path& run) { return run / "checkpoints"; }
inline fs::path artifact(const fs::path& run, Assembly a) {
  return run / (a == Assembly::AdapEmu ? "adapemu.ckpt" : "adapfu.ckpt");
}
inline fs::path prealigned(const fs::path& run) { return run / "prealigned.ckpt"; }
inline fs::path round_checkpoint(const fs::path& run, std::size_t next_round) {
  char name[32];
  std::snprintf(name, sizeof name, "round_%06zu.ckpt", next_round);
  return checkpoints(run) / name;
}
}  // namespace paths

// ---------------------------------------------------------------- extract

inline void cmd_extract(const RunConfig& cfg, std::ostream& out) {
  cfg.model.validate();
  const SplitPlan plan = cfg.plan();
  out << "mode " << to_string(cfg.federation.mode) << '\n'
      << "n_layers " << plan.n_layers << '\n'
      << "keep_ratio " << detail::format_double(plan.keep_ratio) << '\n'
      << "adapter " << format_layers(plan.adapter()) << '\n'
      << "emulator_count " << plan.emulator.size() << '\n'
      << "emulator " << format_layers(plan.emulator) << '\n'
      << "noncompressed " << format_layers(plan.noncompressed) << '\n';
}

// ---------------------------------------------------------------- data & base

struct RunData {
  Dataset train;
  Dataset eval;
  Dataset public_data;
  Partition partition;
};

inline RunData make_run_data(const RunConfig& cfg) {
  RunData d;
  d.train = generate_mixture(cfg.data.tasks, cfg.data.samples_per_task, derive_seed(cfg.seed, 0xDA7A), cfg.data.task);
  if (cfg.data.eval_samples_per_task > 0) {
    d.eval = generate_mixture(cfg.data.tasks, cfg.data.eval_samples_per_task, derive_seed(cfg.seed, 0xE7A1),
                              cfg.data.task);
  }
  d.public_data = public_dataset(cfg.public_options(), cfg.data.public_samples, derive_seed(cfg.seed, 0x9B1C),
                                 cfg.data.tasks, cfg.data.task);
  d.partition = partition(d.train, {cfg.data.partition, cfg.effective_clients(), derive_seed(cfg.seed, 0x9A27)});
  return d;
}

struct BaseModel {
  TransformerStack<Real> stack;
  Json record;
};

// The stand-in for a pre-trained model: full-parameter training on the task
// mixture. Depends only on the model and pretraining settings, not the run
// seed, so several runs can share one base.
inline BaseModel build_base(const RunConfig& cfg) {
  BaseModel b;
  if (!cfg.base_checkpoint.empty()) {
    b.stack = get_stack<Real>(Checkpoint::load(cfg.base_checkpoint), "base");
    if (!(b.stack.config == cfg.model)) {
      throw ConfigError("base checkpoint " + cfg.base_checkpoint + " was built with a different model configuration");
    }
    b.record = {{"type", "pretrain"}, {"source", "checkpoint"}};
    return b;
  }
  b.stack = TransformerStack<Real>::init(cfg.model);
  std::vector<double> trace;
  if (cfg.pretrain.steps > 0) {
    const Dataset corpus = generate_mixture(cfg.data.tasks, cfg.pretrain.samples_per_task,
                                            derive_seed(cfg.model.rng_seed, 0xB45E), cfg.data.task);
    trace = pretrain_base(b.stack, corpus, cfg.pretrain, derive_seed(cfg.model.rng_seed, 0x5052));
  }
  b.record = {{"type", "pretrain"}, {"source", "pretrained"}, {"steps", cfg.pretrain.steps}};
  if (!trace.empty()) {
    b.record["initial_loss"] = trace.front();
    b.record["final_loss"] = trace.back();
  }
  return b;
}

inline Checkpoint base_checkpoint(const TransformerStack<Real>& s) {
  Checkpoint ck;
  put_stack(ck, "base", s);
  return ck;
}

// ---------------------------------------------------------------- server state

inline Checkpoint server_checkpoint(const ServerState<Real>& s) {
  Checkpoint ck;
  ck.set_meta("next_round", std::to_string(s.next_round));
  ck.set_meta("prealigned", s.prealigned ? "1" : "0");
  put_lora(ck, "adapter", s.adapter);
  put_lora(ck, "emulator", s.emulator);
  put_optimizer(ck, "align_optimizer", s.align_optimizer);
  return ck;
}

inline ServerState<Real> load_server_state(const Checkpoint& ck, const RunConfig& cfg) {
  ServerState<Real> s;
  s.next_round = std::stoull(ck.meta("next_round"));
  s.prealigned = ck.meta("prealigned") == "1";
  s.adapter = get_lora<Real>(ck, "adapter");
  s.emulator = get_lora<Real>(ck, "emulator");
  s.align_optimizer = Optimizer<Real>(cfg.align.optimizer);
  get_optimizer(ck, "align_optimizer", s.align_optimizer);
  return s;
}

// Completed-round counts of the checkpoints in a run, ascending.
inline std::vector<std::size_t> list_checkpoints(const fs::path& run) {
  std::vector<std::size_t> out;
  if (!fs::exists(paths::checkpoints(run))) return out;
  static const std::regex pattern(R"(round_(\d{6})\.ckpt)");
  for (const auto& e : fs::directory_iterator(paths::checkpoints(run))) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, pattern)) out.push_back(std::stoull(m[1].str()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Keeps the newest `keep` checkpoints plus the one for the final round.
inline void prune_checkpoints(const fs::path& run, std::size_t keep, std::size_t final_round) {
  auto rounds = list_checkpoints(run);
  std::erase(rounds, final_round);
  if (rounds.size() <= keep) return;
  for (std::size_t i = 0; i + keep < rounds.size(); ++i) fs::remove(paths::round_checkpoint(run, rounds[i]));
}

inline void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    os << text;
    if (!os) throw FileError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline RunConfig read_run_config(const fs::path& run) {
  std::ifstream is(paths::config(run));
  if (!is) throw FileError("no configuration snapshot at " + paths::config(run).string());
  RunConfig cfg;
  apply_config_text(cfg, is, paths::config(run).string());
  return cfg;
}

// ---------------------------------------------------------------- evaluation

struct EvalPair {
  EvalResult adapemu;
  EvalResult adapfu;
};

inline EvalPair evaluate_both(const RunConfig& cfg, const SplitPlan& plan, const TransformerStack<Real>& base,
                              const ServerState<Real>& s, const Dataset& data) {
  EvalPair e;
  e.adapemu = evaluate(assemble(plan, base, s.adapter, &s.emulator, Assembly::AdapEmu), data, cfg.model.max_seq_len);
  e.adapfu = evaluate(assemble(plan, base, s.adapter, nullptr, Assembly::AdapFu), data, cfg.model.max_seq_len);
  return e;
}

// ---------------------------------------------------------------- prealign

inline ServerState<Real> prealigned_state(const RunConfig& cfg, const TransformerStack<Real>& base,
                                          const SplitPlan& plan, const Dataset& public_data,
                                          std::vector<double>* losses) {
  const TrainingConfig tc = cfg.training();
  ServerState<Real> s = initial_server_state(base, plan, tc);
  auto trace = align_emulator(tc.align, tc.align.pre_align_iters, public_data, plan, base, s.adapter, s.emulator,
                              s.align_optimizer, derive_seed(tc.seed, 0xA0));
  s.prealigned = true;
  if (losses) *losses = std::move(trace);
  return s;
}

inline void cmd_prealign(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const fs::path run = resolve_output_dir(cfg.output_dir);
  fs::create_directories(run);
  const SplitPlan plan = cfg.plan();
  const RunData data = make_run_data(cfg);
  const BaseModel base = build_base(cfg);
  std::vector<double> losses;
  const ServerState<Real> s = prealigned_state(cfg, base.stack, plan, data.public_data, &losses);
  server_checkpoint(s).save(paths::prealigned(run));
  log << "emulator " << format_layers(plan.emulator) << '\n';
  if (!losses.empty()) {
    log << "alignment loss " << losses.front() << " -> " << losses.back() << " over " << losses.size()
        << " iterations\n";
  }
  log << "wrote " << paths::prealigned(run).string() << '\n';
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  bool fresh = false;
  bool quiet = false;
};

struct TrainSummary {
  fs::path run_dir;
  bool resumed = false;
  std::size_t start_round = 0;
  EvalPair base_eval;        // before pre-alignment
  EvalPair prealigned_eval;  // after pre-alignment, before any round
  EvalPair final_eval;
  std::vector<RoundReport> reports;
};

inline std::string first_config_difference(const RunConfig& a, const RunConfig& b) {
  std::istringstream x(to_config_text(a, true)), y(to_config_text(b, true));
  std::string lx, ly;
  while (std::getline(x, lx) && std::getline(y, ly))
    if (lx != ly) return "'" + lx + "' vs '" + ly + "'";
  return "";
}

inline Checkpoint artifact_checkpoint(const ServerState<Real>& s, const SplitPlan& plan, Assembly a) {
  Checkpoint ck;
  ck.set_meta("assembly", to_string(a));
  ck.set_meta("adapter_layers", format_layers(plan.adapter()));
  ck.set_meta("middle_layers", format_layers(a == Assembly::AdapEmu ? plan.emulator : plan.noncompressed));
  put_lora(ck, "adapter", s.adapter);
  if (a == Assembly::AdapEmu) put_lora(ck, "emulator", s.emulator);
  return ck;
}

// Runs (or resumes) a training run in cfg.output_dir. A run directory holds
// the configuration snapshot, the base model, metrics, periodic server
// checkpoints and the final AdapEmu / AdapFu artifacts.
inline TrainSummary cmd_train(const RunConfig& cfg, const TrainOptions& opt, std::ostream& log) {
  cfg.validate();
  TrainSummary summary;
  const fs::path run = resolve_output_dir(cfg.output_dir);
  summary.run_dir = run;
  if (opt.fresh && fs::exists(run)) fs::remove_all(run);
  if (fs::exists(paths::config(run))) {
    const RunConfig previous = read_run_config(run);
    if (!same_results_config(previous, cfg)) {
      throw ConfigError("run directory " + run.string() + " holds a run with a different configuration (" +
                        first_config_difference(previous, cfg) + "); pass --fresh to replace it");
    }
  }
  fs::create_directories(paths::checkpoints(run));
  write_text_atomic(paths::config(run), to_config_text(cfg));

  const SplitPlan plan = cfg.plan();
  const RunData data = make_run_data(cfg);
  const TrainingConfig tc = cfg.training();
  const std::size_t rounds = cfg.federation.rounds;

  const auto saved = list_checkpoints(run);
  const bool resume = !saved.empty() && fs::exists(paths::base(run));
  TransformerStack<Real> base;
  ServerState<Real> server;
  if (resume) {
    base = get_stack<Real>(Checkpoint::load(paths::base(run)), "base");
    server = load_server_state(Checkpoint::load(paths::round_checkpoint(run, saved.back())), cfg);
    truncate_metrics(paths::metrics(run), server.next_round);
    truncate_timings(paths::timings(run), server.next_round);
    summary.resumed = true;
    summary.start_round = server.next_round;
  } else {
    for (const auto& p : {paths::metrics(run), paths::timings(run), paths::artifact(run, Assembly::AdapEmu),
                          paths::artifact(run, Assembly::AdapFu)})
      fs::remove(p);
    BaseModel b = build_base(cfg);
    base = std::move(b.stack);
    base_checkpoint(base).save(paths::base(run));
    JsonlWriter(paths::metrics(run)).write(b.record);
    server = initial_server_state(base, plan, tc);
  }
  JsonlWriter metrics(paths::metrics(run));
  JsonlWriter timings(paths::timings(run));

  if (!opt.quiet) {
    log << (resume ? "resuming " : "starting ") << run.string() << " at round " << server.next_round << '\n'
        << "adapter layers " << format_layers(plan.adapter()) << '\n'
        << "emulator layers " << format_layers(plan.emulator) << '\n';
  }
  if (!resume) {
    metrics.write({{"type", "plan"},
                   {"mode", to_string(cfg.federation.mode)},
                   {"adapter", plan.adapter()},
                   {"emulator", plan.emulator},
                   {"clients", data.partition.shards.size()}});
    summary.base_eval = evaluate_both(cfg, plan, base, server, data.eval);
    metrics.write(eval_record("base", 0, summary.base_eval.adapemu, summary.base_eval.adapfu));
  }

  TrainingHooks<Real> hooks;
  hooks.on_prealign = [&](const std::vector<double>& losses, const ServerState<Real>& s) {
    metrics.write({{"type", "prealign"}, {"iters", losses.size()}, {"losses", losses}});
    summary.prealigned_eval = evaluate_both(cfg, plan, base, s, data.eval);
    metrics.write(eval_record("prealigned", 0, summary.prealigned_eval.adapemu, summary.prealigned_eval.adapfu));
    server_checkpoint(s).save(paths::round_checkpoint(run, 0));
    if (!opt.quiet && !losses.empty()) log << "pre-alignment loss " << losses.front() << " -> " << losses.back() << '\n';
  };
  hooks.on_round = [&](const RoundReport& r, const ServerState<Real>& s) {
    metrics.write(round_record(r));
    timings.write(timing_record(r));
    const std::size_t done = r.round + 1;
    if (cfg.eval_every > 0 && done % cfg.eval_every == 0 && done < rounds) {
      const EvalPair e = evaluate_both(cfg, plan, base, s, data.eval);
      metrics.write(eval_record("round", done, e.adapemu, e.adapfu));
    }
    if (done % cfg.checkpoint_every == 0 || done == rounds) {
      server_checkpoint(s).save(paths::round_checkpoint(run, done));
      prune_checkpoints(run, cfg.keep_checkpoints, rounds);
    }
    if (!opt.quiet) {
      double mean = 0;
      for (double l : r.client_losses) mean += l;
      mean /= static_cast<double>(std::max<std::size_t>(1, r.client_losses.size()));
      log << "round " << done << "/" << rounds << " client loss " << mean << " |w| " << r.adapter_norm << '\n';
    }
  };

  std::vector<ClientState<Real>> clients = make_clients<Real>(data.partition, cfg.seed);
  TrainingResult result = run_training(tc, base, plan, clients, data.public_data, server, hooks);
  summary.reports = std::move(result.reports);

  summary.final_eval = evaluate_both(cfg, plan, base, server, data.eval);
  metrics.write(eval_record("final", rounds, summary.final_eval.adapemu, summary.final_eval.adapfu));
  artifact_checkpoint(server, plan, Assembly::AdapEmu).save(paths::artifact(run, Assembly::AdapEmu));
  artifact_checkpoint(server, plan, Assembly::AdapFu).save(paths::artifact(run, Assembly::AdapFu));
  if (!opt.quiet) {
    log << "final AdapEmu loss " << summary.final_eval.adapemu.loss << " exact " << summary.final_eval.adapemu.exact_match
        << " | AdapFu loss " << summary.final_eval.adapfu.loss << " exact " << summary.final_eval.adapfu.exact_match
        << '\n';
  }
  return summary;
}

// ---------------------------------------------------------------- eval

inline EvalResult cmd_eval(const fs::path& run, Assembly assembly, const std::string& data_path, std::ostream& out) {
  const fs::path artifact = paths::artifact(run, assembly);
  if (!fs::exists(artifact)) throw FileError("missing artifact " + artifact.string() + " (has the run finished?)");
  if (!fs::exists(paths::base(run))) throw FileError("missing base model " + paths::base(run).string());
  const RunConfig cfg = read_run_config(run);
  const SplitPlan plan = cfg.plan();
  const TransformerStack<Real> base = get_stack<Real>(Checkpoint::load(paths::base(run)), "base");
  const Checkpoint ck = Checkpoint::load(artifact);
  if (ck.meta("assembly") != to_string(assembly)) throw IntegrityError(artifact.string() + ": wrong assembly");
  const LoraSet<Real> adapter = get_lora<Real>(ck, "adapter");
  std::optional<LoraSet<Real>> emulator;
  if (assembly == Assembly::AdapEmu) emulator = get_lora<Real>(ck, "emulator");
  const Dataset data = data_path.empty() ? make_run_data(cfg).eval : load_dataset(data_path);
  const auto model = assemble(plan, base, adapter, emulator ? &*emulator : nullptr, assembly);
  const EvalResult r = evaluate(model, data, cfg.model.max_seq_len);
  out << Json{{"assembly", to_string(assembly)}, {"loss", r.loss}, {"exact_match", r.exact_match},
              {"samples", r.samples}}
             .dump()
      << '\n';
  return r;
}

// ---------------------------------------------------------------- cost

inline std::vector<CostReport> cost_rows(const RunConfig& cfg, bool reference) {
  if (reference) {
    return reference_cost_table(32, LoraSpec{.rank = 8, .alpha = 16, .targets = {Projection::Query, Projection::Value}},
                                CostDims{4096, 11008});
  }
  const CostDims dims{cfg.model.d_model, cfg.model.d_ff};
  const SplitPlan plan = cfg.plan();
  return {cost_report(plan, cfg.lora, dims, cfg.federation.mode == Method::FedBiOT ? Method::FedBiOT : Method::FedOT)};
}

inline Json cost_json(const CostReport& r) {
  return {{"method", r.method},
          {"keep_ratio", r.keep_ratio},
          {"adapter_layers", r.adapter_layers},
          {"emulator_layers", r.emulator_layers},
          {"trainable_params", r.trainable_params},
          {"comm_down_bytes", r.comm_down_bytes},
          {"comm_up_bytes", r.comm_up_bytes},
          {"comm_total_mb", r.comm_total_mb},
          {"flop_per_token_forward", r.flop_per_token_forward},
          {"flop_per_token_backward", r.flop_per_token_backward}};
}

inline void cmd_cost(const RunConfig& cfg, bool reference, bool json, std::ostream& out) {
  if (!reference) cfg.validate();
  const auto rows = cost_rows(cfg, reference);
  if (json) {
    for (const auto& r : rows) out << cost_json(r).dump() << '\n';
    return;
  }
  out << std::left << std::setw(8) << "method" << std::right << std::setw(6) << "keep" << std::setw(9) << "adapter"
      << std::setw(10) << "emulator" << std::setw(12) << "trainable" << std::setw(12) << "down_MB" << std::setw(10)
      << "up_MB" << std::setw(10) << "MB/round" << std::setw(12) << "FLOP/tok" << '\n';
  out << std::fixed;
  for (const auto& r : rows) {
    out << std::left << std::setw(8) << r.method << std::right << std::setprecision(2) << std::setw(6) << r.keep_ratio
        << std::setw(9) << r.adapter_layers << std::setw(10) << r.emulator_layers << std::setw(12)
        << r.trainable_params << std::setw(12) << r.comm_down_bytes / kBytesPerMB << std::setw(10)
        << r.comm_up_bytes / kBytesPerMB << std::setw(10) << r.comm_total_mb << std::scientific
        << std::setw(12) << r.flop_per_token_total() << std::fixed << '\n';
  }
  out.unsetf(std::ios::floatfield);
}

// ---------------------------------------------------------------- plot

struct PlotFiles {
  fs::path tsv;
  fs::path svg;
};

namespace detail {

inline std::string svg_polyline(const std::vector<double>& xs, const std::vector<double>& ys, double x0, double x1,
                                double y0, double y1, const char* colour) {
  const double w = 560, h = 320, left = 60, top = 20;
  std::ostringstream os;
  os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double px = left + (x1 > x0 ? (xs[i] - x0) / (x1 - x0) : 0.5) * w;
    const double py = top + h - (y1 > y0 ? (ys[i] - y0) / (y1 - y0) : 0.5) * h;
    os << px << ',' << py << ' ';
  }
  os << "\"/>\n";
  return os.str();
}

}  // namespace detail

// Per-round columns (mean client loss, mean alignment loss, adapter norm) as
// TSV plus a line chart of the two losses.
inline PlotFiles cmd_plot(const fs::path& run, std::ostream& log) {
  const fs::path metrics_path = paths::metrics(run);
  if (!fs::exists(metrics_path)) throw FileError("no metrics at " + metrics_path.string());
  std::vector<double> round, client, align, norm;
  for (const auto& rec : read_jsonl(metrics_path)) {
    if (rec.value("type", "") != "round") continue;
    auto mean = [](const Json& xs) {
      double s = 0;
      for (const auto& x : xs) s += x.get<double>();
      return xs.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(xs.size());
    };
    round.push_back(static_cast<double>(rec.at("round").get<std::size_t>() + 1));
    client.push_back(mean(rec.at("client_losses")));
    align.push_back(mean(rec.at("align_losses")));
    norm.push_back(rec.at("adapter_norm").get<double>());
  }
  if (round.empty()) throw FileError(metrics_path.string() + " holds no round records");

  PlotFiles files{run / "losses.tsv", run / "losses.svg"};
  std::ostringstream tsv;
  tsv << "round\tclient_loss\talign_loss\tadapter_norm\n";
  for (std::size_t i = 0; i < round.size(); ++i)
    tsv << round[i] << '\t' << client[i] << '\t' << align[i] << '\t' << norm[i] << '\n';
  write_text_atomic(files.tsv, tsv.str());

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* series : {&client, &align})
    for (double v : *series)
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"380\">\n"
      << "<rect width=\"640\" height=\"380\" fill=\"white\"/>\n"
      << "<line x1=\"60\" y1=\"340\" x2=\"620\" y2=\"340\" stroke=\"black\"/>\n"
      << "<line x1=\"60\" y1=\"20\" x2=\"60\" y2=\"340\" stroke=\"black\"/>\n"
      << "<text x=\"340\" y=\"370\" font-size=\"12\" text-anchor=\"middle\">round</text>\n"
      << "<text x=\"5\" y=\"25\" font-size=\"11\">" << hi << "</text>\n"
      << "<text x=\"5\" y=\"340\" font-size=\"11\">" << lo << "</text>\n"
      << detail::svg_polyline(round, client, round.front(), round.back(), lo, hi, "steelblue");
  std::vector<double> ar, av;
  for (std::size_t i = 0; i < round.size(); ++i)
    if (std::isfinite(align[i])) ar.push_back(round[i]), av.push_back(align[i]);
  if (!ar.empty()) svg << detail::svg_polyline(ar, av, round.front(), round.back(), lo, hi, "darkorange");
  svg << "<text x=\"470\" y=\"35\" font-size=\"12\" fill=\"steelblue\">client loss</text>\n"
      << "<text x=\"470\" y=\"52\" font-size=\"12\" fill=\"darkorange\">alignment loss</text>\n"
      << "</svg>\n";
  write_text_atomic(files.svg, svg.str());
  log << "wrote " << files.tsv.string() << " and " << files.svg.string() << '\n';
  return files;
}

}  // namespace fedbiot::cli
