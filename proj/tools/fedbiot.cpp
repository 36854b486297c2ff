#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedbiot/cli/commands.hpp"

namespace {

using namespace fedbiot;

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_file, "Configuration file (key = value lines)");
  cmd->add_option("--set", o.overrides, "Override a configuration key, e.g. --set federation.rounds=50")
      ->allow_extra_args(false);
}

// Defaults, then the file, then --set, then dedicated flags.
RunConfig resolve(const CommonOptions& o, const std::vector<std::string>& flag_overrides) {
  RunConfig cfg = load_config(o.config_file, o.overrides);
  for (const auto& f : flag_overrides) apply_override(cfg, f);
  return cfg;
}

template <class V>
void flag_override(std::vector<std::string>& out, const CLI::Option* opt, const std::string& key, const V& value) {
  if (opt->count() > 0) out.push_back(key + "=" + CLI::detail::to_string(value));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated fine-tuning with an offsite adapter/emulator split"};
  app.require_subcommand(1);

  CommonOptions extract_opts;
  auto* extract = app.add_subcommand("extract", "Print the adapter / emulator layer split");
  add_common(extract, extract_opts);
  std::size_t layers = 0, adapter_size = 0;
  double keep_ratio = 0, beta = 0;
  std::string mode;
  auto* o_layers = extract->add_option("--layers", layers, "Number of decoder layers");
  auto* o_adapter = extract->add_option("--adapter-size", adapter_size, "Output-side adapter layers");
  auto* o_keep = extract->add_option("--keep-ratio", keep_ratio, "Fraction of non-adapter layers kept");
  auto* o_beta = extract->add_option("--beta", beta, "Layer dropout rate (keep ratio = 1 - beta)");
  auto* o_mode = extract->add_option("--mode", mode, "FedBiOT, FedOT or OffsiteSingle");
  o_keep->excludes(o_beta);

  CommonOptions prealign_opts;
  auto* prealign = app.add_subcommand("prealign", "Pre-align the emulator and write a checkpoint");
  add_common(prealign, prealign_opts);

  CommonOptions train_opts;
  auto* train = app.add_subcommand("train", "Run (or resume) federated training");
  add_common(train, train_opts);
  bool fresh = false;
  std::string out_dir;
  auto* o_out = train->add_option("-o,--output", out_dir, "Run directory");
  train->add_flag("--fresh", fresh, "Discard an existing run directory instead of resuming");

  auto* eval = app.add_subcommand("eval", "Evaluate a finished run's AdapEmu or AdapFu model");
  std::string eval_run, eval_assembly = "AdapFu", eval_data;
  eval->add_option("run", eval_run, "Run directory")->required();
  eval->add_option("--assembly", eval_assembly, "AdapEmu or AdapFu");
  eval->add_option("--data", eval_data, "Dataset file; defaults to the run's held-out split");

  CommonOptions cost_opts;
  auto* cost = app.add_subcommand("cost", "Communication, trainable-parameter and FLOP accounting");
  add_common(cost, cost_opts);
  bool reference = false, json = false;
  cost->add_flag("--reference", reference, "Full-scale table: 32 layers, width 4096, rank 8 on q and v");
  cost->add_flag("--json", json, "One JSON object per row");

  auto* plot = app.add_subcommand("plot", "Write per-round loss columns and an SVG chart");
  std::string plot_run;
  plot->add_option("run", plot_run, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (extract->parsed()) {
      std::vector<std::string> flags;
      flag_override(flags, o_layers, "model.n_layers", layers);
      flag_override(flags, o_adapter, "split.adapter_size", adapter_size);
      flag_override(flags, o_keep, "split.keep_ratio", keep_ratio);
      if (o_beta->count() > 0) flags.push_back("split.keep_ratio=" + detail::format_double(1.0 - beta));
      flag_override(flags, o_mode, "federation.mode", mode);
      cli::cmd_extract(resolve(extract_opts, flags), std::cout);
    } else if (prealign->parsed()) {
      cli::cmd_prealign(resolve(prealign_opts, {}), std::cout);
    } else if (train->parsed()) {
      std::vector<std::string> flags;
      flag_override(flags, o_out, "run.output_dir", out_dir);
      cli::cmd_train(resolve(train_opts, flags), {.fresh = fresh}, std::cout);
    } else if (eval->parsed()) {
      cli::cmd_eval(resolve_output_dir(eval_run), parse_assembly(eval_assembly), eval_data, std::cout);
    } else if (cost->parsed()) {
      cli::cmd_cost(resolve(cost_opts, {}), reference, json, std::cout);
    } else if (plot->parsed()) {
      cli::cmd_plot(resolve_output_dir(plot_run), std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const PartitionError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
