#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>

#include <CLI11.hpp>

#include "rfer/errors.hpp"
#include "rfer/image.hpp"
#include "rfer/run.hpp"

namespace rfer {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

int cmd_synth(const fs::path& spec_path, const fs::path& out_dir, std::ostream& out) {
  const SynthSpec spec = load_synth_spec(spec_path);
  const auto data = generate_synthetic(spec);
  write_synthetic(data, out_dir);
  const auto& c = data.train.manifest.counts;
  out << json{{"total", c.total},
              {"labeled", c.labeled},
              {"unlabeled", c.unlabeled},
              {"missing", c.missing},
              {"test", data.test.manifest.counts.total}}
             .dump()
      << '\n';
  return 0;
}

int cmd_train(const fs::path& config_path, const fs::path& data_dir, const fs::path& run_dir,
              const std::string& val_split, std::ostream& out) {
  TrainConfig config = load_config(config_path);
  if (const char* seed = std::getenv("RFER_SEED"); seed && *seed) {
    try {
      std::size_t used = 0;
      config.seed = std::stoull(seed, &used);
      if (seed[used] != '\0') throw std::invalid_argument(seed);
    } catch (const std::logic_error&) {
      throw ConfigError(std::string("RFER_SEED is not an unsigned integer: ") + seed);
    }
  }
  const auto summary = run_training(config, data_dir, run_dir, val_split);
  json line = {{"run", run_dir.string()}, {"epochs", summary.result.reports.size()}};
  if (summary.final_metrics) line["val_macro_f1"] = summary.final_metrics->macro_f1;
  out << line.dump() << '\n';
  return 0;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, const std::string& split,
             const fs::path& out_path, std::ostream& out) {
  const auto loaded = load_checkpoint(checkpoint);
  const Dataset data = load_dataset(data_dir / (split + ".csv"));
  auto report = evaluate(*loaded.model, data).to_json();
  report["split"] = split;
  out << report.dump() << '\n';
  if (!out_path.empty()) {
    std::ofstream f(out_path, std::ios::binary | std::ios::trunc);
    f << report.dump(2) << '\n';
    if (!f) throw DataError("cannot write " + out_path.string());
  }
  return 0;
}

int cmd_thresholds(const fs::path& run_dir, const fs::path& plot, std::ostream& out) {
  const auto trace = read_threshold_trace(run_dir);
  for (const auto& [epoch, tau] : trace) out << json{{"epoch", epoch}, {"tau", tau}}.dump() << '\n';
  if (!plot.empty()) write_png(plot, render_threshold_plot(trace));
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Training under label noise and partial labels"};
  app.require_subcommand(1);

  std::string spec, synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--spec", spec, "Synthetic spec (JSON)")->required();
  synth->add_option("--out", synth_out, "Output directory")->required();

  std::string config, data, run_out, val_split = "test";
  auto* train_cmd = app.add_subcommand("train", "Train and write a run directory");
  train_cmd->add_option("--config", config, "Training config (JSON)")->required();
  train_cmd->add_option("--data", data, "Directory holding train.csv")->required();
  train_cmd->add_option("--out", run_out, "Run directory")->required();
  train_cmd->add_option("--val-split", val_split, "Validation manifest name, used when present");

  std::string checkpoint, eval_data, split = "test", eval_out;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a manifest");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "Data directory")->required();
  eval->add_option("--split", split, "Manifest name inside the data directory");
  eval->add_option("--out", eval_out, "Write the metrics JSON here as well");

  std::string run_dir, plot;
  auto* thresholds = app.add_subcommand("thresholds", "Print logged per-class thresholds");
  thresholds->add_option("--run", run_dir, "Run directory")->required();
  thresholds->add_option("--plot", plot, "Also write a PNG of the trajectories");
  thresholds->add_flag("--trace", "Accepted for compatibility; tracing is the default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*synth) return cmd_synth(spec, synth_out, out);
    if (*train_cmd) return cmd_train(config, data, run_out, val_split, out);
    if (*eval) return cmd_eval(checkpoint, eval_data, split, eval_out, out);
    if (*thresholds) return cmd_thresholds(run_dir, plot, out);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    err << "invalid input: " << e.what() << '\n';
    return 2;
  } catch (const ContractError& e) {
    err << "incompatible input: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace rfer
