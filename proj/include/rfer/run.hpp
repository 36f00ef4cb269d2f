#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rfer/config.hpp"
#include "rfer/data.hpp"
#include "rfer/thresholds.hpp"
#include "rfer/trainers.hpp"

namespace rfer {

// Strict: unknown keys throw ConfigError. "image_size": [H, W] or
// image_height / image_width.
SynthSpec synth_spec_from_json(const nlohmann::json& j);
nlohmann::json synth_spec_to_json(const SynthSpec& spec);
SynthSpec load_synth_spec(const std::filesystem::path& path);

// Layout:
//   config.json            effective configuration, defaults materialized
//   epochs.jsonl           one EpochReport per line
//   timing.jsonl           {"epoch", "wall_seconds"} per line
//   checkpoints/final.ckpt
//   checkpoints/best.ckpt  best validation macro-F1 (final when unvalidated)
//   metrics.json
class RunDirectory {
 public:
  // Creates the directory tree and truncates both logs.
  explicit RunDirectory(std::filesystem::path path);

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path config_path() const { return path_ / "config.json"; }
  std::filesystem::path epoch_log_path() const { return path_ / "epochs.jsonl"; }
  std::filesystem::path timing_log_path() const { return path_ / "timing.jsonl"; }
  std::filesystem::path final_checkpoint_path() const { return path_ / "checkpoints" / "final.ckpt"; }
  std::filesystem::path best_checkpoint_path() const { return path_ / "checkpoints" / "best.ckpt"; }
  std::filesystem::path metrics_path() const { return path_ / "metrics.json"; }

  void write_config(const TrainConfig& config) const;
  void append_epoch(const EpochReport& report) const;
  void write_metrics(const nlohmann::json& metrics) const;

 private:
  std::filesystem::path path_;
};

struct RunSummary {
  TrainResult result;
  std::optional<MetricsReport> final_metrics;  // on the validation split
};

// Loads <data_dir>/train.csv (and <data_dir>/<validation_split>.csv when it
// exists), trains, and fills the run directory.
RunSummary run_training(const TrainConfig& config, const std::filesystem::path& data_dir,
                        const std::filesystem::path& run_dir,
                        const std::string& validation_split = "test");

// Threshold vectors exactly as logged, one per epoch line. Throws DataError
// when the log is missing.
std::vector<std::pair<int, ClassVector>> read_threshold_trace(const std::filesystem::path& run_dir);

// Line plot of the eight trajectories, one colour per class.
Image render_threshold_plot(const std::vector<std::pair<int, ClassVector>>& trace,
                            std::size_t height = 240, std::size_t width = 400);

// Exit codes: 0 success, 1 I/O failure, 2 usage or configuration error,
// 3 numerical failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rfer
