#include "rfer/run.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>

#include "rfer/errors.hpp"
#include "rfer/model.hpp"

namespace rfer {
namespace {

using nlohmann::json;

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  out << line << '\n';
  if (!out) throw DataError("cannot write " + path.string());
}

}  // namespace

SynthSpec synth_spec_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("synthetic spec must be a JSON object");
  static const std::set<std::string> known{"n_per_class",   "image_size",     "image_height",
                                           "image_width",   "noise_rate",     "unlabeled_fraction",
                                           "seed",          "pixel_noise",    "test_per_class"};
  for (const auto& item : j.items())
    if (!known.contains(item.key())) throw ConfigError("unknown synthetic spec key '" + item.key() + "'");
  SynthSpec s;
  try {
    if (j.contains("n_per_class")) s.n_per_class = j.at("n_per_class").get<std::size_t>();
    if (j.contains("image_size")) {
      const auto& size = j.at("image_size");
      if (!size.is_array() || size.size() != 2) throw ConfigError("image_size must be [H, W]");
      s.image_height = size[0].get<std::size_t>();
      s.image_width = size[1].get<std::size_t>();
    }
    if (j.contains("image_height")) s.image_height = j.at("image_height").get<std::size_t>();
    if (j.contains("image_width")) s.image_width = j.at("image_width").get<std::size_t>();
    if (j.contains("noise_rate")) s.noise_rate = j.at("noise_rate").get<double>();
    if (j.contains("unlabeled_fraction")) s.unlabeled_fraction = j.at("unlabeled_fraction").get<double>();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("pixel_noise")) s.pixel_noise = j.at("pixel_noise").get<double>();
    if (j.contains("test_per_class")) s.test_per_class = j.at("test_per_class").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  try {
    s.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  return s;
}

json synth_spec_to_json(const SynthSpec& s) {
  return {{"n_per_class", s.n_per_class},
          {"image_size", {s.image_height, s.image_width}},
          {"noise_rate", s.noise_rate},
          {"unlabeled_fraction", s.unlabeled_fraction},
          {"seed", s.seed},
          {"pixel_noise", s.pixel_noise},
          {"test_per_class", s.test_per_class}};
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("spec file not found: " + path.string());
  return synth_spec_from_json(read_json_file(path));
}

// ---------------------------------------------------------------------------

RunDirectory::RunDirectory(std::filesystem::path path) : path_(std::move(path)) {
  std::error_code ec;
  std::filesystem::create_directories(path_ / "checkpoints", ec);
  if (ec) throw DataError("cannot create run directory " + path_.string() + ": " + ec.message());
  write_text(epoch_log_path(), "");
  write_text(timing_log_path(), "");
}

void RunDirectory::write_config(const TrainConfig& config) const {
  write_text(config_path(), config.to_json().dump(2) + "\n");
}

void RunDirectory::append_epoch(const EpochReport& report) const {
  append_line(epoch_log_path(), report.to_json().dump());
  append_line(timing_log_path(),
              json{{"epoch", report.epoch}, {"wall_seconds", report.wall_seconds}}.dump());
}

void RunDirectory::write_metrics(const json& metrics) const {
  write_text(metrics_path(), metrics.dump(2) + "\n");
}

RunSummary run_training(const TrainConfig& config, const std::filesystem::path& data_dir,
                        const std::filesystem::path& run_dir, const std::string& validation_split) {
  config.validate();
  const Dataset train_data = load_dataset(data_dir / "train.csv");
  std::optional<Dataset> validation;
  const auto val_path = data_dir / (validation_split + ".csv");
  if (!validation_split.empty() && std::filesystem::exists(val_path)) {
    validation = load_dataset(val_path);
    if (validation->manifest.labeled_indices().empty()) validation.reset();
  }

  RunDirectory run(run_dir);
  run.write_config(config);
  const std::string hash = config.hash();

  RunSummary summary;
  summary.result = train(config, train_data, validation ? &*validation : nullptr,
                         [&](const EpochReport& r, const DualHeadModel&) { run.append_epoch(r); });
  auto& result = summary.result;

  const int last_epoch = result.reports.empty() ? 0 : result.reports.back().epoch;
  save_checkpoint(run.final_checkpoint_path(), *result.model, {last_epoch, config.seed, hash, {}});
  DualHeadModel best(config.model, 0);
  restore_parameters(best, result.best_parameters);
  const int best_epoch = result.best_epoch >= 0 ? result.best_epoch : last_epoch;
  save_checkpoint(run.best_checkpoint_path(), best,
                  {best_epoch, config.seed, hash, {{"selection", "best_val_macro_f1"}}});

  json metrics = {{"trainer", trainer_name(config.trainer)},
                  {"epochs", result.reports.size()},
                  {"config_hash", hash}};
  if (validation) {
    summary.final_metrics = evaluate(*result.model, *validation);
    metrics["split"] = validation_split;
    metrics["final"] = summary.final_metrics->to_json();
    metrics["best"] = evaluate(best, *validation).to_json();
    metrics["best"]["epoch"] = best_epoch;
  } else {
    metrics["split"] = nullptr;
    metrics["final"] = nullptr;
  }
  if (!result.reports.empty()) metrics["final_train_accuracy"] = result.reports.back().train_accuracy;
  run.write_metrics(metrics);
  return summary;
}

std::vector<std::pair<int, ClassVector>> read_threshold_trace(const std::filesystem::path& run_dir) {
  const auto log = run_dir / "epochs.jsonl";
  std::ifstream in(log);
  if (!in) throw DataError("epoch log not found: " + log.string());
  std::vector<std::pair<int, ClassVector>> trace;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      trace.emplace_back(j.at("epoch").get<int>(), j.at("thresholds").get<ClassVector>());
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad epoch log entry: ") + e.what(), line_no);
    }
  }
  return trace;
}

Image render_threshold_plot(const std::vector<std::pair<int, ClassVector>>& trace,
                            std::size_t height, std::size_t width) {
  static constexpr std::array<std::array<double, 3>, 8> kColors{{{0.12, 0.47, 0.71},
                                                                  {1.00, 0.50, 0.05},
                                                                  {0.17, 0.63, 0.17},
                                                                  {0.84, 0.15, 0.16},
                                                                  {0.58, 0.40, 0.74},
                                                                  {0.55, 0.34, 0.29},
                                                                  {0.89, 0.47, 0.76},
                                                                  {0.50, 0.50, 0.50}}};
  Image img(height, width, 1.0);
  const std::size_t margin = 10;
  if (height <= 2 * margin || width <= 2 * margin) throw ContractError("plot is too small");
  const double plot_h = static_cast<double>(height - 2 * margin - 1);
  const double plot_w = static_cast<double>(width - 2 * margin - 1);
  for (std::size_t x = margin; x < width - margin; ++x)
    for (std::size_t c = 0; c < 3; ++c) img.at(height - margin - 1, x, c) = 0.0;
  for (std::size_t y = margin; y < height - margin; ++y)
    for (std::size_t c = 0; c < 3; ++c) img.at(y, margin, c) = 0.0;
  if (trace.empty()) return img;

  const auto to_xy = [&](std::size_t i, double tau) {
    const double fx = trace.size() == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(trace.size() - 1);
    const double x = static_cast<double>(margin) + fx * plot_w;
    const double y = static_cast<double>(height - margin - 1) - std::clamp(tau, 0.0, 1.0) * plot_h;
    return std::pair{x, y};
  };
  for (std::size_t k = 0; k < 8; ++k) {
    for (std::size_t i = 0; i < trace.size(); ++i) {
      const auto [x1, y1] = to_xy(i, trace[i].second[k]);
      const auto [x0, y0] = i == 0 ? std::pair{x1, y1} : to_xy(i - 1, trace[i - 1].second[k]);
      const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
      for (int s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        const auto px = static_cast<std::size_t>(std::lround(x0 + t * (x1 - x0)));
        const auto py = static_cast<std::size_t>(std::lround(y0 + t * (y1 - y0)));
        for (std::size_t c = 0; c < 3; ++c) img.at(py, px, c) = kColors[k][c];
      }
    }
  }
  return img;
}

}  // namespace rfer
