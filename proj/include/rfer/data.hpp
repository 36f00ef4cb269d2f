#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "rfer/image.hpp"
#include "rfer/rng.hpp"

namespace rfer {

inline constexpr int kNumClasses = 8;
inline constexpr int kUnlabeled = -1;

struct SampleRecord {
  std::string path;  // relative to the manifest's directory
  int label = kUnlabeled;
  bool present = true;
};

struct ManifestCounts {
  std::size_t total = 0;
  std::size_t labeled = 0;
  std::size_t unlabeled = 0;
  std::size_t missing = 0;
  bool operator==(const ManifestCounts&) const = default;
};

// Rows referencing files that do not exist are kept (present = false) and
// counted as missing regardless of their label; they are never handed to a
// trainer.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<SampleRecord> records;
  ManifestCounts counts;

  std::vector<std::size_t> labeled_indices() const;
  std::vector<std::size_t> unlabeled_indices() const;
};

ManifestCounts count_records(const std::vector<SampleRecord>& records);

using ExistsFn = std::function<bool(const std::string& relative_path)>;

// Parses `path,label` CSV. Errors: ParseError (with line number) for a
// malformed row, ValidationError for a label outside {-1, 0..7}.
DatasetManifest parse_manifest(std::istream& in, const ExistsFn& exists);
DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path, const ExistsFn& exists);

void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records);

// path,true_label
struct TruthRow {
  std::string path;
  int true_label = 0;
};
std::vector<TruthRow> load_truth_table(const std::filesystem::path& path);
void write_truth_table(const std::filesystem::path& path, const std::vector<TruthRow>& rows);

// A manifest with its decoded images. images[i] belongs to records[i] and is
// empty for records that are not present.
struct Dataset {
  DatasetManifest manifest;
  std::vector<Image> images;
};

Dataset load_dataset(const std::filesystem::path& manifest_path);

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthSpec {
  std::size_t n_per_class = 100;
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  double noise_rate = 0.0;          // symmetric label flips among labeled rows
  double unlabeled_fraction = 0.0;  // rows whose label is replaced by -1
  std::uint64_t seed = 0;
  double pixel_noise = 0.06;        // std-dev of additive Gaussian pixel noise
  std::size_t test_per_class = 0;   // clean held-out split, 0 = none

  void validate() const;  // throws ValidationError
};

struct SyntheticDataset {
  Dataset train;
  std::vector<int> train_truth;  // clean label per train record
  Dataset test;                  // labels are clean; empty when test_per_class = 0
};

SyntheticDataset generate_synthetic(const SynthSpec& spec);

// Renders one sample of class `label` from a per-sample seed.
Image render_pattern(int label, std::size_t height, std::size_t width, double pixel_noise,
                     std::uint64_t sample_seed);

// Writes images/ + train.csv + train_truth.csv (+ test.csv, test_truth.csv).
void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Batch streaming

struct StepBatch {
  std::vector<std::size_t> labeled;    // record indices
  std::vector<std::size_t> unlabeled;  // record indices
};

// Labeled and unlabeled streams are independent infinite sequences of
// reshuffled permutations; each wraps around on exhaustion. The sequence is
// a pure function of (pools, batch_size, mu, seed).
class BatchStream {
 public:
  BatchStream(std::vector<std::size_t> labeled_pool, std::vector<std::size_t> unlabeled_pool,
              std::size_t batch_size, double mu, std::uint64_t seed);

  std::size_t batch_size() const noexcept { return batch_size_; }
  std::size_t unlabeled_batch_size() const noexcept { return unlabeled_batch_size_; }
  // ceil(labeled pool / batch_size)
  std::size_t steps_per_epoch() const noexcept;

  StepBatch next();

 private:
  static void draw(const std::vector<std::size_t>& pool, std::vector<std::size_t>& order,
                   std::size_t& cursor, Rng& rng, std::size_t count,
                   std::vector<std::size_t>& out);

  std::size_t batch_size_;
  std::size_t unlabeled_batch_size_;
  std::vector<std::size_t> labeled_pool_, unlabeled_pool_;
  std::vector<std::size_t> labeled_order_, unlabeled_order_;
  std::size_t labeled_cursor_ = 0, unlabeled_cursor_ = 0;
  Rng labeled_rng_, unlabeled_rng_;
};

// Errors: ConfigError when mu > 0 and the manifest has no unlabeled rows,
// or batch_size == 0, or mu < 0.
BatchStream split_batches(const DatasetManifest& manifest, std::size_t batch_size, double mu,
                          std::uint64_t seed);

}  // namespace rfer
