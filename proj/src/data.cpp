#include "rfer/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rfer/errors.hpp"

namespace rfer {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

// Splits "path,value" at the last comma so paths may contain commas.
bool split_row(std::string_view line, std::string_view& path, std::string_view& value) {
  const auto comma = line.rfind(',');
  if (comma == std::string_view::npos) return false;
  path = trim(line.substr(0, comma));
  value = trim(line.substr(comma + 1));
  return !path.empty() && !value.empty();
}

bool parse_int(std::string_view s, int& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

std::vector<std::size_t> DatasetManifest::labeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].present && records[i].label != kUnlabeled) out.push_back(i);
  return out;
}

std::vector<std::size_t> DatasetManifest::unlabeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].present && records[i].label == kUnlabeled) out.push_back(i);
  return out;
}

ManifestCounts count_records(const std::vector<SampleRecord>& records) {
  ManifestCounts c;
  c.total = records.size();
  for (const auto& r : records) {
    if (!r.present)
      ++c.missing;
    else if (r.label == kUnlabeled)
      ++c.unlabeled;
    else
      ++c.labeled;
  }
  return c;
}

DatasetManifest parse_manifest(std::istream& in, const ExistsFn& exists) {
  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto row = trim(line);
    if (row.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (row != "path,label") throw ParseError("expected header 'path,label'", line_no);
      continue;
    }
    std::string_view path, value;
    int label = 0;
    if (!split_row(row, path, value) || !parse_int(value, label))
      throw ParseError("malformed row '" + std::string(row) + "'", line_no);
    if (label < kUnlabeled || label >= kNumClasses)
      throw ValidationError("line " + std::to_string(line_no) + ": label " +
                            std::to_string(label) + " outside {-1, 0..7}");
    SampleRecord rec{std::string(path), label, true};
    rec.present = exists(rec.path);
    m.records.push_back(std::move(rec));
  }
  m.counts = count_records(m.records);
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path, const ExistsFn& exists) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  auto m = parse_manifest(in, exists);
  m.root = path.parent_path();
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const auto root = path.parent_path();
  return load_manifest(path, [&root](const std::string& rel) {
    std::error_code ec;
    return std::filesystem::is_regular_file(root / rel, ec);
  });
}

void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records) {
  auto out = open_for_write(path);
  out << "path,label\n";
  for (const auto& r : records) out << r.path << ',' << r.label << '\n';
}

std::vector<TruthRow> load_truth_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open truth table " + path.string());
  std::vector<TruthRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto row = trim(line);
    if (row.empty()) continue;
    if (line_no == 1) {
      if (row != "path,true_label") throw ParseError("expected header 'path,true_label'", 1);
      continue;
    }
    std::string_view p, v;
    int label = 0;
    if (!split_row(row, p, v) || !parse_int(v, label))
      throw ParseError("malformed row '" + std::string(row) + "'", line_no);
    rows.push_back({std::string(p), label});
  }
  return rows;
}

void write_truth_table(const std::filesystem::path& path, const std::vector<TruthRow>& rows) {
  auto out = open_for_write(path);
  out << "path,true_label\n";
  for (const auto& r : rows) out << r.path << ',' << r.true_label << '\n';
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  Dataset d;
  d.manifest = load_manifest(manifest_path);
  d.images.resize(d.manifest.records.size());
  for (std::size_t i = 0; i < d.manifest.records.size(); ++i) {
    const auto& r = d.manifest.records[i];
    if (r.present) d.images[i] = read_image(d.manifest.root / r.path);
  }
  return d;
}

// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0))
    throw ValidationError("noise_rate must be in [0, 1]");
  if (!(unlabeled_fraction >= 0.0 && unlabeled_fraction <= 1.0))
    throw ValidationError("unlabeled_fraction must be in [0, 1]");
  if (image_height < 8 || image_width < 8)
    throw ValidationError("image_size must be at least 8x8");
  if (!(pixel_noise >= 0.0)) throw ValidationError("pixel_noise must be non-negative");
}

Image render_pattern(int label, std::size_t height, std::size_t width, double pixel_noise,
                     std::uint64_t sample_seed) {
  Rng rng(sample_seed);
  constexpr double kTwoPi = 6.283185307179586;
  const double cy = 0.5 + rng.uniform(-0.08, 0.08);
  const double cx = 0.5 + rng.uniform(-0.08, 0.08);
  const double freq = rng.uniform(3.0, 4.0);
  const double phase = rng.uniform(0.0, kTwoPi);
  const double radius = rng.uniform(0.18, 0.32);
  const double line_width = rng.uniform(0.05, 0.09);

  std::array<double, 3> bg{}, fg{};
  const double base = rng.uniform(0.15, 0.35);
  const double contrast = rng.uniform(0.45, 0.65);
  for (std::size_t c = 0; c < 3; ++c) {
    const double tint = rng.uniform(-0.08, 0.08);
    bg[c] = base + tint;
    fg[c] = base + tint + contrast;
  }

  Image img(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(height) - cy;
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(width) - cx;
      const double r = std::sqrt(u * u + v * v);
      double s = 0.0;
      switch (label) {
        case 0:  // horizontal stripes
          s = 0.5 + 0.5 * std::sin(kTwoPi * freq * v + phase);
          break;
        case 1:  // vertical stripes
          s = 0.5 + 0.5 * std::sin(kTwoPi * freq * u + phase);
          break;
        case 2:  // checkerboard
          s = 0.5 + 0.5 * std::sin(kTwoPi * 0.5 * freq * u + phase) *
                        std::sin(kTwoPi * 0.5 * freq * v + phase);
          break;
        case 3:  // concentric rings
          s = 0.5 + 0.5 * std::cos(kTwoPi * freq * r + phase);
          break;
        case 4:  // filled disk
          s = 1.0 / (1.0 + std::exp((r - radius) / 0.02));
          break;
        case 5: {  // diagonal cross
          const double d = std::min(std::abs(u - v), std::abs(u + v)) / std::sqrt(2.0);
          s = std::exp(-(d * d) / (line_width * line_width));
          break;
        }
        case 6: {  // plus
          const double d = std::min(std::abs(u), std::abs(v));
          s = std::exp(-(d * d) / (line_width * line_width));
          break;
        }
        default: {  // square frame
          const double d = std::abs(std::max(std::abs(u), std::abs(v)) - radius);
          s = std::exp(-(d * d) / (line_width * line_width));
          break;
        }
      }
      for (std::size_t c = 0; c < 3; ++c)
        img.at(y, x, c) = bg[c] + (fg[c] - bg[c]) * s + pixel_noise * rng.normal();
    }
  }
  return quantize8(img);
}

namespace {

std::string sample_path(const char* split, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "images/%s_%06zu.png", split, i);
  return buf;
}

Dataset render_split(const SynthSpec& spec, const char* split, std::uint64_t split_tag,
                     std::size_t per_class, std::vector<int>& truth) {
  Dataset d;
  const std::size_t total = per_class * kNumClasses;
  truth.resize(total);
  d.images.resize(total);
  d.manifest.records.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    const int label = static_cast<int>(i % kNumClasses);
    truth[i] = label;
    d.images[i] = render_pattern(label, spec.image_height, spec.image_width, spec.pixel_noise,
                                 derive_seed({spec.seed, split_tag, i}));
    d.manifest.records[i] = {sample_path(split, i), label, true};
  }
  return d;
}

}  // namespace

SyntheticDataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  SyntheticDataset out;
  out.train = render_split(spec, "train", 1, spec.n_per_class, out.train_truth);
  auto& records = out.train.manifest.records;
  const std::size_t total = records.size();

  // Per-class shuffled lists interleaved round-robin, so any prefix is class-balanced.
  Rng rng(derive_seed({spec.seed, 2}));
  std::vector<std::vector<std::size_t>> by_class(kNumClasses);
  for (std::size_t i = 0; i < total; ++i) by_class[out.train_truth[i]].push_back(i);
  for (auto& v : by_class) rng.shuffle(v.begin(), v.end());
  std::vector<std::size_t> order;
  order.reserve(total);
  for (std::size_t j = 0; j < spec.n_per_class; ++j)
    for (auto& v : by_class) order.push_back(v[j]);

  const auto n_unlabeled =
      static_cast<std::size_t>(std::llround(spec.unlabeled_fraction * static_cast<double>(total)));
  for (std::size_t j = 0; j < n_unlabeled; ++j) records[order[j]].label = kUnlabeled;

  std::vector<std::size_t> labeled(order.begin() + static_cast<std::ptrdiff_t>(n_unlabeled),
                                   order.end());
  std::sort(labeled.begin(), labeled.end());
  rng.shuffle(labeled.begin(), labeled.end());
  const auto n_flips =
      static_cast<std::size_t>(std::llround(spec.noise_rate * static_cast<double>(labeled.size())));
  for (std::size_t j = 0; j < n_flips; ++j) {
    auto& rec = records[labeled[j]];
    rec.label = (rec.label + 1 + static_cast<int>(rng.below(kNumClasses - 1))) % kNumClasses;
  }
  out.train.manifest.counts = count_records(records);

  if (spec.test_per_class > 0) {
    std::vector<int> test_truth;
    out.test = render_split(spec, "test", 3, spec.test_per_class, test_truth);
    out.test.manifest.counts = count_records(out.test.manifest.records);
  }
  return out;
}

void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw DataError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  auto write_split = [&](const Dataset& d, const std::vector<int>& truth, const char* name) {
    std::vector<TruthRow> rows;
    for (std::size_t i = 0; i < d.manifest.records.size(); ++i) {
      write_png(out_dir / d.manifest.records[i].path, d.images[i]);
      rows.push_back({d.manifest.records[i].path, truth[i]});
    }
    write_manifest(out_dir / (std::string(name) + ".csv"), d.manifest.records);
    write_truth_table(out_dir / (std::string(name) + "_truth.csv"), rows);
  };
  write_split(data.train, data.train_truth, "train");
  if (!data.test.manifest.records.empty()) {
    std::vector<int> truth;
    for (const auto& r : data.test.manifest.records) truth.push_back(r.label);
    write_split(data.test, truth, "test");
  }
}

// ---------------------------------------------------------------------------

BatchStream::BatchStream(std::vector<std::size_t> labeled_pool,
                         std::vector<std::size_t> unlabeled_pool, std::size_t batch_size,
                         double mu, std::uint64_t seed)
    : batch_size_(batch_size),
      unlabeled_batch_size_(static_cast<std::size_t>(std::llround(mu * static_cast<double>(batch_size)))),
      labeled_pool_(std::move(labeled_pool)),
      unlabeled_pool_(std::move(unlabeled_pool)),
      labeled_rng_(derive_seed({seed, 0x1ab})),
      unlabeled_rng_(derive_seed({seed, 0x2ab})) {
  if (batch_size_ == 0) throw ConfigError("batch_size must be at least 1");
  if (!(mu >= 0.0)) throw ConfigError("mu must be non-negative");
  if (labeled_pool_.empty()) throw ConfigError("no labeled samples to stream");
  if (unlabeled_batch_size_ > 0 && unlabeled_pool_.empty())
    throw ConfigError("mu > 0 but the manifest has no unlabeled samples");
}

std::size_t BatchStream::steps_per_epoch() const noexcept {
  return (labeled_pool_.size() + batch_size_ - 1) / batch_size_;
}

void BatchStream::draw(const std::vector<std::size_t>& pool, std::vector<std::size_t>& order,
                       std::size_t& cursor, Rng& rng, std::size_t count,
                       std::vector<std::size_t>& out) {
  out.clear();
  out.reserve(count);
  while (out.size() < count) {
    if (cursor == order.size()) {
      order = pool;
      rng.shuffle(order.begin(), order.end());
      cursor = 0;
    }
    out.push_back(order[cursor++]);
  }
}

StepBatch BatchStream::next() {
  StepBatch b;
  draw(labeled_pool_, labeled_order_, labeled_cursor_, labeled_rng_, batch_size_, b.labeled);
  if (unlabeled_batch_size_ > 0)
    draw(unlabeled_pool_, unlabeled_order_, unlabeled_cursor_, unlabeled_rng_,
         unlabeled_batch_size_, b.unlabeled);
  return b;
}

BatchStream split_batches(const DatasetManifest& manifest, std::size_t batch_size, double mu,
                          std::uint64_t seed) {
  if (mu > 0.0 && manifest.unlabeled_indices().empty())
    throw ConfigError("mu = " + std::to_string(mu) +
                      " requires unlabeled samples but the manifest has none");
  return BatchStream(manifest.labeled_indices(), manifest.unlabeled_indices(), batch_size, mu, seed);
}

}  // namespace rfer
