// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "oracles.hpp"
#include "rfer/data.hpp"
#include "rfer/errors.hpp"
#include "rfer/losses.hpp"
#include "rfer/metrics.hpp"
#include "rfer/model.hpp"
#include "rfer/run.hpp"
#include "rfer/thresholds.hpp"
#include "rfer/trainers.hpp"

using namespace rfer;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness through the reference backbone

Tensor random_images(std::size_t n, std::size_t size, Rng& rng) {
  Tensor t({n, size, size, 3});
  for (auto& v : t.values()) v = rng.uniform();
  return t;
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  ModelConfig mc;  // default reference backbone, 32x32
  mc.dropout = 0.5;
  DualHeadModel model(mc, 123);
  Rng rng(7);
  const std::size_t n = 3;
  const Tensor x_weak = random_images(n, 32, rng);
  const Tensor x_strong = random_images(n, 32, rng);
  const std::vector<int> labels{1, 4, 6};
  const std::vector<double> open(8, 0.0), closed(8, 1.0);
  constexpr std::uint64_t kDrop = 99;
  auto params = model.parameters();

  // Weak-view predictions act as constants in the unlabeled losses.
  const auto weak_const = model.forward(x_weak, Mode::eval);

  struct Case {
    const char* name;
    std::function<double()> loss;      // forward + loss value
    std::function<void()> analytic;    // zero_grad + backward
  };
  std::vector<Case> cases;

  cases.push_back({"cross_entropy",
                   [&] { return cross_entropy(model.forward(x_weak, Mode::train, kDrop).tpc_probs, labels).loss.value; },
                   [&] {
                     ForwardCache c;
                     const auto o = model.forward(x_weak, Mode::train, kDrop, &c);
                     const auto r = cross_entropy(o.tpc_probs, labels);
                     model.zero_grad();
                     model.backward(c, o, {r.grad, {}, {}, {}});
                   }});
  cases.push_back({"pseudo_label",
                   [&] {
                     const auto s = model.forward(x_strong, Mode::train, kDrop);
                     return pseudo_label_loss(weak_const.tpc_probs, s.tpc_probs, open).loss.value;
                   },
                   [&] {
                     ForwardCache c;
                     const auto o = model.forward(x_strong, Mode::train, kDrop, &c);
                     const auto r = pseudo_label_loss(weak_const.tpc_probs, o.tpc_probs, open);
                     model.zero_grad();
                     model.backward(c, o, {r.grad, {}, {}, {}});
                   }});
  cases.push_back({"negative_consistency",
                   [&] {
                     const auto s = model.forward(x_strong, Mode::train, kDrop);
                     return negative_consistency_loss(weak_const.tpc_probs, weak_const.tnc_probs,
                                                      s.tnc_probs, closed, 4)
                         .loss.value;
                   },
                   [&] {
                     ForwardCache c;
                     const auto o = model.forward(x_strong, Mode::train, kDrop, &c);
                     const auto r = negative_consistency_loss(weak_const.tpc_probs, weak_const.tnc_probs,
                                                              o.tnc_probs, closed, 4);
                     model.zero_grad();
                     model.backward(c, o, {{}, r.grad, {}, {}});
                   }});
  cases.push_back({"weighted_cross_entropy",
                   [&] {
                     const auto o = model.forward(x_weak, Mode::train, kDrop);
                     return weighted_cross_entropy(o.tpc_logits, o.alpha.values(), labels).loss.value;
                   },
                   [&] {
                     ForwardCache c;
                     const auto o = model.forward(x_weak, Mode::train, kDrop, &c);
                     const auto r = weighted_cross_entropy(o.tpc_logits, o.alpha.values(), labels);
                     model.zero_grad();
                     model.backward(c, o, {r.grad_logits, {}, r.grad_alpha, {}});
                   }});
  auto consistency_value = [&] {
    const auto w = model.forward(x_weak, Mode::train, kDrop);
    const auto s = model.forward(x_strong, Mode::train, kDrop + 1);
    const auto& head = model.tpc_weight().value;
    return attention_consistency_loss(attention_maps(w.feature_maps, head),
                                      flip_maps_horizontal(attention_maps(s.feature_maps, head)))
        .loss.value;
  };
  cases.push_back({"attention_consistency", consistency_value, [&] {
                     ForwardCache cw, cs;
                     const auto w = model.forward(x_weak, Mode::train, kDrop, &cw);
                     const auto s = model.forward(x_strong, Mode::train, kDrop + 1, &cs);
                     const Tensor head = model.tpc_weight().value;
                     const auto r = attention_consistency_loss(
                         attention_maps(w.feature_maps, head),
                         flip_maps_horizontal(attention_maps(s.feature_maps, head)));
                     model.zero_grad();
                     Tensor dw(w.feature_maps.shape()), ds(s.feature_maps.shape());
                     attention_maps_backward(w.feature_maps, head, r.grad_a, dw, model.tpc_weight().grad);
                     attention_maps_backward(s.feature_maps, head, flip_maps_horizontal(r.grad_b), ds,
                                             model.tpc_weight().grad);
                     model.backward(cw, w, {{}, {}, {}, dw});
                     model.backward(cs, s, {{}, {}, {}, ds});
                   }});
  cases.push_back({"separation",
                   [&] {
                     const auto o = model.forward(x_weak, Mode::train, kDrop);
                     return separation_loss(o.tnc_probs, weak_const.tpc_probs, closed).loss.value;
                   },
                   [&] {
                     ForwardCache c;
                     const auto o = model.forward(x_weak, Mode::train, kDrop, &c);
                     const auto r = separation_loss(o.tnc_probs, weak_const.tpc_probs, closed);
                     model.zero_grad();
                     model.backward(c, o, {{}, r.grad, {}, {}});
                   }});

  bool ok = true;
  std::ostringstream detail;
  std::size_t min_checked = SIZE_MAX;
  double worst = 0.0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    cases[i].analytic();
    GradCheckOptions o;
    o.samples = 128;
    o.seed = 1000 + i;
    const auto r = numerical_gradient_check(cases[i].loss, params, o);
    min_checked = std::min(min_checked, r.checked);
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed || r.checked < 100) {
      ok = false;
      detail << cases[i].name << " failed at " << r.worst_parameter << "[" << r.worst_index
             << "] rel " << r.max_rel_error << "; ";
    }
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 120.0;
  detail << "6 losses, >= " << min_checked << " parameters each, max rel error "
         << fmt("%.2e", worst) << ", " << fmt("%.1f", secs) << " s";
  return {ok, detail.str()};
}

// ---------------------------------------------------------------------------
// 2. Threshold oracle

Outcome threshold_oracle() {
  Rng rng(2024);
  std::size_t bad_value = 0, bad_monotone = 0;
  double worst = 0.0;
  const int pairs = 1000;
  for (int i = 0; i < pairs; ++i) {
    const int cls = static_cast<int>(rng.below(8));
    const int epoch = static_cast<int>(rng.below(31));
    // Two samples with mean m, so the class mean is exact.
    const double m = rng.uniform(0.0, 1.0);
    const double d = std::min(m, 1.0 - m) * rng.uniform();
    const std::vector<double> p{m - d, m + d};
    const double mean = (p[0] + p[1]) / 2.0;
    const std::vector<int> y{cls, cls};
    const double got = epoch_scaled_threshold(p, y, epoch, kDefaultBeta, kDefaultGamma)[cls];
    const double want = oracle::epoch_scaled(mean, epoch, 0.95, std::exp(1.0));
    const double err = std::abs(got - want);
    worst = std::max(worst, err);
    if (err > 1e-12) ++bad_value;
    const double next = epoch_scaled_threshold(p, y, epoch + 1, kDefaultBeta, kDefaultGamma)[cls];
    if (mean > 0.0 && !(next > got)) ++bad_monotone;
  }
  // The worked values: 0.95 * 0.8 / 2 and 0.76 / (1 + e^-1).
  const std::vector<double> p{0.8};
  const std::vector<int> y{0};
  const bool hand = std::abs(epoch_scaled_threshold(p, y, 0, kDefaultBeta, kDefaultGamma)[0] - 0.38) < 1e-12 &&
                    std::abs(epoch_scaled_threshold(p, y, 1, kDefaultBeta, kDefaultGamma)[0] - 0.555605) < 1e-6 &&
                    kDefaultBeta == 0.95 && std::abs(kDefaultGamma - std::exp(1.0)) < 1e-15;
  std::ostringstream detail;
  detail << pairs << " pairs, max abs error " << fmt("%.2e", worst) << ", " << bad_value
         << " value mismatches, " << bad_monotone << " monotonicity violations, worked values "
         << (hand ? "ok" : "WRONG");
  return {bad_value == 0 && bad_monotone == 0 && hand, detail.str()};
}

// ---------------------------------------------------------------------------
// 3. Partition and batch-mean oracle

Outcome partition_oracle() {
  Rng rng(77);
  const int batches = 1000;
  std::size_t bad_sets = 0, bad_means = 0;
  for (int b = 0; b < batches; ++b) {
    const auto n = 1 + static_cast<std::size_t>(rng.below(96));
    const auto probs = test::random_probs(n, rng, rng.uniform(0.5, 4.0));
    const auto labels = test::random_labels(n, rng);
    std::vector<std::array<double, 8>> rows(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 8; ++c) rows[i][c] = probs.at(i, c);
    ClassVector last;
    for (auto& v : last) v = rng.uniform();

    const auto tau = batch_mean_threshold(probs, labels, last);
    const auto want = oracle::batch_mean(rows, labels, last);
    for (std::size_t c = 0; c < 8; ++c)
      if (std::abs(tau[c] - want[c]) > 1e-12) ++bad_means;

    ClassVector random_tau;
    for (auto& v : random_tau) v = rng.uniform(0.0, 0.5);
    for (const auto& t : {tau, random_tau}) {
      const auto got = partition_clean_noisy(probs, labels, t);
      const auto ref = oracle::partition(rows, labels, t);
      if (got.clean != ref.clean || got.noisy != ref.noisy) ++bad_sets;
    }
  }
  std::ostringstream detail;
  detail << batches << " batches, " << bad_sets << " index-set mismatches, " << bad_means
         << " batch-mean mismatches";
  return {bad_sets == 0 && bad_means == 0, detail.str()};
}

// ---------------------------------------------------------------------------
// 4. Metric oracle

Outcome metric_oracle() {
  Rng rng(4242);
  const int fixtures = 1000;
  double worst = 0.0;
  for (int f = 0; f < fixtures; ++f) {
    const auto n = static_cast<std::size_t>(rng.below(300));
    // Restrict some fixtures to a subset of classes so empty classes occur.
    const auto used = 1 + rng.below(8);
    std::vector<int> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng.below(used));
      pred[i] = rng.bernoulli(0.6) ? truth[i] : static_cast<int>(rng.below(8));
    }
    worst = std::max(worst, std::abs(macro_f1(confusion(truth, pred)) - oracle::macro_f1(truth, pred)));
  }
  // Degenerate classes: no support and no predictions score 0.
  const std::vector<int> y{0, 0, 1, 2};
  const auto f1 = per_class_f1(confusion(y, y));
  bool degenerate = macro_f1(confusion(y, y)) == 100.0 * 3.0 / 8.0;
  for (std::size_t c = 3; c < 8; ++c) degenerate = degenerate && f1[c] == 0.0;
  std::ostringstream detail;
  detail << fixtures << " fixtures, max abs error " << fmt("%.2e", worst) << ", empty-class convention "
         << (degenerate ? "ok" : "WRONG");
  return {worst <= 1e-9 && degenerate, detail.str()};
}

// ---------------------------------------------------------------------------
// 5. Reduction laws

// The reduced line restricted to the keys of the supervised line.
json project(const json& reduced, const json& reference) {
  json out = json::object();
  for (const auto& item : reference.items()) {
    if (!reduced.contains(item.key())) continue;
    if (item.value().is_object()) {
      json inner = json::object();
      for (const auto& sub : item.value().items())
        if (reduced.at(item.key()).contains(sub.key())) inner[sub.key()] = reduced.at(item.key()).at(sub.key());
      out[item.key()] = inner;
    } else {
      out[item.key()] = reduced.at(item.key());
    }
  }
  return out;
}

std::string log_text(const TrainResult& r, const json* reference = nullptr) {
  std::string text;
  for (std::size_t e = 0; e < r.reports.size(); ++e) {
    json line = r.reports[e].to_json();
    if (reference) line = project(line, reference->at(e));
    text += line.dump() + "\n";
  }
  return text;
}

bool same_parameters(const DualHeadModel& a, const DualHeadModel& b) {
  const auto pa = snapshot_parameters(a), pb = snapshot_parameters(b);
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!std::equal(pa[i].values().begin(), pa[i].values().end(), pb[i].values().begin(), pb[i].values().end()))
      return false;
  return true;
}

Outcome reduction_laws() {
  SynthSpec spec;
  spec.n_per_class = 16;
  spec.unlabeled_fraction = 0.5;
  spec.noise_rate = 0.2;
  spec.test_per_class = 4;
  spec.seed = 5;
  const auto data = generate_synthetic(spec);

  const json base = {{"epochs", 3}, {"batch_size", 16}, {"lr", 1e-3}, {"seed", 31},
                     {"threshold", {{"mode", "fixed"}, {"initial", 0.0}}}};
  json s = base, m = base, n = base;
  s["trainer"] = "supervised";
  m["trainer"] = "mutex_ssl";
  m["loss_weights"] = {{"pseudo", 0.0}, {"neg", 0.0}, {"sep", 0.0}};
  m["threshold"] = {{"mode", "fixed"}, {"initial", 0.0}};
  n["trainer"] = "noise_aware";
  n["loss_weights"] = {{"consistency", 0.0}};
  n["freeze_alpha"] = true;

  const auto sup = train(TrainConfig::from_json(s), data.train, &data.test);
  const auto ssl = train(TrainConfig::from_json(m), data.train, &data.test);
  const auto na = train(TrainConfig::from_json(n), data.train, &data.test);

  json reference = json::array();
  for (const auto& rep : sup.reports) reference.push_back(rep.to_json());
  const std::string want = log_text(sup);
  const bool ssl_log = log_text(ssl, &reference) == want;
  const bool na_log = log_text(na, &reference) == want;
  const bool ssl_params = same_parameters(*sup.model, *ssl.model);
  const bool na_params = same_parameters(*sup.model, *na.model);

  std::ostringstream detail;
  detail << "mutex_ssl log " << (ssl_log ? "identical" : "DIFFERS") << ", parameters "
         << (ssl_params ? "identical" : "DIFFER") << "; noise_aware log " << (na_log ? "identical" : "DIFFERS")
         << ", parameters " << (na_params ? "identical" : "DIFFER") << " (" << sup.reports.size()
         << " epochs, supervised fields compared)";
  return {ssl_log && na_log && ssl_params && na_params, detail.str()};
}

// ---------------------------------------------------------------------------
// 6 and 7. Paired desk-scale experiments

struct Paired {
  std::vector<double> baseline, method;
  double seconds = 0.0;

  double mean(const std::vector<double>& v) const {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }
  std::string describe(const char* base_name, const char* method_name) const {
    std::ostringstream o;
    o << method_name << " " << fmt("%.2f", mean(method)) << " vs " << base_name << " "
      << fmt("%.2f", mean(baseline)) << " (gap " << fmt("%+.2f", mean(method) - mean(baseline))
      << "); per seed";
    for (std::size_t i = 0; i < method.size(); ++i)
      o << " " << fmt("%.1f", method[i]) << "/" << fmt("%.1f", baseline[i]);
    o << "; " << fmt("%.0f", seconds) << " s";
    return o.str();
  }
};

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

Outcome noise_ordering() {
  const auto t0 = Clock::now();
  Paired p;
  for (auto seed : kSeeds) {
    SynthSpec spec;
    spec.n_per_class = 200;
    spec.noise_rate = 0.3;
    spec.test_per_class = 50;
    spec.seed = 100 + seed;
    const auto data = generate_synthetic(spec);
    // Both arms: same epochs, batch size and learning rate.
    const json common = {{"epochs", 15}, {"lr", 5e-4}, {"seed", seed}};
    json s = common, n = common;
    s["trainer"] = "supervised";
    n["trainer"] = "noise_aware";
    n["warmup_epochs"] = 4;
    n["loss_weights"] = {{"consistency", 0.1}};
    p.baseline.push_back(evaluate(*train(TrainConfig::from_json(s), data.train).model, data.test).macro_f1);
    p.method.push_back(evaluate(*train(TrainConfig::from_json(n), data.train).model, data.test).macro_f1);
  }
  p.seconds = seconds_since(t0);
  const bool ok = p.mean(p.method) - p.mean(p.baseline) >= 3.0 && p.seconds < 15 * 60;
  return {ok, p.describe("supervised", "noise_aware")};
}

Outcome ssl_benefit() {
  const auto t0 = Clock::now();
  Paired p;
  for (auto seed : kSeeds) {
    SynthSpec spec;
    spec.n_per_class = 200;
    spec.unlabeled_fraction = 0.8;
    spec.test_per_class = 50;
    spec.seed = 200 + seed;
    const auto data = generate_synthetic(spec);
    const json common = {{"epochs", 40}, {"seed", seed}};
    json s = common, m = common;
    s["trainer"] = "supervised";
    m["trainer"] = "mutex_ssl";
    m["warmup_epochs"] = 15;
    // The supervised arm sees only the labeled rows; the -1 rows are ignored by it.
    p.baseline.push_back(evaluate(*train(TrainConfig::from_json(s), data.train).model, data.test).macro_f1);
    p.method.push_back(evaluate(*train(TrainConfig::from_json(m), data.train).model, data.test).macro_f1);
  }
  p.seconds = seconds_since(t0);
  const bool ok = p.mean(p.method) - p.mean(p.baseline) >= 3.0 && p.seconds < 20 * 60;
  return {ok, p.describe("supervised-on-labeled", "mutex_ssl")};
}

// ---------------------------------------------------------------------------
// 8. Overfit sanity

Outcome overfit() {
  SynthSpec spec;
  spec.n_per_class = 8;  // 64 samples
  spec.seed = 64;
  const auto data = generate_synthetic(spec);
  const json cfg = {{"trainer", "supervised"},
                    {"epochs", 200},
                    {"batch_size", 16},
                    {"seed", 3},
                    {"augment", {{"crop_padding", 0}}},
                    {"model", {{"dropout", 0.0}}}};
  const auto r = train(TrainConfig::from_json(cfg), data.train);
  int first = -1;
  double best = 0.0;
  for (const auto& rep : r.reports) {
    best = std::max(best, rep.train_accuracy);
    if (first < 0 && rep.train_accuracy >= 99.0) first = rep.epoch;
  }
  std::ostringstream detail;
  detail << "64 samples, ";
  if (first >= 0)
    detail << "train accuracy >= 99% first at epoch " << first;
  else
    detail << "best train accuracy " << fmt("%.1f", best) << "% in 200 epochs";
  detail << ", final " << fmt("%.1f", r.reports.back().train_accuracy) << "%";
  return {first >= 0, detail.str()};
}

// ---------------------------------------------------------------------------
// 9. Manifest accounting

Outcome manifest_accounting() {
  constexpr std::size_t kTotal = 1110367, kUnlabeledRows = 502970, kMissing = 20438;
  test::TempDir dir("accept_manifest");
  const auto path = dir / "manifest.csv";
  {
    std::ofstream out(path);
    out << "path,label\n";
    // Rows cycle through -1 and 0..7; missing files are drawn from labeled rows.
    std::size_t unlabeled = 0;
    for (std::size_t i = 0; i < kTotal; ++i) {
      const bool blank = unlabeled < kUnlabeledRows && i % 2 == 0;
      if (blank) ++unlabeled;
      out << "img/" << i << ".jpg," << (blank ? -1 : static_cast<int>(i % 8)) << '\n';
    }
  }
  // Every 26th labeled row is missing until 20,438 are.
  std::set<std::string> missing;
  {
    std::size_t labeled_seen = 0;
    std::size_t unlabeled = 0;
    for (std::size_t i = 0; i < kTotal && missing.size() < kMissing; ++i) {
      const bool blank = unlabeled < kUnlabeledRows && i % 2 == 0;
      if (blank) {
        ++unlabeled;
        continue;
      }
      if (labeled_seen++ % 26 == 0) missing.insert("img/" + std::to_string(i) + ".jpg");
    }
  }
  const auto m = load_manifest(path, [&](const std::string& rel) { return !missing.count(rel); });
  const auto& c = m.counts;
  std::ostringstream detail;
  detail << "total " << c.total << ", label -1 " << c.unlabeled << ", missing " << c.missing << ", labeled "
         << c.labeled;
  const bool ok = c.total == kTotal && c.unlabeled == kUnlabeledRows && c.missing == kMissing &&
                  c.labeled == 586959 && m.labeled_indices().size() == 586959;
  return {ok, detail.str()};
}

// ---------------------------------------------------------------------------
// 10. Determinism of the train command

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "robustfer");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

Outcome determinism() {
  test::TempDir dir("accept_det");
  test::write_file(dir / "spec.json",
                   json{{"n_per_class", 12}, {"unlabeled_fraction", 0.4}, {"noise_rate", 0.2},
                        {"test_per_class", 4}, {"seed", 10}}
                       .dump());
  if (cli({"synth", "--spec", (dir / "spec.json").string(), "--out", (dir / "data").string()}) != 0)
    return {false, "synth failed"};
  std::ostringstream detail;
  bool ok = true;
  for (const char* trainer : {"supervised", "mutex_ssl", "noise_aware"}) {
    const json cfg = {{"trainer", trainer}, {"epochs", 2}, {"batch_size", 16}, {"seed", 8}};
    const auto cfg_path = dir / (std::string(trainer) + ".json");
    test::write_file(cfg_path, cfg.dump());
    std::string logs[2];
    for (int run = 0; run < 2; ++run) {
      const auto out = dir / (std::string(trainer) + "_" + std::to_string(run));
      if (cli({"train", "--config", cfg_path.string(), "--data", (dir / "data").string(), "--out",
               out.string()}) != 0)
        return {false, std::string("train failed for ") + trainer};
      logs[run] = test::read_file(out / "epochs.jsonl");
    }
    const bool same = !logs[0].empty() && logs[0] == logs[1];
    ok = ok && same;
    if (detail.tellp() > 0) detail << "; ";
    detail << trainer << " " << (same ? "identical" : "DIFFERENT") << " (" << logs[0].size() << " bytes)";
  }
  return {ok, detail.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"threshold oracle", threshold_oracle},
      {"partition oracle", partition_oracle},
      {"metric oracle", metric_oracle},
      {"reduction laws", reduction_laws},
      {"noise-aware beats supervised under 30% label noise", noise_ordering},
      {"semi-supervised beats supervised on the labeled subset", ssl_benefit},
      {"overfit sanity", overfit},
      {"manifest accounting", manifest_accounting},
      {"determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(number)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << number << ". " << criteria[i].first << ": " << o.detail
              << " [" << fmt("%.1f", seconds_since(t0)) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
