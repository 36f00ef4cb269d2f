#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "oracles.hpp"
#include "rfer/errors.hpp"
#include "rfer/thresholds.hpp"

using namespace rfer;
using rfer::test::random_labels;
using rfer::test::random_probs;

namespace {

std::vector<std::array<double, 8>> rows_of(const Tensor& probs) {
  std::vector<std::array<double, 8>> out(probs.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t c = 0; c < 8; ++c) out[i][c] = probs.at(i, c);
  return out;
}

}  // namespace

TEST_CASE("epoch-scaled threshold hand values") {
  const std::vector<double> p{0.8, 0.8};
  const std::vector<int> y{3, 3};
  auto tau = epoch_scaled_threshold(p, y, 0, kDefaultBeta, kDefaultGamma);
  CHECK(tau[3] == doctest::Approx(0.38).epsilon(1e-14));
  tau = epoch_scaled_threshold(p, y, 1, kDefaultBeta, kDefaultGamma);
  CHECK(tau[3] == doctest::Approx(0.555605).epsilon(1e-6));
  tau = epoch_scaled_threshold(p, y, 200, kDefaultBeta, kDefaultGamma);
  CHECK(tau[3] == doctest::Approx(0.76).epsilon(1e-14));
  CHECK(kDefaultBeta == 0.95);
  CHECK(kDefaultGamma == doctest::Approx(std::exp(1.0)).epsilon(1e-15));
}

TEST_CASE("absent classes carry forward") {
  ClassVector last{};
  for (std::size_t c = 0; c < 8; ++c) last[c] = 0.1 * static_cast<double>(c);
  const std::vector<double> p{0.5};
  const std::vector<int> y{2};
  const auto tau = epoch_scaled_threshold(p, y, 3, kDefaultBeta, kDefaultGamma, last);
  for (std::size_t c = 0; c < 8; ++c)
    if (c != 2) CHECK(tau[c] == last[c]);
  CHECK(tau[2] == doctest::Approx(oracle::epoch_scaled(0.5, 3, kDefaultBeta, kDefaultGamma)));

  const auto empty = epoch_scaled_threshold({}, {}, 4, kDefaultBeta, kDefaultGamma, last);
  CHECK(empty == last);
}

TEST_CASE("epoch-scaled threshold is increasing in epoch and bounded by beta") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const double mean = rng.uniform(0.01, 1.0);
    const double beta = rng.uniform(0.1, 1.0);
    const double gamma = rng.uniform(1.1, 4.0);
    const std::vector<double> p{mean};
    const std::vector<int> y{0};
    double prev = -1.0;
    for (int e = 0; e < 30; ++e) {
      const double t = epoch_scaled_threshold(p, y, e, beta, gamma)[0];
      CHECK(t >= 0.0);
      CHECK(t <= beta * mean + 1e-15);
      // Strict while gamma^-e is still representable next to 1.
      if (std::pow(gamma, -e) > 1e-12) CHECK(t > prev);
      CHECK(t >= prev);
      prev = t;
    }
  }
}

TEST_CASE("batch-mean threshold examples") {
  Tensor probs({2, 8}, 0.0);
  probs.at(0, 0) = 0.9;
  probs.at(0, 1) = 0.1;
  probs.at(1, 0) = 0.7;
  probs.at(1, 2) = 0.3;
  const std::vector<int> y{0, 0};
  const auto tau = batch_mean_threshold(probs, y);
  CHECK(tau[0] == doctest::Approx(0.8).epsilon(1e-15));
  for (std::size_t c = 1; c < 8; ++c) CHECK(tau[c] == 0.0);

  Rng rng(4);
  const auto p = random_probs(8, rng);
  std::vector<int> one_each(8);
  std::iota(one_each.begin(), one_each.end(), 0);
  const auto singleton = batch_mean_threshold(p, one_each);
  for (std::size_t c = 0; c < 8; ++c) CHECK(singleton[c] == p.at(c, c));
}

TEST_CASE("batch-mean threshold matches brute force and ignores order") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = 1 + static_cast<std::size_t>(rng.below(64));
    const auto probs = random_probs(n, rng);
    const auto labels = random_labels(n, rng);
    ClassVector last{};
    for (auto& v : last) v = rng.uniform();
    const auto tau = batch_mean_threshold(probs, labels, last);
    const auto want = oracle::batch_mean(rows_of(probs), labels, last);
    for (std::size_t c = 0; c < 8; ++c) CHECK(tau[c] == doctest::Approx(want[c]).epsilon(1e-14));

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm.begin(), perm.end());
    Tensor shuffled({n, 8});
    std::vector<int> shuffled_labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(probs.row(perm[i]).begin(), probs.row(perm[i]).end(), shuffled.row(i).begin());
      shuffled_labels[i] = labels[perm[i]];
    }
    CHECK(batch_mean_threshold(shuffled, shuffled_labels, last) == tau);
  }
}

TEST_CASE("partition examples") {
  Tensor probs({2, 8}, 0.0);
  probs.at(0, 4) = 0.9;
  probs.at(0, 0) = 0.1;
  probs.at(1, 4) = 0.7;
  probs.at(1, 0) = 0.3;
  const std::vector<int> y{4, 4};
  ClassVector tau{};
  tau[4] = 0.8;
  auto part = partition_clean_noisy(probs, y, tau);
  CHECK(part.clean == std::vector<std::size_t>{0});
  CHECK(part.noisy == std::vector<std::size_t>{1});

  tau[4] = 0.7;  // closed comparison
  part = partition_clean_noisy(probs, y, tau);
  CHECK(part.clean == std::vector<std::size_t>{0, 1});

  Rng rng(6);
  const auto p = random_probs(20, rng);
  const auto labels = random_labels(20, rng);
  CHECK(partition_clean_noisy(p, labels, ClassVector{}).clean.size() == 20);
  ClassVector ones;
  ones.fill(1.0);
  CHECK(partition_clean_noisy(p, labels, ones).noisy.size() == 20);
}

TEST_CASE("partition matches brute force and is permutation equivariant") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = 1 + static_cast<std::size_t>(rng.below(48));
    const auto probs = random_probs(n, rng);
    const auto labels = random_labels(n, rng);
    ClassVector tau;
    for (auto& v : tau) v = rng.uniform(0.0, 0.6);
    const auto part = partition_clean_noisy(probs, labels, tau);
    const auto want = oracle::partition(rows_of(probs), labels, tau);
    CHECK(part.clean == want.clean);
    CHECK(part.noisy == want.noisy);
    CHECK(part.clean.size() + part.noisy.size() == n);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm.begin(), perm.end());
    Tensor shuffled({n, 8});
    std::vector<int> shuffled_labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(probs.row(perm[i]).begin(), probs.row(perm[i]).end(), shuffled.row(i).begin());
      shuffled_labels[i] = labels[perm[i]];
    }
    const auto moved = partition_clean_noisy(shuffled, shuffled_labels, tau);
    std::vector<std::size_t> mapped;
    for (auto i : moved.clean) mapped.push_back(perm[i]);
    std::sort(mapped.begin(), mapped.end());
    CHECK(mapped == part.clean);
  }
}

TEST_CASE("threshold contract errors") {
  Tensor probs({2, 8}, 0.125);
  CHECK_THROWS_AS(batch_mean_threshold(probs, std::vector<int>{0}), ContractError);
  CHECK_THROWS_AS(batch_mean_threshold(probs, std::vector<int>{0, 8}), ContractError);
  CHECK_THROWS_AS(partition_clean_noisy(Tensor({2, 7}), std::vector<int>{0, 1}, ClassVector{}),
                  ContractError);
  CHECK_THROWS_AS(parse_threshold_mode("median"), ConfigError);
  CHECK(parse_threshold_mode(threshold_mode_name(ThresholdMode::batch_mean)) ==
        ThresholdMode::batch_mean);
}

TEST_CASE("threshold state: epoch-scaled accumulates per epoch") {
  ThresholdState st(ThresholdMode::epoch_scaled);
  CHECK(st.tau() == ClassVector{});
  const std::vector<double> p{0.6, 1.0, 0.5};
  const std::vector<int> y{1, 1, 6};
  st.accumulate(p, y);
  CHECK(st.tau() == ClassVector{});  // frozen until the epoch ends
  st.end_epoch();
  CHECK(st.epoch() == 1);
  CHECK(st.tau()[1] == doctest::Approx(oracle::epoch_scaled(0.8, 1, kDefaultBeta, kDefaultGamma)));
  CHECK(st.tau()[6] == doctest::Approx(oracle::epoch_scaled(0.5, 1, kDefaultBeta, kDefaultGamma)));
  CHECK(st.tau()[0] == 0.0);

  // An epoch with no class-6 samples carries the old value forward.
  const auto before = st.tau()[6];
  st.accumulate(std::vector<double>{0.8}, std::vector<int>{1});
  st.end_epoch();
  CHECK(st.tau()[6] == before);
  CHECK(st.tau()[1] == doctest::Approx(oracle::epoch_scaled(0.8, 2, kDefaultBeta, kDefaultGamma)));
}

TEST_CASE("threshold state: batch mean and fixed") {
  Rng rng(8);
  const auto probs = random_probs(16, rng);
  const auto labels = random_labels(16, rng);

  ThresholdState bm(ThresholdMode::batch_mean);
  bm.update_batch(probs, labels);
  CHECK(bm.tau() == batch_mean_threshold(probs, labels));

  ThresholdState scaled(ThresholdMode::batch_mean, kDefaultBeta, kDefaultGamma, 0.0, true);
  scaled.update_batch(probs, labels);
  const auto raw = batch_mean_threshold(probs, labels);
  for (std::size_t c = 0; c < 8; ++c)
    CHECK(scaled.tau()[c] == doctest::Approx(raw[c] * kDefaultBeta / 2.0));

  ThresholdState fixed(ThresholdMode::fixed, kDefaultBeta, kDefaultGamma, 0.3);
  fixed.update_batch(probs, labels);
  fixed.accumulate(std::vector<double>{0.9}, std::vector<int>{0});
  fixed.end_epoch();
  for (double v : fixed.tau()) CHECK(v == 0.3);

  CHECK_THROWS_AS(ThresholdState(ThresholdMode::fixed, 0.95, 1.0), ConfigError);
  CHECK_THROWS_AS(ThresholdState(ThresholdMode::fixed, 1.5), ConfigError);
  CHECK_THROWS_AS(ThresholdState(ThresholdMode::fixed, 0.95, 2.0, -0.1), ConfigError);
}
