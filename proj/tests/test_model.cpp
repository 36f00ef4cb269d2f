#include <doctest.h>

#include <numeric>

#include "helpers.hpp"
#include "rfer/errors.hpp"
#include "rfer/model.hpp"

using namespace rfer;
using rfer::test::random_tensor;

namespace {

ModelConfig small_config(std::size_t size = 16) {
  ModelConfig c;
  c.input_height = c.input_width = size;
  c.backbone_config = {{"channels", {4, 6, 8}}};
  return c;
}

Tensor random_images(std::size_t n, std::size_t size, Rng& rng) {
  return random_tensor({n, size, size, 3}, rng, 0.0, 1.0);
}

Parameter& find(DualHeadModel& m, const std::string& name) {
  for (auto* p : m.parameters())
    if (p->name == name) return *p;
  FAIL("no parameter " << name);
  throw 0;
}

}  // namespace

TEST_CASE("reference architecture: 32x32 input gives 64 x 4 x 4 features") {
  DualHeadModel m(ModelConfig{}, 1);
  Rng rng(1);
  const auto out = m.forward(random_images(2, 32, rng), Mode::eval);
  CHECK(out.feature_maps.shape() == std::vector<std::size_t>{2, 64, 4, 4});
  CHECK(out.pooled.shape() == std::vector<std::size_t>{2, 64});
  CHECK(out.tpc_probs.shape() == std::vector<std::size_t>{2, 8});
  CHECK(out.alpha.shape() == std::vector<std::size_t>{2});
  std::size_t count = 0;
  for (const auto* p : std::as_const(m).parameters()) count += p->value.size();
  CHECK(count < 200000);
  CHECK(count == 448 + 4640 + 18496 + 2 * (8 * 64 + 8) + 65);
}

TEST_CASE("zero head weights give uniform probabilities on both heads") {
  DualHeadModel m(small_config(), 2);
  for (const auto* name : {"tpc.weight", "tpc.bias", "tnc.weight", "tnc.bias"}) find(m, name).value.fill(0.0);
  Rng rng(2);
  const auto out = m.forward(random_images(3, 16, rng), Mode::train, 5);
  for (double v : out.tpc_probs.values()) CHECK(v == doctest::Approx(0.125).epsilon(1e-15));
  for (double v : out.tnc_probs.values()) CHECK(v == doctest::Approx(0.125).epsilon(1e-15));
}

TEST_CASE("eval forward is deterministic and batch independent") {
  DualHeadModel m(small_config(), 3);
  Rng rng(3);
  const Tensor x = random_images(5, 16, rng);
  const auto a = m.forward(x, Mode::eval), b = m.forward(x, Mode::eval);
  CHECK(a.tpc_logits.values().size() == b.tpc_logits.values().size());
  CHECK(std::equal(a.tpc_logits.values().begin(), a.tpc_logits.values().end(), b.tpc_logits.values().begin()));
  for (std::size_t i = 0; i < 5; ++i) {
    Tensor one({1, 16, 16, 3});
    std::copy_n(x.data() + i * 16 * 16 * 3, 16 * 16 * 3, one.data());
    const auto o = m.forward(one, Mode::eval);
    for (std::size_t c = 0; c < 8; ++c) {
      REQUIRE(o.tpc_logits.at(0, c) == a.tpc_logits.at(i, c));
      REQUIRE(o.tnc_logits.at(0, c) == a.tnc_logits.at(i, c));
    }
  }
}

TEST_CASE("probability heads are rows on the simplex") {
  DualHeadModel m(small_config(), 4);
  Rng rng(4);
  for (int t = 0; t < 5; ++t) {
    const auto out = m.forward(random_images(7, 16, rng), Mode::train, static_cast<std::uint64_t>(t));
    for (const Tensor* p : {&out.tpc_probs, &out.tnc_probs})
      for (std::size_t i = 0; i < 7; ++i) {
        double s = 0.0;
        for (double v : p->row(i)) {
          REQUIRE(v >= 0.0);
          s += v;
        }
        REQUIRE(std::abs(s - 1.0) < 1e-6);
      }
    for (double a : out.alpha.values()) REQUIRE((a > 0.0 && a < 1.0));
  }
}

TEST_CASE("dropout is driven only by its seed") {
  DualHeadModel m(small_config(), 5);
  Rng rng(5);
  const Tensor x = random_images(4, 16, rng);
  const auto a = m.forward(x, Mode::train, 9), b = m.forward(x, Mode::train, 9), c = m.forward(x, Mode::train, 10);
  CHECK(std::equal(a.tpc_logits.values().begin(), a.tpc_logits.values().end(), b.tpc_logits.values().begin()));
  CHECK_FALSE(std::equal(a.tpc_logits.values().begin(), a.tpc_logits.values().end(), c.tpc_logits.values().begin()));
}

TEST_CASE("input of the wrong size is a contract error") {
  DualHeadModel m(small_config(), 6);
  CHECK_THROWS_AS(m.forward(Tensor({1, 8, 8, 3}), Mode::eval), ContractError);
}

TEST_CASE("attention maps: identity, zero and hand-computed cases") {
  Rng rng(6);
  const Tensor f = random_tensor({2, 8, 3, 3}, rng);
  Tensor eye({8, 8});
  for (std::size_t c = 0; c < 8; ++c) eye.at(c, c) = 1.0;
  const Tensor m = attention_maps(f, eye);
  CHECK(std::equal(m.values().begin(), m.values().end(), f.values().begin()));
  const Tensor zero = attention_maps(f, Tensor({8, 8}));
  for (double v : zero.values()) CHECK(v == 0.0);

  Tensor f2({1, 2, 1, 1});
  f2[0] = 0.5;
  f2[1] = 2.0;
  Tensor w({8, 2});
  w.at(0, 0) = 1.0;
  w.at(0, 1) = -1.0;
  CHECK(attention_maps(f2, w).at(0, 0, 0, 0) == doctest::Approx(-1.5));
}

TEST_CASE("attention maps are linear in the features") {
  Rng rng(7);
  const Tensor f = random_tensor({2, 5, 4, 4}, rng), g = random_tensor({2, 5, 4, 4}, rng);
  const Tensor w = random_tensor({8, 5}, rng);
  const double a = 0.7, b = -1.3;
  Tensor mix(f.shape());
  for (std::size_t i = 0; i < f.size(); ++i) mix[i] = a * f[i] + b * g[i];
  const Tensor lhs = attention_maps(mix, w), mf = attention_maps(f, w), mg = attention_maps(g, w);
  for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(lhs[i] == doctest::Approx(a * mf[i] + b * mg[i]).epsilon(1e-12));
}

TEST_CASE("spatial mean of each class map equals the bias-free logit") {
  DualHeadModel m(small_config(), 8);
  Rng rng(8);
  const auto out = m.forward(random_images(3, 16, rng), Mode::eval);
  const Tensor maps = attention_maps(out.feature_maps, m.tpc_weight().value);
  const Tensor& bias = find(m, "tpc.bias").value;
  const std::size_t hw = maps.dim(2) * maps.dim(3);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t c = 0; c < 8; ++c) {
      const double* p = maps.data() + (n * 8 + c) * hw;
      const double mean = std::accumulate(p, p + hw, 0.0) / static_cast<double>(hw);
      CHECK(std::abs(mean - (out.tpc_logits.at(n, c) - bias[c])) < 1e-5);
    }
}

TEST_CASE("flip_maps_horizontal mirrors the width axis") {
  Tensor m({1, 1, 1, 3});
  m[0] = 1.0;
  m[1] = 2.0;
  m[2] = 3.0;
  const Tensor f = flip_maps_horizontal(m);
  CHECK(f[0] == 3.0);
  CHECK(f[2] == 1.0);
}

TEST_CASE("gradient check is exact on a quadratic") {
  Parameter theta("theta", {1});
  theta.value[0] = 1.0;
  theta.grad[0] = theta.value[0];  // d/dθ ½θ² = θ
  Parameter* params[] = {&theta};
  GradCheckOptions o;
  o.epsilon = 1e-5;
  const auto r = numerical_gradient_check([&] { return 0.5 * theta.value[0] * theta.value[0]; }, params, o);
  CHECK(r.passed);
  CHECK(r.checked == 1);
  CHECK(std::abs(r.worst_numeric - 1.0) < 1e-8);
  CHECK(theta.value[0] == 1.0);  // restored after probing
}

TEST_CASE("gradient check flags a wrong gradient and non-finite losses") {
  Parameter theta("theta", {1});
  theta.value[0] = 2.0;
  theta.grad[0] = 3.0;
  Parameter* params[] = {&theta};
  CHECK_FALSE(numerical_gradient_check([&] { return 0.5 * theta.value[0] * theta.value[0]; }, params).passed);
  CHECK_THROWS_AS(numerical_gradient_check([] { return std::nan(""); }, params), NumericalError);
}

TEST_CASE("checkpoint round trip restores every parameter bit for bit") {
  test::TempDir dir("ckpt");
  DualHeadModel m(small_config(), 9);
  save_checkpoint(dir / "m.ckpt", m, {3, 77, "abc", {{"note", "x"}}});
  const auto loaded = load_checkpoint(dir / "m.ckpt");
  CHECK(loaded.meta.epoch == 3);
  CHECK(loaded.meta.seed == 77);
  CHECK(loaded.meta.config_hash == "abc");
  CHECK(loaded.meta.extra["note"] == "x");
  const auto a = std::as_const(m).parameters();
  const auto b = std::as_const(*loaded.model).parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    CHECK(a[i]->value.values().size() == b[i]->value.values().size());
    CHECK(std::equal(a[i]->value.values().begin(), a[i]->value.values().end(), b[i]->value.values().begin()));
  }
  Rng rng(9);
  const Tensor x = random_images(2, 16, rng);
  CHECK(m.forward(x, Mode::eval).tpc_logits.values()[3] == loaded.model->forward(x, Mode::eval).tpc_logits.values()[3]);
}

TEST_CASE("corrupt or foreign checkpoint files are rejected") {
  test::TempDir dir("ckpt_bad");
  test::write_file(dir / "junk.ckpt", "not a checkpoint at all");
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), ContractError);
  DualHeadModel m(small_config(), 10);
  save_checkpoint(dir / "ok.ckpt", m, {});
  auto bytes = test::read_file(dir / "ok.ckpt");
  test::write_file(dir / "cut.ckpt", bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), ContractError);
}

TEST_CASE("backbone registry") {
  CHECK(backbone_registered("reference"));
  CHECK(backbone_registered("resnet18"));
  CHECK_FALSE(backbone_registered("vgg16"));
  CHECK_THROWS_AS(make_backbone("vgg16", {}, 0), ConfigError);
  register_backbone("tiny_test", [](const nlohmann::json&, std::uint64_t seed) {
    return std::make_unique<ReferenceBackbone>(std::vector<std::size_t>{2, 2, 3}, 8, 8, seed);
  });
  CHECK(backbone_registered("tiny_test"));
  ModelConfig c;
  c.backbone = "tiny_test";
  c.input_height = c.input_width = 8;
  DualHeadModel m(c, 1);
  CHECK(m.feature_channels() == 3);
}

TEST_CASE("model config json round trip") {
  auto c = small_config(24);
  c.dropout = 0.25;
  const auto back = ModelConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
}
