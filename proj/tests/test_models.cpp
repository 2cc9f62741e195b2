#include <gtest/gtest.h>

#include <cmath>

#include "genrobust/model.hpp"
#include "genrobust/persistence.hpp"
#include "test_util.hpp"

using namespace genrobust;
using genrobust::testing::random_dataset;
using genrobust::testing::random_tensor;
using genrobust::testing::rel_error;

namespace {

ModelConfig mlp(std::size_t classes = 4) {
  ModelConfig c;
  c.hidden = {16, 12};
  c.input = {1, 4, 4};
  c.num_classes = classes;
  return c;
}

ModelConfig cnn() {
  ModelConfig c;
  c.arch = Architecture::SmallCnn;
  c.hidden = {3, 4};
  c.input = {2, 6, 6};
  c.num_classes = 3;
  return c;
}

}  // namespace

TEST(Init, EqualSeedsGiveEqualParameters) {
  Rng a(3), b(3);
  EXPECT_EQ(init_classifier(mlp(), a).params, init_classifier(mlp(), b).params);
}

TEST(Init, ZeroWidthIsAConfigError) {
  auto c = mlp();
  c.hidden = {16, 0};
  Rng rng(0);
  EXPECT_THROW(init_classifier(c, rng), ConfigError);
  c.hidden = {};
  EXPECT_THROW(c.validate(), ConfigError);
  c = mlp(1);
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Forward, ZerosGiveFiniteLogitsForBothArchitectures) {
  for (const auto& c : {mlp(), cnn()}) {
    Rng rng(1);
    const auto m = init_classifier(c, rng);
    const auto z = logits(m, Tensor(c.input.batch(3)));
    EXPECT_TRUE(z.all_finite());
    EXPECT_EQ(z.shape(), (Shape{3, c.num_classes}));
  }
}

TEST(Forward, BatchOfOneMatchesRowOfBatch) {
  for (const auto& c : {mlp(), cnn()}) {
    Rng rng(2);
    const auto m = init_classifier(c, rng);
    const auto x = random_tensor(c.input.batch(8), rng, 0, 1);
    const auto all = logits(m, x);
    for (std::size_t r = 0; r < 8; ++r) {
      const auto one = logits(m, x.slice_rows(r, r + 1));
      for (std::size_t k = 0; k < c.num_classes; ++k) EXPECT_NEAR(one[k], all[r * c.num_classes + k], 1e-6);
    }
  }
}

TEST(Forward, EmaEqualsParamsAfterInitAndIsPure) {
  Rng rng(3);
  const auto m = init_classifier(cnn(), rng);
  const auto before = m.params;
  const auto x = random_tensor(cnn().input.batch(4), rng, 0, 1);
  EXPECT_EQ(logits(m, x, true), logits(m, x, false));
  EXPECT_EQ(m.params, before);
}

TEST(Forward, GradientsMatchFiniteDifferencesForBothArchitectures) {
  for (const auto& c : {mlp(), cnn()}) {
    Rng rng(4);
    auto m = init_classifier(c, rng);
    const auto data = random_dataset(5, c.input, c.num_classes, rng);
    auto loss = [&](std::map<std::string, Tensor>* grads) {
      Tape<double> tape;
      auto out = forward_logits(tape, m, tape.constant(data.images), false, ParamMode::Trainable);
      auto l = softmax_cross_entropy(out, data.labels);
      if (grads) *grads = tape.backward(l);
      return l.value().item();
    };
    std::map<std::string, Tensor> g;
    loss(&g);
    const auto names = m.params.names();
    const double h = 1e-5;
    for (int probe = 0; probe < 30; ++probe) {
      const auto& name = names[rng.uniform_index(names.size())];
      auto values = m.params.values(name);
      const auto idx = rng.uniform_index(values.size());
      const double saved = values[idx];
      values[idx] = saved + h;
      const double up = loss(nullptr);
      values[idx] = saved - h;
      const double down = loss(nullptr);
      values[idx] = saved;
      EXPECT_LT(rel_error(g.at(name)[idx], (up - down) / (2 * h)), 1e-5) << name;
    }
  }
}

TEST(Ema, BoundaryDecaysAndClosedForm) {
  Rng rng(5);
  auto m = init_classifier(mlp(), rng);
  for (const auto& name : m.params.names()) {
    for (auto& v : m.params.values(name)) v += 1.0;
  }
  auto copy = m;
  ema_update(copy, 1.0);
  EXPECT_EQ(copy.ema_params, m.ema_params);
  copy = m;
  ema_update(copy, 0.0);
  EXPECT_EQ(copy.ema_params, m.params);

  const double tau = 0.9;
  const int k = 7;
  const auto ema0 = m.ema_params;
  double prev_gap = INFINITY;
  for (int i = 0; i < k; ++i) {
    ema_update(m, tau);
    double gap = 0.0;
    for (const auto& [name, t] : m.params) gap += (t.vector() - m.ema_params.at(name).vector()).squaredNorm();
    EXPECT_LE(gap, prev_gap);
    prev_gap = gap;
  }
  for (const auto& [name, p] : m.params) {
    const auto& e = m.ema_params.at(name);
    const auto& e0 = ema0.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(e[i], p[i] + std::pow(tau, k) * (e0[i] - p[i]), 1e-10);
  }
}

TEST(Accuracy, PerfectComplementAndChance) {
  Rng rng(6);
  const auto m = init_classifier(mlp(2), rng);
  auto data = random_dataset(200, mlp().input, 2, rng);
  data.labels = predict(m, data.images);
  EXPECT_EQ(accuracy(m, data), 1.0);
  auto noisy = random_dataset(200, mlp().input, 2, rng);
  auto inverted = noisy;
  for (auto& y : inverted.labels) y = 1 - y;
  EXPECT_NEAR(accuracy(m, inverted), 1.0 - accuracy(m, noisy), 1e-15);

  ModelConfig ten = mlp(10);
  const auto m10 = init_classifier(ten, rng);
  const auto balanced = random_dataset(1000, ten.input, 10, rng);
  EXPECT_NEAR(accuracy(m10, balanced), 0.1, 0.03);
}

TEST(Argmax, TiesGoToLowestIndex) {
  EXPECT_EQ(argmax_rows(Tensor(Shape{2, 3}, {1, 1, 0, 0, 2, 2})), (std::vector<int>{0, 1}));
}

TEST(Checkpoint, RoundTripReproducesLogitsBitForBit) {
  Rng rng(7);
  auto m = init_classifier(cnn(), rng);
  ema_update(m, 0.5);
  m.step = 42;
  const auto dir = genrobust::testing::temp_dir("ckpt");
  save_classifier(dir + "/m.grtc", m, "abc");
  const auto loaded = load_classifier(dir + "/m.grtc");
  const auto x = random_tensor(cnn().input.batch(5), rng, 0, 1);
  EXPECT_EQ(logits(loaded, x, true), logits(m, x, true));
  EXPECT_EQ(logits(loaded, x, false), logits(m, x, false));
  EXPECT_EQ(loaded.step, 42u);
  EXPECT_EQ(loaded.config, m.config);
  EXPECT_EQ(artifact_config_hash(dir + "/m.grtc"), "abc");
}
