#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>

#include "genrobust/labeling.hpp"
#include "genrobust/synthetic.hpp"
#include "test_util.hpp"

using namespace genrobust;
using genrobust::testing::random_dataset;
using genrobust::testing::random_tensor;

namespace {

SyntheticDatasetSpec toy_spec(std::size_t classes = 2) {
  SyntheticDatasetSpec s;
  s.num_classes = classes;
  s.image = {1, 4, 4};
  s.latent_dim = 4;
  s.separation = 8.0;
  s.train_size = 400;
  s.test_size = 400;
  s.holdout_size = 10;
  s.seed = 3;
  return s;
}

ModelConfig small_mlp(ImageShape image, std::size_t classes) {
  ModelConfig c;
  c.hidden = {32};
  c.input = image;
  c.num_classes = classes;
  return c;
}

PseudoLabeledSet scored(std::vector<int> labels, std::vector<double> scores, std::size_t classes) {
  PseudoLabeledSet s;
  s.images = Tensor(Shape{labels.size(), 1, 1, 1});
  for (std::size_t i = 0; i < labels.size(); ++i) s.images[i] = static_cast<double>(i);
  s.labels = std::move(labels);
  s.scores = std::move(scores);
  s.num_classes = classes;
  return s;
}

}  // namespace

TEST(TrainNonrobust, SeparableToySetIsLearned) {
  const auto splits = make_synthetic_dataset(toy_spec());
  Rng rng(1);
  StandardTrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 32;
  const auto model = train_nonrobust(splits.train, small_mlp({1, 4, 4}, 2), tc, rng);
  EXPECT_GE(accuracy(model, splits.train, true), 0.99);
  EXPECT_GE(accuracy(model, splits.test, true), 0.97);
}

TEST(TrainNonrobust, ZeroEpochsAndDeterminism) {
  Rng data_rng(2);
  const auto data = random_dataset(64, {1, 2, 2}, 3, data_rng);
  const auto cfg = small_mlp({1, 2, 2}, 3);
  StandardTrainConfig tc;
  tc.epochs = 0;
  Rng a(5), b(5);
  const auto untouched = train_nonrobust(data, cfg, tc, a);
  Rng init_rng = b.child({0});
  const auto init = init_classifier(cfg, init_rng);
  EXPECT_EQ(untouched.params, init.params);

  tc.epochs = 2;
  tc.batch_size = 16;
  Rng c(9), d(9);
  EXPECT_EQ(train_nonrobust(data, cfg, tc, c).params, train_nonrobust(data, cfg, tc, d).params);
}

TEST(PseudoLabel, ConstantLabelerGivesClassZeroAtChance) {
  Rng rng(3);
  auto model = init_classifier(small_mlp({1, 2, 2}, 4), rng);
  for (const auto& name : model.ema_params.names()) {
    for (auto& v : model.ema_params.values(name)) v = 0.0;
  }
  const auto set = pseudo_label(model, random_tensor({7, 1, 2, 2}, rng, 0, 1));
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(set.labels[i], 0);
    EXPECT_DOUBLE_EQ(set.scores[i], 0.25);
  }
}

TEST(PseudoLabel, AgreesWithTrainLabelsOfPerfectLabeler) {
  const auto splits = make_synthetic_dataset(toy_spec(3));
  Rng rng(4);
  StandardTrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 32;
  const auto labeler = train_nonrobust(splits.train, small_mlp({1, 4, 4}, 3), tc, rng);
  ASSERT_EQ(accuracy(labeler, splits.train, true), 1.0);
  const auto set = pseudo_label(labeler, splits.train.images, ScoreKind::MaxProbability, "f_nr");
  EXPECT_EQ(set.labels, splits.train.labels);
  EXPECT_EQ(set.labeler_id, "f_nr");
  for (double s : set.scores) {
    EXPECT_GE(s, 1.0 / 3.0);
    EXPECT_LE(s, 1.0);
  }
  // Relabelling is idempotent.
  const auto again = pseudo_label(labeler, set.images);
  EXPECT_EQ(again.labels, set.labels);
  EXPECT_EQ(again.scores, set.scores);
}

TEST(PseudoLabel, ShapeMismatch) {
  Rng rng(5);
  const auto model = init_classifier(small_mlp({1, 2, 2}, 2), rng);
  EXPECT_ANY_THROW(pseudo_label(model, random_tensor({3, 1, 3, 3}, rng, 0, 1)));
}

TEST(FilterTopK, SmallExample) {
  const auto set = scored({0, 0, 1}, {0.9, 0.8, 0.7}, 2);
  const auto out = filter_topk_per_class(set, 1);
  EXPECT_EQ(out.scores, (std::vector<double>{0.9, 0.7}));
  EXPECT_EQ(out.labels, (std::vector<int>{0, 1}));
  EXPECT_EQ(out.images[1], 2.0);
}

TEST(FilterTopK, ExactCountIsIdentity) {
  const auto set = scored({1, 0, 1, 0}, {0.1, 0.5, 0.9, 0.5}, 2);
  const auto out = filter_topk_per_class(set, 2);
  EXPECT_EQ(out.labels, set.labels);
  EXPECT_EQ(out.scores, set.scores);
}

TEST(FilterTopK, DeficitNamesClasses) {
  const auto set = scored({0, 0, 1}, {0.9, 0.8, 0.7}, 3);
  try {
    filter_topk_per_class(set, 2);
    FAIL();
  } catch (const ValueError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("1"), std::string::npos);
    EXPECT_NE(msg.find("2"), std::string::npos);
  }
}

TEST(FilterTopK, MatchesSortOracle) {
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 1000, classes = 5, k = 50;
    std::vector<int> labels(n);
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng.uniform_index(classes));
      scores[i] = std::round(rng.uniform() * 50) / 50;  // plenty of ties
    }
    const auto set = scored(labels, scores, classes);
    const auto out = filter_topk_per_class(set, k);

    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] == static_cast<int>(c)) idx.push_back(i);
      }
      std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
      keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    }
    std::sort(keep.begin(), keep.end());
    ASSERT_EQ(out.size(), keep.size());
    std::map<int, std::size_t> hist;
    for (std::size_t j = 0; j < keep.size(); ++j) {
      EXPECT_EQ(out.images[j], static_cast<double>(keep[j]));
      ++hist[out.labels[j]];
    }
    for (const auto& [c, count] : hist) EXPECT_EQ(count, k);
  }
}

TEST(DegradedLabeler, TargetOneIsPlainTraining) {
  const auto splits = make_synthetic_dataset(toy_spec());
  Rng rng(7);
  StandardTrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 32;
  const auto out = make_degraded_labeler(splits.train, 1.0, small_mlp({1, 4, 4}, 2), tc, rng);
  EXPECT_EQ(out.flip_fraction, 0.0);
  EXPECT_GE(out.heldout_accuracy, 0.99);
}

TEST(DegradedLabeler, LowTargetIsCalibrated) {
  auto spec = toy_spec(4);
  spec.train_size = 800;
  const auto splits = make_synthetic_dataset(spec);
  Rng rng(8);
  StandardTrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 32;
  const auto out = make_degraded_labeler(splits.train, 0.45, small_mlp({1, 4, 4}, 4), tc, rng);
  EXPECT_NEAR(out.heldout_accuracy, 0.45, 0.03);
  EXPECT_LE(out.trials, 5u);
  EXPECT_GT(out.flip_fraction, 0.3);
}

TEST(DegradedLabeler, ChanceTargetIsRejected) {
  Rng rng(9);
  const auto data = random_dataset(40, {1, 2, 2}, 4, rng);
  EXPECT_THROW(make_degraded_labeler(data, 0.25, small_mlp({1, 2, 2}, 4), {}, rng), ValueError);
  EXPECT_THROW(make_degraded_labeler(data, 1.2, small_mlp({1, 2, 2}, 4), {}, rng), ValueError);
}

TEST(FlipRegion, FlipsBottomQuantile) {
  LabeledDataset d{Tensor(Shape{10, 1, 1, 1}), std::vector<int>(10, 1), 3};
  for (std::size_t i = 0; i < 10; ++i) d.images[i] = static_cast<double>(i) / 10;
  VectorXd dir(1);
  dir << 1.0;
  flip_region_labels(d, dir, 0.3);
  EXPECT_EQ(d.labels, (std::vector<int>{2, 2, 2, 1, 1, 1, 1, 1, 1, 1}));
}
