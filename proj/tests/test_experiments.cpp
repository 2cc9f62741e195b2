#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <json.hpp>

#include "genrobust/experiments.hpp"
#include "genrobust/synthetic.hpp"
#include "test_util.hpp"

using namespace genrobust;
using nlohmann::json;

namespace {

json tiny_doc(const std::string& dir) {
  auto doc = json::parse(R"({
    "data": {"train_size": 240, "test_size": 100, "holdout_size": 40, "latent_dim": 6, "seed": 1},
    "model": {"hidden": [16]},
    "labeler": {"hidden": [32], "epochs": 30, "batch_size": 32},
    "generator": {"pool_size": 120},
    "train": {"epochs": 1, "batch_size": 32, "lr0": 0.1,
              "inner": {"steps": 2},
              "early_stop": {"validation_size": 40, "pgd_steps": 3},
              "perturbation": {"epsilon": 0.03}},
    "eval": {"test_size": 40, "cascade": {"stage1": {"steps": 3, "restarts": 1}, "stage2": {"steps": 3, "restarts": 1}}},
    "sweep": {"kind": "mixing", "seeds": 2, "alphas": [1.0, 0.5], "plots": true}
  })");
  doc["output_dir"] = dir;
  return doc;
}

double cell(const SweepResult& r, double value, std::size_t seed) {
  for (const auto& rec : r.records) {
    if (rec.value == value && rec.seed_index == seed) return rec.robust_accuracy;
  }
  return NAN;
}

}  // namespace

TEST(Synthetic, SameSeedSameData) {
  SyntheticDatasetSpec spec;
  spec.train_size = 50;
  spec.test_size = 20;
  spec.holdout_size = 10;
  const auto a = make_synthetic_dataset(spec);
  const auto b = make_synthetic_dataset(spec);
  EXPECT_EQ(a.train.images, b.train.images);
  EXPECT_EQ(a.test.labels, b.test.labels);
  spec.seed = 1;
  EXPECT_NE(make_synthetic_dataset(spec).train.images, a.train.images);
}

TEST(Synthetic, ClassHistogramsMatchSizes) {
  SyntheticDatasetSpec spec;
  spec.num_classes = 3;
  spec.train_size = 100;
  spec.test_size = 30;
  spec.holdout_size = 7;
  const auto s = make_synthetic_dataset(spec);
  EXPECT_EQ(s.train.size(), 100u);
  EXPECT_EQ(s.test.size(), 30u);
  EXPECT_EQ(s.holdout.size(), 7u);
  std::map<int, int> hist;
  for (int y : s.train.labels) ++hist[y];
  EXPECT_EQ(hist[0], 34);
  EXPECT_EQ(hist[1], 33);
  EXPECT_EQ(hist[2], 33);
  for (double v : s.train.images.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Synthetic, BayesRuleOnTwoClassesIsNearPerfect) {
  SyntheticDatasetSpec spec;
  spec.num_classes = 2;
  spec.separation = 6.0;
  spec.test_size = 5000;
  spec.train_size = 10;
  spec.holdout_size = 10;
  const SyntheticDistribution dist(spec);
  Rng rng(3);
  const auto test = dist.sample(5000, rng);
  const MatrixXd& basis = dist.basis();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const VectorXd x = Eigen::Map<const VectorXd>(test.images.row(i).data(), basis.rows()).array() - 0.5;
    const VectorXd z = basis.transpose() * x;
    const int pred = (z - dist.class_mean(0)).squaredNorm() <= (z - dist.class_mean(1)).squaredNorm() ? 0 : 1;
    correct += pred == test.labels[i];
  }
  EXPECT_GE(double(correct) / double(test.size()), 0.99);
}

TEST(Stats, Spearman) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3}, {5, 5, 5}), 0.0);
  // ties take average ranks: ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4)
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {1, 2, 2, 3}), 0.9486832980505138, 1e-12);
}

TEST(Stats, SignTest) {
  EXPECT_DOUBLE_EQ(sign_test_p({1, 1, 1}, {0, 0, 0}), 0.125);
  EXPECT_DOUBLE_EQ(sign_test_p({1, 1, 0}, {0, 0, 0}), 0.25);  // tie dropped
  EXPECT_DOUBLE_EQ(sign_test_p({0, 0}, {0, 0}), 1.0);
  EXPECT_NEAR(sign_test_p({1, 1, 1, 1, 0}, {0, 0, 0, 0, 1}), 6.0 / 32.0, 1e-15);
}

TEST(Plot, SvgMentionsSeries) {
  const auto svg = line_plot_svg("t", "x", "y", {{"wide", {0, 1}, {0.5, 0.7}}, {"narrow", {0, 1}, {0.4, 0.45}}});
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("narrow"), std::string::npos);
}

TEST(Sweep, MixingRowsAndResume) {
  const auto dir = genrobust::testing::temp_dir("sweep_mixing");
  const auto config = parse_config(tiny_doc(dir));
  const auto first = run_sweep(config);
  ASSERT_EQ(first.records.size(), 4u);
  EXPECT_EQ(first.trained_cells, 4u);
  EXPECT_EQ(first.axis, "alpha");
  for (const auto& r : first.records) EXPECT_TRUE(r.ok) << r.error;
  EXPECT_EQ(first.values(), (std::vector<double>{1.0, 0.5}));
  EXPECT_TRUE(std::filesystem::exists(dir + "/cells.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/summary.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/mixing.svg"));

  // Resumed: nothing retrained, identical numbers.
  const auto again = run_sweep(config);
  EXPECT_EQ(again.trained_cells, 0u);
  for (double a : {1.0, 0.5}) {
    for (std::size_t s = 0; s < 2; ++s) EXPECT_EQ(cell(again, a, s), cell(first, a, s));
  }

  // Delete one marker: only that cell is recomputed, bit-identically.
  std::filesystem::remove_all(dir + "/cells");
  std::filesystem::create_directories(dir + "/cells");
  const auto fresh = run_sweep(config);
  EXPECT_EQ(fresh.trained_cells, 4u);
  for (double a : {1.0, 0.5}) {
    for (std::size_t s = 0; s < 2; ++s) EXPECT_EQ(cell(fresh, a, s), cell(first, a, s));
  }

  // Extending the grid reuses the finished cells.
  auto doc = tiny_doc(dir);
  doc["sweep"]["seeds"] = 3;
  const auto wider = run_sweep(parse_config(doc));
  EXPECT_EQ(wider.records.size(), 6u);
  EXPECT_EQ(wider.trained_cells, 2u);

  // Changing anything a cell depends on is refused.
  doc["train"]["lr0"] = 0.2;
  EXPECT_THROW(run_sweep(parse_config(doc)), ConfigError);
}

TEST(Sweep, OtherKindsAreOrdered) {
  auto doc = tiny_doc("");
  doc["sweep"] = json::parse(R"({"seeds": 1, "levels": [0.6, 1.0], "gauss_fractions": [0, 1],
                                  "covered_classes": [0, 4], "widths": [[8], [32, 32]], "sample_counts": [1, 60]})");
  for (const std::string kind : {"condition1", "condition2", "coverage", "scaling"}) {
    const auto dir = genrobust::testing::temp_dir("sweep_" + kind);
    doc["output_dir"] = dir;
    doc["sweep"]["kind"] = kind;
    const auto r = run_sweep(parse_config(doc));
    EXPECT_EQ(r.kind, kind);
    for (const auto& rec : r.records) EXPECT_TRUE(rec.ok) << kind << ": " << rec.error;
    const auto groups = r.groups();
    EXPECT_EQ(groups.size(), kind == "coverage" ? 2u : 1u);
    for (const auto& g : groups) {
      const auto v = r.values(g);
      EXPECT_TRUE(std::is_sorted(v.begin(), v.end())) << kind;
      EXPECT_EQ(v.size(), 2u);
    }
    if (kind == "scaling") {
      // A one-image pool is memorised: far better on itself than on real data.
      const auto gen = r.mean_generated_robust();
      const auto real = r.mean_robust();
      EXPECT_GT(gen[0], real[0]);
    }
    if (kind == "condition1") {
      EXPECT_NEAR(r.records.front().labeler_accuracy, 0.6, 0.05);
    }
  }
}

TEST(Sweep, UnknownKindIsRejected) {
  auto doc = tiny_doc(genrobust::testing::temp_dir("sweep_bad"));
  doc["sweep"]["kind"] = "fig7";
  EXPECT_THROW(parse_config(doc), ConfigError);
}
