#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "genrobust/attacks.hpp"
#include "test_util.hpp"

using namespace genrobust;
using genrobust::testing::random_dataset;
using genrobust::testing::random_tensor;

namespace {

/// Binary linear classifier: logits = [w.x + b, 0].
LogitFn linear_model(const Tensor& w, double b) {
  return [w, b](Tape<double>& tape, Var<double> x) {
    const std::size_t d = w.size();
    Tensor weights(Shape{d, 2});
    for (std::size_t i = 0; i < d; ++i) weights[i * 2] = w[i];
    Tensor bias(Shape{2}, {b, 0.0});
    auto flat = reshape(x, Shape{x.value().rows(), d});
    return add_bias(matmul(flat, tape.constant(weights)), tape.constant(bias));
  };
}

Classifier small_model(std::uint64_t seed) {
  ModelConfig c;
  c.hidden = {12};
  c.input = {1, 3, 3};
  c.num_classes = 3;
  Rng rng(seed);
  return init_classifier(c, rng);
}

}  // namespace

TEST(Project, InsideIsUnchanged) {
  const Tensor d(Shape{3}, {0.05, -0.02, 0.0});
  EXPECT_EQ(project(d, {Norm::Linf, 0.1}), d);
  EXPECT_EQ(project(d, {Norm::L2, 0.1}), d);
}

TEST(Project, LinfClamps) {
  EXPECT_EQ(project(Tensor(Shape{2}, {0.2, -0.5}), {Norm::Linf, 0.1}).values(), (std::vector<double>{0.1, -0.1}));
}

TEST(Project, L2RescalesOntoBall) {
  Rng rng(1);
  auto d = random_tensor({7}, rng);
  const double eps = 0.3;
  d.vector() *= 2 * eps / d.vector().norm();
  EXPECT_NEAR(project(d, {Norm::L2, eps}).vector().norm(), eps, 1e-9);
}

TEST(Project, RandomPropertyCases) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const PerturbationSet set{rng.coin() ? Norm::Linf : Norm::L2, rng.uniform(0.0, 0.5)};
    const auto d = random_tensor({3, 4}, rng, -1, 1);
    const auto p = project_rows(d, set);
    EXPECT_EQ(project_rows(p, set), p);
    for (double n : row_norms(p, set.norm)) EXPECT_LE(n, set.epsilon + 1e-6);
  }
}

TEST(Project, NegativeEpsilonIsAValueError) {
  EXPECT_THROW(project(Tensor(Shape{1}), {Norm::Linf, -1.0}), ValueError);
}

TEST(Pgd, ZeroEpsilonAndZeroStepsAreIdentity) {
  Rng rng(3);
  const auto m = small_model(3);
  const auto data = random_dataset(6, {1, 3, 3}, 3, rng);
  AttackConfig cfg{10, 0.05, InnerOptimizer::SignSgd, 2, AttackObjective::CrossEntropy, true, 1};
  auto r = pgd(m, data.images, {data.labels}, {Norm::Linf, 0.0}, cfg);
  EXPECT_EQ(r.adversarial, data.images);
  for (double v : r.delta.data()) EXPECT_EQ(v, 0.0);
  cfg.steps = 0;
  cfg.random_start = false;
  r = pgd(m, data.images, {data.labels}, {Norm::Linf, 0.1}, cfg);
  for (double v : r.delta.data()) EXPECT_EQ(v, 0.0);
}

TEST(Pgd, ConcaveSurrogateConvergesToTheBoundary) {
  const Tensor x(Shape{1, 1}, {0.5});
  ObjectiveFn f = [&](const Tensor& cand, bool need_grad) {
    const double d = cand[0] - 0.5;
    ObjectiveEval e;
    e.values = Tensor(Shape{1}, {-(d - 0.3) * (d - 0.3)});
    if (need_grad) e.grad = Tensor(Shape{1, 1}, {-2 * (d - 0.3)});
    return e;
  };
  const auto r = maximize_perturbation(x, f, {Norm::Linf, 0.1},
                                       {20, 0.02, InnerOptimizer::SignSgd, 1, AttackObjective::Margin, false, 0});
  EXPECT_NEAR(r.delta[0], 0.1, 1e-12);
  const auto& trace = r.trace.at(0);
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_GE(trace[i], trace[i - 1]);
}

TEST(Pgd, ResultsRespectBallAndBox) {
  Rng rng(4);
  const auto m = small_model(4);
  const auto data = random_dataset(10, {1, 3, 3}, 3, rng);
  for (auto norm : {Norm::Linf, Norm::L2}) {
    for (auto opt : {InnerOptimizer::SignSgd, InnerOptimizer::Adam}) {
      const PerturbationSet set{norm, 0.3};
      const auto r = pgd(m, data.images, {data.labels}, set,
                         {8, 0.1, opt, 2, AttackObjective::Margin, true, 5});
      for (double n : row_norms(r.delta, norm)) EXPECT_LE(n, set.epsilon + 1e-6);
      for (double v : r.adversarial.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(Pgd, DeterministicAndThreadIndependent) {
  Rng rng(5);
  const auto m = small_model(5);
  const auto data = random_dataset(300, {1, 3, 3}, 3, rng);
  const AttackConfig cfg{5, 0.05, InnerOptimizer::Adam, 2, AttackObjective::CrossEntropy, true, 9};
  const auto a = pgd(m, data.images, {data.labels}, {Norm::L2, 0.5}, cfg);
  const auto b = pgd(m, data.images, {data.labels}, {Norm::L2, 0.5}, cfg);
  EXPECT_EQ(a.delta, b.delta);
  setenv("GENROBUST_THREADS", "3", 1);
  const auto c = pgd(m, data.images, {data.labels}, {Norm::L2, 0.5}, cfg);
  unsetenv("GENROBUST_THREADS");
  EXPECT_EQ(a.delta, c.delta);
  EXPECT_EQ(a.objective, c.objective);
}

TEST(Fgsm, EqualsOneStepPgdAndIdentityAtZero) {
  Rng rng(6);
  const auto m = small_model(6);
  const auto data = random_dataset(8, {1, 3, 3}, 3, rng);
  const PerturbationSet set{Norm::Linf, 0.05};
  const auto f = fgsm(m, data.images, data.labels, set);
  const auto p = pgd(m, data.images, {data.labels}, set,
                     {1, 0.05, InnerOptimizer::SignSgd, 1, AttackObjective::CrossEntropy, false, 0});
  // pgd keeps the better of the two iterates; fgsm returns the step itself.
  for (std::size_t r = 0; r < 8; ++r) {
    if (p.objective[r] > -INFINITY && f.objective[r] >= p.objective[r] - 1e-15) {
      EXPECT_EQ(std::vector<double>(f.delta.row(r).begin(), f.delta.row(r).end()),
                std::vector<double>(p.delta.row(r).begin(), p.delta.row(r).end()));
    }
  }
  EXPECT_EQ(fgsm(m, data.images, data.labels, {Norm::Linf, 0.0}).adversarial, data.images);
}

TEST(Fgsm, IncreasesLossOfLinearModel) {
  Tensor w(Shape{4}, {0.5, -1.0, 2.0, 0.25});
  const auto model = linear_model(w, -0.3);
  const Tensor x(Shape{1, 1, 2, 2}, {0.4, 0.6, 0.5, 0.5});
  const std::vector<int> y{0};
  const auto r = fgsm(model, x, y, {Norm::Linf, 0.05});
  Tape<double> t0, t1;
  const double before = cross_entropy_rows(model(t0, t0.constant(x)), y).value()[0];
  const double after = cross_entropy_rows(model(t1, t1.constant(r.adversarial)), y).value()[0];
  EXPECT_GT(after, before);
}

TEST(Cascade, ConstantModelKeepsCleanAccuracy) {
  LogitFn constant = [](Tape<double>& tape, Var<double> x) {
    auto flat = reshape(x, Shape{x.value().rows(), x.value().row_size()});
    auto zero = tape.constant(Tensor(Shape{flat.value().dim(1), 3}));
    return add_bias(matmul(flat, zero), tape.constant(Tensor(Shape{3}, {0.1, 0.5, 0.2})));
  };
  Rng rng(7);
  const auto data = random_dataset(20, {1, 2, 2}, 3, rng);
  CascadeConfig cfg;
  cfg.stage1.steps = 5;
  cfg.stage2.steps = 5;
  const auto r = attack_cascade(constant, data, {Norm::Linf, 0.3}, cfg);
  EXPECT_EQ(r.robust_accuracy, r.clean_accuracy);
}

TEST(Cascade, LinearModelBeyondMarginIsBroken) {
  Tensor w(Shape{4}, {1.0, -2.0, 0.5, 0.5});
  const auto model = linear_model(w, 0.0);
  // margin m = w.x = 0.5 for this x; ||w||_1 = 4, so eps > 0.125 breaks it.
  const Tensor x(Shape{1, 1, 2, 2}, {0.5, 0.2, 0.4, 0.4});
  const LabeledDataset data{x, {0}, 2};
  CascadeConfig cfg;
  cfg.stage1.steps = 20;
  cfg.stage1.restarts = 1;
  cfg.stage2.steps = 20;
  cfg.stage2.restarts = 1;
  cfg.top_k = 1;
  EXPECT_EQ(attack_cascade(model, data, {Norm::Linf, 0.13}, cfg).robust_accuracy, 0.0);
  EXPECT_EQ(attack_cascade(model, data, {Norm::Linf, 0.12}, cfg).robust_accuracy, 1.0);
}

TEST(Cascade, NeverAboveStageOneAndExactAtZeroEpsilon) {
  Rng rng(8);
  const auto m = small_model(8);
  const auto data = random_dataset(40, {1, 3, 3}, 3, rng);
  CascadeConfig cfg;
  cfg.stage1 = {6, 0.0, InnerOptimizer::SignSgd, 2, AttackObjective::CrossEntropy, true, 3};
  cfg.stage2 = {6, 0.0, InnerOptimizer::SignSgd, 2, AttackObjective::TargetedMargin, true, 4};
  cfg.top_k = 2;
  cfg.use_ema = false;
  const auto r = attack_cascade(m, data, {Norm::Linf, 0.2}, cfg);
  EXPECT_LE(r.robust_accuracy, r.stage1_accuracy);
  EXPECT_LE(r.stage1_accuracy, r.clean_accuracy);
  for (const auto& rec : r.records) {
    if (rec.stage2_survived) {
      EXPECT_TRUE(rec.stage1_survived);
    }
  }
  const auto zero = attack_cascade(m, data, {Norm::Linf, 0.0}, cfg);
  EXPECT_EQ(zero.robust_accuracy, zero.clean_accuracy);
}

TEST(Cascade, MoreRestartsNeverReportMoreRobustness) {
  Rng rng(9);
  const auto m = small_model(9);
  const auto data = random_dataset(60, {1, 3, 3}, 3, rng);
  CascadeConfig cfg;
  cfg.stage1 = {4, 0.0, InnerOptimizer::SignSgd, 1, AttackObjective::CrossEntropy, true, 3};
  cfg.stage2 = {4, 0.0, InnerOptimizer::SignSgd, 1, AttackObjective::TargetedMargin, true, 4};
  cfg.use_ema = false;
  const PerturbationSet set{Norm::Linf, 0.15};
  const double one = attack_cascade(m, data, set, cfg).robust_accuracy;
  cfg.stage1.restarts = cfg.stage2.restarts = 3;
  EXPECT_LE(attack_cascade(m, data, set, cfg).robust_accuracy, one);
}

TEST(TopWrongClasses, DescendingWithLowIndexTies) {
  const Tensor z(Shape{1, 4}, {5, 1, 1, 3});
  const std::vector<int> y{0};
  EXPECT_EQ(top_wrong_classes(z, y, 2), (std::vector<std::vector<int>>{{3, 1}}));
}
