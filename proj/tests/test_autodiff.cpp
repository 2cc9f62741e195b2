#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "genrobust/autodiff.hpp"
#include "genrobust/rng.hpp"
#include "test_util.hpp"

using namespace genrobust;
using genrobust::testing::random_tensor;
using genrobust::testing::rel_error;

namespace {

Tensor mat(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor(Shape{r, c}, std::move(v)); }

}  // namespace

TEST(Matmul, IdentityTimesVector) {
  Tape<double> tape;
  auto out = matmul(tape.constant(mat(2, 2, {1, 0, 0, 1})), tape.constant(mat(2, 1, {3, 4})));
  EXPECT_EQ(out.value().values(), (std::vector<double>{3, 4}));
}

TEST(Matmul, RowTimesColumn) {
  Tape<double> tape;
  auto out = matmul(tape.constant(mat(1, 2, {1, 2})), tape.constant(mat(2, 1, {3, 4})));
  EXPECT_EQ(out.value().item(), 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(1);
  const auto a = random_tensor({4, 5}, rng);
  const auto b = random_tensor({5, 3}, rng);
  Tape<double> tape;
  const auto& c = matmul(tape.constant(a), tape.constant(b)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += a[i * 5 + k] * b[k * 3 + j];
      EXPECT_NEAR(c[i * 3 + j], s, 1e-12);
    }
  }
}

TEST(Silu, ValuesAndGradient) {
  Tape<double> tape;
  auto x = tape.watch(Tensor(Shape{3}, {0.0, 50.0, 1.0}));
  auto y = silu(x);
  EXPECT_EQ(y.value()[0], 0.0);
  EXPECT_LT(rel_error(y.value()[1], 50.0, 1e-12), 1e-6);
  tape.backward(sum(y));
  const double g = tape.grad(x)[2];
  const double h = 1e-5;
  auto f = [](double v) { return v / (1.0 + std::exp(-v)); };
  EXPECT_LT(rel_error(g, (f(1 + h) - f(1 - h)) / (2 * h)), 1e-7);
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  Tape<double> tape;
  const std::vector<int> y{3};
  auto loss = softmax_cross_entropy(tape.constant(Tensor(Shape{1, 10}, 0.7)), y);
  EXPECT_NEAR(loss.value().item(), std::log(10.0), 1e-12);
}

TEST(CrossEntropy, HugeLogitIsStable) {
  Tape<double> tape;
  const std::vector<int> y{0};
  auto loss = softmax_cross_entropy(tape.constant(mat(1, 2, {1e6, 0})), y);
  EXPECT_TRUE(std::isfinite(loss.value().item()));
  EXPECT_NEAR(loss.value().item(), 0.0, 1e-12);
}

TEST(CrossEntropy, MatchesDirectFormula) {
  Rng rng(2);
  const auto z = random_tensor({8, 5}, rng, -3, 3);
  std::vector<int> y;
  for (int i = 0; i < 8; ++i) y.push_back(static_cast<int>(rng.uniform_index(5)));
  Tape<double> tape;
  const double got = softmax_cross_entropy(tape.constant(z), y).value().item();
  double want = 0.0;
  for (std::size_t r = 0; r < 8; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) s += std::exp(z[r * 5 + c]);
    want += -std::log(std::exp(z[r * 5 + y[r]]) / s);
  }
  EXPECT_NEAR(got, want / 8.0, 1e-10);
}

TEST(KlDivergence, IdenticalIsZeroAndRandomIsNonNegative) {
  Rng rng(3);
  const auto p = random_tensor({6, 4}, rng, -2, 2);
  Tape<double> tape;
  auto pv = tape.constant(p);
  EXPECT_EQ(kl_divergence(pv, pv).value().item(), 0.0);
  for (int trial = 0; trial < 50; ++trial) {
    Tape<double> t;
    auto v = kl_divergence(t.constant(random_tensor({3, 5}, rng, -4, 4)), t.constant(random_tensor({3, 5}, rng, -4, 4)));
    EXPECT_GE(v.value().item(), -1e-9);
  }
}

TEST(KlDivergence, MatchesDirectSummation) {
  Rng rng(4);
  const auto p = random_tensor({4, 3}, rng, -2, 2);
  const auto q = random_tensor({4, 3}, rng, -2, 2);
  Tape<double> tape;
  const double got = kl_divergence(tape.constant(p), tape.constant(q)).value().item();
  double want = 0.0;
  for (std::size_t r = 0; r < 4; ++r) {
    double sp = 0.0, sq = 0.0;
    for (std::size_t c = 0; c < 3; ++c) sp += std::exp(p[r * 3 + c]), sq += std::exp(q[r * 3 + c]);
    for (std::size_t c = 0; c < 3; ++c) {
      const double pp = std::exp(p[r * 3 + c]) / sp;
      const double qq = std::exp(q[r * 3 + c]) / sq;
      want += pp * std::log(pp / qq);
    }
  }
  EXPECT_NEAR(got, want / 4.0, 1e-10);
}

TEST(Backward, SumGivesOnes) {
  Tape<double> tape;
  auto x = tape.watch(Tensor(Shape{2, 3}, 0.5));
  tape.backward(sum(x));
  const Tensor g = tape.grad(x);
  for (double v : g.data()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, SquareAtThree) {
  Tape<double> tape;
  auto x = tape.watch(Tensor::scalar(3.0));
  tape.backward(mul(x, x));
  EXPECT_EQ(tape.grad(x).item(), 6.0);
}

TEST(Softmax, RowsSumToOneAndLogIsFinite) {
  Rng rng(5);
  auto z = random_tensor({10, 7}, rng, -500, 500);
  const auto p = softmax_rows<double>(z.matrix());
  const auto lp = log_softmax_rows<double>(z.matrix());
  for (Eigen::Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-6);
  EXPECT_TRUE(lp.allFinite());
}

TEST(MarginLoss, Examples) {
  const std::vector<int> y0{0};
  EXPECT_EQ(margin_loss(mat(1, 2, {3, 1}), y0)[0], 2.0);
  EXPECT_EQ(margin_loss(mat(1, 3, {2, 2, 2}), y0)[0], 0.0);
  Rng rng(6);
  const auto z = random_tensor({16, 10}, rng);
  std::vector<int> y;
  for (int i = 0; i < 16; ++i) y.push_back(static_cast<int>(rng.uniform_index(10)));
  const auto m = margin_loss(z, y);
  for (std::size_t r = 0; r < 16; ++r) {
    double best = -INFINITY;
    for (std::size_t c = 0; c < 10; ++c) {
      if (static_cast<int>(c) != y[r]) best = std::max(best, z[r * 10 + c]);
    }
    EXPECT_NEAR(m[r], z[r * 10 + y[r]] - best, 1e-12);
  }
}

// 100 random probes on a two-layer SiLU network built from the primitives.
TEST(GradientOracle, TwoLayerSiluNetwork) {
  Rng rng(7);
  const auto x = random_tensor({5, 6}, rng);
  std::vector<Tensor> params{random_tensor({6, 8}, rng), random_tensor({8}, rng), random_tensor({8, 3}, rng),
                             random_tensor({3}, rng)};
  const std::vector<int> y{0, 1, 2, 1, 0};
  auto loss_and_grads = [&](bool with_grad, std::vector<Tensor>* grads) {
    Tape<double> tape;
    std::vector<Var<double>> p;
    for (std::size_t i = 0; i < params.size(); ++i) p.push_back(tape.parameter("p" + std::to_string(i), params[i]));
    auto h = silu(add_bias(matmul(tape.constant(x), p[0]), p[1]));
    auto loss = softmax_cross_entropy(add_bias(matmul(h, p[2]), p[3]), y);
    const double v = loss.value().item();
    if (with_grad) {
      auto g = tape.backward(loss);
      for (std::size_t i = 0; i < params.size(); ++i) grads->push_back(g.at("p" + std::to_string(i)));
    }
    return v;
  };
  std::vector<Tensor> grads;
  loss_and_grads(true, &grads);
  const double h = 1e-5;
  for (int probe = 0; probe < 100; ++probe) {
    const auto which = rng.uniform_index(params.size());
    const auto idx = rng.uniform_index(params[which].size());
    const double saved = params[which][idx];
    params[which][idx] = saved + h;
    const double up = loss_and_grads(false, nullptr);
    params[which][idx] = saved - h;
    const double down = loss_and_grads(false, nullptr);
    params[which][idx] = saved;
    EXPECT_LT(rel_error(grads[which][idx], (up - down) / (2 * h)), 1e-5) << "probe " << probe;
  }
}

TEST(GradientOracle, Conv2dAgainstFiniteDifferences) {
  Rng rng(8);
  const auto x = random_tensor({2, 2, 5, 5}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto b = random_tensor({3}, rng);
  auto f = [&](std::map<std::string, Tensor>* grads) {
    Tape<double> tape;
    auto wv = tape.parameter("w", w);
    auto bv = tape.parameter("b", b);
    auto out = conv2d(tape.constant(x), wv, bv, 2, 1);
    auto loss = sum(mul(silu(out), silu(out)));
    if (grads) *grads = tape.backward(loss);
    return loss.value().item();
  };
  std::map<std::string, Tensor> g;
  f(&g);
  const double h = 1e-5;
  for (int probe = 0; probe < 40; ++probe) {
    Tensor& t = probe % 2 ? w : b;
    const auto& gt = g.at(probe % 2 ? "w" : "b");
    const auto idx = rng.uniform_index(t.size());
    const double saved = t[idx];
    t[idx] = saved + h;
    const double up = f(nullptr);
    t[idx] = saved - h;
    const double down = f(nullptr);
    t[idx] = saved;
    EXPECT_LT(rel_error(gt[idx], (up - down) / (2 * h)), 1e-5);
  }
}

TEST(Tape, RecordingTwiceIsDeterministic) {
  Rng rng(9);
  const auto a = random_tensor({3, 4}, rng);
  auto run = [&] {
    Tape<double> tape;
    auto x = tape.watch(a);
    tape.backward(sum(silu(mul(x, x))));
    return tape.grad(x);
  };
  EXPECT_EQ(run(), run());
}
