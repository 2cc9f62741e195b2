#include <gtest/gtest.h>

#include <cmath>

#include "genrobust/generation.hpp"
#include "test_util.hpp"

using namespace genrobust;
using genrobust::testing::random_tensor;

namespace {

MatrixXd as_matrix(const Tensor& t) { return t.matrix(); }

}  // namespace

TEST(Pca, ExactLineIsReconstructed) {
  Rng rng(1);
  Tensor x(Shape{50, 3});
  for (std::size_t i = 0; i < 50; ++i) {
    const double s = rng.uniform();
    x[i * 3 + 0] = 0.1 + 0.5 * s;
    x[i * 3 + 1] = 0.2 + 0.3 * s;
    x[i * 3 + 2] = 0.9 - 0.6 * s;
  }
  const auto pca = fit_pca(x, 1);
  EXPECT_LT((pca.reconstruct(pca.project(x)) - as_matrix(x)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Pca, FullBasisReconstructsAnything) {
  Rng rng(2);
  const auto x = random_tensor({30, 6}, rng, 0, 1);
  const auto pca = fit_pca(x, 6);
  EXPECT_LT((pca.reconstruct(pca.project(x)) - as_matrix(x)).cwiseAbs().maxCoeff(), 1e-8);
  const MatrixXd b = pca.basis.matrix();
  EXPECT_LT((b.transpose() * b - MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Pca, IsotropicDataHasEqualVariances) {
  Rng rng(3);
  Tensor x(Shape{10000, 4});
  for (auto& v : x.data()) v = rng.normal();
  const auto pca = fit_pca(x, 4);
  for (double v : pca.explained_variance.data()) EXPECT_NEAR(v, 1.0, 0.06);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_LE(pca.explained_variance[i], pca.explained_variance[i - 1]);
}

TEST(Pca, ReconstructionErrorIsOrthogonalToBasis) {
  Rng rng(4);
  const auto x = random_tensor({40, 8}, rng, 0, 1);
  const auto pca = fit_pca(x, 3);
  const MatrixXd centered = as_matrix(x).rowwise() - pca.mean.vector().transpose();
  const MatrixXd residual = as_matrix(x) - pca.reconstruct(pca.project(x));
  EXPECT_LT((residual * pca.basis.matrix()).cwiseAbs().maxCoeff(), 1e-8);
  (void)centered;
}

TEST(Pca, BadComponentCounts) {
  Rng rng(5);
  const auto x = random_tensor({10, 4}, rng);
  EXPECT_THROW(fit_pca(x, 0), ValueError);
  EXPECT_THROW(fit_pca(x, 5), ValueError);
  EXPECT_EQ(default_pca_components(64), 16u);
  EXPECT_EQ(default_pca_components(3072), 64u);
}

TEST(ClassGaussians, SinglePointWithJitterIsScaledIdentity) {
  Rng rng(6);
  Tensor images(Shape{2, 1, 2, 2});
  for (auto& v : images.data()) v = rng.uniform();
  const LabeledDataset data{images, {0, 1}, 2};
  const auto pca = fit_pca(random_tensor({20, 4}, rng, 0, 1), 3);
  const auto model = fit_class_gaussians(pca, data, GaussianFitOptions{0.04});
  for (const auto& g : model.per_class) {
    const MatrixXd f = g.cov_factor.matrix();
    EXPECT_LT((f - 0.2 * MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ClassGaussians, FactorMatchesCovariancePlusJitter) {
  Rng rng(7);
  MatrixXd a = MatrixXd::Random(4, 2);
  const MatrixXd cov = a * a.transpose();  // rank 2: needs jitter
  const auto g = factor_gaussian(VectorXd::Zero(4), cov);
  const MatrixXd f = g.cov_factor.matrix();
  EXPECT_GT(g.jitter, 0.0);
  EXPECT_LT((f * f.transpose() - cov - g.jitter * MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_TRUE(f.isLowerTriangular());
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_GE(f(i, i), 0.0);
}

TEST(ClassGaussians, RecoversKnownMean) {
  Rng rng(8);
  const std::size_t n = 10000;
  Tensor images(Shape{n, 1, 1, 3});
  const double mean[3] = {0.3, 0.5, 0.6};
  const double sd[3] = {0.05, 0.02, 0.04};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 3; ++j) images[i * 3 + j] = mean[j] + sd[j] * rng.normal();
  }
  // Class 1 draws from the same distribution; only class 0 is checked.
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 2);
  const LabeledDataset data{images, labels, 2};
  const auto pca = fit_pca(images, 3);
  const auto model = fit_class_gaussians(pca, data);
  const MatrixXd back = pca.reconstruct(model.per_class[0].mean.matrix().transpose());
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(back(0, j), mean[j], 3 * sd[j] / std::sqrt(double(n / 2)) + 1e-12);
}

TEST(ClassGaussians, IdenticalClassesGiveIdenticalFits) {
  Rng rng(9);
  const auto half = random_tensor({10, 1, 2, 2}, rng, 0, 1);
  const LabeledDataset data = concat({half, std::vector<int>(10, 0), 2}, {half, std::vector<int>(10, 1), 2});
  const auto model = fit_class_gaussians(fit_pca(data.images, 3), data);
  EXPECT_EQ(model.per_class[0].mean, model.per_class[1].mean);
  EXPECT_EQ(model.per_class[0].cov_factor, model.per_class[1].cov_factor);
}

TEST(ClassGaussians, EmptyClassIsAnError) {
  Rng rng(10);
  const LabeledDataset data{random_tensor({4, 1, 2, 2}, rng, 0, 1), {0, 0, 0, 0}, 2};
  EXPECT_THROW(fit_class_gaussians(fit_pca(data.images, 2), data), ValueError);
}

TEST(Sample, ZeroFactorGivesClippedMeanImage) {
  Rng rng(11);
  const auto pca = fit_pca(random_tensor({20, 4}, rng, 0, 1), 2);
  GaussianGenerativeModel model;
  model.pca = pca;
  model.image = {1, 2, 2};
  model.per_class.push_back({Tensor(Shape{2}, {3.0, -0.2}), Tensor(Shape{2, 2}), 0.0});
  const auto s = sample(model, 0, 5, rng);
  MatrixXd mean_image = pca.reconstruct(model.per_class[0].mean.matrix().transpose());
  mean_image = mean_image.cwiseMax(0.0).cwiseMin(1.0);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(s[i * 4 + j], mean_image(0, static_cast<Eigen::Index>(j)));
  }
}

TEST(Sample, LatentMeanAndDeterminism) {
  Rng rng(12);
  const auto data_images = random_tensor({200, 1, 3, 3}, rng, 0, 1);
  std::vector<int> labels(200);
  for (std::size_t i = 0; i < 200; ++i) labels[i] = static_cast<int>(i % 2);
  const auto model = fit_class_gaussians(fit_pca(data_images, 4), {data_images, labels, 2});
  Rng a(5), b(5);
  EXPECT_EQ(sample(model, 1, 10, a), sample(model, 1, 10, b));
  Rng c(6);
  const std::size_t n = 10000;
  const MatrixXd z = sample_latent(model, 0, n, c);
  const MatrixXd f = model.per_class[0].cov_factor.matrix();
  const double sigma_max = std::sqrt((f * f.transpose()).diagonal().maxCoeff());
  const VectorXd diff = z.colwise().mean().transpose() - model.per_class[0].mean.vector();
  EXPECT_LT(diff.cwiseAbs().maxCoeff(), 4 * sigma_max / std::sqrt(double(n)));
}

TEST(GeneratorFile, RoundTrip) {
  Rng rng(13);
  const auto images = random_tensor({40, 1, 2, 2}, rng, 0, 1);
  std::vector<int> labels(40);
  for (std::size_t i = 0; i < 40; ++i) labels[i] = static_cast<int>(i % 2);
  const auto model = fit_class_gaussians(fit_pca(images, 3), {images, labels, 2});
  const auto path = genrobust::testing::temp_dir("gen") + "/g.grtc";
  save_gaussian_model(path, model, "h");
  const auto back = load_gaussian_model(path);
  Rng a(1), b(1);
  EXPECT_EQ(sample(back, 1, 4, a), sample(model, 1, 4, b));
}

TEST(ExternalSamples, RoundTripAndValidation) {
  Rng rng(14);
  const auto dir = genrobust::testing::temp_dir("ext");
  ExternalSampleSet set{random_tensor({6, 1, 2, 2}, rng, 0, 1), std::vector<int>{0, 1, 2, 0, 1, 2}, "external:ddpm"};
  save_external_samples(dir + "/s.grtc", set, "h");
  const auto back = load_external_samples(dir + "/s.grtc");
  EXPECT_EQ(back.images, set.images);
  EXPECT_EQ(back.labels, set.labels);
  EXPECT_EQ(back.provenance, "external:ddpm");
  EXPECT_THROW(back.as_labeled(2), ValueError);  // label 2 is not below C = 2
  EXPECT_NO_THROW(back.as_labeled(3));

  auto bad = set;
  bad.images[3] = 1.5;
  EXPECT_THROW(save_external_samples(dir + "/bad.grtc", bad), ValueError);
  // A file written by another tool with an out-of-range pixel is rejected on load.
  TensorContainer c;
  c.set_meta("kind", "samples");
  c.add("images", bad.images.cast<float>());
  save_container(dir + "/bad.grtc", c);
  EXPECT_THROW(load_external_samples(dir + "/bad.grtc"), ValueError);
}
