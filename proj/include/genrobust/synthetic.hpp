#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "genrobust/dataset.hpp"
#include "genrobust/rng.hpp"

namespace genrobust {

enum class SyntheticFamily { Gaussian, WarpedMixture };

std::string to_string(SyntheticFamily family);
SyntheticFamily synthetic_family_from_string(const std::string& name);

/// Class-conditional distribution on a low-dimensional affine subspace of pixel
/// space: x = 0.5 + A z with A a random orthonormal d x r basis.
///
///  - gaussian: z ~ N(m_c, s^2 I) with m_c = (separation * s / sqrt 2) e_c, so
///    class means are `separation` standard deviations apart.
///  - warped_mixture: z drawn from one of `components` Gaussians around m_c
///    (offsets of `component_spread` * s), then every pixel is warped by
///    x + warp * sin(2 pi x) / (2 pi).
///
/// Images are clipped to [0,1]; `pixel_noise` adds isotropic noise before clipping.
struct SyntheticDatasetSpec {
  SyntheticFamily family = SyntheticFamily::Gaussian;
  std::size_t num_classes = 4;
  ImageShape image{1, 8, 8};
  std::size_t latent_dim = 8;
  double latent_std = 0.1;
  double separation = 6.0;
  std::size_t components = 3;
  double component_spread = 3.0;
  double warp = 0.0;
  double pixel_noise = 0.0;
  std::size_t train_size = 2000;
  std::size_t test_size = 2000;
  std::size_t holdout_size = 2000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// A sampler for the distribution described by a spec (parameters fixed by spec.seed).
class SyntheticDistribution {
 public:
  explicit SyntheticDistribution(const SyntheticDatasetSpec& spec);

  const SyntheticDatasetSpec& spec() const noexcept { return spec_; }

  /// n examples with class sizes n / C (remainder to the lowest classes), shuffled.
  LabeledDataset sample(std::size_t n, Rng& rng) const;
  /// n examples of one class.
  LabeledDataset sample_class(std::size_t cls, std::size_t n, Rng& rng) const;

  /// Latent class mean (gaussian family) or first component mean (mixture family).
  const VectorXd& class_mean(std::size_t cls) const { return means_.at(cls).front(); }
  const MatrixXd& basis() const noexcept { return basis_; }

 private:
  void draw(std::size_t cls, std::span<double> out, Rng& rng) const;

  SyntheticDatasetSpec spec_;
  MatrixXd basis_;                            // d x r
  std::vector<std::vector<VectorXd>> means_;  // per class, per component
};

struct SyntheticSplits {
  LabeledDataset train;
  LabeledDataset test;
  LabeledDataset holdout;
};

/// Independent draws of the three splits.
SyntheticSplits make_synthetic_dataset(const SyntheticDatasetSpec& spec);

}  // namespace genrobust
