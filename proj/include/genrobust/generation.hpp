#pragma once

#include <optional>
#include <string>
#include <vector>

#include "genrobust/container.hpp"
#include "genrobust/dataset.hpp"
#include "genrobust/rng.hpp"
#include "genrobust/tensor.hpp"

namespace genrobust {

/// Top-k principal directions of flattened images.
struct PcaModel {
  Tensor mean;                // [d]
  Tensor basis;               // [d, k], orthonormal columns, descending variance
  Tensor explained_variance;  // [k], sample-covariance eigenvalues

  std::size_t k() const { return basis.rank() == 2 ? basis.dim(1) : 0; }
  std::size_t dim() const { return mean.size(); }

  /// Coordinates of the rows of `flat` ([N, d] or [N, ...]) in the basis: [N, k].
  MatrixXd project(const Tensor& flat) const;
  /// mean + basis * z for every row of z: [N, d].
  MatrixXd reconstruct(const MatrixXd& z) const;
};

/// Default component count for images of `d_flat` pixels: min(64, d_flat / 4), at least 1.
std::size_t default_pca_components(std::size_t d_flat);

/// PCA of the rows of `images` (any rank >= 2; rows are flattened). Requires
/// 1 <= k <= d_flat and k < N. Each basis column is signed so that its
/// largest-magnitude entry is positive.
PcaModel fit_pca(const Tensor& images, std::size_t k);

/// N(mean, L L^T) in PCA coordinates.
struct ClassGaussian {
  Tensor mean;        // [k]
  Tensor cov_factor;  // [k, k], lower triangular, non-negative diagonal
  double jitter = 0.0;  // diagonal term that was added before factoring
};

struct GaussianGenerativeModel {
  PcaModel pca;
  std::vector<ClassGaussian> per_class;
  ImageShape image{};

  std::size_t num_classes() const { return per_class.size(); }
};

struct GaussianFitOptions {
  /// Diagonal jitter tried first when factoring fails; default 1e-6 * trace / k.
  std::optional<double> jitter;
};

/// Per class: project to PCA space, take mean and covariance (N-1 divisor),
/// Cholesky-factor it, adding jitter (x10 per retry) whenever that fails.
GaussianGenerativeModel fit_class_gaussians(const PcaModel& pca, const LabeledDataset& data,
                                            const GaussianFitOptions& options = {});

/// Cholesky factor of cov, with the jitter policy of fit_class_gaussians.
ClassGaussian factor_gaussian(const VectorXd& mean, const MatrixXd& cov, std::optional<double> jitter = {});

/// z ~ N(mean, L L^T) in PCA coordinates, before the inverse transform: [n, k].
MatrixXd sample_latent(const GaussianGenerativeModel& model, std::size_t cls, std::size_t n, Rng& rng);

/// Images pca.mean + basis z, reshaped to [n, C, H, W] and clipped to [0,1].
Tensor sample(const GaussianGenerativeModel& model, std::size_t cls, std::size_t n, Rng& rng);

/// `per_class` samples of every class, labelled with the generating class, in class order.
LabeledDataset sample_balanced(const GaussianGenerativeModel& model, std::size_t per_class, Rng& rng);

void save_gaussian_model(const std::string& path, const GaussianGenerativeModel& model,
                         const std::string& config_hash = "");
GaussianGenerativeModel load_gaussian_model(const std::string& path);

/// Pre-generated images, optionally labelled, with their provenance
/// (e.g. "gaussian-fit", "external:ddpm").
struct ExternalSampleSet {
  Tensor images;
  std::optional<std::vector<int>> labels;
  std::string provenance;

  std::size_t size() const { return images.rank() == 0 ? 0 : images.dim(0); }
  /// Rank 4, pixels in [0,1], one label per image when labelled.
  void validate() const;
  /// The labelled view; labels must be below `num_classes`.
  LabeledDataset as_labeled(std::size_t num_classes) const;
};

void save_external_samples(const std::string& path, const ExternalSampleSet& set, const std::string& config_hash = "");
ExternalSampleSet load_external_samples(const std::string& path);

}  // namespace genrobust
