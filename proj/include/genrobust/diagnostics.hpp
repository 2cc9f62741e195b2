#pragma once

#include <string>
#include <vector>

#include "genrobust/attacks.hpp"
#include "genrobust/generation.hpp"
#include "genrobust/model.hpp"

namespace genrobust {

/// Penultimate features of a classifier reduced by PCA.
struct FeatureEmbedder {
  Classifier backbone;
  PcaModel pca;

  std::size_t dim() const { return pca.k(); }
};

/// Fits the feature PCA on `fit_images` with min(k, feature_dim, N - 1) components.
FeatureEmbedder make_embedder(const Classifier& backbone, const Tensor& fit_images, std::size_t k = 100);

/// Embeddings [N, dim] of images, using the backbone's averaged weights.
Tensor embed(const FeatureEmbedder& embedder, const Tensor& images);

struct Complementarity {
  double c_train = 0.0;
  double c_test = 0.0;
  double c_self = 0.0;
  double v_train = 0.0;
  double v_test = 0.0;

  friend bool operator==(const Complementarity&, const Complementarity&) = default;
};

/// Nearest-neighbour attribution of every generated point to the train set, the
/// test set or the rest of the generated set, plus the fraction of distinct
/// train/test points that are somebody's nearest neighbour. Distances are squared
/// Euclidean; ties go to train, then test, then self, then the lowest index.
/// All three sets must have N >= 2 rows of equal width.
Complementarity complementarity_coverage(const Tensor& train, const Tensor& test, const Tensor& gen);

/// Index of the nearest row of `refs` to every row of `queries` (ties to the lowest index).
std::vector<std::size_t> nearest_neighbors(const Tensor& queries, const Tensor& refs);

/// Frechet distance between Gaussian fits of two feature sets (rows are samples).
double fid(const Tensor& features_a, const Tensor& features_b);

struct ScoreSummary {
  double mean = 0.0;
  double std = 0.0;
};

/// exp(E_x KL(p(y|x) || p(y))) per split of the rows of `probabilities`; mean and
/// population std over splits.
ScoreSummary inception_score(const Tensor& probabilities, std::size_t splits = 10);

/// inception_score of the classifier's softmax outputs on `images`.
ScoreSummary is_score(const Classifier& classifier, const Tensor& images, std::size_t splits = 10);

/// Two sets of N uniform points on [0,1]; fraction of distinct points of the second
/// set that are the nearest neighbour of some point of the first.
double uniform_unique_nn_baseline(std::size_t n, Rng& rng);

struct LandscapeGrid {
  std::vector<double> coords;  // shared by both axes
  MatrixXd values;             // values(i, j): margin at x + coords[i] u + coords[j] v
  Tensor u;                    // worst-case direction (PGD perturbation)
  Tensor v;                    // Rademacher direction scaled to the budget
};

/// Margin-loss surface around one example [1,C,H,W] spanned by the PGD-40
/// perturbation and a random +-1 direction scaled to epsilon.
LandscapeGrid loss_landscape(const Classifier& model, const Tensor& x, int label, const PerturbationSet& set,
                             double half_extent, std::size_t resolution, Rng& rng, bool use_ema = true);

void write_landscape_csv(const std::string& path, const LandscapeGrid& grid);

struct DiagnosticsReport {
  Complementarity complementarity;
  double fid = 0.0;
  double is_mean = 0.0;
  double is_std = 0.0;
};

/// Draws N points from each image set, embeds them and computes every metric.
/// FID compares the generated and train embeddings; IS uses `classifier`.
DiagnosticsReport diagnose(const FeatureEmbedder& embedder, const Classifier& classifier, const Tensor& train,
                           const Tensor& test, const Tensor& gen, std::size_t n, Rng& rng,
                           std::size_t is_splits = 10);

/// One header row plus one value row.
void write_diagnostics_csv(const std::string& path, const DiagnosticsReport& report);

}  // namespace genrobust
