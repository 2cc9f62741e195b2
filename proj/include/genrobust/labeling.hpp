#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "genrobust/dataset.hpp"
#include "genrobust/model.hpp"
#include "genrobust/rng.hpp"

namespace genrobust {

/// Generated images with the labels a non-robust classifier assigned to them.
struct PseudoLabeledSet {
  Tensor images;
  std::vector<int> labels;
  std::vector<double> scores;
  std::size_t num_classes = 0;
  std::string labeler_id;

  std::size_t size() const noexcept { return labels.size(); }
  LabeledDataset as_dataset() const { return LabeledDataset{images, labels, num_classes}; }
  PseudoLabeledSet subset(std::span<const std::size_t> indices) const;
};

/// Wraps an already-labelled set (e.g. samples labelled by their generating class), score 1.
PseudoLabeledSet from_labeled(const LabeledDataset& data, const std::string& labeler_id);

enum class ScoreKind { MaxProbability, MaxLogit };

/// Labels = argmax of the labeler's averaged-weight logits; score = max softmax
/// probability (or max logit).
PseudoLabeledSet pseudo_label(const Classifier& labeler, const Tensor& images,
                              ScoreKind score = ScoreKind::MaxProbability, const std::string& labeler_id = "");

/// Keeps the K highest-scoring items of every class (ties to the lower index), in
/// original order. Throws ValueError naming each class with fewer than K items.
PseudoLabeledSet filter_topk_per_class(const PseudoLabeledSet& set, std::size_t k);

/// Plain cross-entropy training schedule for the labeler.
struct StandardTrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double ema_tau = 0.995;

  void validate() const;
};

/// Non-adversarial training with Nesterov SGD and a cosine schedule. Returns the
/// weight-averaged model (params replaced by the average). Throws NumericError on divergence.
Classifier train_nonrobust(const LabeledDataset& data, const ModelConfig& config, const StandardTrainConfig& train,
                           Rng& rng);

/// Relabels the examples whose projection on `direction` falls below the
/// `fraction` quantile to (y + 1) mod C. Returns the threshold used.
double flip_region_labels(LabeledDataset& data, const VectorXd& direction, double fraction);

struct DegradeOptions {
  double tolerance = 0.02;
  std::size_t max_trials = 5;
  double heldout_fraction = 0.2;
};

struct DegradedLabeler {
  Classifier model;
  double flip_fraction = 0.0;
  double heldout_accuracy = 0.0;
  std::size_t trials = 0;
};

/// Trains labelers on increasingly corrupted labels until held-out accuracy is
/// within `tolerance` of the target (secant search over the flipped fraction).
/// The last `heldout_fraction` of `data` is held out. Throws ValueError when the
/// target is not in (1/C, 1] or cannot be reached in `max_trials`.
DegradedLabeler make_degraded_labeler(const LabeledDataset& data, double target_accuracy, const ModelConfig& config,
                                      const StandardTrainConfig& train, Rng& rng, const DegradeOptions& options = {});

}  // namespace genrobust
