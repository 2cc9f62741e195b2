#pragma once

#include <string>

#include "genrobust/container.hpp"
#include "genrobust/dataset.hpp"
#include "genrobust/labeling.hpp"
#include "genrobust/model.hpp"

namespace genrobust {

/// Dataset file: "images" (f64 [N,C,H,W]), "labels" (u32 [N]), meta kind=dataset, num_classes, config_hash.
void save_dataset(const std::string& path, const LabeledDataset& data, const std::string& config_hash);
LabeledDataset load_dataset(const std::string& path);

/// Checkpoint: "params/<name>" and "ema/<name>" (f64), meta kind=classifier,
/// model_config (JSON), step, config_hash. Loading reproduces logits bit-for-bit.
void save_classifier(const std::string& path, const Classifier& model, const std::string& config_hash);
Classifier load_classifier(const std::string& path);

/// Pseudo-labelled pool: dataset entries plus "scores" (f64 [N]) and meta labeler_id.
void save_pseudo_labeled(const std::string& path, const PseudoLabeledSet& set, const std::string& config_hash);
PseudoLabeledSet load_pseudo_labeled(const std::string& path);

/// The config hash stored in any artifact file ("" when absent).
std::string artifact_config_hash(const std::string& path);

}  // namespace genrobust
