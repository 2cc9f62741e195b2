#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "genrobust/labeling.hpp"
#include "genrobust/synthetic.hpp"
#include "genrobust/training.hpp"

namespace genrobust {

struct LabelerConfig {
  std::vector<std::size_t> hidden{128, 128};
  Architecture arch = Architecture::Mlp;
  StandardTrainConfig train{};
};

struct GeneratorConfig {
  std::size_t pca_components = 0;  // 0: default_pca_components(d)
  std::optional<double> jitter;
  std::size_t pool_size = 4000;
  bool filter = false;            // top-k per class on labeler scores
  std::size_t oversample = 2;     // pool_size * oversample candidates when filtering
  ScoreKind score = ScoreKind::MaxProbability;
};

struct EvalConfig {
  CascadeConfig cascade{};
  std::size_t test_size = 0;  // 0: the whole test split
};

/// Grids for the sweep kinds: "mixing" (alphas), "condition1" (levels),
/// "condition2" (gauss_fractions), "coverage" (covered_classes x widths) and
/// "scaling" (sample_counts).
struct SweepConfig {
  std::string kind = "mixing";
  std::size_t seeds = 5;
  std::vector<double> alphas{1.0, 0.8};
  std::vector<double> levels;
  std::vector<double> gauss_fractions;
  std::vector<std::size_t> covered_classes;
  std::vector<std::vector<std::size_t>> widths;
  double gauss_fraction = 0.99;  // coverage probe
  std::vector<std::size_t> sample_counts;
  double probe_alpha = 0.0;  // alpha used by the condition probes and the scaling study
  bool plots = true;
};

/// Default "true" distribution of the condition probes: a warped class mixture.
inline SyntheticDatasetSpec default_true_spec() {
  SyntheticDatasetSpec spec;
  spec.family = SyntheticFamily::WarpedMixture;
  spec.warp = 0.5;
  return spec;
}

/// Everything an experiment needs; parsed strictly (unknown keys are errors).
struct ExperimentConfig {
  std::string output_dir = "runs/experiment";
  std::uint64_t seed = 0;
  SyntheticDatasetSpec data{};
  SyntheticDatasetSpec true_data = default_true_spec();  // "true" generator of the condition-2/3 probes
  ModelConfig model{};               // input shape and class count follow `data`
  LabelerConfig labeler{};
  GeneratorConfig generator{};
  TrainConfig train{};
  EvalConfig eval{};
  SweepConfig sweep{};

  /// Model config with input shape and class count taken from the data spec.
  ModelConfig model_for(const std::vector<std::size_t>& hidden) const;
  ModelConfig labeler_model() const;
};

/// Fills every field present in `doc`; any unknown key throws ConfigError naming its path.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& config);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& doc);

/// FNV-1a (64-bit, hex) of the canonical JSON dump.
std::string config_hash(const ExperimentConfig& config);
std::string fnv1a_hex(const std::string& text);

}  // namespace genrobust
