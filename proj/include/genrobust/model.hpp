#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "genrobust/autodiff.hpp"
#include "genrobust/dataset.hpp"
#include "genrobust/param_store.hpp"
#include "genrobust/rng.hpp"

namespace genrobust {

enum class Architecture { Mlp, SmallCnn };

std::string to_string(Architecture arch);
Architecture architecture_from_string(const std::string& name);

/// Classifier architecture. For `Mlp`, `hidden` lists the dense widths; for
/// `SmallCnn` it lists the channel counts of the two 3x3 convolutions (the
/// second one strided by 2) feeding a single dense layer.
struct ModelConfig {
  Architecture arch = Architecture::Mlp;
  std::vector<std::size_t> hidden{256, 256};
  ImageShape input{};
  std::size_t num_classes = 4;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Weights plus their exponential moving average; the average is the evaluated model.
struct Classifier {
  ModelConfig config;
  ParamStore params;
  ParamStore ema_params;
  std::uint64_t step = 0;

  const ParamStore& weights(bool use_ema) const { return use_ema ? ema_params : params; }
};

/// Fan-in-scaled normal weights (std = 1/sqrt(fan_in)), zero biases; ema starts equal to params.
Classifier init_classifier(const ModelConfig& config, Rng& rng);

enum class ParamMode { Constant, Trainable };

struct ForwardResult {
  Var<double> features;  // penultimate activations, [B, F]
  Var<double> logits;    // [B, num_classes]
};

/// Records the network on `tape`. With `ParamMode::Trainable` the weights are
/// parameter leaves whose gradients `Tape::backward` returns; repeated passes on
/// one tape share those leaves, so their gradients accumulate.
ForwardResult forward(Tape<double>& tape, const Classifier& model, Var<double> x, bool use_ema = false,
                      ParamMode mode = ParamMode::Constant);

Var<double> forward_logits(Tape<double>& tape, const Classifier& model, Var<double> x, bool use_ema = false,
                           ParamMode mode = ParamMode::Constant);

/// Untaped evaluation helpers.
Tensor logits(const Classifier& model, const Tensor& x, bool use_ema = false);
Tensor features(const Classifier& model, const Tensor& x, bool use_ema = false);
std::vector<int> predict(const Classifier& model, const Tensor& x, bool use_ema = false);

/// Argmax of every row, ties toward the lowest class index.
std::vector<int> argmax_rows(const Tensor& logits);

/// ema <- tau * ema + (1 - tau) * params, tensor by tensor.
void ema_update(Classifier& model, double tau);

/// Fraction of examples whose argmax prediction equals the label.
double accuracy(const Classifier& model, const LabeledDataset& data, bool use_ema = false);

std::size_t feature_dim(const ModelConfig& config);

}  // namespace genrobust
