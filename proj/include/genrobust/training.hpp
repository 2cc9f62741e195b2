#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "genrobust/attacks.hpp"
#include "genrobust/labeling.hpp"
#include "genrobust/optim.hpp"

namespace genrobust {

enum class RobustLoss { Trades, Standard };

std::string to_string(RobustLoss loss);
RobustLoss robust_loss_from_string(const std::string& name);

struct EarlyStopConfig {
  std::size_t validation_size = 256;  // taken from the end of the original training set
  std::size_t pgd_steps = 40;
  std::size_t eval_every = 0;  // in steps; 0 evaluates at the end of every epoch
};

struct TrainConfig {
  double alpha = 1.0;  // fraction of every batch drawn from the original data
  double beta = 6.0;
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double lr0 = 0.4;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double ema_tau = 0.995;
  RobustLoss loss = RobustLoss::Trades;
  AttackConfig inner{10, 0.1, InnerOptimizer::Adam, 1, AttackObjective::KlVsClean, true, 0};
  PerturbationSet perturbation{Norm::Linf, 8.0 / 255.0};
  EarlyStopConfig early_stop{};
  std::size_t max_steps = 0;  // 0: epochs * steps_per_epoch
  std::uint64_t seed = 0;

  void validate() const;
};

/// round(alpha * B), halves away from zero.
std::size_t original_count(double alpha, std::size_t batch_size);

struct MixedBatch {
  Tensor images;
  std::vector<int> labels;  // true labels first, then pseudo-labels
  std::size_t n_orig = 0;
  std::size_t n_gen = 0;
};

/// Streams mixed batches. Each source is read through its own reshuffled
/// permutation (without replacement within a pass); a source whose share is
/// zero is never touched, so its random stream is never consumed.
class BatchSampler {
 public:
  BatchSampler(const LabeledDataset* orig, const LabeledDataset* gen, double alpha, std::size_t batch_size, Rng rng);

  MixedBatch next();

 private:
  struct Source {
    const LabeledDataset* data = nullptr;
    Rng rng{0};
    std::vector<std::size_t> order;
    std::size_t cursor = 0;

    void draw(std::size_t n, std::vector<std::size_t>& out);
  };

  Source orig_;
  Source gen_;
  std::size_t n_orig_;
  std::size_t n_gen_;
};

/// One batch of round(alpha B) original and B - round(alpha B) generated examples.
MixedBatch build_mixed_batch(const LabeledDataset& orig, const PseudoLabeledSet& gen, double alpha,
                             std::size_t batch_size, Rng& rng);

/// CE(f(x), y) + beta * KL(f(x) || f(x + delta*)) with delta* from KL-PGD; the clean
/// anchor of the KL term is a constant. Recorded with trainable weights.
Var<double> trades_loss(Tape<double>& tape, const Classifier& model, const Tensor& x, std::span<const int> labels,
                        double beta, const AttackConfig& inner, const PerturbationSet& set);

/// CE at the cross-entropy PGD maximiser. Recorded with trainable weights.
Var<double> standard_at_loss(Tape<double>& tape, const Classifier& model, const Tensor& x,
                             std::span<const int> labels, const AttackConfig& inner, const PerturbationSet& set);

struct EvalRecord {
  std::size_t step = 0;  // optimizer steps taken when evaluated
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean loss since the previous evaluation
  double val_clean = 0.0;
  double val_robust = 0.0;
};

struct TrainReport {
  std::vector<EvalRecord> evaluations;
  std::vector<double> step_losses;
  std::size_t best_step = 0;
  double best_val_robust = 0.0;
  double best_val_clean = 0.0;
  std::string checkpoint_id;

  /// step, lr, train_loss, val_clean, val_robust
  void write_csv(const std::string& path) const;
};

struct TrainResult {
  Classifier model;
  TrainReport report;
};

/// Robust training on mixed batches. The last early_stop.validation_size
/// original examples are held out; every evaluation runs PGD on them against
/// the averaged weights and the best snapshot is returned.
TrainResult train(const TrainConfig& config, const LabeledDataset& orig, const PseudoLabeledSet* gen,
                  Classifier model);

/// Fraction of `data` that survives a single-restart sign-PGD on cross-entropy.
double pgd_accuracy(const Classifier& model, const LabeledDataset& data, const PerturbationSet& set,
                    std::size_t steps, bool use_ema = true, std::uint64_t seed = 0);

}  // namespace genrobust
