#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "genrobust/dataset.hpp"
#include "genrobust/model.hpp"

namespace genrobust {

enum class Norm { Linf, L2 };

std::string to_string(Norm norm);
Norm norm_from_string(const std::string& name);

/// The allowed perturbations {delta : ||delta||_p <= epsilon}.
struct PerturbationSet {
  Norm norm = Norm::Linf;
  double epsilon = 0.0;

  void validate() const;
};

enum class InnerOptimizer { SignSgd, Adam };
enum class AttackObjective { CrossEntropy, KlVsClean, Margin, TargetedMargin };

std::string to_string(InnerOptimizer opt);
InnerOptimizer inner_optimizer_from_string(const std::string& name);
std::string to_string(AttackObjective objective);
AttackObjective attack_objective_from_string(const std::string& name);

struct AttackConfig {
  std::size_t steps = 10;
  double step_size = 0.1;
  InnerOptimizer optimizer = InnerOptimizer::SignSgd;
  std::size_t restarts = 1;
  AttackObjective objective = AttackObjective::CrossEntropy;
  bool random_start = false;
  std::uint64_t seed = 0;

  void validate() const;
};

/// What the objective is measured against. Labels are needed by every objective
/// except KlVsClean; targets only by TargetedMargin; clean logits only by KlVsClean.
/// Random starts are seeded per example id, so an example receives the same
/// starts whether it is attacked alone or inside a batch; ids default to row indices.
struct AttackReference {
  std::span<const int> labels;
  std::span<const int> targets;
  const Tensor* clean_logits = nullptr;
  std::span<const std::size_t> example_ids;
};

struct AttackResult {
  Tensor delta;                       // per-example perturbation, same shape as x
  Tensor adversarial;                 // x + delta, inside [0,1]
  std::vector<double> objective;      // objective at the returned delta
  std::vector<char> success;          // misclassified at some evaluated iterate (needs labels)
  std::vector<double> worst_margin;   // smallest margin seen over all iterates (needs labels)
  std::vector<std::vector<double>> trace;  // per restart: batch-summed objective at each iterate
};

/// Differentiable classifier used by the attacks.
using LogitFn = std::function<Var<double>(Tape<double>&, Var<double>)>;

LogitFn logit_fn(const Classifier& model, bool use_ema = false);

/// Euclidean projection of one perturbation (the whole tensor) onto the set.
Tensor project(const Tensor& delta, const PerturbationSet& set);

/// Projects each row (leading-axis slice) independently.
Tensor project_rows(const Tensor& delta, const PerturbationSet& set);

/// Per-example norm of each row in the set's norm.
std::vector<double> row_norms(const Tensor& delta, Norm norm);

/// Objective evaluated at a batch of candidate inputs.
struct ObjectiveEval {
  Tensor values;                   // [B], the quantity being maximised
  Tensor grad;                     // d(sum values)/d(input), shape of the input; empty when not requested
  std::vector<char> success;       // optional, per example
  std::vector<double> margin;      // optional, per example
};

using ObjectiveFn = std::function<ObjectiveEval(const Tensor& candidate, bool need_grad)>;

/// Projected ascent on delta for any per-example objective. Each restart starts
/// at zero or at a uniform draw from the ball, takes sign or Adam steps, and
/// projects/clips after every step. Per example the iterate kept is the best by
/// (success, objective) across every step of every restart.
AttackResult maximize_perturbation(const Tensor& x, const ObjectiveFn& objective, const PerturbationSet& set,
                                   const AttackConfig& cfg, std::span<const std::size_t> example_ids = {});

/// The model objective selected by cfg.objective.
ObjectiveFn model_objective(const LogitFn& model, AttackObjective objective, const AttackReference& ref);

AttackResult pgd(const LogitFn& model, const Tensor& x, const AttackReference& ref, const PerturbationSet& set,
                 const AttackConfig& cfg);
AttackResult pgd(const Classifier& model, const Tensor& x, const AttackReference& ref, const PerturbationSet& set,
                 const AttackConfig& cfg, bool use_ema = false);

/// Single signed gradient step on the cross-entropy (default step = epsilon).
AttackResult fgsm(const LogitFn& model, const Tensor& x, std::span<const int> labels, const PerturbationSet& set,
                  std::optional<double> step = std::nullopt);
AttackResult fgsm(const Classifier& model, const Tensor& x, std::span<const int> labels,
                  const PerturbationSet& set, std::optional<double> step = std::nullopt, bool use_ema = false);

/// Two-stage worst-case evaluation: PGD on cross-entropy with restarts, then
/// targeted-margin PGD against each of the top-k wrong classes.
struct CascadeConfig {
  AttackConfig stage1{100, 0.0, InnerOptimizer::SignSgd, 5, AttackObjective::CrossEntropy, true, 0};
  AttackConfig stage2{200, 0.0, InnerOptimizer::SignSgd, 10, AttackObjective::TargetedMargin, true, 0};
  std::size_t top_k = 3;
  bool use_ema = true;

  /// Sets both stages' step sizes to 2.5 * epsilon / steps when left at 0.
  CascadeConfig resolved(const PerturbationSet& set) const;
};

struct CascadeRecord {
  std::size_t example_id = 0;
  bool clean_correct = false;
  bool stage1_survived = false;
  bool stage2_survived = false;
  double worst_margin = 0.0;
};

struct CascadeResult {
  double clean_accuracy = 0.0;
  double stage1_accuracy = 0.0;
  double robust_accuracy = 0.0;
  std::vector<CascadeRecord> records;
};

CascadeResult attack_cascade(const LogitFn& model, const LabeledDataset& data, const PerturbationSet& set,
                             const CascadeConfig& cfg = {});
CascadeResult attack_cascade(const Classifier& model, const LabeledDataset& data, const PerturbationSet& set,
                             const CascadeConfig& cfg = {});

/// The k highest-scoring wrong classes of each row (descending, ties to the lower index).
std::vector<std::vector<int>> top_wrong_classes(const Tensor& logits, std::span<const int> labels, std::size_t k);

/// Writes the cascade record CSV (example_id, clean_correct, stage1_survived, stage2_survived, worst_margin).
void write_cascade_csv(const std::string& path, const CascadeResult& result);

}  // namespace genrobust
