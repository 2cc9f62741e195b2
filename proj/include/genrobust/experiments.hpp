#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "genrobust/attacks.hpp"
#include "genrobust/config.hpp"
#include "genrobust/generation.hpp"
#include "genrobust/labeling.hpp"

namespace genrobust {

// ---- pipeline steps shared by the CLI and the sweeps ----

/// The standard non-robust labeler trained on `train`.
Classifier train_labeler(const ExperimentConfig& config, const LabeledDataset& train);

/// PCA + per-class Gaussian fit of `train` with the configured components and jitter.
GaussianGenerativeModel fit_generator(const ExperimentConfig& config, const LabeledDataset& train);

/// `size` generated images pseudo-labelled by `labeler`, shuffled. With
/// generator.filter, size * oversample candidates are drawn and the top
/// size / C per class (by labeler score) are kept.
PseudoLabeledSet generate_pool(const ExperimentConfig& config, const GaussianGenerativeModel& generator,
                               const Classifier& labeler, std::size_t size, Rng& rng);

/// Exactly `n` samples, class sizes n / C (remainder to the lowest classes), shuffled; labels = generating class.
LabeledDataset sample_gaussian(const GaussianGenerativeModel& generator, std::size_t n, Rng& rng);

/// Fresh robust model for one sweep seed; the init depends only on (experiment seed, seed index).
Classifier init_sweep_model(const ExperimentConfig& config, const std::vector<std::size_t>& hidden,
                            std::size_t seed_index);

/// The first eval.test_size examples (all when 0).
LabeledDataset evaluation_split(const ExperimentConfig& config, const LabeledDataset& test);

/// attack_cascade with the configured budgets at the training perturbation set.
CascadeResult evaluate_robustness(const ExperimentConfig& config, const Classifier& model, const LabeledDataset& test);

// ---- sweeps ----

/// One (group, axis value, seed) cell. `group` separates series sharing an axis
/// (the model widths of the coverage probe); it is empty otherwise.
struct SweepRecord {
  static constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

  std::string group;
  double value = 0.0;
  std::size_t seed_index = 0;
  bool ok = true;
  std::string error;
  double clean_accuracy = kMissing;
  double robust_accuracy = kMissing;
  double generated_robust_accuracy = kMissing;  // scaling study: the generated training pool
  double heldout_generated_robust_accuracy = kMissing;  // scaling study: fresh generated samples
  double labeler_accuracy = kMissing;           // test (condition 1: held-out) accuracy of the labeler used
  std::size_t best_step = 0;
};

struct SweepResult {
  std::string kind;
  std::string axis;
  std::string config_hash;
  std::vector<SweepRecord> records;  // ordered by group, then axis value, then seed
  std::size_t trained_cells = 0;     // cells computed in this run (the rest were resumed)

  std::vector<std::string> groups() const;
  /// Axis values of a group, in grid order.
  std::vector<double> values(const std::string& group = "") const;
  /// Per-seed robust accuracies of one cell column (failed cells skipped).
  std::vector<double> robust(const std::string& group, double value) const;
  /// Seed means of robust (or held-out generated robust) accuracy per axis value.
  std::vector<double> mean_robust(const std::string& group = "") const;
  std::vector<double> mean_generated_robust(const std::string& group = "") const;
  std::vector<double> mean_heldout_generated_robust(const std::string& group = "") const;
  std::vector<double> mean_clean(const std::string& group = "") const;
};

struct SweepOptions {
  std::function<void(const std::string&)> log;  // progress lines; may be empty
};

/// Runs the sweep selected by config.sweep.kind into config.output_dir. Cells
/// with an on-disk marker are reloaded instead of retrained; a marker written
/// under a different configuration is a ConfigError. Failed cells are recorded
/// (ok = false) and the sweep continues. Writes cells.csv, summary.csv and, with
/// sweep.plots, <kind>.svg.
SweepResult run_sweep(const ExperimentConfig& config, const SweepOptions& options = {});

/// Mixing ratio alpha over sweep.alphas; generated pool from the Gaussian fit of the training split.
SweepResult run_mixing_sweep(const ExperimentConfig& config, const SweepOptions& options = {});
/// Labeler accuracy over sweep.levels (ascending); the pool is relabelled by a degraded labeler per level.
SweepResult run_condition1_probe(const ExperimentConfig& config, const SweepOptions& options = {});
/// sweep.kind "condition2": Gaussian fraction grid; "coverage": covered classes x model widths.
SweepResult run_condition23_probe(const ExperimentConfig& config, const SweepOptions& options = {});
/// Generated pool size over sweep.sample_counts at alpha = sweep.probe_alpha.
SweepResult run_scaling_study(const ExperimentConfig& config, const SweepOptions& options = {});

void write_sweep_csvs(const std::string& dir, const SweepResult& result);

/// Hash of everything a single cell depends on (the config minus grids, seed count and output location).
std::string cell_config_hash(const ExperimentConfig& config);

// ---- statistics and plots ----

/// Spearman rank correlation (average ranks for ties); 0 when either side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// One-sided sign test that `a` beats `b` pairwise: P[Binomial(n, 1/2) >= wins]
/// over the n untied pairs (1 when every pair ties).
double sign_test_p(const std::vector<double>& a, const std::vector<double>& b);

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal SVG line chart.
std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series);

}  // namespace genrobust
