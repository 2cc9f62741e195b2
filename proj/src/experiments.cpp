#include "genrobust/experiments.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "genrobust/csv.hpp"
#include "genrobust/synthetic.hpp"
#include "genrobust/training.hpp"

namespace genrobust {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Stream tags under the experiment seed.
constexpr std::uint64_t kLabelerTag = 0x11;
constexpr std::uint64_t kPoolTag = 0x12;
constexpr std::uint64_t kModelTag = 0x13;
constexpr std::uint64_t kTrainTag = 0x14;
constexpr std::uint64_t kDegradeTag = 0x15;
constexpr std::uint64_t kHeldoutTag = 0x16;
constexpr std::uint64_t kMismatchTag = 0x17;
constexpr std::uint64_t kTrueTag = 0x18;

std::uint64_t value_bits(double v) { return std::bit_cast<std::uint64_t>(v); }

template <typename T>
class Lazy {
 public:
  explicit Lazy(std::function<T()> make) : make_(std::move(make)) {}
  T& get() {
    if (!value_) value_.emplace(make_());
    return *value_;
  }

 private:
  std::function<T()> make_;
  std::optional<T> value_;
};

std::string width_label(const std::vector<std::size_t>& hidden) {
  std::string out;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(hidden[i]);
  }
  return out;
}

std::string fmt(double v) { return std::isnan(v) ? std::string() : format_double(v); }

json num(double v) { return std::isnan(v) ? json(nullptr) : json(v); }
double from_num(const json& v) { return v.is_null() ? SweepRecord::kMissing : v.get<double>(); }

json record_json(const SweepRecord& r, const std::string& cell_hash) {
  return json{{"group", r.group},
              {"value", r.value},
              {"seed_index", r.seed_index},
              {"ok", r.ok},
              {"error", r.error},
              {"clean_accuracy", num(r.clean_accuracy)},
              {"robust_accuracy", num(r.robust_accuracy)},
              {"generated_robust_accuracy", num(r.generated_robust_accuracy)},
              {"heldout_generated_robust_accuracy", num(r.heldout_generated_robust_accuracy)},
              {"labeler_accuracy", num(r.labeler_accuracy)},
              {"best_step", r.best_step},
              {"cell_hash", cell_hash}};
}

SweepRecord record_from_json(const json& j) {
  SweepRecord r;
  r.group = j.at("group").get<std::string>();
  r.value = j.at("value").get<double>();
  r.seed_index = j.at("seed_index").get<std::size_t>();
  r.ok = j.at("ok").get<bool>();
  r.error = j.at("error").get<std::string>();
  r.clean_accuracy = from_num(j.at("clean_accuracy"));
  r.robust_accuracy = from_num(j.at("robust_accuracy"));
  r.generated_robust_accuracy = from_num(j.at("generated_robust_accuracy"));
  r.heldout_generated_robust_accuracy = from_num(j.at("heldout_generated_robust_accuracy"));
  r.labeler_accuracy = from_num(j.at("labeler_accuracy"));
  r.best_step = j.at("best_step").get<std::size_t>();
  return r;
}

struct Cell {
  std::string group;
  std::vector<std::size_t> hidden;
  double value = 0.0;
  std::size_t seed_index = 0;
};

std::string marker_name(const Cell& c) {
  std::string g = c.group.empty() ? "all" : c.group;
  return "g" + g + "_v" + format_double(c.value) + "_s" + std::to_string(c.seed_index) + ".json";
}

/// Trains one robust model and fills the accuracies measured on `test`.
struct TrainedCell {
  Classifier model;
  std::size_t best_step = 0;
};

TrainedCell train_cell(const ExperimentConfig& config, const Cell& cell, double alpha, const LabeledDataset& orig,
                       const PseudoLabeledSet* gen) {
  TrainConfig tc = config.train;
  tc.alpha = alpha;
  tc.seed = derive_seed(config.seed, {kTrainTag, cell.seed_index});
  auto result = train(tc, orig, gen, init_sweep_model(config, cell.hidden, cell.seed_index));
  return TrainedCell{std::move(result.model), result.report.best_step};
}

void fill_eval(const ExperimentConfig& config, const Classifier& model, const LabeledDataset& test, SweepRecord& r) {
  const auto cascade = evaluate_robustness(config, model, test);
  r.clean_accuracy = cascade.clean_accuracy;
  r.robust_accuracy = cascade.robust_accuracy;
}

std::vector<double> column_means(const SweepResult& result, const std::string& group, double SweepRecord::*field) {
  std::vector<double> out;
  for (double v : result.values(group)) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : result.records) {
      if (r.group == group && r.value == v && r.ok && !std::isnan(r.*field)) {
        sum += r.*field;
        ++n;
      }
    }
    out.push_back(n ? sum / static_cast<double>(n) : SweepRecord::kMissing);
  }
  return out;
}

std::string axis_name(const std::string& kind) {
  if (kind == "mixing") return "alpha";
  if (kind == "condition1") return "labeler_accuracy_level";
  if (kind == "condition2") return "gaussian_fraction";
  if (kind == "coverage") return "covered_classes";
  if (kind == "scaling") return "sample_count";
  throw ConfigError("unknown sweep kind '" + kind + "'");
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

// ---- pipeline steps ----

Classifier train_labeler(const ExperimentConfig& config, const LabeledDataset& train) {
  Rng rng(derive_seed(config.seed, {kLabelerTag}));
  return train_nonrobust(train, config.labeler_model(), config.labeler.train, rng);
}

GaussianGenerativeModel fit_generator(const ExperimentConfig& config, const LabeledDataset& train) {
  const std::size_t d = train.image_shape().size();
  std::size_t k = config.generator.pca_components ? config.generator.pca_components : default_pca_components(d);
  k = std::min(k, train.size() - 1);
  const auto pca = fit_pca(train.images, k);
  return fit_class_gaussians(pca, train, GaussianFitOptions{config.generator.jitter});
}

LabeledDataset sample_gaussian(const GaussianGenerativeModel& generator, std::size_t n, Rng& rng) {
  const std::size_t classes = generator.per_class.size();
  LabeledDataset out{Tensor(generator.image.batch(0)), {}, classes};
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t count = n / classes + (c < n % classes ? 1 : 0);
    if (count == 0) continue;
    out.images = concat_rows(out.images, sample(generator, c, count, rng));
    out.labels.insert(out.labels.end(), count, static_cast<int>(c));
  }
  if (out.images.rows() == 0) out.images = Tensor(generator.image.batch(0));
  const auto perm = rng.permutation(n);
  return out.subset(perm);
}

PseudoLabeledSet generate_pool(const ExperimentConfig& config, const GaussianGenerativeModel& generator,
                               const Classifier& labeler, std::size_t size, Rng& rng) {
  const std::size_t classes = generator.per_class.size();
  const auto& g = config.generator;
  if (!g.filter) {
    const auto drawn = sample_gaussian(generator, size, rng);
    return pseudo_label(labeler, drawn.images, g.score, "nonrobust");
  }
  if (size % classes != 0) throw ValueError("filtered pool size must be a multiple of the class count");
  const auto drawn = sample_gaussian(generator, size * g.oversample, rng);
  auto kept = filter_topk_per_class(pseudo_label(labeler, drawn.images, g.score, "nonrobust"), size / classes);
  const auto perm = rng.permutation(kept.size());
  return kept.subset(perm);
}

Classifier init_sweep_model(const ExperimentConfig& config, const std::vector<std::size_t>& hidden,
                            std::size_t seed_index) {
  Rng rng(derive_seed(config.seed, {kModelTag, seed_index}));
  return init_classifier(config.model_for(hidden), rng);
}

LabeledDataset evaluation_split(const ExperimentConfig& config, const LabeledDataset& test) {
  if (config.eval.test_size == 0 || config.eval.test_size >= test.size()) return test;
  return test.slice(0, config.eval.test_size);
}

CascadeResult evaluate_robustness(const ExperimentConfig& config, const Classifier& model,
                                  const LabeledDataset& test) {
  return attack_cascade(model, evaluation_split(config, test), config.train.perturbation, config.eval.cascade);
}

// ---- SweepResult ----

std::vector<std::string> SweepResult::groups() const {
  std::vector<std::string> out;
  for (const auto& r : records) {
    if (std::find(out.begin(), out.end(), r.group) == out.end()) out.push_back(r.group);
  }
  return out;
}

std::vector<double> SweepResult::values(const std::string& group) const {
  std::vector<double> out;
  for (const auto& r : records) {
    if (r.group == group && std::find(out.begin(), out.end(), r.value) == out.end()) out.push_back(r.value);
  }
  return out;
}

std::vector<double> SweepResult::robust(const std::string& group, double value) const {
  std::vector<double> out;
  for (const auto& r : records) {
    if (r.group == group && r.value == value && r.ok) out.push_back(r.robust_accuracy);
  }
  return out;
}

std::vector<double> SweepResult::mean_robust(const std::string& group) const {
  return column_means(*this, group, &SweepRecord::robust_accuracy);
}
std::vector<double> SweepResult::mean_generated_robust(const std::string& group) const {
  return column_means(*this, group, &SweepRecord::generated_robust_accuracy);
}
std::vector<double> SweepResult::mean_heldout_generated_robust(const std::string& group) const {
  return column_means(*this, group, &SweepRecord::heldout_generated_robust_accuracy);
}
std::vector<double> SweepResult::mean_clean(const std::string& group) const {
  return column_means(*this, group, &SweepRecord::clean_accuracy);
}

// ---- sweeps ----

std::string cell_config_hash(const ExperimentConfig& config) {
  auto doc = to_json(config);
  doc.erase("output_dir");
  auto& sweep = doc["sweep"];
  for (const char* key : {"seeds", "alphas", "levels", "gauss_fractions", "covered_classes", "widths", "sample_counts",
                          "plots"}) {
    sweep.erase(key);
  }
  return fnv1a_hex(doc.dump());
}

SweepResult run_sweep(const ExperimentConfig& config, const SweepOptions& options) {
  const auto& sw = config.sweep;
  const std::string kind = sw.kind;
  SweepResult result;
  result.kind = kind;
  result.axis = axis_name(kind);
  result.config_hash = config_hash(config);
  const std::string cell_hash = cell_config_hash(config);
  auto log = [&](const std::string& line) {
    if (options.log) options.log(line);
  };

  // Grid.
  std::vector<Cell> cells;
  auto add_axis = [&](const std::string& group, const std::vector<std::size_t>& hidden,
                      const std::vector<double>& values) {
    for (double v : values) {
      for (std::size_t s = 0; s < sw.seeds; ++s) cells.push_back(Cell{group, hidden, v, s});
    }
  };
  const auto& hidden = config.model.hidden;
  if (kind == "mixing") {
    add_axis("", hidden, sw.alphas);
  } else if (kind == "condition1") {
    if (!std::is_sorted(sw.levels.begin(), sw.levels.end())) throw ConfigError("sweep.levels must be ascending");
    for (double l : sw.levels) {
      if (!(l > 1.0 / static_cast<double>(config.data.num_classes) && l <= 1.0)) {
        throw ConfigError("sweep.levels must lie in (1/C, 1]");
      }
    }
    add_axis("", hidden, sw.levels);
  } else if (kind == "condition2") {
    add_axis("", hidden, sw.gauss_fractions);
  } else if (kind == "coverage") {
    std::vector<double> covered;
    for (auto k : sw.covered_classes) {
      if (k > config.true_data.num_classes) throw ConfigError("sweep.covered_classes exceeds the class count");
      covered.push_back(static_cast<double>(k));
    }
    if (sw.widths.empty()) {
      add_axis("", hidden, covered);
    } else {
      for (const auto& w : sw.widths) add_axis(width_label(w), w, covered);
    }
  } else if (kind == "scaling") {
    std::vector<double> counts;
    for (auto n : sw.sample_counts) {
      if (n == 0) throw ConfigError("sweep.sample_counts must be positive");
      counts.push_back(static_cast<double>(n));
    }
    add_axis("", hidden, counts);
  }
  if (cells.empty()) throw ConfigError("sweep '" + kind + "' has an empty grid");

  // Shared preparation, built only when some cell has to be computed.
  Lazy<SyntheticSplits> data([&] { return make_synthetic_dataset(config.data); });
  Lazy<Classifier> labeler([&] {
    log("training the non-robust labeler");
    return train_labeler(config, data.get().train);
  });
  Lazy<GaussianGenerativeModel> generator([&] { return fit_generator(config, data.get().train); });
  const std::size_t max_count =
      sw.sample_counts.empty() ? 0 : *std::max_element(sw.sample_counts.begin(), sw.sample_counts.end());
  Lazy<PseudoLabeledSet> pool([&] {
    Rng rng(derive_seed(config.seed, {kPoolTag}));
    const std::size_t size = kind == "scaling" ? max_count : config.generator.pool_size;
    return generate_pool(config, generator.get(), labeler.get(), size, rng);
  });
  Lazy<LabeledDataset> heldout_generated([&] {
    Rng rng(derive_seed(config.seed, {kHeldoutTag}));
    const auto test = evaluation_split(config, data.get().test);
    return generate_pool(config, generator.get(), labeler.get(), test.size(), rng).as_dataset();
  });
  std::map<double, std::pair<PseudoLabeledSet, double>> relabeled;  // condition 1: level -> (pool, labeler accuracy)

  // Condition-2/3 sources: a mismatched Gaussian fit of the true distribution and
  // pools of true-generator samples, drawn once so grid points share prefixes.
  Lazy<SyntheticSplits> true_data([&] { return make_synthetic_dataset(config.true_data); });
  Lazy<LabeledDataset> mismatched_pool([&] {
    const auto fit = fit_generator(config, true_data.get().train);
    Rng rng(derive_seed(config.seed, {kMismatchTag}));
    return sample_gaussian(fit, config.generator.pool_size, rng);
  });
  Lazy<std::vector<LabeledDataset>> true_pools([&] {
    const SyntheticDistribution dist(config.true_data);
    std::vector<LabeledDataset> pools;
    for (std::size_t c = 0; c < config.true_data.num_classes; ++c) {
      Rng rng(derive_seed(config.seed, {kTrueTag, c}));
      pools.push_back(dist.sample_class(c, config.generator.pool_size, rng));
    }
    return pools;
  });
  // Per covered class, the first round((1 - g) * n_c) of that class's mismatched
  // samples are swapped for true samples of the same class; class counts stay fixed.
  auto mixed_true_pool = [&](double gauss_fraction, std::size_t covered) {
    const auto& base = mismatched_pool.get();
    std::vector<std::size_t> per_class(config.true_data.num_classes, 0);
    for (auto y : base.labels) ++per_class[static_cast<std::size_t>(y)];
    std::vector<std::size_t> replace(per_class.size(), 0);
    for (std::size_t c = 0; c < covered; ++c) {
      replace[c] = static_cast<std::size_t>(std::llround((1.0 - gauss_fraction) * static_cast<double>(per_class[c])));
    }
    std::vector<std::size_t> seen(per_class.size(), 0), keep;
    for (std::size_t i = 0; i < base.size(); ++i) {
      const auto c = static_cast<std::size_t>(base.labels[i]);
      if (seen[c]++ >= replace[c]) keep.push_back(i);
    }
    auto mixed = base.subset(keep);
    for (std::size_t c = 0; c < covered; ++c) {
      if (replace[c] > 0) mixed = concat(mixed, true_pools.get()[c].slice(0, replace[c]));
    }
    return from_labeled(mixed, "generating-class");
  };

  auto compute = [&](const Cell& cell) {
    SweepRecord r;
    r.group = cell.group;
    r.value = cell.value;
    r.seed_index = cell.seed_index;
    if (kind == "mixing") {
      r.labeler_accuracy = accuracy(labeler.get(), data.get().test, true);
      const auto trained = train_cell(config, cell, cell.value, data.get().train, &pool.get());
      r.best_step = trained.best_step;
      fill_eval(config, trained.model, data.get().test, r);
    } else if (kind == "condition1") {
      auto it = relabeled.find(cell.value);
      if (it == relabeled.end()) {
        PseudoLabeledSet set;
        double acc = 0.0;
        if (cell.value >= 1.0) {
          set = pool.get();
          acc = accuracy(labeler.get(), data.get().test, true);
        } else {
          log("calibrating a labeler at accuracy " + format_double(cell.value));
          Rng rng(derive_seed(config.seed, {kDegradeTag, value_bits(cell.value)}));
          const auto degraded = make_degraded_labeler(data.get().train, cell.value, config.labeler_model(),
                                                      config.labeler.train, rng);
          set = pseudo_label(degraded.model, pool.get().images, config.generator.score, "degraded");
          acc = degraded.heldout_accuracy;
        }
        it = relabeled.emplace(cell.value, std::make_pair(std::move(set), acc)).first;
      }
      r.labeler_accuracy = it->second.second;
      const auto trained = train_cell(config, cell, sw.probe_alpha, data.get().train, &it->second.first);
      r.best_step = trained.best_step;
      fill_eval(config, trained.model, data.get().test, r);
    } else if (kind == "condition2" || kind == "coverage") {
      const double gauss_fraction = kind == "condition2" ? cell.value : sw.gauss_fraction;
      const std::size_t covered =
          kind == "condition2" ? config.true_data.num_classes : static_cast<std::size_t>(cell.value);
      const auto gen = mixed_true_pool(gauss_fraction, covered);
      const auto trained = train_cell(config, cell, sw.probe_alpha, true_data.get().train, &gen);
      r.best_step = trained.best_step;
      fill_eval(config, trained.model, true_data.get().test, r);
    } else {  // scaling
      const auto n = static_cast<std::size_t>(cell.value);
      std::vector<std::size_t> first(n);
      std::iota(first.begin(), first.end(), std::size_t{0});
      const auto gen = pool.get().subset(first);
      r.labeler_accuracy = accuracy(labeler.get(), data.get().test, true);
      const auto trained = train_cell(config, cell, sw.probe_alpha, data.get().train, &gen);
      r.best_step = trained.best_step;
      fill_eval(config, trained.model, data.get().test, r);
      // The training pool is scored on (at most) as many images as the real test split.
      const auto seen = evaluation_split(config, gen.as_dataset());
      r.generated_robust_accuracy = evaluate_robustness(config, trained.model, seen).robust_accuracy;
      r.heldout_generated_robust_accuracy =
          evaluate_robustness(config, trained.model, heldout_generated.get()).robust_accuracy;
    }
    return r;
  };

  const fs::path dir(config.output_dir);
  const fs::path marker_dir = dir / "cells";
  fs::create_directories(marker_dir);
  atomic_write((dir / "config.json").string(), to_json(config).dump(2) + "\n");

  for (const auto& cell : cells) {
    const auto marker = marker_dir / marker_name(cell);
    if (fs::exists(marker)) {
      json doc;
      try {
        doc = json::parse(read_file(marker.string()));
      } catch (const json::exception& e) {
        throw FormatError("corrupt cell marker '" + marker.string() + "': " + e.what());
      }
      if (doc.value("cell_hash", "") != cell_hash) {
        throw ConfigError("'" + marker.string() + "' was produced by a different configuration; use a fresh output_dir");
      }
      result.records.push_back(record_from_json(doc));
      continue;
    }
    const auto start = std::chrono::steady_clock::now();
    SweepRecord r;
    try {
      r = compute(cell);
    } catch (const std::exception& e) {
      r = SweepRecord{};
      r.group = cell.group;
      r.value = cell.value;
      r.seed_index = cell.seed_index;
      r.ok = false;
      r.error = e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ++result.trained_cells;
    std::ostringstream line;
    line << kind << ' ' << (cell.group.empty() ? "" : cell.group + ' ') << result.axis << '=' << format_double(cell.value)
         << " seed=" << cell.seed_index;
    if (r.ok) {
      line << " clean=" << fmt(r.clean_accuracy) << " robust=" << fmt(r.robust_accuracy);
      atomic_write(marker.string(), record_json(r, cell_hash).dump() + "\n");
    } else {
      line << " FAILED: " << r.error;
    }
    line << " (" << std::lround(secs) << "s)";
    log(line.str());
    result.records.push_back(std::move(r));
  }

  write_sweep_csvs(dir.string(), result);
  if (sw.plots) {
    std::vector<PlotSeries> series;
    for (const auto& g : result.groups()) {
      const std::string base = g.empty() ? "" : g + " ";
      series.push_back({base + "robust (test)", result.values(g), result.mean_robust(g)});
      if (kind == "scaling") series.push_back({base + "robust (generated pool)", result.values(g), result.mean_generated_robust(g)});
    }
    atomic_write((dir / (kind + ".svg")).string(),
                 line_plot_svg(kind + " sweep", result.axis, "mean robust accuracy", series));
  }
  return result;
}

namespace {
ExperimentConfig with_kind(ExperimentConfig config, const std::string& kind) {
  config.sweep.kind = kind;
  return config;
}
}  // namespace

SweepResult run_mixing_sweep(const ExperimentConfig& config, const SweepOptions& options) {
  return run_sweep(with_kind(config, "mixing"), options);
}
SweepResult run_condition1_probe(const ExperimentConfig& config, const SweepOptions& options) {
  return run_sweep(with_kind(config, "condition1"), options);
}
SweepResult run_condition23_probe(const ExperimentConfig& config, const SweepOptions& options) {
  if (config.sweep.kind != "condition2" && config.sweep.kind != "coverage") {
    throw ConfigError("condition probes need sweep.kind condition2 or coverage");
  }
  return run_sweep(config, options);
}
SweepResult run_scaling_study(const ExperimentConfig& config, const SweepOptions& options) {
  return run_sweep(with_kind(config, "scaling"), options);
}

void write_sweep_csvs(const std::string& dir, const SweepResult& result) {
  CsvWriter cells({"kind", "group", result.axis, "seed_index", "status", "clean_accuracy", "robust_accuracy",
                   "generated_robust_accuracy", "heldout_generated_robust_accuracy", "labeler_accuracy", "best_step",
                   "error", "config_hash"});
  for (const auto& r : result.records) {
    cells.row({result.kind, r.group, format_double(r.value), std::to_string(r.seed_index), r.ok ? "ok" : "failed",
               fmt(r.clean_accuracy), fmt(r.robust_accuracy), fmt(r.generated_robust_accuracy),
               fmt(r.heldout_generated_robust_accuracy), fmt(r.labeler_accuracy), std::to_string(r.best_step), r.error,
               result.config_hash});
  }
  cells.save((fs::path(dir) / "cells.csv").string());

  CsvWriter summary({"kind", "group", result.axis, "seeds_ok", "seeds_failed", "mean_clean_accuracy",
                     "mean_robust_accuracy", "std_robust_accuracy", "mean_generated_robust_accuracy",
                     "mean_heldout_generated_robust_accuracy", "mean_labeler_accuracy", "config_hash"});
  for (const auto& g : result.groups()) {
    const auto values = result.values(g);
    const auto clean = result.mean_clean(g);
    const auto robust = result.mean_robust(g);
    const auto gen = result.mean_generated_robust(g);
    const auto heldout = result.mean_heldout_generated_robust(g);
    const auto labeler = column_means(result, g, &SweepRecord::labeler_accuracy);
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::size_t ok = 0;
      std::size_t failed = 0;
      for (const auto& r : result.records) {
        if (r.group == g && r.value == values[i]) ++(r.ok ? ok : failed);
      }
      const auto per_seed = result.robust(g, values[i]);
      double var = 0.0;
      for (double a : per_seed) var += (a - robust[i]) * (a - robust[i]);
      const double sd = per_seed.size() > 1 ? std::sqrt(var / static_cast<double>(per_seed.size() - 1)) : 0.0;
      summary.row({result.kind, g, format_double(values[i]), std::to_string(ok), std::to_string(failed), fmt(clean[i]),
                   fmt(robust[i]), per_seed.empty() ? "" : fmt(sd), fmt(gen[i]), fmt(heldout[i]), fmt(labeler[i]),
                   result.config_hash});
    }
  }
  summary.save((fs::path(dir) / "summary.csv").string());
}

// ---- statistics ----

namespace {
std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}
}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ValueError("spearman: length mismatch");
  if (x.size() < 2) throw ValueError("spearman needs at least two points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const Eigen::Map<const VectorXd> a(rx.data(), static_cast<Eigen::Index>(rx.size()));
  const Eigen::Map<const VectorXd> b(ry.data(), static_cast<Eigen::Index>(ry.size()));
  const VectorXd ca = a.array() - a.mean();
  const VectorXd cb = b.array() - b.mean();
  const double denom = ca.norm() * cb.norm();
  return denom == 0.0 ? 0.0 : ca.dot(cb) / denom;
}

double sign_test_p(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ValueError("sign test: length mismatch");
  std::size_t wins = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) continue;
    ++n;
    if (a[i] > b[i]) ++wins;
  }
  if (n == 0) return 1.0;
  // P[X >= wins], X ~ Binomial(n, 1/2).
  double p = 0.0;
  double coef = 1.0;  // C(n, k)
  for (std::size_t k = 0; k <= n; ++k) {
    if (k >= wins) p += coef;
    coef = coef * static_cast<double>(n - k) / static_cast<double>(k + 1);
  }
  return p / std::ldexp(1.0, static_cast<int>(n));
}

// ---- plots ----

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series) {
  constexpr double W = 640, H = 420, L = 70, R = 170, T = 40, B = 50;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (std::isnan(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.05, y1 += 0.05;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
      << "</text>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0;
    const double yv = y0 + (y1 - y0) * i / 4.0;
    svg << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << format_double(std::round(xv * 1000) / 1000)
        << "</text>\n";
    svg << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
        << format_double(std::round(yv * 1000) / 1000) << "</text>\n";
  }
  svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xml_escape(x_label)
      << "</text>\n";
  svg << "<text transform=\"translate(16," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << xml_escape(y_label) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % std::size(colors)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size() && i < series[s].y.size(); ++i) {
      if (!std::isnan(series[s].y[i])) svg << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
    }
    svg << "\"/>\n";
    for (std::size_t i = 0; i < series[s].x.size() && i < series[s].y.size(); ++i) {
      if (std::isnan(series[s].y[i])) continue;
      svg << "<circle cx=\"" << px(series[s].x[i]) << "\" cy=\"" << py(series[s].y[i]) << "\" r=\"3\" fill=\"" << color
          << "\"/>\n";
    }
    const double ly = T + 16.0 * static_cast<double>(s);
    svg << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 32 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << W - R + 36 << "\" y=\"" << ly + 4 << "\">" << xml_escape(series[s].name) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace genrobust
