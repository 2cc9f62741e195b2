// Command-line entry point: one subcommand per pipeline step plus `sweep`.
// Exit codes: 0 success, 1 usage/config error, 2 runtime error.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "genrobust/config.hpp"
#include "genrobust/csv.hpp"
#include "genrobust/diagnostics.hpp"
#include "genrobust/experiments.hpp"
#include "genrobust/persistence.hpp"
#include "genrobust/synthetic.hpp"
#include "genrobust/training.hpp"

using namespace genrobust;
namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::optional<double> alpha, beta, epsilon, lr0;
  std::optional<std::size_t> epochs, batch_size, seeds;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir, norm, kind;
};

struct Common {
  std::string config_path;
  Overrides o;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "experiment config (JSON)");
  cmd->add_option("--alpha", c.o.alpha, "override train.alpha");
  cmd->add_option("--beta", c.o.beta, "override train.beta");
  cmd->add_option("--epsilon", c.o.epsilon, "override train.perturbation.epsilon");
  cmd->add_option("--norm", c.o.norm, "override train.perturbation.norm (linf or l2)");
  cmd->add_option("--lr0", c.o.lr0, "override train.lr0");
  cmd->add_option("--epochs", c.o.epochs, "override train.epochs");
  cmd->add_option("--batch-size", c.o.batch_size, "override train.batch_size");
  cmd->add_option("--seed", c.o.seed, "override the experiment seed");
}

/// Loads the config, applies flag overrides and re-validates.
ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
  auto doc = to_json(cfg);
  const auto& o = c.o;
  if (o.alpha) doc["train"]["alpha"] = *o.alpha;
  if (o.beta) doc["train"]["beta"] = *o.beta;
  if (o.epsilon) doc["train"]["perturbation"]["epsilon"] = *o.epsilon;
  if (o.norm) doc["train"]["perturbation"]["norm"] = *o.norm;
  if (o.lr0) doc["train"]["lr0"] = *o.lr0;
  if (o.epochs) doc["train"]["epochs"] = *o.epochs;
  if (o.batch_size) doc["train"]["batch_size"] = *o.batch_size;
  if (o.seed) doc["seed"] = *o.seed;
  if (o.output_dir) doc["output_dir"] = *o.output_dir;
  if (o.kind) doc["sweep"]["kind"] = *o.kind;
  if (o.seeds) doc["sweep"]["seeds"] = *o.seeds;
  return parse_config(doc);
}

void say(const std::string& line) { std::cerr << line << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust training with generated data at desk scale"};
  app.require_subcommand(1);
  Common common;
  std::string data_path, out_path, pool_path, model_path, samples_path, labeler_path, test_path, report_path;
  std::string landscape_path, landscape_model;
  std::size_t count = 0, filter_k = 0, diag_n = 1000, is_splits = 10, embed_k = 100, example = 0, resolution = 21;
  double half_extent = 1.5;
  std::string provenance = "gaussian-fit";
  bool use_ema = true;

  auto* make_data = app.add_subcommand("make-data", "write the synthetic train/test/holdout splits");
  add_common(make_data, common);
  make_data->add_option("-o,--out", out_path, "output directory")->required();
  bool true_family = false;
  make_data->add_flag("--true-data", true_family, "use the true_data spec instead of data");

  auto* train_nr = app.add_subcommand("train-nonrobust", "train the non-robust labeler");
  add_common(train_nr, common);
  train_nr->add_option("-d,--data", data_path, "training dataset file")->required();
  train_nr->add_option("-o,--out", out_path, "checkpoint to write")->required();

  auto* fit = app.add_subcommand("fit-gaussian", "fit PCA + class-conditional Gaussians");
  add_common(fit, common);
  fit->add_option("-d,--data", data_path, "training dataset file")->required();
  fit->add_option("-o,--out", out_path, "generator file to write")->required();

  auto* gen = app.add_subcommand("generate", "sample a class-balanced set from a fitted generator");
  add_common(gen, common);
  gen->add_option("-m,--model", model_path, "generator file")->required();
  gen->add_option("-n,--count", count, "number of samples")->required();
  gen->add_option("-o,--out", out_path, "sample set to write")->required();

  auto* label = app.add_subcommand("pseudo-label", "label a sample set with a non-robust classifier");
  add_common(label, common);
  label->add_option("-l,--labeler", labeler_path, "labeler checkpoint")->required();
  label->add_option("-s,--samples", samples_path, "sample set")->required();
  label->add_option("-o,--out", out_path, "pseudo-labelled set to write")->required();
  label->add_option("-k,--filter-k", filter_k, "keep the top k per class by score (0 keeps all)");

  auto* tr = app.add_subcommand("train", "robust training on original + generated data");
  add_common(tr, common);
  tr->add_option("-d,--data", data_path, "original training dataset")->required();
  tr->add_option("-p,--pool", pool_path, "pseudo-labelled generated set");
  tr->add_option("-o,--out", out_path, "checkpoint to write")->required();
  tr->add_option("-r,--report", report_path, "training report CSV");

  auto* ev = app.add_subcommand("attack-eval", "attack cascade on a test set");
  add_common(ev, common);
  ev->add_option("-m,--model", model_path, "classifier checkpoint")->required();
  ev->add_option("-d,--data", test_path, "test dataset")->required();
  ev->add_option("-o,--out", out_path, "per-example CSV")->required();
  ev->add_flag("!--raw-weights", use_ema, "attack the raw weights instead of the average");

  auto* diag = app.add_subcommand("diagnose", "complementarity, FID, IS and a loss landscape");
  add_common(diag, common);
  diag->add_option("-l,--classifier", labeler_path, "non-robust classifier (embedder backbone)")->required();
  diag->add_option("--train", data_path, "original training dataset")->required();
  diag->add_option("--test", test_path, "original test dataset")->required();
  diag->add_option("-s,--samples", samples_path, "generated sample set")->required();
  diag->add_option("-o,--out", out_path, "report CSV")->required();
  diag->add_option("-n,--count", diag_n, "points drawn from each set");
  diag->add_option("--is-splits", is_splits, "inception-score splits");
  diag->add_option("--pca", embed_k, "embedding PCA components");
  diag->add_option("--landscape-model", landscape_model, "robust checkpoint for the landscape scan");
  diag->add_option("--landscape", landscape_path, "landscape matrix CSV");
  diag->add_option("--example", example, "test example scanned");
  diag->add_option("--resolution", resolution, "grid points per axis");
  diag->add_option("--half-extent", half_extent, "grid half-width in units of the directions");

  auto* sweep = app.add_subcommand("sweep", "run (or resume) the configured sweep");
  add_common(sweep, common);
  sweep->add_option("--output-dir", common.o.output_dir, "override output_dir");
  sweep->add_option("--kind", common.o.kind, "override sweep.kind");
  sweep->add_option("--seeds", common.o.seeds, "override sweep.seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  ExperimentConfig cfg;
  try {
    cfg = resolve(common);
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }
  const std::string hash = config_hash(cfg);

  try {
    if (*make_data) {
      const auto splits = make_synthetic_dataset(true_family ? cfg.true_data : cfg.data);
      const fs::path dir(out_path);
      save_dataset((dir / "train.grtc").string(), splits.train, hash);
      save_dataset((dir / "test.grtc").string(), splits.test, hash);
      save_dataset((dir / "holdout.grtc").string(), splits.holdout, hash);
      say("wrote " + std::to_string(splits.train.size()) + "/" + std::to_string(splits.test.size()) + "/" +
          std::to_string(splits.holdout.size()) + " examples to " + dir.string());
    } else if (*train_nr) {
      const auto data = load_dataset(data_path);
      const auto model = train_labeler(cfg, data);
      save_classifier(out_path, model, hash);
      say("labeler train accuracy " + format_double(accuracy(model, data, true)));
    } else if (*fit) {
      const auto model = fit_generator(cfg, load_dataset(data_path));
      save_gaussian_model(out_path, model, hash);
      say("fitted " + std::to_string(model.per_class.size()) + " class Gaussians in " +
          std::to_string(model.pca.k()) + " PCA components");
    } else if (*gen) {
      const auto model = load_gaussian_model(model_path);
      Rng rng(derive_seed(cfg.seed, {0x21}));
      const auto drawn = sample_gaussian(model, count, rng);
      save_external_samples(out_path, ExternalSampleSet{drawn.images, drawn.labels, provenance}, hash);
    } else if (*label) {
      const auto labeler = load_classifier(labeler_path);
      const auto samples = load_external_samples(samples_path);
      auto set = pseudo_label(labeler, samples.images, cfg.generator.score, fs::path(labeler_path).filename().string());
      if (filter_k > 0) set = filter_topk_per_class(set, filter_k);
      save_pseudo_labeled(out_path, set, hash);
      say("labelled " + std::to_string(set.size()) + " samples");
    } else if (*tr) {
      const auto data = load_dataset(data_path);
      std::optional<PseudoLabeledSet> pool;
      if (!pool_path.empty()) pool = load_pseudo_labeled(pool_path);
      if (!pool && cfg.train.alpha < 1.0) throw ValueError("alpha < 1 needs a generated pool (--pool)");
      Rng rng(derive_seed(cfg.seed, {0x13, 0}));
      auto model = init_classifier(cfg.model_for(cfg.model.hidden), rng);
      auto result = train(cfg.train, data, pool ? &*pool : nullptr, std::move(model));
      save_classifier(out_path, result.model, hash);
      if (!report_path.empty()) result.report.write_csv(report_path);
      say("best step " + std::to_string(result.report.best_step) + ", validation robust accuracy " +
          format_double(result.report.best_val_robust));
    } else if (*ev) {
      const auto model = load_classifier(model_path);
      const auto test = evaluation_split(cfg, load_dataset(test_path));
      auto cascade = cfg.eval.cascade;
      cascade.use_ema = use_ema;
      const auto result = attack_cascade(model, test, cfg.train.perturbation, cascade);
      write_cascade_csv(out_path, result);
      say("clean " + format_double(result.clean_accuracy) + ", stage-1 " + format_double(result.stage1_accuracy) +
          ", robust " + format_double(result.robust_accuracy));
    } else if (*diag) {
      const auto classifier = load_classifier(labeler_path);
      const auto train_set = load_dataset(data_path);
      const auto test_set = load_dataset(test_path);
      const auto samples = load_external_samples(samples_path);
      const auto embedder = make_embedder(classifier, concat(train_set, test_set).images, embed_k);
      Rng rng(derive_seed(cfg.seed, {0x31}));
      const auto report = diagnose(embedder, classifier, train_set.images, test_set.images, samples.images, diag_n,
                                   rng, is_splits);
      write_diagnostics_csv(out_path, report);
      if (!landscape_path.empty()) {
        const auto robust = landscape_model.empty() ? classifier : load_classifier(landscape_model);
        if (example >= test_set.size()) throw ValueError("--example is outside the test set");
        Rng lrng(derive_seed(cfg.seed, {0x32, example}));
        const auto grid = loss_landscape(robust, test_set.images.slice_rows(example, example + 1),
                                         test_set.labels[example], cfg.train.perturbation, half_extent, resolution,
                                         lrng);
        write_landscape_csv(landscape_path, grid);
      }
      say("fid " + format_double(report.fid) + ", is " + format_double(report.is_mean));
    } else if (*sweep) {
      const auto result = run_sweep(cfg, SweepOptions{say});
      say(std::to_string(result.records.size()) + " cells (" + std::to_string(result.trained_cells) +
          " trained) in " + cfg.output_dir);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
