#include "genrobust/training.hpp"

#include <cmath>

#include "genrobust/csv.hpp"

namespace genrobust {

std::string to_string(RobustLoss loss) { return loss == RobustLoss::Trades ? "trades" : "standard"; }

RobustLoss robust_loss_from_string(const std::string& name) {
  if (name == "trades") return RobustLoss::Trades;
  if (name == "standard") return RobustLoss::Standard;
  throw ConfigError("unknown robust loss '" + name + "' (expected trades or standard)");
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0,1]");
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(lr0 >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(ema_tau >= 0.0 && ema_tau <= 1.0)) throw ConfigError("ema decay must lie in [0,1]");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  try {
    inner.validate();
    perturbation.validate();
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
}

std::size_t original_count(double alpha, std::size_t batch_size) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValueError("alpha must lie in [0,1]");
  return static_cast<std::size_t>(std::llround(alpha * double(batch_size)));
}

void BatchSampler::Source::draw(std::size_t n, std::vector<std::size_t>& out) {
  for (std::size_t i = 0; i < n; ++i) {
    if (cursor == order.size()) {
      order = rng.permutation(data->size());
      cursor = 0;
    }
    out.push_back(order[cursor++]);
  }
}

BatchSampler::BatchSampler(const LabeledDataset* orig, const LabeledDataset* gen, double alpha,
                           std::size_t batch_size, Rng rng)
    : n_orig_(original_count(alpha, batch_size)), n_gen_(batch_size - n_orig_) {
  if (n_orig_ > 0 && (orig == nullptr || orig->empty())) {
    throw ValueError("alpha > 0 needs a non-empty original dataset");
  }
  if (n_gen_ > 0 && (gen == nullptr || gen->empty())) {
    throw ValueError("alpha < 1 needs a non-empty generated dataset");
  }
  orig_.data = orig;
  orig_.rng = rng.child({1});
  gen_.data = gen;
  gen_.rng = rng.child({2});
}

MixedBatch BatchSampler::next() {
  MixedBatch batch;
  batch.n_orig = n_orig_;
  batch.n_gen = n_gen_;
  std::vector<std::size_t> idx;
  if (n_orig_ > 0) {
    orig_.draw(n_orig_, idx);
    batch.images = orig_.data->images.gather_rows(idx);
    for (auto i : idx) batch.labels.push_back(orig_.data->labels[i]);
  }
  if (n_gen_ > 0) {
    idx.clear();
    gen_.draw(n_gen_, idx);
    batch.images = concat_rows(batch.images, gen_.data->images.gather_rows(idx));
    for (auto i : idx) batch.labels.push_back(gen_.data->labels[i]);
  }
  return batch;
}

MixedBatch build_mixed_batch(const LabeledDataset& orig, const PseudoLabeledSet& gen, double alpha,
                             std::size_t batch_size, Rng& rng) {
  const auto gen_data = gen.as_dataset();
  BatchSampler sampler(&orig, &gen_data, alpha, batch_size, rng.child({0}));
  return sampler.next();
}

Var<double> trades_loss(Tape<double>& tape, const Classifier& model, const Tensor& x, std::span<const int> labels,
                        double beta, const AttackConfig& inner, const PerturbationSet& set) {
  if (!(beta >= 0.0)) throw ValueError("beta must be non-negative");
  auto clean = forward_logits(tape, model, tape.constant(x), false, ParamMode::Trainable);
  auto ce = softmax_cross_entropy(clean, labels);
  if (beta == 0.0) return ce;
  AttackConfig cfg = inner;
  cfg.objective = AttackObjective::KlVsClean;
  AttackReference ref;
  const Tensor anchor = clean.value();
  ref.clean_logits = &anchor;
  const auto adv = pgd(model, x, ref, set, cfg);
  auto adv_logits = forward_logits(tape, model, tape.constant(adv.adversarial), false, ParamMode::Trainable);
  auto kl = kl_divergence(tape.constant(anchor), adv_logits);
  return add(ce, scale(kl, beta));
}

Var<double> standard_at_loss(Tape<double>& tape, const Classifier& model, const Tensor& x,
                             std::span<const int> labels, const AttackConfig& inner, const PerturbationSet& set) {
  AttackConfig cfg = inner;
  cfg.objective = AttackObjective::CrossEntropy;
  AttackReference ref;
  ref.labels = labels;
  const auto adv = pgd(model, x, ref, set, cfg);
  return softmax_cross_entropy(
      forward_logits(tape, model, tape.constant(adv.adversarial), false, ParamMode::Trainable), labels);
}

double pgd_accuracy(const Classifier& model, const LabeledDataset& data, const PerturbationSet& set,
                    std::size_t steps, bool use_ema, std::uint64_t seed) {
  if (data.empty()) throw ValueError("pgd_accuracy on an empty dataset");
  AttackConfig cfg;
  cfg.steps = steps;
  cfg.step_size = steps ? 2.5 * set.epsilon / double(steps) : 0.0;
  cfg.optimizer = InnerOptimizer::SignSgd;
  cfg.objective = AttackObjective::CrossEntropy;
  cfg.seed = seed;
  AttackReference ref;
  ref.labels = data.labels;
  const auto res = pgd(model, data.images, ref, set, cfg, use_ema);
  std::size_t survived = 0;
  for (char s : res.success) survived += !s;
  return double(survived) / double(data.size());
}

void TrainReport::write_csv(const std::string& path) const {
  CsvWriter csv({"step", "lr", "train_loss", "val_clean", "val_robust"});
  for (const auto& e : evaluations) {
    csv.row({std::to_string(e.step), format_double(e.lr), format_double(e.train_loss), format_double(e.val_clean),
             format_double(e.val_robust)});
  }
  csv.save(path);
}

TrainResult train(const TrainConfig& config, const LabeledDataset& orig, const PseudoLabeledSet* gen,
                  Classifier model) {
  config.validate();
  TrainResult result;
  if (config.alpha < 1.0 && (gen == nullptr || gen->size() == 0)) {
    throw ValueError("alpha < 1 requires generated data");
  }
  const std::size_t v = config.early_stop.validation_size;
  if (v > 0 && v >= orig.size()) throw ValueError("validation split leaves no original training data");
  const auto train_orig = orig.slice(0, orig.size() - v);
  const auto validation = orig.slice(orig.size() - v, orig.size());
  LabeledDataset gen_data;
  if (gen != nullptr && config.alpha < 1.0) gen_data = gen->as_dataset();

  const std::size_t epoch_size = !train_orig.empty() ? train_orig.size() : gen_data.size();
  const std::size_t per_epoch = (epoch_size + config.batch_size - 1) / config.batch_size;
  std::size_t total = per_epoch * config.epochs;
  if (config.max_steps > 0) total = std::min(total, config.max_steps);
  if (total == 0) {
    result.model = std::move(model);
    return result;
  }

  Rng rng(config.seed);
  BatchSampler sampler(&train_orig, gen_data.empty() ? nullptr : &gen_data, config.alpha, config.batch_size,
                       rng.child({0}));
  NesterovSgd opt({config.momentum, config.weight_decay});
  const std::size_t eval_every = config.early_stop.eval_every ? config.early_stop.eval_every : per_epoch;

  Classifier best = model;
  bool have_best = false;
  double loss_since_eval = 0.0;
  std::size_t steps_since_eval = 0;
  for (std::size_t t = 0; t < total; ++t) {
    const auto batch = sampler.next();
    const double lr = cosine_lr(t, total, config.lr0);
    AttackConfig inner = config.inner;
    inner.seed = derive_seed(config.seed, {0x1a, config.inner.seed, t});
    double loss_value = 0.0;
    try {
      Tape<double> tape;
      auto loss = config.loss == RobustLoss::Trades
                      ? trades_loss(tape, model, batch.images, batch.labels, config.beta, inner, config.perturbation)
                      : standard_at_loss(tape, model, batch.images, batch.labels, inner, config.perturbation);
      loss_value = loss.value().item();
      auto grads = tape.backward(loss);
      opt.step(model.params, grads, lr);
      require_finite(model.params.at(model.params.names().front()), "parameters");
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(t) + " (lr " + format_double(lr) +
                         "): " + e.what());
    }
    ema_update(model, ema_decay_at(config.ema_tau, model.step));
    ++model.step;
    result.report.step_losses.push_back(loss_value);
    loss_since_eval += loss_value;
    ++steps_since_eval;

    const bool last = t + 1 == total;
    if ((t + 1) % eval_every == 0 || last) {
      EvalRecord rec;
      rec.step = t + 1;
      rec.epoch = (t + 1 + per_epoch - 1) / per_epoch;
      rec.lr = lr;
      rec.train_loss = loss_since_eval / double(steps_since_eval);
      loss_since_eval = 0.0;
      steps_since_eval = 0;
      if (!validation.empty()) {
        rec.val_clean = accuracy(model, validation, true);
        rec.val_robust = pgd_accuracy(model, validation, config.perturbation, config.early_stop.pgd_steps, true,
                                      derive_seed(config.seed, {0xe5}));
        if (!have_best || rec.val_robust > result.report.best_val_robust) {
          best = model;
          have_best = true;
          result.report.best_step = rec.step;
          result.report.best_val_robust = rec.val_robust;
          result.report.best_val_clean = rec.val_clean;
        }
      }
      result.report.evaluations.push_back(rec);
    }
  }
  if (!have_best) {
    best = model;
    result.report.best_step = total;
  }
  result.report.checkpoint_id = "step-" + std::to_string(result.report.best_step);
  result.model = std::move(best);
  return result;
}

}  // namespace genrobust
