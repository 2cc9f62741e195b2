#include "genrobust/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "genrobust/optim.hpp"

namespace genrobust {

PseudoLabeledSet PseudoLabeledSet::subset(std::span<const std::size_t> indices) const {
  PseudoLabeledSet out;
  out.images = images.gather_rows(indices);
  out.num_classes = num_classes;
  out.labeler_id = labeler_id;
  for (auto i : indices) {
    out.labels.push_back(labels.at(i));
    out.scores.push_back(scores.at(i));
  }
  return out;
}

PseudoLabeledSet from_labeled(const LabeledDataset& data, const std::string& labeler_id) {
  return PseudoLabeledSet{data.images, data.labels, std::vector<double>(data.size(), 1.0), data.num_classes,
                          labeler_id};
}

PseudoLabeledSet pseudo_label(const Classifier& labeler, const Tensor& images, ScoreKind score,
                              const std::string& labeler_id) {
  const Tensor z = logits(labeler, images, /*use_ema=*/true);
  PseudoLabeledSet out;
  out.images = images;
  out.num_classes = labeler.config.num_classes;
  out.labeler_id = labeler_id;
  out.labels = argmax_rows(z);
  const RowMatrix<double> p = softmax_rows<double>(z.matrix());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto y = static_cast<Eigen::Index>(out.labels[r]);
    out.scores.push_back(score == ScoreKind::MaxProbability ? p(static_cast<Eigen::Index>(r), y) : z.row(r)[y]);
  }
  return out;
}

PseudoLabeledSet filter_topk_per_class(const PseudoLabeledSet& set, std::size_t k) {
  std::vector<std::vector<std::size_t>> by_class(set.num_classes);
  for (std::size_t i = 0; i < set.size(); ++i) by_class.at(static_cast<std::size_t>(set.labels[i])).push_back(i);
  std::string deficits;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < k) {
      deficits += (deficits.empty() ? "" : ", ") + std::string("class ") + std::to_string(c) + " has " +
                  std::to_string(by_class[c].size()) + "/" + std::to_string(k);
    }
  }
  if (!deficits.empty()) throw ValueError("not enough samples for top-k filtering: " + deficits);
  std::vector<std::size_t> keep;
  for (auto& idx : by_class) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return set.scores[a] > set.scores[b]; });
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  }
  std::sort(keep.begin(), keep.end());
  return set.subset(keep);
}

void StandardTrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(lr0 >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(ema_tau >= 0.0 && ema_tau <= 1.0)) throw ConfigError("ema decay must lie in [0,1]");
}

Classifier train_nonrobust(const LabeledDataset& data, const ModelConfig& config, const StandardTrainConfig& train,
                           Rng& rng) {
  train.validate();
  if (data.empty()) throw ValueError("train_nonrobust on an empty dataset");
  data.validate();
  if (data.image_shape() != config.input) throw ShapeError("dataset images do not match the model input");
  Rng init_rng = rng.child({0});
  Rng order_rng = rng.child({1});
  Classifier model = init_classifier(config, init_rng);
  if (train.epochs == 0) return model;

  const std::size_t n = data.size();
  const std::size_t per_epoch = (n + train.batch_size - 1) / train.batch_size;
  const std::size_t total = per_epoch * train.epochs;
  NesterovSgd opt({train.momentum, train.weight_decay});
  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
    const auto order = order_rng.permutation(n);
    for (std::size_t b = 0; b < per_epoch; ++b, ++t) {
      const std::size_t begin = b * train.batch_size;
      const std::span<const std::size_t> idx(order.data() + begin, std::min(n, begin + train.batch_size) - begin);
      const auto batch = data.subset(idx);
      Tape<double> tape;
      auto loss = softmax_cross_entropy(
          forward_logits(tape, model, tape.constant(batch.images), false, ParamMode::Trainable), batch.labels);
      auto grads = tape.backward(loss);
      opt.step(model.params, grads, cosine_lr(t, total, train.lr0));
      ema_update(model, ema_decay_at(train.ema_tau, model.step));
      ++model.step;
    }
  }
  model.params = model.ema_params;
  return model;
}

double flip_region_labels(LabeledDataset& data, const VectorXd& direction, double fraction) {
  if (data.empty() || fraction <= 0.0) return -std::numeric_limits<double>::infinity();
  const auto x = data.images.matrix();
  if (static_cast<std::size_t>(direction.size()) != data.images.row_size()) {
    throw ShapeError("flip direction does not match the image size");
  }
  const VectorXd s = x * direction;
  std::vector<double> sorted(s.data(), s.data() + s.size());
  std::sort(sorted.begin(), sorted.end());
  const auto count = static_cast<std::size_t>(std::llround(std::clamp(fraction, 0.0, 1.0) * double(data.size())));
  const double threshold = count >= sorted.size() ? std::numeric_limits<double>::infinity() : sorted[count];
  const int classes = static_cast<int>(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (s(static_cast<Eigen::Index>(i)) < threshold) data.labels[i] = (data.labels[i] + 1) % classes;
  }
  return threshold;
}

DegradedLabeler make_degraded_labeler(const LabeledDataset& data, double target, const ModelConfig& config,
                                      const StandardTrainConfig& train, Rng& rng, const DegradeOptions& options) {
  const double chance = 1.0 / double(config.num_classes);
  if (!(target > chance && target <= 1.0)) {
    throw ValueError("target accuracy must lie in (1/C, 1]");
  }
  const auto n_held = static_cast<std::size_t>(std::llround(options.heldout_fraction * double(data.size())));
  if (n_held == 0 || n_held >= data.size()) throw ValueError("degraded labeler needs a non-empty held-out split");
  const auto fit = data.slice(0, data.size() - n_held);
  const auto held = data.slice(data.size() - n_held, data.size());

  Rng dir_rng = rng.child({0xd1});
  VectorXd direction(static_cast<Eigen::Index>(data.images.row_size()));
  for (auto& v : direction) v = dir_rng.normal();
  direction.normalize();

  struct Trial {
    double fraction;
    double accuracy;
  };
  std::vector<Trial> trials;
  DegradedLabeler best;
  double best_gap = std::numeric_limits<double>::infinity();
  double q = 1.0 - target;
  for (std::size_t trial = 0; trial < options.max_trials; ++trial) {
    auto noisy = fit;
    flip_region_labels(noisy, direction, q);
    Rng train_rng = rng.child({0x7a, trial});
    auto model = train_nonrobust(noisy, config, train, train_rng);
    const double acc = accuracy(model, held, true);
    trials.push_back({q, acc});
    const double gap = std::abs(acc - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = DegradedLabeler{std::move(model), q, acc, trial + 1};
    }
    if (gap <= options.tolerance || (target >= 1.0 && q == 0.0 && acc >= 1.0 - options.tolerance)) {
      best.trials = trial + 1;
      return best;
    }
    // Secant step on accuracy(q) - target; slope -1 until two points exist.
    double slope = -1.0;
    if (trials.size() >= 2) {
      const auto& a = trials[trials.size() - 2];
      const auto& b = trials.back();
      if (b.fraction != a.fraction) slope = (b.accuracy - a.accuracy) / (b.fraction - a.fraction);
      if (!(slope < -0.05)) slope = -1.0;
    }
    q = std::clamp(q - (acc - target) / slope, 0.0, 1.0);
  }
  throw ValueError("labeler accuracy " + std::to_string(target) + " not reached within " +
                   std::to_string(options.max_trials) + " trials (closest " + std::to_string(best.heldout_accuracy) +
                   ")");
}

}  // namespace genrobust
