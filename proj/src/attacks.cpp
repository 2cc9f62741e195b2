#include "genrobust/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "genrobust/csv.hpp"
#include "genrobust/parallel.hpp"

namespace genrobust {

std::string to_string(Norm norm) { return norm == Norm::Linf ? "linf" : "l2"; }

Norm norm_from_string(const std::string& name) {
  if (name == "linf") return Norm::Linf;
  if (name == "l2") return Norm::L2;
  throw ConfigError("unknown norm '" + name + "' (expected linf or l2)");
}

std::string to_string(InnerOptimizer opt) { return opt == InnerOptimizer::SignSgd ? "sign-sgd" : "adam"; }

InnerOptimizer inner_optimizer_from_string(const std::string& name) {
  if (name == "sign-sgd") return InnerOptimizer::SignSgd;
  if (name == "adam") return InnerOptimizer::Adam;
  throw ConfigError("unknown inner optimizer '" + name + "' (expected sign-sgd or adam)");
}

std::string to_string(AttackObjective objective) {
  switch (objective) {
    case AttackObjective::CrossEntropy: return "cross-entropy";
    case AttackObjective::KlVsClean: return "kl-vs-clean";
    case AttackObjective::Margin: return "margin";
    case AttackObjective::TargetedMargin: return "targeted-margin";
  }
  return "?";
}

AttackObjective attack_objective_from_string(const std::string& name) {
  if (name == "cross-entropy") return AttackObjective::CrossEntropy;
  if (name == "kl-vs-clean") return AttackObjective::KlVsClean;
  if (name == "margin") return AttackObjective::Margin;
  if (name == "targeted-margin") return AttackObjective::TargetedMargin;
  throw ConfigError("unknown attack objective '" + name + "'");
}

void PerturbationSet::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ValueError("epsilon must be finite and non-negative");
}

void AttackConfig::validate() const {
  if (restarts < 1) throw ValueError("attack needs at least one restart");
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) throw ValueError("attack step size must be non-negative");
}

LogitFn logit_fn(const Classifier& model, bool use_ema) {
  return [&model, use_ema](Tape<double>& tape, Var<double> x) { return forward_logits(tape, model, x, use_ema); };
}

namespace {

/// L2 rows are rescaled only when they exceed the radius by more than this
/// relative slack, which keeps the projection exactly idempotent.
constexpr double kL2Slack = 1e-12;

void project_span(std::span<double> d, const PerturbationSet& set) {
  if (set.norm == Norm::Linf) {
    for (auto& v : d) v = std::clamp(v, -set.epsilon, set.epsilon);
    return;
  }
  double sq = 0.0;
  for (double v : d) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > set.epsilon * (1.0 + kL2Slack)) {
    const double factor = norm > 0.0 ? set.epsilon / norm : 0.0;
    for (auto& v : d) v *= factor;
  }
}

/// Moves delta so that x + delta stays inside [0,1].
void clip_to_box(const Tensor& x, Tensor& delta) {
  for (std::size_t i = 0; i < x.size(); ++i) delta[i] = std::clamp(x[i] + delta[i], 0.0, 1.0) - x[i];
}

Tensor candidate_inputs(const Tensor& x, const Tensor& delta) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i] + delta[i], 0.0, 1.0);
  return out;
}

void random_start(std::span<double> row, const PerturbationSet& set, Rng& rng) {
  if (set.norm == Norm::Linf) {
    for (auto& v : row) v = rng.uniform(-set.epsilon, set.epsilon);
    return;
  }
  double sq = 0.0;
  for (auto& v : row) {
    v = rng.normal();
    sq += v * v;
  }
  const double norm = std::sqrt(sq);
  const double radius = set.epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(row.size()));
  for (auto& v : row) v = norm > 0.0 ? v * radius / norm : 0.0;
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

constexpr std::size_t kChunkRows = 256;

}  // namespace

Tensor project(const Tensor& delta, const PerturbationSet& set) {
  set.validate();
  Tensor out = delta;
  project_span(out.data(), set);
  return out;
}

Tensor project_rows(const Tensor& delta, const PerturbationSet& set) {
  set.validate();
  Tensor out = delta;
  for (std::size_t r = 0; r < out.rows(); ++r) project_span(out.row(r), set);
  return out;
}

std::vector<double> row_norms(const Tensor& delta, Norm norm) {
  std::vector<double> out(delta.rows(), 0.0);
  for (std::size_t r = 0; r < delta.rows(); ++r) {
    for (double v : delta.row(r)) {
      if (norm == Norm::Linf) {
        out[r] = std::max(out[r], std::abs(v));
      } else {
        out[r] += v * v;
      }
    }
    if (norm == Norm::L2) out[r] = std::sqrt(out[r]);
  }
  return out;
}

AttackResult maximize_perturbation(const Tensor& x, const ObjectiveFn& objective, const PerturbationSet& set,
                                   const AttackConfig& cfg, std::span<const std::size_t> example_ids) {
  set.validate();
  cfg.validate();
  const std::size_t batch = x.rows();
  if (!example_ids.empty() && example_ids.size() != batch) throw ShapeError("example id count does not match batch");
  auto id_of = [&](std::size_t r) { return example_ids.empty() ? r : example_ids[r]; };

  AttackResult result;
  result.delta = Tensor(x.shape());
  result.objective.assign(batch, -std::numeric_limits<double>::infinity());
  result.success.assign(batch, 0);
  result.worst_margin.assign(batch, std::numeric_limits<double>::infinity());
  std::vector<char> best_success(batch, 0);
  bool labelled = false;

  const std::size_t restarts = cfg.random_start ? cfg.restarts : 1;
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  for (std::size_t restart = 0; restart < restarts; ++restart) {
    Tensor delta(x.shape());
    if (cfg.random_start && set.epsilon > 0.0) {
      for (std::size_t r = 0; r < batch; ++r) {
        Rng rng(derive_seed(cfg.seed, {restart, id_of(r)}));
        random_start(delta.row(r), set, rng);
      }
    }
    clip_to_box(x, delta);

    std::vector<double> m, v;
    if (cfg.optimizer == InnerOptimizer::Adam) {
      m.assign(x.size(), 0.0);
      v.assign(x.size(), 0.0);
    }
    std::vector<double> trace;
    trace.reserve(cfg.steps + 1);

    for (std::size_t step = 0;; ++step) {
      const bool last = step == cfg.steps;
      ObjectiveEval eval = objective(candidate_inputs(x, delta), !last);
      if (eval.values.size() != batch) throw ShapeError("objective returned the wrong number of values");
      labelled = !eval.success.empty();
      double total = 0.0;
      for (std::size_t r = 0; r < batch; ++r) {
        const double value = eval.values[r];
        total += value;
        const char succ = labelled ? eval.success[r] : 0;
        if (labelled) result.worst_margin[r] = std::min(result.worst_margin[r], eval.margin[r]);
        const bool better =
            succ > best_success[r] || (succ == best_success[r] && value > result.objective[r]);
        if (better) {
          best_success[r] = succ;
          result.objective[r] = value;
          std::copy(delta.row(r).begin(), delta.row(r).end(), result.delta.row(r).begin());
        }
      }
      trace.push_back(total);
      if (last) break;

      const Tensor& g = eval.grad;
      if (g.size() != x.size()) throw ShapeError("objective gradient has the wrong shape");
      require_finite(g, "attack gradient");
      if (cfg.optimizer == InnerOptimizer::SignSgd) {
        for (std::size_t i = 0; i < x.size(); ++i) delta[i] += cfg.step_size * sign(g[i]);
      } else {
        const double t = static_cast<double>(step + 1);
        const double c1 = 1.0 - std::pow(beta1, t);
        const double c2 = 1.0 - std::pow(beta2, t);
        for (std::size_t i = 0; i < x.size(); ++i) {
          m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
          v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
          delta[i] += cfg.step_size * (m[i] / c1) / (std::sqrt(v[i] / c2) + adam_eps);
        }
      }
      for (std::size_t r = 0; r < batch; ++r) project_span(delta.row(r), set);
      clip_to_box(x, delta);
    }
    result.trace.push_back(std::move(trace));
  }
  result.success = best_success;
  if (!labelled) result.worst_margin.assign(batch, std::numeric_limits<double>::quiet_NaN());
  result.adversarial = candidate_inputs(x, result.delta);
  return result;
}

ObjectiveFn model_objective(const LogitFn& model, AttackObjective objective, const AttackReference& ref) {
  if (objective == AttackObjective::KlVsClean && ref.clean_logits == nullptr) {
    throw ValueError("kl-vs-clean objective needs clean logits");
  }
  if (objective != AttackObjective::KlVsClean && ref.labels.empty()) {
    throw ValueError(to_string(objective) + " objective needs labels");
  }
  if (objective == AttackObjective::TargetedMargin && ref.targets.empty()) {
    throw ValueError("targeted-margin objective needs target classes");
  }
  return [model, objective, ref](const Tensor& candidate, bool need_grad) {
    Tape<double> tape;
    auto x = need_grad ? tape.watch(candidate) : tape.constant(candidate);
    auto z = model(tape, x);
    Var<double> rows;
    switch (objective) {
      case AttackObjective::CrossEntropy: rows = cross_entropy_rows(z, ref.labels); break;
      case AttackObjective::KlVsClean: rows = kl_divergence_rows(tape.constant(*ref.clean_logits), z); break;
      case AttackObjective::Margin: rows = scale(margin_rows(z, ref.labels), -1.0); break;
      case AttackObjective::TargetedMargin: rows = targeted_margin_rows(z, ref.labels, ref.targets); break;
    }
    ObjectiveEval eval;
    eval.values = rows.value();
    if (need_grad) {
      tape.backward(sum(rows));
      eval.grad = tape.grad(x);
    }
    if (!ref.labels.empty()) {
      const auto pred = argmax_rows(z.value());
      const auto margins = margin_loss(z.value(), ref.labels);
      eval.success.resize(pred.size());
      eval.margin.resize(pred.size());
      for (std::size_t r = 0; r < pred.size(); ++r) {
        eval.success[r] = pred[r] != ref.labels[r];
        eval.margin[r] = margins[r];
      }
    }
    return eval;
  };
}

AttackResult pgd(const LogitFn& model, const Tensor& x, const AttackReference& ref, const PerturbationSet& set,
                 const AttackConfig& cfg) {
  const std::size_t batch = x.rows();
  std::vector<std::size_t> ids(ref.example_ids.begin(), ref.example_ids.end());
  if (ids.empty()) {
    ids.resize(batch);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
  }
  if (ids.size() != batch) throw ShapeError("example id count does not match batch");
  if (!ref.labels.empty() && ref.labels.size() != batch) throw ShapeError("label count does not match batch");
  if (ref.clean_logits && ref.clean_logits->rows() != batch) throw ShapeError("clean logits do not match batch");

  const std::size_t chunks = (batch + kChunkRows - 1) / kChunkRows;
  std::vector<AttackResult> parts(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = c * kChunkRows;
    const std::size_t end = std::min(batch, begin + kChunkRows);
    AttackReference sub;
    if (!ref.labels.empty()) sub.labels = ref.labels.subspan(begin, end - begin);
    if (!ref.targets.empty()) sub.targets = ref.targets.subspan(begin, end - begin);
    Tensor clean;
    if (ref.clean_logits) {
      clean = ref.clean_logits->slice_rows(begin, end);
      sub.clean_logits = &clean;
    }
    std::span<const std::size_t> sub_ids(ids.data() + begin, end - begin);
    parts[c] = maximize_perturbation(x.slice_rows(begin, end), model_objective(model, cfg.objective, sub), set, cfg,
                                     sub_ids);
  });

  if (chunks == 1) return std::move(parts[0]);
  AttackResult out;
  out.delta = Tensor(x.shape());
  out.adversarial = Tensor(x.shape());
  for (std::size_t c = 0; c < chunks; ++c) {
    auto& p = parts[c];
    const std::size_t offset = c * kChunkRows * x.row_size();
    std::copy(p.delta.data().begin(), p.delta.data().end(), out.delta.data().begin() + offset);
    std::copy(p.adversarial.data().begin(), p.adversarial.data().end(), out.adversarial.data().begin() + offset);
    out.objective.insert(out.objective.end(), p.objective.begin(), p.objective.end());
    out.success.insert(out.success.end(), p.success.begin(), p.success.end());
    out.worst_margin.insert(out.worst_margin.end(), p.worst_margin.begin(), p.worst_margin.end());
    if (out.trace.empty()) {
      out.trace = p.trace;
    } else {
      for (std::size_t r = 0; r < p.trace.size(); ++r) {
        for (std::size_t s = 0; s < p.trace[r].size(); ++s) out.trace[r][s] += p.trace[r][s];
      }
    }
  }
  return out;
}

AttackResult pgd(const Classifier& model, const Tensor& x, const AttackReference& ref, const PerturbationSet& set,
                 const AttackConfig& cfg, bool use_ema) {
  return pgd(logit_fn(model, use_ema), x, ref, set, cfg);
}

AttackResult fgsm(const LogitFn& model, const Tensor& x, std::span<const int> labels, const PerturbationSet& set,
                  std::optional<double> step) {
  AttackConfig cfg;
  cfg.steps = 1;
  cfg.step_size = step.value_or(set.epsilon);
  cfg.optimizer = InnerOptimizer::SignSgd;
  cfg.restarts = 1;
  cfg.objective = AttackObjective::CrossEntropy;
  cfg.random_start = false;
  AttackReference ref;
  ref.labels = labels;
  return pgd(model, x, ref, set, cfg);
}

AttackResult fgsm(const Classifier& model, const Tensor& x, std::span<const int> labels,
                  const PerturbationSet& set, std::optional<double> step, bool use_ema) {
  return fgsm(logit_fn(model, use_ema), x, labels, set, step);
}

CascadeConfig CascadeConfig::resolved(const PerturbationSet& set) const {
  CascadeConfig out = *this;
  for (AttackConfig* stage : {&out.stage1, &out.stage2}) {
    if (stage->step_size == 0.0 && stage->steps > 0) {
      stage->step_size = 2.5 * set.epsilon / static_cast<double>(stage->steps);
    }
  }
  out.stage1.objective = AttackObjective::CrossEntropy;
  out.stage2.objective = AttackObjective::TargetedMargin;
  return out;
}

std::vector<std::vector<int>> top_wrong_classes(const Tensor& logits, std::span<const int> labels, std::size_t k) {
  std::vector<std::vector<int>> out(logits.rows());
  const std::size_t classes = logits.row_size();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::vector<int> order;
    for (std::size_t j = 0; j < classes; ++j) {
      if (static_cast<int>(j) != labels[r]) order.push_back(static_cast<int>(j));
    }
    auto row = logits.row(r);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return row[a] > row[b]; });
    order.resize(std::min(k, order.size()));
    out[r] = std::move(order);
  }
  return out;
}

namespace {

Tensor evaluate_logits(const LogitFn& model, const Tensor& x) {
  const std::size_t batch = x.rows();
  const std::size_t chunks = (batch + kChunkRows - 1) / kChunkRows;
  std::vector<Tensor> parts(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    Tape<double> tape;
    const std::size_t begin = c * kChunkRows;
    parts[c] = model(tape, tape.constant(x.slice_rows(begin, std::min(batch, begin + kChunkRows)))).value();
  });
  Tensor out;
  for (auto& p : parts) out = concat_rows(out, p);
  return out;
}

}  // namespace

CascadeResult attack_cascade(const LogitFn& model, const LabeledDataset& data, const PerturbationSet& set,
                             const CascadeConfig& config) {
  const CascadeConfig cfg = config.resolved(set);
  const std::size_t n = data.size();
  if (n == 0) throw ValueError("attack_cascade on an empty dataset");
  CascadeResult result;
  result.records.resize(n);

  const Tensor clean = evaluate_logits(model, data.images);
  const auto pred = argmax_rows(clean);
  const auto clean_margin = margin_loss(clean, data.labels);
  std::vector<std::size_t> alive;
  for (std::size_t i = 0; i < n; ++i) {
    auto& rec = result.records[i];
    rec.example_id = i;
    rec.clean_correct = pred[i] == data.labels[i];
    rec.worst_margin = clean_margin[i];
    if (rec.clean_correct) alive.push_back(i);
  }

  auto run_stage = [&](const std::vector<std::size_t>& idx, const AttackConfig& stage,
                       const std::vector<int>* targets) {
    std::vector<int> labels(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) labels[j] = data.labels[idx[j]];
    AttackReference ref;
    ref.labels = labels;
    if (targets) ref.targets = *targets;
    ref.example_ids = idx;
    auto res = pgd(model, data.images.gather_rows(idx), ref, set, stage);
    std::vector<std::size_t> survivors;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      auto& rec = result.records[idx[j]];
      rec.worst_margin = std::min(rec.worst_margin, res.worst_margin[j]);
      if (!res.success[j]) survivors.push_back(idx[j]);
    }
    return survivors;
  };

  if (!alive.empty()) alive = run_stage(alive, cfg.stage1, nullptr);
  for (auto i : alive) result.records[i].stage1_survived = true;

  if (!alive.empty() && cfg.top_k > 0) {
    const auto order = top_wrong_classes(clean.gather_rows(alive), [&] {
      std::vector<int> y;
      for (auto i : alive) y.push_back(data.labels[i]);
      return y;
    }(), cfg.top_k);
    std::vector<std::size_t> rank_of(n, 0);
    for (std::size_t j = 0; j < alive.size(); ++j) rank_of[alive[j]] = j;
    const auto first_order = order;
    for (std::size_t rank = 0; rank < cfg.top_k && !alive.empty(); ++rank) {
      std::vector<std::size_t> idx;
      std::vector<int> targets;
      for (auto i : alive) {
        const auto& classes = first_order[rank_of[i]];
        if (rank < classes.size()) {
          idx.push_back(i);
          targets.push_back(classes[rank]);
        }
      }
      if (idx.empty()) break;
      AttackConfig stage = cfg.stage2;
      stage.seed = derive_seed(cfg.stage2.seed, {rank});
      auto survivors = run_stage(idx, stage, &targets);
      std::vector<char> broken(n, 0);
      for (auto i : idx) broken[i] = 1;
      for (auto i : survivors) broken[i] = 0;
      std::vector<std::size_t> next;
      for (auto i : alive) {
        if (!broken[i]) next.push_back(i);
      }
      alive = std::move(next);
    }
  }
  for (auto i : alive) result.records[i].stage2_survived = true;

  std::size_t clean_ok = 0, s1 = 0, s2 = 0;
  for (const auto& rec : result.records) {
    clean_ok += rec.clean_correct;
    s1 += rec.stage1_survived;
    s2 += rec.stage2_survived;
  }
  result.clean_accuracy = double(clean_ok) / double(n);
  result.stage1_accuracy = double(s1) / double(n);
  result.robust_accuracy = double(s2) / double(n);
  return result;
}

CascadeResult attack_cascade(const Classifier& model, const LabeledDataset& data, const PerturbationSet& set,
                             const CascadeConfig& cfg) {
  return attack_cascade(logit_fn(model, cfg.use_ema), data, set, cfg);
}

void write_cascade_csv(const std::string& path, const CascadeResult& result) {
  CsvWriter csv({"example_id", "clean_correct", "stage1_survived", "stage2_survived", "worst_margin"});
  for (const auto& rec : result.records) {
    csv.row({std::to_string(rec.example_id), rec.clean_correct ? "1" : "0", rec.stage1_survived ? "1" : "0",
             rec.stage2_survived ? "1" : "0", format_double(rec.worst_margin)});
  }
  csv.save(path);
}

}  // namespace genrobust
