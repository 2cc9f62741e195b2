#include "genrobust/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <type_traits>

#include "genrobust/csv.hpp"

namespace genrobust {

using nlohmann::json;

namespace {

template <typename T>
T read_value(const json& v, const std::string& path);

template <>
double read_value<double>(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path + " must be a number");
  return v.get<double>();
}

template <>
std::size_t read_value<std::size_t>(const json& v, const std::string& path) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
    throw ConfigError(path + " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seeds are read as size_t");

template <>
bool read_value<bool>(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ConfigError(path + " must be true or false");
  return v.get<bool>();
}

template <>
std::string read_value<std::string>(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path + " must be a string");
  return v.get<std::string>();
}

template <>
std::vector<double> read_value<std::vector<double>>(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path + " must be an array");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(read_value<double>(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

template <>
std::vector<std::size_t> read_value<std::vector<std::size_t>>(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path + " must be an array");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(read_value<std::size_t>(v[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

template <>
std::vector<std::vector<std::size_t>> read_value<std::vector<std::vector<std::size_t>>>(const json& v,
                                                                                      const std::string& path) {
  if (!v.is_array()) throw ConfigError(path + " must be an array of arrays");
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(read_value<std::vector<std::size_t>>(v[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

/// A JSON object whose keys must all be consumed.
class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError((path_.empty() ? "config" : path_) + " must be an object");
  }

  template <typename T>
  Section& get(const char* key, T& out) {
    if (const json* v = take(key)) out = read_value<T>(*v, child_path(key));
    return *this;
  }

  template <typename T, typename Parse>
  Section& get_as(const char* key, T& out, Parse parse) {
    if (const json* v = take(key)) out = parse(read_value<std::string>(*v, child_path(key)));
    return *this;
  }

  Section& get_optional(const char* key, std::optional<double>& out) {
    if (const json* v = take(key)) {
      if (v->is_null()) {
        out.reset();
      } else {
        out = read_value<double>(*v, child_path(key));
      }
    }
    return *this;
  }

  template <typename Fn>
  Section& section(const char* key, Fn fn) {
    if (const json* v = take(key)) {
      Section sub(*v, child_path(key));
      fn(sub);
      sub.finish();
    }
    return *this;
  }

  void finish() const {
    for (const auto& item : doc_.items()) {
      if (!used_.count(item.key())) throw ConfigError("unknown config key '" + child_path(item.key().c_str()) + "'");
    }
  }

  std::string child_path(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json* take(const char* key) {
    auto it = doc_.find(key);
    if (it == doc_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }

  const json& doc_;
  std::string path_;
  std::set<std::string> used_;
};

// Enum wrappers that re-throw as ConfigError.
Norm parse_norm(const std::string& s) { return norm_from_string(s); }

ScoreKind parse_score(const std::string& s) {
  if (s == "max-probability") return ScoreKind::MaxProbability;
  if (s == "max-logit") return ScoreKind::MaxLogit;
  throw ConfigError("unknown score '" + s + "' (expected max-probability or max-logit)");
}

std::string score_name(ScoreKind k) { return k == ScoreKind::MaxProbability ? "max-probability" : "max-logit"; }

void read_image(Section& s, const char* key, ImageShape& image) {
  std::vector<std::size_t> dims{image.channels, image.height, image.width};
  s.get(key, dims);
  if (dims.size() != 3) throw ConfigError(s.child_path(key) + " must be [channels, height, width]");
  image = ImageShape{dims[0], dims[1], dims[2]};
}

void read_spec(Section& s, SyntheticDatasetSpec& d) {
  s.get_as("family", d.family, synthetic_family_from_string)
      .get("num_classes", d.num_classes)
      .get("latent_dim", d.latent_dim)
      .get("latent_std", d.latent_std)
      .get("separation", d.separation)
      .get("components", d.components)
      .get("component_spread", d.component_spread)
      .get("warp", d.warp)
      .get("pixel_noise", d.pixel_noise)
      .get("train_size", d.train_size)
      .get("test_size", d.test_size)
      .get("holdout_size", d.holdout_size)
      .get("seed", d.seed);
  read_image(s, "image", d.image);
}

json spec_json(const SyntheticDatasetSpec& d) {
  return json{{"family", to_string(d.family)},
              {"num_classes", d.num_classes},
              {"image", {d.image.channels, d.image.height, d.image.width}},
              {"latent_dim", d.latent_dim},
              {"latent_std", d.latent_std},
              {"separation", d.separation},
              {"components", d.components},
              {"component_spread", d.component_spread},
              {"warp", d.warp},
              {"pixel_noise", d.pixel_noise},
              {"train_size", d.train_size},
              {"test_size", d.test_size},
              {"holdout_size", d.holdout_size},
              {"seed", d.seed}};
}

void read_attack(Section& s, AttackConfig& a) {
  s.get("steps", a.steps)
      .get("step_size", a.step_size)
      .get_as("optimizer", a.optimizer, inner_optimizer_from_string)
      .get("restarts", a.restarts)
      .get_as("objective", a.objective, attack_objective_from_string)
      .get("random_start", a.random_start)
      .get("seed", a.seed);
}

json attack_json(const AttackConfig& a) {
  return json{{"steps", a.steps},       {"step_size", a.step_size},
              {"optimizer", to_string(a.optimizer)}, {"restarts", a.restarts},
              {"objective", to_string(a.objective)}, {"random_start", a.random_start},
              {"seed", a.seed}};
}

void read_train(Section& s, TrainConfig& t) {
  s.get("alpha", t.alpha)
      .get("beta", t.beta)
      .get("epochs", t.epochs)
      .get("batch_size", t.batch_size)
      .get("lr0", t.lr0)
      .get("momentum", t.momentum)
      .get("weight_decay", t.weight_decay)
      .get("ema_tau", t.ema_tau)
      .get_as("loss", t.loss, robust_loss_from_string)
      .get("max_steps", t.max_steps)
      .get("seed", t.seed)
      .section("inner", [&](Section& a) { read_attack(a, t.inner); })
      .section("perturbation",
               [&](Section& p) { p.get_as("norm", t.perturbation.norm, parse_norm).get("epsilon", t.perturbation.epsilon); })
      .section("early_stop", [&](Section& e) {
        e.get("validation_size", t.early_stop.validation_size)
            .get("pgd_steps", t.early_stop.pgd_steps)
            .get("eval_every", t.early_stop.eval_every);
      });
}

json train_json(const TrainConfig& t) {
  return json{{"alpha", t.alpha},
              {"beta", t.beta},
              {"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"lr0", t.lr0},
              {"momentum", t.momentum},
              {"weight_decay", t.weight_decay},
              {"ema_tau", t.ema_tau},
              {"loss", to_string(t.loss)},
              {"max_steps", t.max_steps},
              {"seed", t.seed},
              {"inner", attack_json(t.inner)},
              {"perturbation", {{"norm", to_string(t.perturbation.norm)}, {"epsilon", t.perturbation.epsilon}}},
              {"early_stop",
               {{"validation_size", t.early_stop.validation_size},
                {"pgd_steps", t.early_stop.pgd_steps},
                {"eval_every", t.early_stop.eval_every}}}};
}

}  // namespace

ModelConfig ExperimentConfig::model_for(const std::vector<std::size_t>& hidden) const {
  ModelConfig m = model;
  m.hidden = hidden;
  m.input = data.image;
  m.num_classes = data.num_classes;
  return m;
}

ModelConfig ExperimentConfig::labeler_model() const {
  ModelConfig m = model_for(labeler.hidden);
  m.arch = labeler.arch;
  return m;
}

json to_json(const ModelConfig& m) {
  return json{{"arch", to_string(m.arch)},
              {"hidden", m.hidden},
              {"input", {m.input.channels, m.input.height, m.input.width}},
              {"num_classes", m.num_classes},
              {"seed", m.seed}};
}

ModelConfig model_config_from_json(const json& doc) {
  ModelConfig m;
  Section s(doc, "model");
  s.get_as("arch", m.arch, architecture_from_string).get("hidden", m.hidden).get("num_classes", m.num_classes).get("seed", m.seed);
  read_image(s, "input", m.input);
  s.finish();
  m.validate();
  return m;
}

ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig c;
  Section root(doc, "");
  root.get("output_dir", c.output_dir)
      .get("seed", c.seed)
      .section("data", [&](Section& s) { read_spec(s, c.data); })
      .section("true_data", [&](Section& s) { read_spec(s, c.true_data); })
      .section("model",
               [&](Section& s) { s.get_as("arch", c.model.arch, architecture_from_string).get("hidden", c.model.hidden); })
      .section("labeler",
               [&](Section& s) {
                 s.get_as("arch", c.labeler.arch, architecture_from_string)
                     .get("hidden", c.labeler.hidden)
                     .get("epochs", c.labeler.train.epochs)
                     .get("batch_size", c.labeler.train.batch_size)
                     .get("lr0", c.labeler.train.lr0)
                     .get("momentum", c.labeler.train.momentum)
                     .get("weight_decay", c.labeler.train.weight_decay)
                     .get("ema_tau", c.labeler.train.ema_tau);
               })
      .section("generator",
               [&](Section& s) {
                 s.get("pca_components", c.generator.pca_components)
                     .get_optional("jitter", c.generator.jitter)
                     .get("pool_size", c.generator.pool_size)
                     .get("filter", c.generator.filter)
                     .get("oversample", c.generator.oversample)
                     .get_as("score", c.generator.score, parse_score);
               })
      .section("train", [&](Section& s) { read_train(s, c.train); })
      .section("eval",
               [&](Section& s) {
                 s.get("test_size", c.eval.test_size).section("cascade", [&](Section& k) {
                   k.get("top_k", c.eval.cascade.top_k)
                       .get("use_ema", c.eval.cascade.use_ema)
                       .section("stage1", [&](Section& a) { read_attack(a, c.eval.cascade.stage1); })
                       .section("stage2", [&](Section& a) { read_attack(a, c.eval.cascade.stage2); });
                 });
               })
      .section("sweep", [&](Section& s) {
        s.get("kind", c.sweep.kind)
            .get("seeds", c.sweep.seeds)
            .get("alphas", c.sweep.alphas)
            .get("levels", c.sweep.levels)
            .get("gauss_fractions", c.sweep.gauss_fractions)
            .get("covered_classes", c.sweep.covered_classes)
            .get("widths", c.sweep.widths)
            .get("gauss_fraction", c.sweep.gauss_fraction)
            .get("sample_counts", c.sweep.sample_counts)
            .get("probe_alpha", c.sweep.probe_alpha)
            .get("plots", c.sweep.plots);
      });
  root.finish();

  c.data.validate();
  c.true_data.validate();
  if (c.true_data.num_classes != c.data.num_classes || c.true_data.image != c.data.image) {
    throw ConfigError("true_data must share num_classes and image with data");
  }
  c.model_for(c.model.hidden).validate();
  c.labeler_model().validate();
  c.labeler.train.validate();
  c.train.validate();
  static const std::set<std::string> kinds{"mixing", "condition1", "condition2", "coverage", "scaling"};
  if (!kinds.count(c.sweep.kind)) throw ConfigError("unknown sweep kind '" + c.sweep.kind + "'");
  if (c.sweep.seeds < 1) throw ConfigError("sweep.seeds must be at least 1");
  for (double a : c.sweep.alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("sweep.alphas must lie in [0,1]");
  }
  if (!(c.sweep.probe_alpha >= 0.0 && c.sweep.probe_alpha <= 1.0)) throw ConfigError("sweep.probe_alpha must lie in [0,1]");
  if (!(c.sweep.gauss_fraction >= 0.0 && c.sweep.gauss_fraction <= 1.0)) {
    throw ConfigError("sweep.gauss_fraction must lie in [0,1]");
  }
  for (double f : c.sweep.gauss_fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("sweep.gauss_fractions must lie in [0,1]");
  }
  for (const auto& w : c.sweep.widths) c.model_for(w).validate();
  if (c.generator.oversample < 1) throw ConfigError("generator.oversample must be at least 1");
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config file '" + path + "': " + e.what());
  }
  return parse_config(doc);
}

json to_json(const ExperimentConfig& c) {
  json widths = json::array();
  for (const auto& w : c.sweep.widths) widths.push_back(w);
  return json{
      {"output_dir", c.output_dir},
      {"seed", c.seed},
      {"data", spec_json(c.data)},
      {"true_data", spec_json(c.true_data)},
      {"model", {{"arch", to_string(c.model.arch)}, {"hidden", c.model.hidden}}},
      {"labeler",
       {{"arch", to_string(c.labeler.arch)},
        {"hidden", c.labeler.hidden},
        {"epochs", c.labeler.train.epochs},
        {"batch_size", c.labeler.train.batch_size},
        {"lr0", c.labeler.train.lr0},
        {"momentum", c.labeler.train.momentum},
        {"weight_decay", c.labeler.train.weight_decay},
        {"ema_tau", c.labeler.train.ema_tau}}},
      {"generator",
       {{"pca_components", c.generator.pca_components},
        {"jitter", c.generator.jitter ? json(*c.generator.jitter) : json(nullptr)},
        {"pool_size", c.generator.pool_size},
        {"filter", c.generator.filter},
        {"oversample", c.generator.oversample},
        {"score", score_name(c.generator.score)}}},
      {"train", train_json(c.train)},
      {"eval",
       {{"test_size", c.eval.test_size},
        {"cascade",
         {{"top_k", c.eval.cascade.top_k},
          {"use_ema", c.eval.cascade.use_ema},
          {"stage1", attack_json(c.eval.cascade.stage1)},
          {"stage2", attack_json(c.eval.cascade.stage2)}}}}},
      {"sweep",
       {{"kind", c.sweep.kind},
        {"seeds", c.sweep.seeds},
        {"alphas", c.sweep.alphas},
        {"levels", c.sweep.levels},
        {"gauss_fractions", c.sweep.gauss_fractions},
        {"covered_classes", c.sweep.covered_classes},
        {"widths", widths},
        {"gauss_fraction", c.sweep.gauss_fraction},
        {"sample_counts", c.sweep.sample_counts},
        {"probe_alpha", c.sweep.probe_alpha},
        {"plots", c.sweep.plots}}}};
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const ExperimentConfig& config) { return fnv1a_hex(to_json(config).dump()); }

}  // namespace genrobust
