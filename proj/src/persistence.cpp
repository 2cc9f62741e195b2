#include "genrobust/persistence.hpp"

#include <json.hpp>

#include "genrobust/config.hpp"

namespace genrobust {

namespace {

IndexTensor labels_tensor(const std::vector<int>& labels) {
  std::vector<std::uint32_t> y(labels.begin(), labels.end());
  const std::size_t n = y.size();
  return IndexTensor(Shape{n}, std::move(y));
}

std::vector<int> labels_from(const IndexTensor& t) { return std::vector<int>(t.data().begin(), t.data().end()); }

std::size_t parse_count(const std::string& text, const std::string& what) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError("bad " + what + " metadata '" + text + "'");
  }
}

void require_kind(const TensorContainer& c, const std::string& kind, const std::string& path) {
  const auto found = c.require_meta("kind");
  if (found != kind) throw FormatError("'" + path + "' holds a " + found + ", expected a " + kind);
}

void add_dataset(TensorContainer& c, const LabeledDataset& data) {
  data.validate();
  c.set_meta("num_classes", std::to_string(data.num_classes));
  c.add("images", data.images);
  c.add("labels", labels_tensor(data.labels));
}

LabeledDataset read_dataset(const TensorContainer& c) {
  LabeledDataset data{c.f64("images"), labels_from(c.u32("labels")),
                      parse_count(c.require_meta("num_classes"), "num_classes")};
  data.validate();
  return data;
}

}  // namespace

void save_dataset(const std::string& path, const LabeledDataset& data, const std::string& config_hash) {
  TensorContainer c;
  c.set_meta("kind", "dataset");
  c.set_meta("config_hash", config_hash);
  add_dataset(c, data);
  save_container(path, c);
}

LabeledDataset load_dataset(const std::string& path) {
  const auto c = load_container(path);
  require_kind(c, "dataset", path);
  return read_dataset(c);
}

void save_classifier(const std::string& path, const Classifier& model, const std::string& config_hash) {
  TensorContainer c;
  c.set_meta("kind", "classifier");
  c.set_meta("config_hash", config_hash);
  c.set_meta("model_config", to_json(model.config).dump());
  c.set_meta("step", std::to_string(model.step));
  for (const auto& [name, t] : model.params) c.add("params/" + name, t);
  for (const auto& [name, t] : model.ema_params) c.add("ema/" + name, t);
  save_container(path, c);
}

Classifier load_classifier(const std::string& path) {
  const auto c = load_container(path);
  require_kind(c, "classifier", path);
  Classifier model;
  try {
    model.config = model_config_from_json(nlohmann::json::parse(c.require_meta("model_config")));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path + "' has a malformed model_config: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("'" + path + "' has an invalid model_config: " + e.what());
  }
  model.step = parse_count(c.require_meta("step"), "step");
  for (const auto& [name, stored] : c.entries()) {
    if (name.rfind("params/", 0) == 0) {
      model.params.add(name.substr(7), c.f64(name));
    } else if (name.rfind("ema/", 0) == 0) {
      model.ema_params.add(name.substr(4), c.f64(name));
    }
  }
  // The stored tensors must match the layout the config implies.
  Rng rng(0);
  const auto reference = init_classifier(model.config, rng);
  if (!reference.params.same_layout(model.params) || !reference.params.same_layout(model.ema_params)) {
    throw FormatError("'" + path + "' weights do not match its model_config");
  }
  return model;
}

void save_pseudo_labeled(const std::string& path, const PseudoLabeledSet& set, const std::string& config_hash) {
  if (set.scores.size() != set.size()) throw ValueError("pseudo-labelled set has mismatched scores");
  TensorContainer c;
  c.set_meta("kind", "pseudo-labeled");
  c.set_meta("config_hash", config_hash);
  c.set_meta("labeler_id", set.labeler_id);
  add_dataset(c, set.as_dataset());
  c.add("scores", Tensor(Shape{set.scores.size()}, set.scores));
  save_container(path, c);
}

PseudoLabeledSet load_pseudo_labeled(const std::string& path) {
  const auto c = load_container(path);
  require_kind(c, "pseudo-labeled", path);
  auto data = read_dataset(c);
  const auto& scores = c.f64("scores");
  if (scores.rank() != 1 || scores.size() != data.size()) throw FormatError("'" + path + "' has mismatched scores");
  return PseudoLabeledSet{std::move(data.images), std::move(data.labels), scores.values(), data.num_classes,
                          c.require_meta("labeler_id")};
}

std::string artifact_config_hash(const std::string& path) {
  return load_container(path).meta("config_hash").value_or("");
}

}  // namespace genrobust
