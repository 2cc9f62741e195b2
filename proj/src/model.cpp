#include "genrobust/model.hpp"

#include <cmath>
#include <map>

namespace genrobust {

std::string to_string(Architecture arch) { return arch == Architecture::Mlp ? "mlp" : "small-cnn"; }

Architecture architecture_from_string(const std::string& name) {
  if (name == "mlp") return Architecture::Mlp;
  if (name == "small-cnn") return Architecture::SmallCnn;
  throw ConfigError("unknown architecture '" + name + "' (expected mlp or small-cnn)");
}

void ModelConfig::validate() const {
  if (hidden.empty()) throw ConfigError("model needs at least one hidden layer");
  for (auto w : hidden) {
    if (w == 0) throw ConfigError("hidden width must be positive");
  }
  if (arch == Architecture::SmallCnn && hidden.size() != 2) {
    throw ConfigError("small-cnn takes exactly two channel counts");
  }
  if (num_classes < 2) throw ConfigError("class count must be at least 2");
  if (input.size() == 0) throw ConfigError("input shape must be non-empty");
  if (arch == Architecture::SmallCnn && (input.height < 2 || input.width < 2)) {
    throw ConfigError("small-cnn needs images of at least 2x2");
  }
}

namespace {

std::size_t strided_extent(std::size_t n) { return (n + 2 - 3) / 2 + 1; }

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = stddev * rng.normal();
  return t;
}

std::string dense_name(std::size_t i, const char* part) { return "dense" + std::to_string(i) + "." + part; }
std::string conv_name(std::size_t i, const char* part) { return "conv" + std::to_string(i) + "." + part; }

}  // namespace

std::size_t feature_dim(const ModelConfig& config) {
  if (config.arch == Architecture::Mlp) return config.hidden.back();
  return config.hidden[1] * strided_extent(config.input.height) * strided_extent(config.input.width);
}

Classifier init_classifier(const ModelConfig& config, Rng& rng) {
  config.validate();
  Classifier model;
  model.config = config;
  auto dense = [&](std::size_t index, std::size_t in, std::size_t out) {
    model.params.add(dense_name(index, "w"), normal_tensor({in, out}, 1.0 / std::sqrt(double(in)), rng));
    model.params.add(dense_name(index, "b"), Tensor(Shape{out}));
  };
  if (config.arch == Architecture::Mlp) {
    std::size_t in = config.input.size();
    for (std::size_t i = 0; i < config.hidden.size(); ++i) {
      dense(i, in, config.hidden[i]);
      in = config.hidden[i];
    }
    dense(config.hidden.size(), in, config.num_classes);
  } else {
    std::size_t in_ch = config.input.channels;
    for (std::size_t i = 0; i < 2; ++i) {
      const auto fan_in = in_ch * 9;
      model.params.add(conv_name(i, "w"),
                       normal_tensor({config.hidden[i], in_ch, 3, 3}, 1.0 / std::sqrt(double(fan_in)), rng));
      model.params.add(conv_name(i, "b"), Tensor(Shape{config.hidden[i]}));
      in_ch = config.hidden[i];
    }
    dense(0, feature_dim(config), config.num_classes);
  }
  model.ema_params = model.params;
  return model;
}

ForwardResult forward(Tape<double>& tape, const Classifier& model, Var<double> x, bool use_ema, ParamMode mode) {
  const auto& cfg = model.config;
  const auto& xs = x.shape();
  if (xs.size() != 4 || xs[1] != cfg.input.channels || xs[2] != cfg.input.height || xs[3] != cfg.input.width) {
    throw ShapeError("input shape " + shape_string(xs) + " does not match model input " +
                     shape_string(cfg.input.batch(xs.empty() ? 0 : xs[0])));
  }
  const auto& weights = model.weights(use_ema);
  auto bind = [&](const std::string& name) {
    if (mode == ParamMode::Constant) return tape.constant(weights.at(name));
    if (auto existing = tape.find_parameter(name)) return *existing;
    return tape.parameter(name, weights.at(name));
  };
  const std::size_t batch = xs[0];
  Var<double> h = x;
  std::size_t last_dense = 0;
  if (cfg.arch == Architecture::Mlp) {
    h = reshape(h, Shape{batch, cfg.input.size()});
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
      h = silu(add_bias(matmul(h, bind(dense_name(i, "w"))), bind(dense_name(i, "b"))));
    }
    last_dense = cfg.hidden.size();
  } else {
    h = silu(conv2d(h, bind(conv_name(0, "w")), bind(conv_name(0, "b")), 1, 1));
    h = silu(conv2d(h, bind(conv_name(1, "w")), bind(conv_name(1, "b")), 2, 1));
    h = reshape(h, Shape{batch, feature_dim(cfg)});
  }
  auto out = add_bias(matmul(h, bind(dense_name(last_dense, "w"))), bind(dense_name(last_dense, "b")));
  return ForwardResult{h, out};
}

Var<double> forward_logits(Tape<double>& tape, const Classifier& model, Var<double> x, bool use_ema,
                           ParamMode mode) {
  return forward(tape, model, x, use_ema, mode).logits;
}

Tensor logits(const Classifier& model, const Tensor& x, bool use_ema) {
  Tape<double> tape;
  return forward_logits(tape, model, tape.constant(x), use_ema).value();
}

Tensor features(const Classifier& model, const Tensor& x, bool use_ema) {
  Tape<double> tape;
  return forward(tape, model, tape.constant(x), use_ema).features.value();
}

std::vector<int> argmax_rows(const Tensor& z) {
  std::vector<int> out(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) out[r] = static_cast<int>(argmax(z.row(r)));
  return out;
}

std::vector<int> predict(const Classifier& model, const Tensor& x, bool use_ema) {
  return argmax_rows(logits(model, x, use_ema));
}

void ema_update(Classifier& model, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ValueError("ema decay must lie in [0,1]");
  for (const auto& [name, p] : model.params) {
    auto e = model.ema_params.values(name);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = tau * e[i] + (1.0 - tau) * p[i];
  }
}

double accuracy(const Classifier& model, const LabeledDataset& data, bool use_ema) {
  if (data.empty()) throw ValueError("accuracy of an empty dataset");
  const auto pred = predict(model, data.images, use_ema);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  return double(correct) / double(pred.size());
}

}  // namespace genrobust
