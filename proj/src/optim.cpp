#include "genrobust/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace genrobust {

double cosine_lr(std::size_t t, std::size_t total, double lr0) {
  if (total < 1) throw ValueError("cosine schedule needs at least one step");
  if (t > total) throw ValueError("cosine schedule step beyond the horizon");
  if (t == total) return 0.0;
  return lr0 * (1.0 + std::cos(std::numbers::pi * double(t) / double(total))) / 2.0;
}

double ema_decay_at(double tau, std::uint64_t step) {
  const double warm = (1.0 + double(step)) / (10.0 + double(step));
  return std::min(tau, warm);
}

void NesterovSgd::step(ParamStore& params, const std::map<std::string, Tensor>& grads, double lr) {
  const double mu = config_.momentum;
  const double shrink = 1.0 - lr * config_.weight_decay;
  for (const auto& name : params.names()) {
    auto theta = params.values(name);
    if (!velocity_.contains(name)) velocity_.add(name, Tensor(params.at(name).shape()));
    auto v = velocity_.values(name);
    const auto it = grads.find(name);
    if (it != grads.end() && it->second.size() != theta.size()) {
      throw ShapeError("gradient for '" + name + "' has the wrong size");
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = it == grads.end() ? 0.0 : it->second[i];
      theta[i] *= shrink;
      v[i] = mu * v[i] + g;
      theta[i] -= lr * (g + mu * v[i]);
    }
  }
}

}  // namespace genrobust
