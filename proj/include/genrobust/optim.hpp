#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "genrobust/param_store.hpp"

namespace genrobust {

/// lr0 * (1 + cos(pi t / T)) / 2, for 0 <= t <= T.
double cosine_lr(std::size_t t, std::size_t total, double lr0);

/// Decay used for the EMA update after optimizer step `step` (0-based):
/// min(tau, (1 + step) / (10 + step)), so early averages are not dominated by the initialisation.
double ema_decay_at(double tau, std::uint64_t step);

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Nesterov SGD with decoupled weight decay:
///   theta <- theta * (1 - lr * wd);  v <- mu v + g;  theta <- theta - lr (g + mu v)
class NesterovSgd {
 public:
  explicit NesterovSgd(SgdConfig config = {}) : config_(config) {}

  void step(ParamStore& params, const std::map<std::string, Tensor>& grads, double lr);

  const ParamStore& velocity() const noexcept { return velocity_; }

 private:
  SgdConfig config_;
  ParamStore velocity_;
};

}  // namespace genrobust
