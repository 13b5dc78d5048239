#include "co2net/optim.hpp"

#include "co2net/errors.hpp"

#include <cmath>

namespace co2net {

void adam_step(std::span<Parameter* const> params, const AdamConfig& config) {
  if (config.lr < 0.0) throw ConfigError("adam: learning rate must be non-negative");
  if (config.weight_decay < 0.0) throw ConfigError("adam: weight decay must be non-negative");
  for (Parameter* p : params) {
    Tensor& t = p->tensor;
    if (t.grad().size() != t.size()) t.set_requires_grad(true);
    const Vector g = t.grad() + config.weight_decay * t.values();
    p->adam_m = config.beta1 * p->adam_m + (1.0 - config.beta1) * g;
    p->adam_v = config.beta2 * p->adam_v + (1.0 - config.beta2) * g.cwiseAbs2();
    ++p->step_count;
    const double step = static_cast<double>(p->step_count);
    const double c1 = 1.0 - std::pow(config.beta1, step);
    const double c2 = 1.0 - std::pow(config.beta2, step);
    t.values().array() -=
        config.lr * (p->adam_m.array() / c1) / ((p->adam_v.array() / c2).sqrt() + config.eps);
    t.zero_grad();
  }
}

}  // namespace co2net
