#pragma once

#include "co2net/tensor.hpp"

#include <span>

namespace co2net {

struct AdamConfig {
  double lr = 5e-5;
  double weight_decay = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update. The L2 term weight_decay * param is added to
/// the gradient before the moment updates; gradients are zeroed afterwards.
void adam_step(std::span<Parameter* const> params, const AdamConfig& config);

}  // namespace co2net
