#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "protoadapt/tensor.hpp"

namespace protoadapt {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates, one pair per parameter tensor.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;
};

/// One bias-corrected Adam update of `params` in place. A non-finite gradient
/// rejects the whole update (no parameter or moment changes) with a
/// DivergenceError naming the offending tensor.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               AdamState& state, const AdamOptions& opts);

}  // namespace protoadapt
