#include "protoadapt/optim.hpp"

#include <cmath>
#include <string>

namespace protoadapt {

void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               AdamState& state, const AdamOptions& opts) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape()) {
      throw DimensionError("adam_step: gradient " + std::to_string(i) + " has shape " +
                           shape_string(grads[i]->shape()) + ", parameter has " +
                           shape_string(params[i]->shape()));
    }
    if (!grads[i]->all_finite()) {
      throw DivergenceError("adam_step: non-finite gradient in parameter tensor " + std::to_string(i),
                            state.step + 1);
    }
  }
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state belongs to another model");

  ++state.step;
  const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i]->data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      m[j] = opts.beta1 * m[j] + (1.0 - opts.beta1) * gj;
      v[j] = opts.beta2 * v[j] + (1.0 - opts.beta2) * gj * gj;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] = static_cast<float>(p[j] - opts.lr * mhat / (std::sqrt(vhat) + opts.eps));
    }
  }
}

}  // namespace protoadapt
