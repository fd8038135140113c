#include <cmath>

#include "etiobench/training.hpp"

namespace etio::nn {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamHyper& hyper) {
  if (grads.size() != params.size()) throw NnError("adam_step: gradient size mismatch");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  ++state.step;
  const double b1 = hyper.beta1, b2 = hyper.beta2;
  const double c1 = 1.0 - std::pow(b1, state.step);
  const double c2 = 1.0 - std::pow(b2, state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double m = b1 * state.m[i] + (1.0 - b1) * g;
    const double v = b2 * state.v[i] + (1.0 - b2) * g * g;
    state.m[i] = m;
    state.v[i] = v;
    params[i] = params[i] - hyper.learning_rate * (m / c1) / (std::sqrt(v / c2) + hyper.epsilon);
  }
}

void Adam::step(const std::vector<std::pair<std::string, Tensor>>& params) {
  for (const auto& [name, t] : params) {
    if (!t.requires_grad() || t.grad().empty()) continue;
    Tensor handle = t;
    adam_step(handle.values(), t.grad(), state_[name], hyper_);
  }
}

}  // namespace etio::nn
