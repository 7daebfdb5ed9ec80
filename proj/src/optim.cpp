#include "depthformer/optim.hpp"

#include <cmath>

#include "depthformer/error.hpp"

namespace df {

double one_cycle_lr(int64_t t, double max_lr, int64_t total_steps) {
  if (total_steps <= 0) throw DomainError("one_cycle_lr: total_steps must be positive");
  if (t < 0 || t > total_steps)
    throw DomainError("one_cycle_lr: step " + std::to_string(t) + " outside [0," +
                      std::to_string(total_steps) + "]");
  // Single multiply by max_lr keeps the endpoints exact: 0.3 + 0.7 rounds to
  // 1.0, and cos(pi) is exactly -1, so lr(0) = lr(T) = 0.3*max_lr and
  // lr(T/2) = max_lr hold bit-for-bit.
  const double half = static_cast<double>(total_steps) / 2.0;
  if (static_cast<double>(t) <= half)
    return max_lr * (0.3 + 0.7 * (static_cast<double>(t) / half));
  const double phase = (static_cast<double>(t) - half) / half;
  return max_lr * (0.3 + 0.7 * (1.0 + std::cos(3.14159265358979323846 * phase)) / 2.0);
}

OptState init_opt_state(const ParamStore<float>& params) {
  OptState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& e : params.entries()) {
    s.m.emplace_back(e.value.shape);
    s.v.emplace_back(e.value.shape);
  }
  return s;
}

bool adamw_step(ParamStore<float>& params, const std::vector<Tensor<float>>& grads,
                OptState& state, int64_t step_t, double lr, double weight_decay,
                const AdamWParams& hp, std::string* bad_param) {
  auto& entries = params.entries();
  if (grads.size() != entries.size() || state.m.size() != entries.size())
    throw ShapeError("adamw_step: gradient/state count mismatch");
  if (step_t <= 0) throw DomainError("adamw_step: step_t is 1-based");

  for (size_t p = 0; p < entries.size(); ++p) {
    if (grads[p].shape != entries[p].value.shape)
      throw ShapeError("adamw_step: gradient shape mismatch for " + entries[p].name);
    if (!grads[p].all_finite()) {
      if (bad_param) *bad_param = entries[p].name;
      return false;
    }
  }

  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step_t));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step_t));
  for (size_t p = 0; p < entries.size(); ++p) {
    auto& w = entries[p].value.data;
    const auto& g = grads[p].data;
    auto& m = state.m[p].data;
    auto& v = state.v[p].data;
    const bool decay = entries[p].decay && weight_decay != 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = hp.beta1 * static_cast<double>(m[i]) + (1.0 - hp.beta1) * gi;
      const double vi = hp.beta2 * static_cast<double>(v[i]) + (1.0 - hp.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      double wi = static_cast<double>(w[i]);
      wi -= lr * mhat / (std::sqrt(vhat) + hp.eps);
      if (decay) wi -= lr * weight_decay * static_cast<double>(w[i]);
      w[i] = static_cast<float>(wi);
    }
  }
  return true;
}

}  // namespace df
