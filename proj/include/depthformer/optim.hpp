#pragma once

#include <cstdint>
#include <vector>

#include "depthformer/params.hpp"

namespace df {

// 1-cycle schedule: linear warm-up from 0.3*max_lr to max_lr over the first
// half of the steps, cosine annealing back to 0.3*max_lr over the second.
// Defined for 0 <= t <= total_steps; throws DomainError outside.
double one_cycle_lr(int64_t t, double max_lr, int64_t total_steps);

struct AdamWParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moments, parallel to the store's entry order.
struct OptState {
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
};

OptState init_opt_state(const ParamStore<float>& params);

// One AdamW step with bias correction; decoupled decay p -= lr*wd*p applied
// only to entries flagged for decay (norm scales/shifts and biases are not).
// Returns false and changes nothing if any gradient is non-finite; the
// offending parameter name is written to bad_param when provided.
bool adamw_step(ParamStore<float>& params, const std::vector<Tensor<float>>& grads,
                OptState& state, int64_t step_t, double lr, double weight_decay,
                const AdamWParams& hp = {}, std::string* bad_param = nullptr);

}  // namespace df
