#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "endovid/params.hpp"

namespace endovid::optim {

struct AdamWConfig {
    double lr = 2e-5;
    double weight_decay = 4e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moments for every parameter of one ParameterSet, in set order.
template <typename T>
struct OptimizerState {
    AdamWConfig config;
    std::int64_t step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;

    static OptimizerState for_params(const ParameterSet<T>& params, AdamWConfig config);
};

/// One decoupled-weight-decay Adam update of `params` from their current gradients.
/// Parameters without a gradient are treated as having a zero gradient.
template <typename T>
void adamw_step(OptimizerState<T>& state, ParameterSet<T>& params, double lr_now);

struct LrSchedule {
    double base = 2e-5;
    double final = 1e-6;
    std::int64_t warmup_steps = 0;
    std::int64_t total_steps = 1;

    /// Warmup is 10% of the run.
    static LrSchedule with_default_warmup(double base, double final, std::int64_t total_steps);
};

/// Linear warmup from 0 to base, then cosine annealing to final at total_steps.
/// Steps past the end clamp to the final rate.
double cosine_lr(const LrSchedule& schedule, std::int64_t step);

}  // namespace endovid::optim
