#include "endovid/optim.hpp"

#include <cmath>
#include <numbers>

namespace endovid::optim {

template <typename T>
OptimizerState<T> OptimizerState<T>::for_params(const ParameterSet<T>& params,
                                                AdamWConfig config) {
    OptimizerState<T> s;
    s.config = config;
    for (std::size_t i = 0; i < params.size(); ++i) {
        s.m.emplace_back(params.tensor(i).numel(), T(0));
        s.v.emplace_back(params.tensor(i).numel(), T(0));
    }
    return s;
}

template <typename T>
void adamw_step(OptimizerState<T>& state, ParameterSet<T>& params, double lr_now) {
    if (state.m.size() != params.size()) {
        throw ContractError("optimizer state does not match parameter set");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].size() != params.tensor(i).numel() || state.v[i].size() != state.m[i].size())
            throw ContractError("optimizer moments do not match parameter '" + params.name(i) + "'");
    }
    state.step += 1;
    const auto& c = state.config;
    const T b1 = T(c.beta1), b2 = T(c.beta2);
    const T bc1 = T(1 - std::pow(c.beta1, double(state.step)));
    const T bc2 = T(1 - std::pow(c.beta2, double(state.step)));
    const T lr = T(lr_now), wd = T(c.weight_decay), eps = T(c.eps);

    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& tensor = params.tensor(p);
        auto w = tensor.mutable_values();
        auto g = tensor.grad();
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const T gi = g.empty() ? T(0) : g[i];
            m[i] = b1 * m[i] + (T(1) - b1) * gi;
            v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
            const T mhat = m[i] / bc1;
            const T vhat = v[i] / bc2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * w[i]);
        }
    }
}

LrSchedule LrSchedule::with_default_warmup(double base, double final, std::int64_t total_steps) {
    LrSchedule s;
    s.base = base;
    s.final = final;
    s.total_steps = total_steps;
    s.warmup_steps = total_steps / 10;
    return s;
}

double cosine_lr(const LrSchedule& s, std::int64_t step) {
    if (step < 0) step = 0;
    if (step < s.warmup_steps) return s.base * double(step) / double(s.warmup_steps);
    if (step >= s.total_steps) return s.total_steps > s.warmup_steps ? s.final : s.base;
    const double progress =
        double(step - s.warmup_steps) / double(s.total_steps - s.warmup_steps);
    return s.final + (s.base - s.final) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void adamw_step<float>(OptimizerState<float>&, ParameterSet<float>&, double);
template void adamw_step<double>(OptimizerState<double>&, ParameterSet<double>&, double);

}  // namespace endovid::optim
