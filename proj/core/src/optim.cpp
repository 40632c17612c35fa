#include "clv/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace clv {

AdamState::AdamState(const ParamStore& store) {
    m.reserve(store.size());
    v.reserve(store.size());
    for (const auto& e : store.entries()) {
        m.push_back(Tensor::zeros(e.value.shape));
        v.push_back(Tensor::zeros(e.value.shape));
    }
}

void adam_step(ParamStore& params, const GradMap& grads, AdamState& state, double lr) {
    if (grads.grads.size() != params.size() || state.m.size() != params.size())
        throw std::invalid_argument("adam_step: state/gradient table size mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& e = params.entry(static_cast<int>(i));
        if (!e.trainable) continue;
        const Tensor& g = grads.grads[i];
        if (!g.same_shape(e.value))
            throw std::invalid_argument("adam_step: gradient shape " + shape_str(g.shape) +
                                        " mismatches parameter " + e.name + " " + shape_str(e.value.shape));
        auto& mi = state.m[i].data;
        auto& vi = state.v[i].data;
        auto& p = e.value.data;
        for (size_t k = 0; k < p.size(); ++k) {
            mi[k] = state.beta1 * mi[k] + (1.0 - state.beta1) * g.data[k];
            vi[k] = state.beta2 * vi[k] + (1.0 - state.beta2) * g.data[k] * g.data[k];
            const double mhat = mi[k] / bc1;
            const double vhat = vi[k] / bc2;
            p[k] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

LrSchedule::LrSchedule(double peak, int64_t warmup, int64_t total)
    : peak_lr(peak), warmup_steps(warmup), total_steps(total) {
    if (peak < 0.0) throw std::invalid_argument("LrSchedule: peak_lr must be non-negative");
    if (warmup <= 0 || total <= warmup)
        throw std::invalid_argument("LrSchedule: need 0 < warmup_steps < total_steps, got warmup=" +
                                    std::to_string(warmup) + " total=" + std::to_string(total));
}

double lr_at(int64_t step, const LrSchedule& sched) {
    if (step < 0 || step > sched.total_steps)
        throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(sched.total_steps) + "]");
    if (step <= sched.warmup_steps)
        return sched.peak_lr * static_cast<double>(step) / static_cast<double>(sched.warmup_steps);
    const double t = static_cast<double>(step - sched.warmup_steps) /
                     static_cast<double>(sched.total_steps - sched.warmup_steps);
    return sched.peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

} // namespace clv
