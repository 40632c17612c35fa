#pragma once

#include <cstdint>
#include <vector>

#include "clv/params.hpp"
#include "clv/tensor.hpp"

namespace clv {

// Bias-corrected Adam over a ParamStore; frozen entries are skipped.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;            // strictly increasing
    std::vector<Tensor> m;       // first moments, one per store entry
    std::vector<Tensor> v;       // second moments

    explicit AdamState(const ParamStore& store);
    AdamState() = default;
};

void adam_step(ParamStore& params, const GradMap& grads, AdamState& state, double lr);

// Linear warmup to peak_lr at warmup_steps, cosine decay to zero at
// total_steps. lr(0) = 0.
struct LrSchedule {
    double peak_lr = 3e-4;
    int64_t warmup_steps = 150;
    int64_t total_steps = 0;

    LrSchedule() = default;
    LrSchedule(double peak, int64_t warmup, int64_t total);
};

double lr_at(int64_t step, const LrSchedule& sched);

} // namespace clv
