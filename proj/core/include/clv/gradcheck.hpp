#pragma once

#include <functional>
#include <string>
#include <vector>

#include "clv/params.hpp"
#include "clv/rng.hpp"

namespace clv {

// Central-difference gradient verification. `f` evaluates the scalar loss at
// the store's current parameter values; it must be deterministic and must not
// mutate the store.
struct GradcheckOptions {
    double eps = 1e-5;
    // <=0 checks every coordinate; otherwise up to this many coordinates per
    // parameter tensor, sampled with `seed`.
    int64_t max_coords_per_param = 0;
    uint64_t seed = 0;
    bool skip_frozen = true;
};

struct GradcheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t worst_coord = -1;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    int64_t coords_checked = 0;
};

// rel err per coordinate: |fd - analytic| / max(|fd|, |analytic|, 1e-8)
GradcheckResult fd_gradcheck(const std::function<double()>& f,
                             ParamStore& params,
                             const GradMap& analytic,
                             const GradcheckOptions& opts = {});

// Convenience: runs forward+backward through `loss_fn` to obtain the
// analytic gradient, then compares against central differences of the same
// function.
GradcheckResult fd_gradcheck(const std::function<double(ParamStore&, GradMap*)>& loss_fn,
                             ParamStore& params,
                             const GradcheckOptions& opts = {});

} // namespace clv
