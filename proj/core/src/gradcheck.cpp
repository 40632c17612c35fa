#include "clv/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace clv {

GradcheckResult fd_gradcheck(const std::function<double()>& f,
                             ParamStore& params,
                             const GradMap& analytic,
                             const GradcheckOptions& opts) {
    if (analytic.grads.size() != params.size())
        throw std::invalid_argument("fd_gradcheck: gradient table does not match parameter store");
    GradcheckResult res;
    Rng rng(opts.seed);
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& entry = params.entry(static_cast<int>(pi));
        if (opts.skip_frozen && !entry.trainable) continue;
        const int64_t n = entry.value.size();
        if (n == 0) continue;

        std::vector<int64_t> coords;
        if (opts.max_coords_per_param <= 0 || n <= opts.max_coords_per_param) {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            for (int64_t i = 0; i < opts.max_coords_per_param; ++i)
                coords.push_back(rng.uniform_int(0, n - 1));
            std::sort(coords.begin(), coords.end());
            coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
        }

        for (int64_t c : coords) {
            double& slot = entry.value.data[static_cast<size_t>(c)];
            const double orig = slot;
            slot = orig + opts.eps;
            const double fp = f();
            slot = orig - opts.eps;
            const double fm = f();
            slot = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::runtime_error("fd_gradcheck: non-finite loss while perturbing " + entry.name);
            const double fd = (fp - fm) / (2.0 * opts.eps);
            const double an = analytic.grads[pi].data[static_cast<size_t>(c)];
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
            ++res.coords_checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = entry.name;
                res.worst_coord = c;
                res.analytic_at_worst = an;
                res.numeric_at_worst = fd;
            }
        }
    }
    return res;
}

GradcheckResult fd_gradcheck(const std::function<double(ParamStore&, GradMap*)>& loss_fn,
                             ParamStore& params,
                             const GradcheckOptions& opts) {
    GradMap analytic;
    const double base = loss_fn(params, &analytic);
    if (!std::isfinite(base)) throw std::runtime_error("fd_gradcheck: non-finite loss at base point");
    auto f = [&]() { return loss_fn(params, nullptr); };
    return fd_gradcheck(f, params, analytic, opts);
}

} // namespace clv
