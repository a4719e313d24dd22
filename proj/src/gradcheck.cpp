#include "somn/gradcheck.hpp"

#include <cmath>

namespace somn {

GradCheckReport grad_check(const std::function<double(bool with_grads)>& f,
                           ParamSet<double>& params, double h, double kink_tol) {
    if (h <= 0) throw UsageError("grad_check: step must be > 0");

    params.zero_grads();
    const double f0 = f(true);
    (void)f0;

    // Snapshot the analytic gradients; the probe evaluations below must not
    // disturb them.
    std::vector<Tensor<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& e : params.entries()) analytic.push_back(e.grad);

    GradCheckReport report;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& e = params.entries()[pi];
        for (int64_t k = 0; k < e.value.numel(); ++k) {
            const double saved = e.value[k];

            e.value[k] = saved + h;
            const double fp = f(false);
            e.value[k] = saved - h;
            const double fm = f(false);
            e.value[k] = saved;

            const double central = (fp - fm) / (2.0 * h);
            const double fwd = (fp - f0) / h;
            const double bwd = (f0 - fm) / h;
            const double side_gap = std::abs(fwd - bwd);
            const double side_scale = std::max({1.0, std::abs(fwd), std::abs(bwd)});
            if (side_gap > kink_tol * side_scale) {
                ++report.skipped;
                continue;
            }

            const double a = analytic[pi][k];
            // The denominator floor sits above the finite-difference noise
            // scale (~eps*|f|/h); coordinates with near-zero gradients are
            // held to an absolute bound of floor * tolerance.
            constexpr double kDenomFloor = 1e-4;
            auto rel_of = [&](double estimate) {
                const double denom = std::max({std::abs(a), std::abs(estimate), kDenomFloor});
                return std::abs(a - estimate) / denom;
            };
            double rel = rel_of(central);
            // A disagreement caused by the step straddling a kink (or by
            // curvature) shrinks as h does; a genuine gradient bug stays. Two
            // refinements separate the cases.
            for (double hs : {h / 8.0, h / 64.0}) {
                if (rel <= 1e-7) break;
                e.value[k] = saved + hs;
                const double fps = f(false);
                e.value[k] = saved - hs;
                const double fms = f(false);
                e.value[k] = saved;
                rel = std::min(rel, rel_of((fps - fms) / (2.0 * hs)));
            }
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = e.name;
                report.worst_index = k;
            }
        }
    }
    return report;
}

const char* param_group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::kEncoder: return "encoder";
        case ParamGroup::kSlHead: return "sl_head";
        case ParamGroup::kSslHead: return "ssl_head";
    }
    return "encoder";
}

}  // namespace somn
