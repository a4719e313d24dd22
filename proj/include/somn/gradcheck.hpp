#pragma once

#include <functional>

#include "somn/params.hpp"

namespace somn {

struct GradCheckReport {
    double max_rel_err = 0.0;
    int checked = 0;
    int skipped = 0;  // coordinates skipped near a non-differentiable point
    std::string worst_param;
    int64_t worst_index = -1;
};

// Central finite differences against the analytic gradients of f.
//
// f(with_grads): recomputes the scalar objective from the current parameter
// values; when with_grads is set it must also write fresh analytic gradients
// into params (zero + accumulate). 64-bit only.
//
// A coordinate whose one-sided differences disagree by more than kink_tol
// (relative) sits next to a kink (ReLU at 0, maxpool ties) and is reported as
// skipped instead of scored.
GradCheckReport grad_check(const std::function<double(bool with_grads)>& f,
                           ParamSet<double>& params, double h = 1e-5, double kink_tol = 1e-3);

}  // namespace somn
