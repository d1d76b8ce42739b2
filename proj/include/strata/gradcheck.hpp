#pragma once

#include <functional>
#include <string>

#include "strata/autograd.hpp"

namespace strata::num {

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t entries = 0;

    bool passed(double tol) const noexcept { return max_rel_error <= tol; }
};

/// Compares tape gradients of every entry of every Param against central
/// differences. rel = |analytic - numeric| / max(|analytic|, |numeric|, floor).
/// `loss` must rebuild the forward pass from scratch on the given tape.
GradCheckResult check_gradients(std::string name, ParamStore& params, const std::function<Var(Tape&)>& loss,
                                double step = 1e-5, double floor = 1e-6);

}  // namespace strata::num
