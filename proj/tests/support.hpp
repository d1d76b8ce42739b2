#pragma once

// Shared helpers for the unit suites: random tensors and an independent
// central-difference gradient oracle.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "strata/autograd.hpp"
#include "strata/ops.hpp"

namespace strata::test {

inline num::Tensor random_tensor(num::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    num::Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.data()) v = u(rng);
    return t;
}

inline num::Param& random_param(num::ParamStore& store, const std::string& name, num::Shape shape,
                                std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    return store.add(name, random_tensor(std::move(shape), rng, lo, hi));
}

struct FdOutcome {
    double max_rel = 0.0;
    std::string worst;
};

/// Central differences over every entry of every param, step h.
inline FdOutcome finite_difference_check(num::ParamStore& store, const std::function<num::Var(num::Tape&)>& loss,
                                         double h = 1e-5) {
    store.zero_grad();
    {
        num::Tape tape;
        auto l = loss(tape);
        tape.backward(l);
    }
    FdOutcome out;
    for (auto& p : store) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double keep = p->value[i];
            p->value[i] = keep + h;
            double fp;
            {
                num::Tape t;
                fp = loss(t).value().item();
            }
            p->value[i] = keep - h;
            double fm;
            {
                num::Tape t;
                fm = loss(t).value().item();
            }
            p->value[i] = keep;
            const double numeric = (fp - fm) / (2 * h);
            const double analytic = p->grad[i];
            const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            if (rel > out.max_rel) {
                out.max_rel = rel;
                out.worst = p->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return out;
}

inline double max_abs_diff(const num::Tensor& a, const num::Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace strata::test
