#include "strata/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace strata::num {

GradCheckResult check_gradients(std::string name, ParamStore& params, const std::function<Var(Tape&)>& loss,
                                double step, double floor) {
    GradCheckResult result;
    result.name = std::move(name);

    params.zero_grad();
    {
        Tape tape;
        tape.backward(loss(tape));
    }
    auto eval = [&] {
        Tape tape;
        return loss(tape).value().item();
    };

    for (auto& p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double orig = p->value[i];
            p->value[i] = orig + step;
            const double up = eval();
            p->value[i] = orig - step;
            const double down = eval();
            p->value[i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double analytic = p->grad[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
            const double rel = std::abs(analytic - numeric) / denom;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = p->name + "[" + std::to_string(i) + "]";
            }
            ++result.entries;
        }
    }
    return result;
}

}  // namespace strata::num
