#pragma once

// Finite-difference gradient oracle, independent of the reverse-mode path it
// checks: perturbs every input element by +-h and recomputes the forward
// value in inference mode.

#include <cmath>
#include <functional>
#include <vector>

#include "gage/ops.hpp"
#include "gage/rng.hpp"
#include "gage/tensor.hpp"

namespace gagetest {

using DTens = gage::TensPtr<double>;

inline DTens random_tensor(std::vector<int> dims, gage::SplitMix64& rng, double lo = -1.0,
                           double hi = 1.0, bool requires_grad = true) {
    auto t = gage::Tens<double>::zeros(std::move(dims), requires_grad);
    for (auto& v : t->data) v = rng.uniform(lo, hi);
    return t;
}

// Scalar-izes an op output with fixed random weights so every output element
// contributes to the checked gradient.
inline DTens weighted_sum(const DTens& out, gage::SplitMix64& rng) {
    auto w = gage::Tens<double>::zeros(out->dims);
    for (auto& v : w->data) v = rng.uniform(-1.0, 1.0);
    return gage::sum_all(gage::mul(out, w));
}

// Max error over all elements of all checked inputs, with the mixed
// absolute/relative denominator max(1, |g|, |fd|).
inline double max_grad_error(const std::vector<DTens>& inputs,
                             const std::function<DTens()>& scalar_loss, double h = 1e-5) {
    for (auto& in : inputs) in->zero_grad();
    DTens loss = scalar_loss();
    gage::backward(loss);

    double worst = 0.0;
    for (auto& in : inputs) {
        in->ensure_grad();
        for (size_t i = 0; i < in->data.size(); ++i) {
            const double keep = in->data[i];
            double lp, lm;
            {
                gage::NoGradGuard ng;
                in->data[i] = keep + h;
                lp = scalar_loss()->data[0];
                in->data[i] = keep - h;
                lm = scalar_loss()->data[0];
                in->data[i] = keep;
            }
            const double fd = (lp - lm) / (2.0 * h);
            const double g = in->grad[i];
            const double denom = std::max({1.0, std::abs(fd), std::abs(g)});
            worst = std::max(worst, std::abs(g - fd) / denom);
        }
    }
    return worst;
}

}  // namespace gagetest
