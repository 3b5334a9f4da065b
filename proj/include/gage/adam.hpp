#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "gage/tensor.hpp"

namespace gage {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct AdamState {
    std::vector<T> m, v;  // first/second moment estimates
};

// One Adam update with bias correction. t is the 1-based step count shared
// by all parameters of an optimizer instance.
template <class T>
void adam_step(Tens<T>& param, std::span<const T> grad, AdamState<T>& state, int64_t t,
               const AdamConfig& cfg = {}) {
    const size_t n = param.data.size();
    if (grad.size() != n) throw ShapeError("adam_step: gradient size does not match parameter");
    if (state.m.empty()) {
        state.m.assign(n, T(0));
        state.v.assign(n, T(0));
    }
    if (state.m.size() != n || state.v.size() != n)
        throw ShapeError("adam_step: state size does not match parameter");
    const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
    const T corr1 = T(1) - T(std::pow(cfg.beta1, double(t)));
    const T corr2 = T(1) - T(std::pow(cfg.beta2, double(t)));
    const T lr = T(cfg.lr), eps = T(cfg.eps);
    for (size_t i = 0; i < n; ++i) {
        state.m[i] = b1 * state.m[i] + (T(1) - b1) * grad[i];
        state.v[i] = b2 * state.v[i] + (T(1) - b2) * grad[i] * grad[i];
        const T mhat = state.m[i] / corr1;
        const T vhat = state.v[i] / corr2;
        param.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

// Convenience wrapper owning state for a fixed parameter list.
template <class T>
class Adam {
  public:
    explicit Adam(std::vector<TensPtr<T>> params, AdamConfig cfg = {})
        : params_(std::move(params)), states_(params_.size()), cfg_(cfg) {}

    void step() {
        ++t_;
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            p.ensure_grad();
            adam_step(p, std::span<const T>(p.grad.data(), p.grad.size()), states_[i], t_, cfg_);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    int64_t steps() const { return t_; }

  private:
    std::vector<TensPtr<T>> params_;
    std::vector<AdamState<T>> states_;
    AdamConfig cfg_;
    int64_t t_ = 0;
};

}  // namespace gage
