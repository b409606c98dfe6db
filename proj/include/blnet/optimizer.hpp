#pragma once

#include <cmath>
#include <vector>

#include "blnet/error.hpp"
#include "blnet/nets.hpp"
#include "blnet/tensor.hpp"

namespace blnet::opt {

// Adam moment buffers, parallel to a NetParams table (creation order).
template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m, v;
    long step = 0;
};

// One Adam update with bias correction over every trainable parameter;
// gradients are consumed (zeroed) so graphs can be rebuilt next step.
template <typename T>
void adam_step(nets::NetParams<T>& params, AdamState<T>& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8) {
    if (state.m.empty()) {
        state.m.reserve(params.order.size());
        state.v.reserve(params.order.size());
        for (const auto& p : params.order) {
            state.m.emplace_back(p->value.n(), p->value.c(), p->value.h(), p->value.w());
            state.v.emplace_back(p->value.n(), p->value.c(), p->value.h(), p->value.w());
        }
    }
    if (state.m.size() != params.order.size())
        throw ValueError("adam_step: state does not match parameter table");

    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.order.size(); ++i) {
        auto& p = *params.order[i];
        if (!p.trainable) continue;
        if (!p.grad.same_shape(p.value))
            throw ValueError("adam_step: missing gradient for " + p.name);
        if (!state.m[i].same_shape(p.value))
            throw ValueError("adam_step: moment shape mismatch for " + p.name);
        for (size_t j = 0; j < p.value.data.size(); ++j) {
            const double g = static_cast<double>(p.grad.data[j]);
            const double m = beta1 * static_cast<double>(state.m[i].data[j]) + (1.0 - beta1) * g;
            const double v = beta2 * static_cast<double>(state.v[i].data[j]) + (1.0 - beta2) * g * g;
            state.m[i].data[j] = static_cast<T>(m);
            state.v[i].data[j] = static_cast<T>(v);
            const double mh = m / bc1;
            const double vh = v / bc2;
            p.value.data[j] -= static_cast<T>(lr * mh / (std::sqrt(vh) + eps));
        }
        p.grad.fill(T(0));
    }
}

}  // namespace blnet::opt
