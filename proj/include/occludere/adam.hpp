#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "occludere/tensor.hpp"

namespace occludere {

struct AdamHyper {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// First/second moment buffers per parameter plus the shared step counter.
template <class T>
struct AdamState {
    AdamHyper hyper;
    std::uint64_t step = 0;
    std::vector<std::vector<T>> first_moment;
    std::vector<std::vector<T>> second_moment;

    AdamState() = default;
    AdamState(AdamHyper h, std::span<const BasicTensor<T>> params) : hyper(h) {
        for (const auto& p : params) {
            first_moment.emplace_back(p.size(), T{0});
            second_moment.emplace_back(p.size(), T{0});
        }
    }
};

/// One bias-corrected Adam update using the grad buffers of `params`.
/// Parameters without a grad buffer are treated as having zero gradient.
template <class T>
void adam_step(std::span<BasicTensor<T>> params, AdamState<T>& state) {
    require(params.size() == state.first_moment.size(), ErrorKind::shape,
            "adam_step: parameter count does not match optimizer state");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(state.hyper.beta1, t);
    const double correction2 = 1.0 - std::pow(state.hyper.beta2, t);
    const T b1 = static_cast<T>(state.hyper.beta1), b2 = static_cast<T>(state.hyper.beta2);
    const T lr = static_cast<T>(state.hyper.learning_rate);
    const T eps = static_cast<T>(state.hyper.epsilon);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        require(m.size() == p.size() && v.size() == p.size(), ErrorKind::shape,
                "adam_step: moment buffers do not match parameter " + std::to_string(k));
        if (!p.has_grad()) continue;
        auto data = p.mutable_data();
        const auto grad = p.grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const T g = grad[i];
            m[i] = b1 * m[i] + (T{1} - b1) * g;
            v[i] = b2 * v[i] + (T{1} - b2) * g * g;
            const T m_hat = m[i] / static_cast<T>(correction1);
            const T v_hat = v[i] / static_cast<T>(correction2);
            data[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

} // namespace occludere
