#pragma once

// Central finite-difference gradient checker, test-only.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "occludere/tensor.hpp"

namespace occludere::testing {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    std::string worst;
};

/// Compares analytic leaf gradients against central differences with step `h`.
/// Elements with max(|analytic|, |numeric|) below `tiny` are compared in
/// absolute terms against `tiny * 1e-4`. `order` 4 uses the five-point stencil
/// (f(-2h) - 8f(-h) + 8f(h) - f(2h)) / 12h, which tolerates a larger step and
/// so less rounding noise on losses of large magnitude.
inline GradCheckResult grad_check(std::vector<Tensor> leaves,
                                  const std::function<Tensor(const std::vector<Tensor>&)>& loss_fn,
                                  double h = 1e-5, double tiny = 1e-6, int order = 2) {
    for (auto& leaf : leaves) {
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    backward(loss_fn(leaves));
    std::vector<std::vector<double>> analytic;
    for (auto& leaf : leaves) {
        leaf.ensure_grad();
        analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    }

    GradCheckResult result;
    NoGradGuard guard;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        auto data = leaves[k].mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            const auto at = [&](double step) {
                data[i] = saved + step;
                const double v = loss_fn(leaves).item();
                data[i] = saved;
                return v;
            };
            const double numeric = order == 4
                                       ? (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h)
                                       : (at(h) - at(-h)) / (2.0 * h);
            const double a = analytic[k][i];
            const double scale = std::max(std::abs(a), std::abs(numeric));
            const double err = scale > tiny ? std::abs(a - numeric) / scale
                                            : std::abs(a - numeric) / tiny;
            ++result.checked;
            if (err > result.max_relative_error) {
                result.max_relative_error = err;
                result.worst = "leaf " + std::to_string(k) + " elem " + std::to_string(i) +
                               " analytic " + std::to_string(a) + " numeric " +
                               std::to_string(numeric);
            }
        }
    }
    return result;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v));
}

/// Values with magnitude in [margin, 1], random sign; keeps points away from kinks.
inline Tensor random_away_from_zero(Shape shape, std::mt19937_64& rng, double margin = 0.05) {
    std::uniform_real_distribution<double> mag(margin, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
    return Tensor(std::move(shape), std::move(v));
}

} // namespace occludere::testing
