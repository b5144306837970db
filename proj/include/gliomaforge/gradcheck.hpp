#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "gliomaforge/random.hpp"
#include "gliomaforge/tensor.hpp"

namespace gliomaforge {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    /// Entries whose |analytic| and |numeric| are both below this are compared
    /// absolutely against `tolerance * floor`.
    double floor = 1e-6;
    /// When nonzero, only this many randomly chosen entries per input are
    /// perturbed.
    std::size_t sample_entries = 0;
    std::uint64_t seed = 7;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t entries_checked = 0;
    bool passed = true;
};

/// Compares reverse-mode gradients of a scalar function with central finite
/// differences. `f` must rebuild its graph from `inputs` on every call.
inline GradCheckResult check_gradients(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                                       std::vector<Tensor<double>> inputs, const GradCheckOptions& opt = {}) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    const Tensor<double> out = f(inputs);
    backward(out);
    std::vector<std::vector<double>> analytic;
    for (const auto& t : inputs) analytic.push_back(t.grad());

    GradCheckResult result;
    Rng rng(opt.seed);
    NoGradGuard no_grad;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto& values = inputs[k].mutable_values();
        std::vector<std::size_t> entries;
        if (opt.sample_entries == 0 || opt.sample_entries >= values.size()) {
            for (std::size_t i = 0; i < values.size(); ++i) entries.push_back(i);
        } else {
            for (std::size_t s = 0; s < opt.sample_entries; ++s) entries.push_back(static_cast<std::size_t>(rng.below(values.size())));
        }
        for (std::size_t i : entries) {
            const double saved = values[i];
            values[i] = saved + opt.step;
            const double plus = f(inputs).item();
            values[i] = saved - opt.step;
            const double minus = f(inputs).item();
            values[i] = saved;
            const double numeric = (plus - minus) / (2.0 * opt.step);
            const double a = analytic[k][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
            const double rel = std::abs(a - numeric) / denom;
            result.max_relative_error = std::max(result.max_relative_error, rel);
            ++result.entries_checked;
        }
    }
    result.passed = result.max_relative_error < opt.tolerance;
    return result;
}

/// Fills a tensor with seeded standard-normal values.
template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<T>(scale * rng.normal());
    return Tensor<T>::from(shape, std::move(v));
}

} // namespace gliomaforge
