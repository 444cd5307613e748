#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "dgcn/ops.hpp"
#include "dgcn/tensor.hpp"

namespace dgcn {

/// Central-difference gradient of a scalar function, one coordinate at a time.
/// Independent of the autodiff engine: `f` is only ever evaluated forward.
template <typename T>
Tensor<T> finite_difference_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x,
                                 T eps = T(1e-5)) {
    if (!(eps > T(0))) throw ValidationError("finite_difference_grad: eps must be positive");
    std::vector<T> base(x.data().begin(), x.data().end());
    std::vector<T> out(base.size());
    auto eval = [&](const std::vector<T>& v) {
        T y = f(Tensor<T>(x.shape(), v));
        if (!std::isfinite(static_cast<double>(y)))
            throw NumericError("finite_difference_grad: f is not finite");
        return y;
    };
    eval(base);
    for (std::size_t i = 0; i < base.size(); ++i) {
        auto probe = base;
        probe[i] = base[i] + eps;
        T up = eval(probe);
        probe[i] = base[i] - eps;
        T down = eval(probe);
        out[i] = (up - down) / (T(2) * eps);
    }
    return Tensor<T>(x.shape(), std::move(out));
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor * max_j max(|a_j|, |b_j|)).
/// Coordinates whose gradient is tiny relative to the largest one are judged
/// against that scale instead, so central-difference roundoff on near-zero
/// entries does not dominate.
template <typename T>
double max_relative_error(std::span<const T> a, std::span<const T> b, double floor = 1e-3) {
    if (a.size() != b.size()) throw DimensionError("max_relative_error: length mismatch");
    double scale = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        scale = std::max({scale, std::abs(double(a[i])), std::abs(double(b[i]))});
    const double denom_floor = std::max(floor * scale, 1e-12);
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = std::abs(double(a[i]) - double(b[i]));
        double s = std::max({std::abs(double(a[i])), std::abs(double(b[i])), denom_floor});
        worst = std::max(worst, d / s);
    }
    return worst;
}

/// Autodiff vs central differences for sum(R * f(inputs)) with a fixed random
/// projection R drawn from `seed`. Returns the worst relative error over every
/// coordinate of every input.
inline double gradient_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                             std::vector<Tensor<double>> inputs, std::uint64_t seed,
                             double eps = 1e-5, double floor = 1e-3) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<Tensor<double>> leaves;
    for (auto& in : inputs)
        leaves.emplace_back(in.shape(), std::vector<double>(in.data().begin(), in.data().end()), true);
    Tensor<double> out = f(leaves);
    Tensor<double> proj = Tensor<double>::uniform(out.shape(), -1.0, 1.0, rng);
    sum(mul(out, proj)).backward();

    double worst = 0;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        std::function<double(const Tensor<double>&)> scalar = [&](const Tensor<double>& xi) {
            NoGradGuard guard;
            auto args = inputs;
            args[i] = xi;
            auto y = f(args);
            double s = 0;
            for (std::size_t k = 0; k < y.numel(); ++k) s += y.data()[k] * proj.data()[k];
            return s;
        };
        auto fd = finite_difference_grad<double>(scalar, inputs[i], eps);
        std::vector<double> ad(leaves[i].numel(), 0.0);
        if (leaves[i].has_grad()) ad.assign(leaves[i].grad().begin(), leaves[i].grad().end());
        worst = std::max(worst, max_relative_error<double>(ad, fd.data(), floor));
    }
    return worst;
}

}  // namespace dgcn
