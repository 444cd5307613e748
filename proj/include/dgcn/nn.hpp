#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "dgcn/ops.hpp"
#include "dgcn/optim.hpp"

namespace dgcn {

template <typename T>
using ParamVisitor = std::function<void(Parameter<T>&)>;
template <typename T>
using BufferVisitor = std::function<void(const std::string& name, BatchNormState<T>&)>;

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    T bound = T(1) / std::sqrt(T(fan_in));
    return Tensor<T>::uniform(std::move(shape), -bound, bound, rng);
}

/// Bias-free t x 1 convolution with its weight as a named parameter.
template <typename T>
struct Conv {
    Parameter<T> weight;
    Conv2dOptions opts;

    Conv() = default;
    Conv(const std::string& name, std::size_t c_out, std::size_t c_in, std::size_t kt,
         std::mt19937_64& rng, Conv2dOptions options = {})
        : weight(name + ".weight", fan_in_uniform<T>({c_out, c_in, kt, 1}, c_in * kt, rng)),
          opts(options) {}

    std::size_t c_out() const { return weight.tensor.shape()[0]; }
    std::size_t c_in() const { return weight.tensor.shape()[1]; }
    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight.tensor, opts); }
};

template <typename T>
struct BatchNorm {
    std::string name;
    Parameter<T> gamma, beta;
    BatchNormState<T> state;

    BatchNorm() = default;
    BatchNorm(const std::string& prefix, std::size_t channels)
        : name(prefix),
          gamma(prefix + ".gamma", Tensor<T>::full({channels}, T(1))),
          beta(prefix + ".beta", Tensor<T>::zeros({channels})),
          state(channels) {}

    Tensor<T> operator()(const Tensor<T>& x, bool training) {
        return batch_norm(x, gamma.tensor, beta.tensor, state, training);
    }
    void visit(const ParamVisitor<T>& f) {
        f(gamma);
        f(beta);
    }
    void visit_buffers(const BufferVisitor<T>& f) { f(name, state); }
};

}  // namespace dgcn
