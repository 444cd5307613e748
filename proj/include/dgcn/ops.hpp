#pragma once

#include <span>
#include <vector>

#include "dgcn/tensor.hpp"

namespace dgcn {

/// Batched matrix product over the last two axes. Leading axes broadcast
/// numpy-style (right-aligned, size 1 or missing stretches).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

struct Conv2dOptions {
    std::size_t stride_t = 1;
    std::size_t pad_t = 0;
};

/// Cross-correlation of x[B,C,T,N] with kernel[C_out,C,kt,kn]. Zero padding
/// and stride act on the temporal axis only; the joint axis is "valid".
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, Conv2dOptions opts = {});

/// Running statistics owned by a batch-norm site.
template <typename T>
struct BatchNormState {
    std::vector<T> running_mean;
    std::vector<T> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    BatchNormState() = default;
    explicit BatchNormState(std::size_t channels)
        : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

/// Per-channel normalization of x[B,C,...] over every axis except 1.
/// Training mode uses batch statistics and updates `state`; eval mode reads it.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, bool training);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y);
template <typename T>
Tensor<T> sub(const Tensor<T>& x, const Tensor<T>& y);
template <typename T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s);

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// Swaps the last two axes.
template <typename T>
Tensor<T> transpose_last(const Tensor<T>& x);

/// Sum of all entries, as a scalar.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
/// Reduces one axis (removed from the result shape).
template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis);
template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis);

/// x[B,C,...] -> [B,C], averaging everything after the channel axis.
template <typename T>
Tensor<T> mean_pool_global(const Tensor<T>& x);

/// x[B,F] * w[O,F]^T + b[O].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

/// Softmax along the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

/// Each row (last axis) divided by max(||row||_2, eps).
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, T eps);

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

}  // namespace dgcn
