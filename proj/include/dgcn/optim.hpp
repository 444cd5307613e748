#pragma once

#include <span>
#include <string>
#include <vector>

#include "dgcn/tensor.hpp"

namespace dgcn {

/// A trainable tensor plus its optimizer state.
template <typename T>
struct Parameter {
    Tensor<T> tensor;
    std::vector<T> momentum_buffer;
    std::string name;

    Parameter() = default;
    Parameter(std::string param_name, Tensor<T> value)
        : tensor(std::move(value)),
          momentum_buffer(tensor.numel(), T(0)),
          name(std::move(param_name)) {
        tensor.set_requires_grad(true);
    }

    void zero_grad() { tensor.clear_grad(); }
};

struct SgdOptions {
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0004;
    bool nesterov = true;
};

/// One SGD step over `params`, then clears their gradients.
///   g <- grad + wd*w ; v <- mu*v + g ; w <- w - lr*(g + mu*v)   (nesterov)
///                                     w <- w - lr*v              (classic)
/// Throws StateError if any parameter has no gradient.
template <typename T>
void sgd_nesterov_step(std::span<Parameter<T>* const> params, const SgdOptions& opts);

/// Step schedule: base * factor^(number of milestones <= epoch). Epochs are 0-based.
double learning_rate_at(std::size_t epoch, double base, std::span<const std::size_t> milestones,
                        double factor);

extern template void sgd_nesterov_step(std::span<Parameter<float>* const>, const SgdOptions&);
extern template void sgd_nesterov_step(std::span<Parameter<double>* const>, const SgdOptions&);

}  // namespace dgcn
