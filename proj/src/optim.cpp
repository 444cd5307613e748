#include "dgcn/optim.hpp"

namespace dgcn {

template <typename T>
void sgd_nesterov_step(std::span<Parameter<T>* const> params, const SgdOptions& opts) {
    for (auto* p : params) {
        if (!p->tensor.has_grad()) throw StateError("parameter '" + p->name + "' has no gradient");
    }
    const T lr = static_cast<T>(opts.lr), mu = static_cast<T>(opts.momentum),
            wd = static_cast<T>(opts.weight_decay);
    for (auto* p : params) {
        auto w = p->tensor.mutable_data();
        auto grad = p->tensor.grad();
        auto& v = p->momentum_buffer;
        for (std::size_t i = 0; i < w.size(); ++i) {
            T g = grad[i] + wd * w[i];
            v[i] = mu * v[i] + g;
            w[i] -= opts.nesterov ? lr * (g + mu * v[i]) : lr * v[i];
        }
        p->zero_grad();
    }
}

double learning_rate_at(std::size_t epoch, double base, std::span<const std::size_t> milestones,
                        double factor) {
    double lr = base;
    for (auto m : milestones)
        if (epoch >= m) lr *= factor;
    return lr;
}

template void sgd_nesterov_step(std::span<Parameter<float>* const>, const SgdOptions&);
template void sgd_nesterov_step(std::span<Parameter<double>* const>, const SgdOptions&);

}  // namespace dgcn
