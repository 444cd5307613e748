#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dgcn/errors.hpp"

namespace dgcn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Row-major strides for `shape`.
std::vector<std::size_t> strides_of(const Shape& shape);

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until something flows into it
    bool requires_grad = false;
    std::string op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads `self.grad` and accumulates into `self.inputs[i]->grad`.
    std::function<void(Node& self)> backward;

    bool is_leaf() const { return !backward; }
    std::span<T> grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};

}  // namespace detail

/// Thread-local switch for graph recording. While disabled, ops produce
/// constant tensors with no backward edges.
class GradMode {
  public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
  public:
    NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

/// Dense row-major tensor. Copies are shallow handles onto the same node;
/// values are immutable once an op has produced them. Only leaves expose
/// mutable storage (parameters, inputs under construction).
template <typename T>
class Tensor {
  public:
    using value_type = T;
    using Node = detail::Node<T>;

    Tensor();
    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value);
    static Tensor eye(std::size_t n);
    static Tensor uniform(Shape shape, T lo, T hi, std::mt19937_64& rng);
    static Tensor normal(Shape shape, T mean, T stddev, std::mt19937_64& rng);

    const Shape& shape() const { return node_->shape; }
    std::size_t dim() const { return node_->shape.size(); }
    std::size_t size(std::size_t axis) const;
    std::size_t numel() const { return node_->value.size(); }

    std::span<const T> data() const& { return node_->value; }
    // A temporary's storage dies with it; bind the tensor first.
    std::span<const T> data() const&& = delete;
    std::span<T> mutable_data();
    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on);
    bool is_leaf() const { return node_->is_leaf(); }
    const std::string& op_name() const { return node_->op; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const& { return node_->grad; }
    std::span<const T> grad() const&& = delete;
    void clear_grad() { node_->grad.clear(); }

    /// Reverse-mode sweep from a scalar.
    void backward() const;
    /// Reverse-mode sweep seeded with an upstream gradient of this shape.
    void backward(std::span<const T> seed) const;

    /// Same values, cut from the graph.
    Tensor detach() const;

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(numel());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(node_->value[i]);
        return Tensor<U>(shape(), std::move(out), requires_grad());
    }

    const std::shared_ptr<Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  private:
    std::shared_ptr<Node> node_;
};

/// Builds the output of an op. When grad mode is on and any input requires a
/// gradient, the node keeps its inputs and `backward`; otherwise it is a
/// constant.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::string op,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(detail::Node<T>&)> backward);

/// Topologically ordered record of the ops that produced a root tensor.
/// Every entry appears after all producers of its inputs.
template <typename T>
class Tape {
  public:
    static Tape record(const Tensor<T>& root);

    std::size_t size() const { return entries_.size(); }
    std::span<detail::Node<T>* const> entries() const { return entries_; }
    bool is_topologically_ordered() const;

    /// Seeds the root gradient and runs backward rules in reverse order.
    void backward(std::span<const T> seed) const;

  private:
    std::vector<detail::Node<T>*> entries_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace dgcn
