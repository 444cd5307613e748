#include "dgcn/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace dgcn {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

template <typename T>
Tensor<T>::Tensor() : Tensor(Shape{}, std::vector<T>{T(0)}) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<Node>()) {
    if (dgcn::numel(shape) != data.size()) {
        throw DimensionError("tensor shape " + to_string(shape) + " holds " +
                             std::to_string(dgcn::numel(shape)) + " values, got " +
                             std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    auto n = dgcn::numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
    return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
Tensor<T> Tensor<T>::eye(std::size_t n) {
    std::vector<T> v(n * n, T(0));
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = T(1);
    return Tensor({n, n}, std::move(v));
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, T lo, T hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<T> dist(lo, hi);
    std::vector<T> v(dgcn::numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> Tensor<T>::normal(Shape shape, T mean, T stddev, std::mt19937_64& rng) {
    std::normal_distribution<T> dist(mean, stddev);
    std::vector<T> v(dgcn::numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v));
}

template <typename T>
std::size_t Tensor<T>::size(std::size_t axis) const {
    if (axis >= dim()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             to_string(shape()));
    }
    return node_->shape[axis];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
    if (!is_leaf()) throw StateError("mutable_data() on non-leaf tensor (" + op_name() + ")");
    return node_->value;
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != dim()) {
        throw DimensionError("index rank " + std::to_string(index.size()) + " vs shape " +
                             to_string(shape()));
    }
    auto strides = strides_of(shape());
    std::size_t off = 0, i = 0;
    for (auto v : index) {
        if (v >= node_->shape[i]) throw DimensionError("index out of range for " + to_string(shape()));
        off += v * strides[i++];
    }
    return node_->value[off];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
    if (!is_leaf()) throw StateError("requires_grad can only be set on leaves");
    node_->requires_grad = on;
}

template <typename T>
void Tensor<T>::backward() const {
    if (numel() != 1) {
        throw DimensionError("backward() without seed needs a scalar, got " + to_string(shape()));
    }
    T one(1);
    backward(std::span<const T>(&one, 1));
}

template <typename T>
void Tensor<T>::backward(std::span<const T> seed) const {
    if (!requires_grad()) throw StateError("backward() on a tensor that does not require grad");
    if (seed.size() != numel()) {
        throw DimensionError("backward seed has " + std::to_string(seed.size()) +
                             " values for shape " + to_string(shape()));
    }
    Tape<T>::record(*this).backward(seed);
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(shape(), node_->value);
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::string op,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(detail::Node<T>&)> backward) {
    Tensor<T> out(std::move(shape), std::move(value));
    auto& node = *out.node();
    node.op = std::move(op);
    bool track = GradMode::enabled() &&
                 std::any_of(inputs.begin(), inputs.end(),
                             [](const Tensor<T>& t) { return t.requires_grad(); });
    if (track) {
        node.requires_grad = true;
        node.inputs.reserve(inputs.size());
        for (auto& in : inputs) node.inputs.push_back(in.node());
        node.backward = std::move(backward);
    }
    return out;
}

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
    Tape tape;
    std::unordered_set<const detail::Node<T>*> seen;
    // Iterative post-order DFS: a node is emitted once all its inputs are.
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            auto* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            tape.entries_.push_back(node);
            stack.pop_back();
        }
    }
    return tape;
}

template <typename T>
bool Tape<T>::is_topologically_ordered() const {
    std::unordered_set<const detail::Node<T>*> done;
    for (auto* node : entries_) {
        for (auto& in : node->inputs) {
            if (in->requires_grad && !done.count(in.get())) return false;
        }
        done.insert(node);
    }
    return true;
}

template <typename T>
void Tape<T>::backward(std::span<const T> seed) const {
    if (entries_.empty()) return;
    auto* root = entries_.back();
    auto g = root->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        auto* node = *it;
        if (node->is_leaf() || node->grad.empty()) continue;
        node->backward(*node);
        // Intermediate gradients are consumed once; leaves keep accumulating.
        node->grad.clear();
        node->grad.shrink_to_fit();
    }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template Tensor<float> make_result(Shape, std::vector<float>, std::string,
                                   std::vector<Tensor<float>>,
                                   std::function<void(detail::Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, std::string,
                                    std::vector<Tensor<double>>,
                                    std::function<void(detail::Node<double>&)>);

}  // namespace dgcn
