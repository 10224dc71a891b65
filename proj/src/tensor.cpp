#include "lvt/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace lvt {

namespace {
thread_local bool g_grad_enabled = true;
} // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {
void check_shape(const Shape& shape) {
    for (std::size_t e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_to_string(shape));
    }
}

template <typename T>
void check_finite(const char* op, const std::vector<T>& v) {
    // x * 0 is NaN exactly when x is inf or NaN; independent lanes vectorize.
    T lanes[8] = {};
    const std::size_t n = v.size(), blocks = n - n % 8;
    for (std::size_t i = 0; i < blocks; i += 8) {
        for (std::size_t j = 0; j < 8; ++j) lanes[j] += v[i + j] * T(0);
    }
    T acc = 0;
    for (std::size_t i = blocks; i < n; ++i) acc += v[i] * T(0);
    for (const T l : lanes) acc += l;
    if (acc != acc) throw NumericError(std::string("non-finite value produced by ") + op);
}
} // namespace

template <typename T>
Node<T>& Tensor<T>::node() const {
    if (!node_) throw ContractError("use of an undefined tensor");
    return *node_;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T fill, bool requires_grad) {
    check_shape(shape);
    auto n = std::make_shared<Node<T>>();
    n->value.assign(shape_numel(shape), fill);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::from_vector(Shape shape, std::vector<T> values, bool requires_grad) {
    check_shape(shape);
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("shape " + shape_to_string(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
    }
    check_finite("from_vector", values);
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T v, bool requires_grad) {
    return from_vector({1}, {v}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    check_shape(shape);
    std::vector<T> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<T>(stddev * rng.normal());
    return from_vector(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(int i) const {
    const int r = static_cast<int>(rank());
    const int k = i < 0 ? r + i : i;
    if (k < 0 || k >= r) {
        throw DimensionError("axis " + std::to_string(i) + " out of range for shape " + shape_to_string(shape()));
    }
    return shape()[static_cast<std::size_t>(k)];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
    Node<T>& n = node();
    if (!n.is_leaf) throw ContractError("mutable_data() is only available on leaf tensors");
    return n.value;
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
    return node().value[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
    Node<T>& n = node();
    if (!n.is_leaf) throw ContractError("requires_grad can only be toggled on leaves");
    n.requires_grad = on;
}

template <typename T>
void Tensor<T>::zero_grad() {
    Node<T>& n = node();
    if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    auto n = std::make_shared<Node<T>>();
    n->shape = shape();
    n->value = node().value;
    return Tensor(std::move(n));
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value, std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
    check_finite(op, value);
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->op = op;
    bool track = false;
    if (grad_enabled()) {
        for (const auto& in : inputs) track = track || in.requires_grad();
    }
    if (track) {
        n->requires_grad = true;
        n->is_leaf = false;
        n->parents.reserve(inputs.size());
        for (const auto& in : inputs) n->parents.push_back(in.node_ptr());
        n->backward = std::move(backward_fn);
    }
    return Tensor<T>(std::move(n));
}

template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " + shape_to_string(loss.shape()));
    }
    Node<T>* root = &loss.node();
    if (!root->requires_grad) throw ContractError("backward() on a tensor that does not require grad");

    // Iterative post-order DFS; `order` ends up topologically sorted (inputs first).
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node<T>* n : order) {
        if (!n->is_leaf) n->grad.assign(n->value.size(), T(0));
    }
    root->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (!n->is_leaf && n->backward) n->backward(*n);
    }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template Tensor<float> make_result<float>(const char*, Shape, std::vector<float>, std::vector<Tensor<float>>,
                                          std::function<void(Node<float>&)>);
template Tensor<double> make_result<double>(const char*, Shape, std::vector<double>, std::vector<Tensor<double>>,
                                            std::function<void(Node<double>&)>);

} // namespace lvt
