#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lvt/errors.hpp"
#include "lvt/rng.hpp"

namespace lvt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents' grads.
    std::function<void(Node&)> backward;

    /// Grad buffer, zero-filled on first access.
    std::vector<T>& grad_buffer() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
        return grad;
    }
};

/// Recording switch for the autodiff tape. Thread-local.
bool grad_enabled();

/// Disables graph recording for its lifetime (evaluation, generation).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Dense row-major array with optional reverse-mode gradient tracking.
/// Copies are shallow: two Tensor values may refer to the same node, which is
/// how parameters are shared between modules.
template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<Node<T>>;

    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T fill, bool requires_grad = false);
    static Tensor from_vector(Shape shape, std::vector<T> values, bool requires_grad = false);
    static Tensor scalar(T v, bool requires_grad = false);
    /// i.i.d. N(0, stddev^2) entries.
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node().shape; }
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const { return node().value.size(); }
    /// Extent of axis i; negative i counts from the back.
    std::size_t dim(int i) const;

    std::span<const T> data() const { return node().value; }
    /// Writable view of a leaf's storage (optimizer updates, test perturbation).
    std::span<T> mutable_data();
    T item() const;
    T at(std::size_t flat) const { return node().value[flat]; }

    bool requires_grad() const { return node().requires_grad; }
    void set_requires_grad(bool on);
    bool has_grad() const { return node().grad.size() == numel(); }
    std::span<const T> grad() const { return node().grad; }
    std::span<T> mutable_grad() { return node().grad_buffer(); }
    void zero_grad();

    /// New leaf holding a copy of the values, outside any graph.
    Tensor detach() const;
    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    Node<T>& node() const;
    const NodePtr& node_ptr() const { return node_; }

private:
    NodePtr node_;
};

/// Reverse pass from a scalar loss. Intermediate grads are reset each call;
/// leaf grads accumulate until cleared.
template <typename T>
void backward(const Tensor<T>& loss);

/// Builds an op result; records the graph edge when recording is enabled and
/// any input requires a gradient. Throws NumericError on non-finite output.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward_fn);

/// Grad buffer of parent i if it participates in differentiation, else nullptr.
template <typename T>
std::vector<T>* parent_grad(Node<T>& self, std::size_t i) {
    Node<T>& p = *self.parents[i];
    return p.requires_grad ? &p.grad_buffer() : nullptr;
}

/// i.i.d. N(0, 1) draws; advances the generator counter by exactly numel(shape).
template <typename T>
Tensor<T> sample_standard_normal(Rng& rng, Shape shape) {
    return Tensor<T>::randn(std::move(shape), rng);
}

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

} // namespace lvt
