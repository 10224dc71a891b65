#include "lvt/parameters.hpp"

namespace lvt {

template <typename T>
Tensor<T> ParameterStore<T>::add(std::string name, Tensor<T> tensor) {
    if (contains(name)) throw ContractError("duplicate parameter '" + name + "'");
    tensor.set_requires_grad(true);
    entries_.push_back({std::move(name), tensor});
    return tensor;
}

template <typename T>
Tensor<T> ParameterStore<T>::normal(std::string name, Shape shape, double stddev, Rng& rng) {
    return add(std::move(name), Tensor<T>::randn(std::move(shape), rng, stddev));
}

template <typename T>
Tensor<T> ParameterStore<T>::constant(std::string name, Shape shape, T value) {
    return add(std::move(name), Tensor<T>::full(std::move(shape), value));
}

template <typename T>
const Tensor<T>* ParameterStore<T>::find(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.name == name) return &e.tensor;
    }
    return nullptr;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::get(const std::string& name) const {
    if (const Tensor<T>* t = find(name)) return *t;
    throw ContractError("no parameter named '" + name + "'");
}

template <typename T>
std::size_t ParameterStore<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

template class ParameterStore<float>;
template class ParameterStore<double>;

} // namespace lvt
