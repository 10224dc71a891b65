#pragma once

#include <string>
#include <vector>

#include "lvt/tensor.hpp"

namespace lvt {

template <typename T>
struct NamedParameter {
    std::string name;
    Tensor<T> tensor;
};

/// Ordered registry of trainable leaves. Registration order is the
/// serialization and optimizer order.
template <typename T>
class ParameterStore {
public:
    Tensor<T> add(std::string name, Tensor<T> tensor);
    Tensor<T> normal(std::string name, Shape shape, double stddev, Rng& rng);
    Tensor<T> constant(std::string name, Shape shape, T value);

    /// Throws ContractError when absent.
    const Tensor<T>& get(const std::string& name) const;
    const Tensor<T>* find(const std::string& name) const;
    bool contains(const std::string& name) const { return find(name) != nullptr; }

    const std::vector<NamedParameter<T>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t parameter_count() const;
    void zero_grad();

private:
    std::vector<NamedParameter<T>> entries_;
};

} // namespace lvt
