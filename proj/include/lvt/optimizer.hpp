#pragma once

#include <vector>

#include "lvt/config.hpp"
#include "lvt/parameters.hpp"

namespace lvt {

/// First/second moment estimates, one vector per parameter in store order.
template <typename T>
struct AdamState {
    std::int64_t t = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
};

/// Adam with global gradient-norm clipping.
template <typename T>
class Adam {
public:
    Adam(ParameterStore<T>& store, const TrainConfig& config);

    /// Clips, updates every parameter from its accumulated grad and returns
    /// the pre-clip global norm. Does not clear grads.
    double step();

    const AdamState<T>& state() const { return state_; }
    /// Throws DimensionError when the moments do not match the store.
    void set_state(AdamState<T> state);

private:
    ParameterStore<T>* store_;
    double lr_, beta1_, beta2_, eps_, clip_;
    AdamState<T> state_;
};

/// sqrt of the sum of squared grads over the store.
template <typename T>
double global_grad_norm(const ParameterStore<T>& store);

} // namespace lvt
