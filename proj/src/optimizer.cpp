#include "lvt/optimizer.hpp"

#include <cmath>

namespace lvt {

template <typename T>
double global_grad_norm(const ParameterStore<T>& store) {
    double acc = 0;
    for (const auto& e : store.entries()) {
        if (!e.tensor.has_grad()) continue;
        for (T g : e.tensor.grad()) acc += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(acc);
}

template <typename T>
Adam<T>::Adam(ParameterStore<T>& store, const TrainConfig& config)
    : store_(&store), lr_(config.learning_rate), beta1_(config.adam_beta1), beta2_(config.adam_beta2),
      eps_(config.adam_eps), clip_(config.grad_clip) {
    if (!(lr_ > 0)) throw ConfigError("learning_rate must be positive");
    for (const auto& e : store.entries()) {
        state_.m.emplace_back(e.tensor.numel(), T(0));
        state_.v.emplace_back(e.tensor.numel(), T(0));
    }
}

template <typename T>
void Adam<T>::set_state(AdamState<T> state) {
    const auto& entries = store_->entries();
    if (state.m.size() != entries.size() || state.v.size() != entries.size()) throw DimensionError("optimizer state does not match parameters");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (state.m[i].size() != entries[i].tensor.numel() || state.v[i].size() != entries[i].tensor.numel()) {
            throw DimensionError("optimizer state for " + entries[i].name + " has the wrong size");
        }
    }
    state_ = std::move(state);
}

template <typename T>
double Adam<T>::step() {
    const double norm = global_grad_norm(*store_);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
    const double scale = (clip_ > 0 && norm > clip_) ? clip_ / norm : 1.0;
    ++state_.t;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.t));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.t));
    auto& entries = store_->entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        Tensor<T> p = entries[i].tensor;
        if (!p.has_grad()) continue;
        const auto g = p.grad();
        auto w = p.mutable_data();
        auto& m = state_.m[i];
        auto& v = state_.v[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double gk = static_cast<double>(g[k]) * scale;
            const double mk = beta1_ * static_cast<double>(m[k]) + (1 - beta1_) * gk;
            const double vk = beta2_ * static_cast<double>(v[k]) + (1 - beta2_) * gk * gk;
            m[k] = static_cast<T>(mk);
            v[k] = static_cast<T>(vk);
            w[k] = static_cast<T>(static_cast<double>(w[k]) - lr_ * (mk / c1) / (std::sqrt(vk / c2) + eps_));
        }
    }
    return norm;
}

template class Adam<float>;
template class Adam<double>;
template double global_grad_norm<float>(const ParameterStore<float>&);
template double global_grad_norm<double>(const ParameterStore<double>&);

} // namespace lvt
