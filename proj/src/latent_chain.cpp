#include "lvt/latent_chain.hpp"

#include <cmath>

namespace lvt {

template <typename T>
LatentHeads<T>::LatentHeads(const ModelConfig& config, ParameterStore<T>& store, Rng& rng) {
    const auto p = static_cast<std::size_t>(config.latent_dim);
    const auto d = static_cast<std::size_t>(config.hidden_dim);
    const double recurrent_std = 1.0 / std::sqrt(static_cast<double>(p));
    for (int l = config.active_start(); l <= config.active_end(); ++l) {
        const std::string prefix = "latent.layer" + std::to_string(l) + ".";
        LatentHeadWeights<T> w;
        w.layer = l;
        w.w_hh = store.normal(prefix + "w_hh", {p, p}, recurrent_std, rng);
        w.w_ih = store.normal(prefix + "w_ih", {p, p}, recurrent_std, rng);
        if (config.conditional) {
            w.prior_w = store.normal(prefix + "prior_w", {p + d, 2 * p}, 0.02, rng);
            w.prior_b = store.constant(prefix + "prior_b", {2 * p}, T(0));
            w.post_w = store.normal(prefix + "post_w", {p + 2 * d, 2 * p}, 0.02, rng);
        } else {
            // Bias-free so the first active layer's prior stays N(0, I).
            w.prior_w = store.normal(prefix + "prior_w", {p, 2 * p}, 0.02, rng);
            w.post_w = store.normal(prefix + "post_w", {p + d, 2 * p}, 0.02, rng);
        }
        w.post_b = store.constant(prefix + "post_b", {2 * p}, T(0));
        layers_.push_back(std::move(w));
    }
}

template <typename T>
const LatentHeadWeights<T>& LatentHeads<T>::at(int layer) const {
    for (const auto& w : layers_) {
        if (w.layer == layer) return w;
    }
    throw ContractError("no latent heads for layer " + std::to_string(layer));
}

template <typename T>
const LatentLayer<T>* LatentChain<T>::find(int layer) const {
    for (const auto& l : layers) {
        if (l.layer == layer) return &l;
    }
    return nullptr;
}

template <typename T>
const Tensor<T>& LatentChain<T>::z(int layer) const {
    if (const LatentLayer<T>* l = find(layer)) return l->z;
    throw ContractError("latent chain has no latent for layer " + std::to_string(layer));
}

namespace {

template <typename T>
GaussianParams<T> split_head(const Tensor<T>& out) {
    const std::size_t p = out.dim(1) / 2;
    const T bound = static_cast<T>(kLogVarBound);
    return {slice_last(out, 0, p), clamp(slice_last(out, p, 2 * p), -bound, bound)};
}

template <typename T>
void expect_rows(const Tensor<T>& t, std::size_t rows, std::size_t cols, const char* what) {
    if (t.rank() != 2 || t.dim(0) != rows || t.dim(1) != cols) {
        throw DimensionError(std::string(what) + " has shape " + shape_to_string(t.shape()) + ", expected " +
                             shape_to_string({rows, cols}));
    }
}

} // namespace

template <typename T>
Tensor<T> advance_summary(const Tensor<T>& summary_prev, const Tensor<T>& z_prev, const LatentHeadWeights<T>& w) {
    if (summary_prev.shape() != z_prev.shape()) {
        throw DimensionError("advance_summary: " + shape_to_string(summary_prev.shape()) + " vs " + shape_to_string(z_prev.shape()));
    }
    return tanh(add(matmul(summary_prev, w.w_hh), matmul(z_prev, w.w_ih)));
}

template <typename T>
GaussianParams<T> prior_params(const Tensor<T>& summary, const Tensor<T>* condition, const LatentHeadWeights<T>& w) {
    const bool conditional = w.prior_b.defined();
    if (conditional != (condition != nullptr)) {
        throw ContractError("prior_params: condition must be supplied exactly when the heads are conditional");
    }
    if (!conditional) return split_head(matmul(summary, w.prior_w));
    return split_head(add(matmul(concat_last<T>({summary, *condition}), w.prior_w), w.prior_b));
}

template <typename T>
GaussianParams<T> posterior_params(const Tensor<T>& summary, const Tensor<T>& representation, const Tensor<T>* condition,
                                   const LatentHeadWeights<T>& w) {
    const bool conditional = w.prior_b.defined();
    if (conditional != (condition != nullptr)) {
        throw ContractError("posterior_params: condition must be supplied exactly when the heads are conditional");
    }
    std::vector<Tensor<T>> parts{summary, representation};
    if (condition) parts.push_back(*condition);
    return split_head(add(matmul(concat_last(parts), w.post_w), w.post_b));
}

template <typename T>
Tensor<T> sample(const GaussianParams<T>& params, Rng& rng) {
    const Tensor<T> eps = sample_standard_normal<T>(rng, params.mean.shape());
    return add(params.mean, mul(exp(mul_scalar(params.log_var, T(0.5))), eps));
}

template <typename T>
LatentChain<T> build_chain(const std::vector<Tensor<T>>* representations, const std::vector<Tensor<T>>* conditions,
                           ChainMode mode, const ModelConfig& config, const LatentHeads<T>& heads, Rng& rng,
                           std::size_t batch) {
    if ((mode == ChainMode::Posterior) != (representations != nullptr)) {
        throw ContractError("build_chain: representations are required exactly in Posterior mode");
    }
    if (config.conditional != (conditions != nullptr)) {
        throw ContractError("build_chain: conditions are required exactly for conditional models");
    }
    const auto L = static_cast<std::size_t>(config.num_layers);
    const auto p = static_cast<std::size_t>(config.latent_dim);
    const auto d = static_cast<std::size_t>(config.hidden_dim);
    if (representations && representations->size() != L) throw ContractError("build_chain: need one representation per layer");
    if (conditions && conditions->size() != L) throw ContractError("build_chain: need one condition per layer");
    if (representations) batch = representations->front().dim(0);
    else if (conditions) batch = conditions->front().dim(0);
    if (batch == 0) throw ContractError("build_chain: batch size unknown");

    LatentChain<T> chain;
    chain.mode = mode;
    const Tensor<T> zeros = Tensor<T>::zeros({batch, p});
    Tensor<T> summary = zeros;
    Tensor<T> z_prev = zeros;
    bool first = true;
    for (int l = config.active_start(); l <= config.active_end(); ++l) {
        const LatentHeadWeights<T>& w = heads.at(l);
        LatentLayer<T> layer;
        layer.layer = l;
        if (config.separate_latents) {
            layer.summary = zeros;
        } else {
            // z_0 and the summary below the first active layer are zero vectors.
            layer.summary = advance_summary(first ? zeros : summary, first ? zeros : z_prev, w);
        }
        const Tensor<T>* cond = conditions ? &(*conditions)[static_cast<std::size_t>(l - 1)] : nullptr;
        if (cond) expect_rows(*cond, batch, d, "condition representation");
        layer.prior = prior_params(layer.summary, cond, w);
        if (mode == ChainMode::Posterior) {
            const Tensor<T>& rep = (*representations)[static_cast<std::size_t>(l - 1)];
            expect_rows(rep, batch, d, "text representation");
            layer.posterior = posterior_params(layer.summary, rep, cond, w);
            layer.z = sample(*layer.posterior, rng);
        } else {
            layer.z = sample(layer.prior, rng);
        }
        summary = layer.summary;
        z_prev = layer.z;
        first = false;
        chain.layers.push_back(std::move(layer));
    }
    return chain;
}

template <typename T>
LatentChain<T> chain_from_latents(const ModelConfig& config, std::vector<Tensor<T>> latents) {
    if (latents.size() != static_cast<std::size_t>(config.active_count())) {
        throw ContractError("chain_from_latents: expected " + std::to_string(config.active_count()) + " latents");
    }
    LatentChain<T> chain;
    chain.mode = ChainMode::Prior;
    int l = config.active_start();
    for (auto& z : latents) {
        LatentLayer<T> layer;
        layer.layer = l++;
        layer.z = std::move(z);
        chain.layers.push_back(std::move(layer));
    }
    return chain;
}

#define LVT_INSTANTIATE_LATENT(T)                                                                              \
    template class LatentHeads<T>;                                                                             \
    template struct LatentChain<T>;                                                                            \
    template Tensor<T> advance_summary<T>(const Tensor<T>&, const Tensor<T>&, const LatentHeadWeights<T>&);    \
    template GaussianParams<T> prior_params<T>(const Tensor<T>&, const Tensor<T>*, const LatentHeadWeights<T>&); \
    template GaussianParams<T> posterior_params<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,       \
                                                   const LatentHeadWeights<T>&);                               \
    template Tensor<T> sample<T>(const GaussianParams<T>&, Rng&);                                              \
    template LatentChain<T> build_chain<T>(const std::vector<Tensor<T>>*, const std::vector<Tensor<T>>*,       \
                                           ChainMode, const ModelConfig&, const LatentHeads<T>&, Rng&,         \
                                           std::size_t);                                                       \
    template LatentChain<T> chain_from_latents<T>(const ModelConfig&, std::vector<Tensor<T>>);

LVT_INSTANTIATE_LATENT(float)
LVT_INSTANTIATE_LATENT(double)

} // namespace lvt
