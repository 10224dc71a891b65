#include "lvt/objective.hpp"

#include <cmath>

namespace lvt {

template <typename T>
Tensor<T> gaussian_kl(const GaussianParams<T>& q, const GaussianParams<T>& p) {
    if (q.mean.shape() != p.mean.shape() || q.log_var.shape() != p.log_var.shape() || q.mean.shape() != q.log_var.shape()) {
        throw DimensionError("gaussian_kl: " + shape_to_string(q.mean.shape()) + " vs " + shape_to_string(p.mean.shape()));
    }
    // 0.5 * (lv_p - lv_q) + (var_q + (mu_q - mu_p)^2) / (2 var_p) - 0.5
    const Tensor<T> log_ratio = mul_scalar(sub(p.log_var, q.log_var), T(0.5));
    const Tensor<T> spread = add(exp(q.log_var), square(sub(q.mean, p.mean)));
    const Tensor<T> scaled = mul(spread, mul_scalar(exp(neg(p.log_var)), T(0.5)));
    return sum_last(add_scalar(add(log_ratio, scaled), T(-0.5)));
}

template <typename T>
std::vector<LayerKl<T>> layerwise_kl(const LatentChain<T>& chain) {
    if (chain.mode != ChainMode::Posterior) throw ContractError("layerwise_kl needs a chain sampled from the posterior");
    std::vector<LayerKl<T>> out;
    for (const auto& layer : chain.layers) {
        if (!layer.posterior) throw ContractError("layerwise_kl: layer " + std::to_string(layer.layer) + " has no posterior");
        out.push_back({layer.layer, mean(gaussian_kl(*layer.posterior, layer.prior))});
    }
    return out;
}

bool kl_layer_selected(const ModelConfig& config, int layer) {
    switch (config.kl_layers) {
    case KlLayers::All: return config.is_active(layer);
    case KlLayers::First: return layer == config.active_start();
    case KlLayers::Last: return layer == config.active_end();
    }
    return false;
}

template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& logits, std::span<const int> targets, std::size_t batch) {
    if (batch == 0 || targets.size() % batch != 0) throw DimensionError("reconstruction_loss: targets do not split into the batch");
    const std::size_t seq = targets.size() / batch;
    for (std::size_t b = 0; b < batch; ++b) {
        bool any = false;
        for (std::size_t t = 0; t < seq && !any; ++t) any = targets[b * seq + t] != kIgnoreTarget;
        if (!any) throw ContractError("reconstruction_loss: sequence " + std::to_string(b) + " has no targets");
    }
    return mul_scalar(sum(nll_rows(logits, targets)), T(1) / static_cast<T>(batch));
}

double beta_at(std::int64_t step, const AnnealSchedule& schedule) {
    if (step < 0) throw DomainError("beta_at: negative step");
    switch (schedule.mode) {
    case AnnealMode::None: return 1.0;
    case AnnealMode::Constant: return schedule.constant_beta;
    case AnnealMode::Cyclical: break;
    }
    if (schedule.period_steps <= 0) throw ConfigError("cyclical annealing needs a positive period");
    const double t = static_cast<double>(step % schedule.period_steps) / static_cast<double>(schedule.period_steps);
    const double lo = schedule.beta_floor;
    if (t < 0.5) return lo;
    if (t < 0.75) {
        const double s = (t - 0.5) / 0.25;
        return (1.0 - s) * lo + s;
    }
    return 1.0;
}

template <typename T>
std::vector<Tensor<T>> apply_free_bits(const std::vector<Tensor<T>>& terms, double lambda) {
    if (!(lambda >= 0)) throw DomainError("free bits threshold must be non-negative");
    std::vector<Tensor<T>> out;
    out.reserve(terms.size());
    for (const auto& t : terms) out.push_back(maximum(t, static_cast<T>(lambda)));
    return out;
}

template <typename T>
std::vector<BowHead<T>> make_bow_heads(const ModelConfig& config, ParameterStore<T>& store, Rng& rng) {
    const auto p = static_cast<std::size_t>(config.latent_dim);
    const auto v = static_cast<std::size_t>(config.vocab_size);
    std::vector<BowHead<T>> heads;
    for (int l = config.active_start(); l <= config.active_end(); ++l) {
        const std::string prefix = "bow.layer" + std::to_string(l) + ".";
        heads.push_back({l, store.normal(prefix + "weight", {p, v}, 0.02, rng), store.constant(prefix + "bias", {v}, T(0))});
    }
    return heads;
}

template <typename T>
Tensor<T> bow_loss(const LatentChain<T>& chain, const std::vector<BowHead<T>>& heads, std::span<const int> targets,
                   std::size_t seq) {
    if (chain.mode != ChainMode::Posterior) throw ContractError("bow_loss needs a chain sampled from the posterior");
    if (chain.layers.empty()) throw ContractError("bow_loss of an empty chain");
    const std::size_t batch = chain.batch();
    if (targets.size() != batch * seq) throw DimensionError("bow_loss: targets are not [batch, seq]");
    Tensor<T> acc;
    for (const auto& layer : chain.layers) {
        const BowHead<T>* head = nullptr;
        for (const auto& h : heads) {
            if (h.layer == layer.layer) head = &h;
        }
        if (!head) throw ContractError("bow_loss: no head for layer " + std::to_string(layer.layer));
        const Tensor<T> logits = add(matmul(layer.z, head->weight), head->bias);
        const Tensor<T> term = mul_scalar(sum(nll_rows(repeat_rows(logits, seq), targets)), T(1) / static_cast<T>(batch));
        acc = acc.defined() ? add(acc, term) : term;
    }
    return mul_scalar(acc, T(1) / static_cast<T>(chain.layers.size()));
}

template <typename T>
LossValues loss_values(const LossBreakdown<T>& loss, int num_layers) {
    LossValues v;
    v.beta = loss.beta;
    v.total = static_cast<double>(loss.total.item());
    v.reconstruction = static_cast<double>(loss.reconstruction.item());
    v.kl_total = static_cast<double>(loss.kl_total.item());
    v.kl_per_layer.assign(static_cast<std::size_t>(num_layers), 0.0);
    for (const auto& k : loss.kl_per_layer) v.kl_per_layer.at(static_cast<std::size_t>(k.layer - 1)) = static_cast<double>(k.value.item());
    if (loss.bow) v.bow = static_cast<double>(loss.bow->item());
    return v;
}

template <typename T>
LossBreakdown<T> assemble_loss(const ModelConfig& config, Tensor<T> reconstruction, std::vector<LayerKl<T>> kl,
                               std::optional<Tensor<T>> bow, const ObjectiveOptions& options) {
    LossBreakdown<T> out;
    out.reconstruction = std::move(reconstruction);
    out.beta = options.beta;

    std::vector<Tensor<T>> selected;
    for (const auto& k : kl) {
        if (kl_layer_selected(config, k.layer)) selected.push_back(k.value);
    }
    Tensor<T> raw = Tensor<T>::scalar(T(0));
    for (const auto& s : selected) raw = add(raw, s);
    out.kl_total = raw;

    Tensor<T> penalized = raw;
    if (options.free_bits) {
        penalized = Tensor<T>::scalar(T(0));
        for (const auto& s : apply_free_bits(selected, *options.free_bits)) penalized = add(penalized, s);
    }
    Tensor<T> total = out.reconstruction;
    if (options.beta != 0.0) total = add(total, mul_scalar(penalized, static_cast<T>(options.beta)));
    if (bow) {
        total = add(total, mul_scalar(*bow, static_cast<T>(options.bow_weight)));
        out.bow = std::move(bow);
    }
    out.total = total;
    out.kl_per_layer = std::move(kl);
    return out;
}

#define LVT_INSTANTIATE_OBJECTIVE(T)                                                                                   \
    template Tensor<T> gaussian_kl<T>(const GaussianParams<T>&, const GaussianParams<T>&);                             \
    template std::vector<LayerKl<T>> layerwise_kl<T>(const LatentChain<T>&);                                           \
    template Tensor<T> reconstruction_loss<T>(const Tensor<T>&, std::span<const int>, std::size_t);                    \
    template std::vector<Tensor<T>> apply_free_bits<T>(const std::vector<Tensor<T>>&, double);                          \
    template std::vector<BowHead<T>> make_bow_heads<T>(const ModelConfig&, ParameterStore<T>&, Rng&);                  \
    template Tensor<T> bow_loss<T>(const LatentChain<T>&, const std::vector<BowHead<T>>&, std::span<const int>,         \
                                   std::size_t);                                                                       \
    template LossValues loss_values<T>(const LossBreakdown<T>&, int);                                                  \
    template LossBreakdown<T> assemble_loss<T>(const ModelConfig&, Tensor<T>, std::vector<LayerKl<T>>,                 \
                                               std::optional<Tensor<T>>, const ObjectiveOptions&);

LVT_INSTANTIATE_OBJECTIVE(float)
LVT_INSTANTIATE_OBJECTIVE(double)

} // namespace lvt
