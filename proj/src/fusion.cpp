#include "lvt/fusion.hpp"

#include <cmath>
#include <limits>

namespace lvt {

template <typename T>
const LowRankFactors<T>& FusionWeights<T>::della_layer(int layer) const {
    for (const auto& f : della) {
        if (f.layer == layer) return f;
    }
    throw ContractError("no low-rank factors for layer " + std::to_string(layer));
}

template <typename T>
FusionWeights<T> make_fusion_weights(const ModelConfig& config, ParameterStore<T>& store, Rng& rng) {
    const auto d = static_cast<std::size_t>(config.hidden_dim);
    const auto p = static_cast<std::size_t>(config.latent_dim);
    FusionWeights<T> w;
    switch (config.paradigm) {
    case Paradigm::Della: {
        if (config.rank < 1) throw ContractError("low-rank fusion needs rank >= 1");
        const auto r = static_cast<std::size_t>(config.rank);
        // The value factors sum to I + noise so the value path starts near the
        // plain model; the latent factors give unit-scale gates for N(0, I) codes.
        const double latent_std = 1.0 / std::sqrt(static_cast<double>(p * r));
        for (int l = config.active_start(); l <= config.active_end(); ++l) {
            LowRankFactors<T> f;
            f.layer = l;
            for (std::size_t j = 0; j < r; ++j) {
                const std::string prefix = "fusion.layer" + std::to_string(l) + ".rank" + std::to_string(j) + ".";
                Tensor<T> wv = Tensor<T>::randn({d, d}, rng, 0.02);
                auto data = wv.mutable_data();
                for (std::size_t i = 0; i < d; ++i) data[i * d + i] += static_cast<T>(1.0 / static_cast<double>(r));
                f.value_maps.push_back(store.add(prefix + "w_v", wv));
                f.latent_maps.push_back(store.normal(prefix + "w_z", {p, d}, latent_std, rng));
            }
            w.della.push_back(std::move(f));
        }
        break;
    }
    case Paradigm::Embedding:
        w.embedding = store.normal("fusion.embedding.w_e", {p, d}, 0.02, rng);
        break;
    case Paradigm::Memory:
        for (int l = 1; l <= config.num_layers; ++l) {
            w.memory.push_back(store.normal("fusion.memory.layer" + std::to_string(l) + ".w_m", {p, d}, 0.02, rng));
        }
        break;
    case Paradigm::Softmax:
        w.softmax = store.normal("fusion.softmax.w_s", {p, d}, 0.02, rng);
        break;
    }
    return w;
}

namespace {
template <typename T>
Tensor<T> sum_all(const std::vector<Tensor<T>>& maps) {
    Tensor<T> acc = maps.front();
    for (std::size_t j = 1; j < maps.size(); ++j) acc = add(acc, maps[j]);
    return acc;
}
} // namespace

template <typename T>
Tensor<T> fuse_lowrank(const Tensor<T>& values, const Tensor<T>& z, const LowRankFactors<T>& factors, std::size_t seq) {
    if (factors.value_maps.empty() || factors.value_maps.size() != factors.latent_maps.size()) {
        throw ContractError("low-rank fusion needs rank >= 1");
    }
    // Summing the factor matrices first is algebraically identical to summing
    // the r projected vectors.
    const Tensor<T> projected = matmul(values, sum_all(factors.value_maps));
    const Tensor<T> gate = matmul(z, sum_all(factors.latent_maps));
    return mul(projected, repeat_rows(gate, seq));
}

template <typename T>
Tensor<T> inject_embedding(const Tensor<T>& token_embeddings, const Tensor<T>& z, const Tensor<T>& w_e, std::size_t seq) {
    return add(token_embeddings, repeat_rows(matmul(z, w_e), seq));
}

template <typename T>
Tensor<T> inject_memory(const Tensor<T>& z, const Tensor<T>& w_m) {
    return matmul(z, w_m);
}

template <typename T>
Tensor<T> inject_softmax(const Tensor<T>& last_hidden, const Tensor<T>& z, const Tensor<T>& w_s, std::size_t seq) {
    return add(last_hidden, repeat_rows(matmul(z, w_s), seq));
}

template <typename T>
AttentionDecomposition<T> decompose_attention(const Tensor<T>& e_i, const Tensor<T>& e_j, const Tensor<T>& z,
                                              const Tensor<T>& w_q, const Tensor<T>& w_k) {
    NoGradGuard no_grad;
    const std::size_t d = e_i.numel();
    if (e_j.numel() != d || z.numel() != d || w_q.shape() != Shape{d, d} || w_k.shape() != Shape{d, d}) {
        throw DimensionError("decompose_attention: vectors must be [d] and projections [d, d]");
    }
    auto row = [d](const Tensor<T>& v) { return reshape(v, {1, d}); };
    auto bilinear = [&](const Tensor<T>& a, const Tensor<T>& b) {
        return matmul(matmul(row(a), w_q), matmul(row(b), w_k), false, true).item();
    };
    AttentionDecomposition<T> out;
    out.token_token = bilinear(e_i, e_j);
    out.token_latent = bilinear(e_i, z);
    out.latent_token = bilinear(z, e_j);
    out.latent_latent = bilinear(z, z);
    out.direct = bilinear(add(e_i, z), add(e_j, z));
    const T scale = std::abs(out.token_token) + std::abs(out.token_latent) + std::abs(out.latent_token) +
                    std::abs(out.latent_latent) + T(1);
    const T tol = static_cast<T>(64) * std::numeric_limits<T>::epsilon() * static_cast<T>(d) * scale;
    if (std::abs(out.sum() - out.direct) > tol) {
        throw NumericError("attention logit expansion does not match the direct logit");
    }
    return out;
}

#define LVT_INSTANTIATE_FUSION(T)                                                                             \
    template struct FusionWeights<T>;                                                                         \
    template FusionWeights<T> make_fusion_weights<T>(const ModelConfig&, ParameterStore<T>&, Rng&);           \
    template Tensor<T> fuse_lowrank<T>(const Tensor<T>&, const Tensor<T>&, const LowRankFactors<T>&, std::size_t); \
    template Tensor<T> inject_embedding<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t); \
    template Tensor<T> inject_memory<T>(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> inject_softmax<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);  \
    template AttentionDecomposition<T> decompose_attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                                              const Tensor<T>&, const Tensor<T>&);

LVT_INSTANTIATE_FUSION(float)
LVT_INSTANTIATE_FUSION(double)

} // namespace lvt
