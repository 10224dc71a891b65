#pragma once

#include <vector>

#include "lvt/config.hpp"
#include "lvt/ops.hpp"
#include "lvt/parameters.hpp"

namespace lvt {

/// Low-rank factors for one decoder layer: r value maps [d, d] and r latent
/// maps [p, d], shared by every position of that layer.
template <typename T>
struct LowRankFactors {
    int layer = 0;
    std::vector<Tensor<T>> value_maps;
    std::vector<Tensor<T>> latent_maps;
};

/// Injection weights of the configured paradigm; only that paradigm's
/// tensors are allocated.
template <typename T>
struct FusionWeights {
    std::vector<LowRankFactors<T>> della;      // one entry per active layer
    Tensor<T> embedding;                       // [p, d]
    std::vector<Tensor<T>> memory;             // [p, d] per decoder layer, index l-1
    Tensor<T> softmax;                         // [p, d]

    const LowRankFactors<T>& della_layer(int layer) const;
};

template <typename T>
FusionWeights<T> make_fusion_weights(const ModelConfig& config, ParameterStore<T>& store, Rng& rng);

/// (sum_j v W_v^j) * (sum_j z W_z^j), the latent gate broadcast over the
/// `seq` positions of each batch row. v: [batch*seq, d], z: [batch, p].
template <typename T>
Tensor<T> fuse_lowrank(const Tensor<T>& values, const Tensor<T>& z, const LowRankFactors<T>& factors, std::size_t seq);

/// e_i + z W_e at every position.
template <typename T>
Tensor<T> inject_embedding(const Tensor<T>& token_embeddings, const Tensor<T>& z, const Tensor<T>& w_e, std::size_t seq);

/// Hidden vector of the extra memory slot, z W_m ([batch, d]).
template <typename T>
Tensor<T> inject_memory(const Tensor<T>& z, const Tensor<T>& w_m);

/// h + z W_s at every position, ahead of the LM head.
template <typename T>
Tensor<T> inject_softmax(const Tensor<T>& last_hidden, const Tensor<T>& z, const Tensor<T>& w_s, std::size_t seq);

/// Four-term expansion of the attention logit between (e_i + z) and (e_j + z),
/// with <a, b> = (a W_q) . (b W_k).
template <typename T>
struct AttentionDecomposition {
    T token_token = 0;   // <e_i, e_j>
    T token_latent = 0;  // <e_i, z>
    T latent_token = 0;  // <z, e_j>
    T latent_latent = 0; // <z, z>
    T direct = 0;        // [(e_i + z) W_q] . [(e_j + z) W_k]

    T sum() const { return token_token + token_latent + latent_token + latent_latent; }
};

/// Vectors are [d]; W_q and W_k are [d, d] (row-vector convention).
/// Throws NumericError when the expansion disagrees with the direct logit
/// beyond floating-point tolerance.
template <typename T>
AttentionDecomposition<T> decompose_attention(const Tensor<T>& e_i, const Tensor<T>& e_j, const Tensor<T>& z,
                                              const Tensor<T>& w_q, const Tensor<T>& w_k);

} // namespace lvt
