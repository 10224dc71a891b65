#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lvt/config.hpp"
#include "lvt/ops.hpp"
#include "lvt/parameters.hpp"

namespace lvt {

/// Right-padded batch of token ids, row-major [batch, seq].
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<int> ids;
    std::vector<std::uint8_t> valid;  // 0 on padding

    int id(std::size_t b, std::size_t t) const { return ids[b * seq + t]; }
};

/// Pads every sequence to the longest one with `pad_id`.
TokenBatch make_token_batch(const std::vector<std::vector<int>>& sequences, int pad_id);

template <typename T>
struct BlockWeights {
    Tensor<T> ln1_gain, ln1_bias;
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<T> ln2_gain, ln2_bias;
    Tensor<T> w_fc, b_fc, w_proj, b_proj;
};

/// Per-forward injection points. Every hook is optional.
template <typename T>
struct StackHooks {
    /// Transforms the [batch*seq, d] input embeddings.
    std::function<Tensor<T>(const Tensor<T>&)> embeddings;
    /// Replaces the value stream of a layer (1-based) before attention.
    std::function<Tensor<T>(int, const Tensor<T>&)> values;
    /// Hidden vector [batch, d] of an extra attendable slot for a layer, or an
    /// undefined tensor for none.
    std::function<Tensor<T>(int)> memory_slot;
    /// Transforms the final normalized hidden states before the LM head.
    std::function<Tensor<T>(const Tensor<T>&)> final_hidden;
};

template <typename T>
struct StackOptions {
    bool causal = true;
    bool mask_memory_slot = false;
    bool record_attention = false;
    StackHooks<T> hooks{};
};

/// Per-layer activations of one forward pass.
template <typename T>
struct LayerActivations {
    std::vector<Tensor<T>> hidden;             // h^(l), l = 1..L, each [batch*seq, d]
    Tensor<T> final_hidden;                    // after the final layer norm (and hook)
    std::vector<AttentionResult<T>> attention; // filled when record_attention is set
};

/// Pre-norm GPT-style stack with learned absolute positions and a tied LM head.
template <typename T>
class Transformer {
public:
    /// Registers weights under `prefix` in `store`.
    Transformer(const ModelConfig& config, ParameterStore<T>& store, const std::string& prefix, Rng& rng);

    LayerActivations<T> forward(const TokenBatch& batch, const StackOptions<T>& options) const;
    /// [rows, d] -> [rows, vocab] through the transposed token embedding.
    Tensor<T> lm_logits(const Tensor<T>& final_hidden) const;

    /// Attention sub-layer of `layer` applied to already-normalized input.
    AttentionResult<T> attention(int layer, const Tensor<T>& normed, const TokenBatch& batch,
                                 const StackOptions<T>& options) const;

    const BlockWeights<T>& block(int layer) const { return blocks_.at(static_cast<std::size_t>(layer - 1)); }
    const Tensor<T>& token_embedding() const { return token_embedding_; }
    const Tensor<T>& position_embedding() const { return position_embedding_; }
    const ModelConfig& config() const { return config_; }

private:
    ModelConfig config_;
    Tensor<T> token_embedding_;
    Tensor<T> position_embedding_;
    std::vector<BlockWeights<T>> blocks_;
    Tensor<T> lnf_gain_, lnf_bias_;
};

/// First-position hidden state of every layer, x^(l) with shape [batch, d].
template <typename T>
std::vector<Tensor<T>> encode_representation(const Transformer<T>& encoder, const TokenBatch& batch, bool causal);

} // namespace lvt
