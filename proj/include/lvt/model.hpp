#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "lvt/fusion.hpp"
#include "lvt/latent_chain.hpp"
#include "lvt/objective.hpp"
#include "lvt/transformer.hpp"

namespace lvt {

/// One datum as raw token ids, without special tokens. `condition` is used
/// only by conditional models.
struct Example {
    std::vector<int> text;
    std::vector<int> condition;
};

/// Model-ready views of a batch of examples.
///   encoder_input:   [BOS, x.., EOS]
///   decoder_input:   [BOS, x..]            or [BOS, c.., SEP, x..] when conditional
///   targets:         next token at every decoder position, x then EOS;
///                    kIgnoreTarget on padding and on the condition prefix
///   condition_input: [BOS, c.., EOS]       conditional only
struct ModelBatch {
    std::size_t batch = 0;
    TokenBatch encoder_input;
    TokenBatch decoder_input;
    std::vector<int> targets;
    std::optional<TokenBatch> condition_input;
    std::vector<std::size_t> target_counts;
};

ModelBatch make_model_batch(const std::vector<Example>& examples, const ModelConfig& config);

struct DecodeOptions {
    bool mask_memory_slot = false;
    bool record_attention = false;
};

template <typename T>
struct DecodeOutput {
    Tensor<T> logits;  // [batch*seq, vocab]
    LayerActivations<T> activations;
};

/// Encoder, latent chain, injection weights and decoder of one configuration.
template <typename T>
class VaeModel {
public:
    VaeModel(const ModelConfig& config, std::uint64_t init_seed);
    VaeModel(const VaeModel&) = delete;
    VaeModel& operator=(const VaeModel&) = delete;

    const ModelConfig& config() const { return config_; }
    ParameterStore<T>& parameters() { return store_; }
    const ParameterStore<T>& parameters() const { return store_; }
    const Transformer<T>& decoder() const { return decoder_; }
    const Transformer<T>& encoder() const { return encoder_ ? *encoder_ : decoder_; }
    const LatentHeads<T>& latent_heads() const { return heads_; }
    const FusionWeights<T>& fusion() const { return fusion_; }
    const std::vector<BowHead<T>>& bow_heads() const { return bow_; }

    /// x^(l) for l = 1..L.
    std::vector<Tensor<T>> encode(const TokenBatch& input) const;
    /// c^(l) for conditional models, nullopt otherwise.
    std::optional<std::vector<Tensor<T>>> encode_condition(const ModelBatch& batch) const;

    LatentChain<T> posterior_chain(const ModelBatch& batch, Rng& rng) const;
    LatentChain<T> prior_chain(const ModelBatch& batch, Rng& rng) const;
    /// Prior chain for unconditional models, one row per sample.
    LatentChain<T> prior_chain(std::size_t count, Rng& rng) const;

    /// Decoder pass with the chain's latents injected; a null chain runs the
    /// plain language model.
    DecodeOutput<T> decode(const TokenBatch& input, const LatentChain<T>* chain, const DecodeOptions& options = {}) const;

    struct LossOptions {
        ObjectiveOptions objective{};
        bool use_bow = false;
    };
    LossBreakdown<T> loss(const ModelBatch& batch, Rng& rng, const LossOptions& options) const;

    /// Single-sample log p(x, z) - log q(z | x) per example, z drawn from the
    /// posterior chain. No graph is recorded.
    std::vector<double> log_importance_weights(const ModelBatch& batch, Rng& rng) const;

    StackOptions<T> decoder_stack_options(const LatentChain<T>* chain, std::size_t seq, const DecodeOptions& options) const;

private:
    ModelConfig config_;
    ParameterStore<T> store_;
    Rng init_rng_;
    Transformer<T> decoder_;
    std::unique_ptr<Transformer<T>> encoder_;
    LatentHeads<T> heads_;
    FusionWeights<T> fusion_;
    std::vector<BowHead<T>> bow_;
};

/// Per-row log N(z; mean, exp(log_var)), summed over dimensions.
template <typename T>
std::vector<double> gaussian_log_density(const Tensor<T>& z, const GaussianParams<T>& params);

} // namespace lvt
