#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "lvt/model.hpp"

namespace lvt {

enum class DecodeMode { Greedy, TopK };

struct GenerateOptions {
    DecodeMode mode = DecodeMode::Greedy;
    int top_k = 10;
    /// Cap on emitted tokens (EOS included); the decoder's max_len also applies.
    int max_new_tokens = 64;
};

/// Autoregressive decoding under fixed latents, one row per chain row.
/// `conditions` holds the source ids per row for conditional models. Each
/// output ends with EOS unless it hit a length cap.
template <typename T>
std::vector<std::vector<int>> generate(const VaeModel<T>& model, const LatentChain<T>& chain,
                                       const std::vector<std::vector<int>>& conditions, const GenerateOptions& options,
                                       Rng& rng);

/// Draws `count` prior chains and decodes them.
template <typename T>
std::vector<std::vector<int>> sample_from_prior(const VaeModel<T>& model, std::size_t count,
                                                const std::vector<std::vector<int>>& conditions,
                                                const GenerateOptions& options, Rng& rng);

template <typename T>
struct InterpolationStep {
    double tau = 0;
    std::vector<Tensor<T>> latents;  // one [1, p] per active layer
    std::vector<int> ids;
};

/// tau * z^(1) + (1 - tau) * z^(2), layer by layer.
template <typename T>
std::vector<Tensor<T>> mix_latents(const LatentChain<T>& first, const LatentChain<T>& second, double tau);

/// Samples posterior chains for both inputs, then greedily decodes the mixed
/// latents at every tau.
template <typename T>
std::vector<InterpolationStep<T>> interpolate(const VaeModel<T>& model, const Example& first, const Example& second,
                                              const std::vector<double>& taus, const GenerateOptions& options, Rng& rng);

/// Decoder attention of batch row `row` as CSV: layer, head, query_pos,
/// key_pos (-1 for the memory slot), weight. Padded keys and queries are skipped.
template <typename T>
void write_attention_csv(std::ostream& out, const DecodeOutput<T>& decoded, const TokenBatch& input, std::size_t row);

} // namespace lvt
