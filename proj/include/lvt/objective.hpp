#pragma once

#include <optional>
#include <span>
#include <vector>

#include "lvt/config.hpp"
#include "lvt/latent_chain.hpp"

namespace lvt {

/// Closed-form KL(q || p) between diagonal Gaussians, summed over latent
/// dimensions. Returns [batch].
template <typename T>
Tensor<T> gaussian_kl(const GaussianParams<T>& q, const GaussianParams<T>& p);

template <typename T>
struct LayerKl {
    int layer = 0;
    Tensor<T> value;  // batch mean, scalar
};

/// Per-layer KL between each layer's posterior and its prior along the
/// sampled chain, for every layer of the chain. Throws on a Prior-mode chain.
template <typename T>
std::vector<LayerKl<T>> layerwise_kl(const LatentChain<T>& chain);

/// Whether layer `layer`'s KL term enters the loss under `config.kl_layers`.
bool kl_layer_selected(const ModelConfig& config, int layer);

/// Token NLL summed per sequence and averaged over `batch` sequences.
/// `targets` holds kIgnoreTarget on padding; every sequence needs at least one
/// real target.
template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& logits, std::span<const int> targets, std::size_t batch);

/// KL weight at `step`. Cyclical mode needs a positive period.
double beta_at(std::int64_t step, const AnnealSchedule& schedule);

/// max(term, lambda) per term.
template <typename T>
std::vector<Tensor<T>> apply_free_bits(const std::vector<Tensor<T>>& terms, double lambda);

/// Linear vocabulary head per active layer for the bag-of-words loss.
template <typename T>
struct BowHead {
    int layer = 0;
    Tensor<T> weight;  // [p, vocab]
    Tensor<T> bias;    // [vocab]
};

template <typename T>
std::vector<BowHead<T>> make_bow_heads(const ModelConfig& config, ParameterStore<T>& store, Rng& rng);

/// Mean over the chain's layers of the per-sequence cross-entropy of every
/// target token against a position-independent distribution predicted from
/// z_l, averaged over the batch. `targets` is [batch, seq] row-major with
/// kIgnoreTarget on padding.
template <typename T>
Tensor<T> bow_loss(const LatentChain<T>& chain, const std::vector<BowHead<T>>& heads, std::span<const int> targets,
                   std::size_t seq);

template <typename T>
struct LossBreakdown {
    Tensor<T> reconstruction;
    std::vector<LayerKl<T>> kl_per_layer;  // raw, every chain layer
    Tensor<T> kl_total;                    // raw, selected layers only
    double beta = 1.0;
    std::optional<Tensor<T>> bow;
    Tensor<T> total;
};

/// Scalar snapshot of a LossBreakdown for logging.
struct LossValues {
    double beta = 0;
    double total = 0;
    double reconstruction = 0;
    double kl_total = 0;
    std::vector<double> kl_per_layer;  // indexed by layer - 1; 0 for layers without a latent
    std::optional<double> bow;
};

template <typename T>
LossValues loss_values(const LossBreakdown<T>& loss, int num_layers);

struct ObjectiveOptions {
    double beta = 1.0;
    std::optional<double> free_bits;
    double bow_weight = 1.0;
};

/// total = recon + beta * sum(selected, thresholded KL) + bow_weight * bow.
template <typename T>
LossBreakdown<T> assemble_loss(const ModelConfig& config, Tensor<T> reconstruction, std::vector<LayerKl<T>> kl,
                               std::optional<Tensor<T>> bow, const ObjectiveOptions& options);

} // namespace lvt
