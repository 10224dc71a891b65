#pragma once

#include <optional>
#include <vector>

#include "lvt/config.hpp"
#include "lvt/ops.hpp"
#include "lvt/parameters.hpp"

namespace lvt {

/// Bound applied to every predicted log-variance.
constexpr double kLogVarBound = 8.0;

/// Diagonal Gaussian, both fields [batch, p].
template <typename T>
struct GaussianParams {
    Tensor<T> mean;
    Tensor<T> log_var;
};

/// Weights of one latent layer: the summary recurrence and both heads.
/// Heads map row vectors, so a head with input width n has shape [n, 2p];
/// the first p output columns are the mean, the rest the log-variance.
template <typename T>
struct LatentHeadWeights {
    int layer = 0;
    Tensor<T> w_hh;    // [p, p]
    Tensor<T> w_ih;    // [p, p]
    Tensor<T> prior_w; // [p, 2p], or [p + d, 2p] when conditional
    Tensor<T> prior_b; // [2p], conditional only
    Tensor<T> post_w;  // [p + d, 2p], or [p + 2d, 2p] when conditional
    Tensor<T> post_b;  // [2p]
};

/// Independent weights for every layer that carries a latent.
template <typename T>
class LatentHeads {
public:
    LatentHeads(const ModelConfig& config, ParameterStore<T>& store, Rng& rng);
    const LatentHeadWeights<T>& at(int layer) const;
    const std::vector<LatentHeadWeights<T>>& layers() const { return layers_; }

private:
    std::vector<LatentHeadWeights<T>> layers_;
};

enum class ChainMode { Posterior, Prior };

template <typename T>
struct LatentLayer {
    int layer = 0;
    Tensor<T> z;        // [batch, p]
    Tensor<T> summary;  // running summary of lower-layer latents, [batch, p]
    GaussianParams<T> prior;
    std::optional<GaussianParams<T>> posterior;
};

template <typename T>
struct LatentChain {
    ChainMode mode = ChainMode::Prior;
    std::vector<LatentLayer<T>> layers;

    const LatentLayer<T>* find(int layer) const;
    /// Latent of `layer`; throws ContractError when the layer has none.
    const Tensor<T>& z(int layer) const;
    std::size_t batch() const { return layers.empty() ? 0 : layers.front().z.dim(0); }
};

/// tanh(summary_prev W_hh + z_prev W_ih); no bias.
template <typename T>
Tensor<T> advance_summary(const Tensor<T>& summary_prev, const Tensor<T>& z_prev, const LatentHeadWeights<T>& w);

/// Prior head. `condition` must be given iff the heads are conditional.
template <typename T>
GaussianParams<T> prior_params(const Tensor<T>& summary, const Tensor<T>* condition, const LatentHeadWeights<T>& w);

/// Posterior head over concat(summary, representation[, condition]).
template <typename T>
GaussianParams<T> posterior_params(const Tensor<T>& summary, const Tensor<T>& representation,
                                   const Tensor<T>* condition, const LatentHeadWeights<T>& w);

/// Reparameterized draw mean + exp(log_var / 2) * eps.
template <typename T>
Tensor<T> sample(const GaussianParams<T>& params, Rng& rng);

/// Runs the layer recurrence over the active layers.
///   representations: x^(l) for l = 1..L (required in Posterior mode)
///   conditions: c^(l) for l = 1..L (required iff config.conditional)
///   batch: row count, used when neither list is given
template <typename T>
LatentChain<T> build_chain(const std::vector<Tensor<T>>* representations, const std::vector<Tensor<T>>* conditions,
                           ChainMode mode, const ModelConfig& config, const LatentHeads<T>& heads, Rng& rng,
                           std::size_t batch = 0);

/// Chain holding only the given latents (one per active layer), used to
/// decode from fixed or interpolated codes.
template <typename T>
LatentChain<T> chain_from_latents(const ModelConfig& config, std::vector<Tensor<T>> latents);

} // namespace lvt
