#include "lvt/model.hpp"

#include <cmath>
#include <numbers>

namespace lvt {

ModelBatch make_model_batch(const std::vector<Example>& examples, const ModelConfig& config) {
    if (examples.empty()) throw ContractError("make_model_batch: empty batch");
    const SpecialTokens& sp = config.specials;
    const auto max_len = static_cast<std::size_t>(config.max_len);
    std::vector<std::vector<int>> enc, dec, cond, tgt;
    ModelBatch out;
    out.batch = examples.size();
    for (const Example& ex : examples) {
        for (int id : ex.text) {
            if (id < 0 || id >= config.vocab_size) throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
        }
        std::vector<int> e{sp.bos};
        e.insert(e.end(), ex.text.begin(), ex.text.end());
        e.push_back(sp.eos);

        std::vector<int> d{sp.bos};
        std::vector<int> t;
        if (config.conditional) {
            std::vector<int> c{sp.bos};
            c.insert(c.end(), ex.condition.begin(), ex.condition.end());
            c.push_back(sp.eos);
            if (c.size() > max_len) throw ContractError("condition longer than max_len");
            cond.push_back(std::move(c));
            d.insert(d.end(), ex.condition.begin(), ex.condition.end());
            d.push_back(sp.sep);
            t.assign(d.size() - 1, kIgnoreTarget);
        }
        d.insert(d.end(), ex.text.begin(), ex.text.end());
        t.insert(t.end(), ex.text.begin(), ex.text.end());
        t.push_back(sp.eos);
        if (e.size() > max_len || d.size() > max_len) throw ContractError("example longer than max_len");
        out.target_counts.push_back(ex.text.size() + 1);
        enc.push_back(std::move(e));
        dec.push_back(std::move(d));
        tgt.push_back(std::move(t));
    }
    out.encoder_input = make_token_batch(enc, sp.pad);
    out.decoder_input = make_token_batch(dec, sp.pad);
    // Padded to the decoder width with ignored targets.
    const std::size_t seq = out.decoder_input.seq;
    out.targets.assign(out.batch * seq, kIgnoreTarget);
    for (std::size_t b = 0; b < out.batch; ++b) std::copy(tgt[b].begin(), tgt[b].end(), out.targets.begin() + static_cast<std::ptrdiff_t>(b * seq));
    if (config.conditional) out.condition_input = make_token_batch(cond, sp.pad);
    return out;
}

namespace {
ModelConfig validated(const ModelConfig& config) {
    config.validate();
    return config;
}
} // namespace

template <typename T>
VaeModel<T>::VaeModel(const ModelConfig& config, std::uint64_t init_seed)
    : config_(validated(config)),
      init_rng_(init_seed),
      decoder_(config_, store_, config_.share_encoder_decoder ? "transformer." : "decoder.", init_rng_),
      encoder_(config_.share_encoder_decoder ? nullptr : std::make_unique<Transformer<T>>(config_, store_, "encoder.", init_rng_)),
      heads_(config_, store_, init_rng_),
      fusion_(make_fusion_weights(config_, store_, init_rng_)),
      bow_(make_bow_heads(config_, store_, init_rng_)) {}

template <typename T>
std::vector<Tensor<T>> VaeModel<T>::encode(const TokenBatch& input) const {
    return encode_representation(encoder(), input, config_.encoder_attention == EncoderAttention::Causal);
}

template <typename T>
std::optional<std::vector<Tensor<T>>> VaeModel<T>::encode_condition(const ModelBatch& batch) const {
    if (!config_.conditional) return std::nullopt;
    if (!batch.condition_input) throw ContractError("conditional model needs a condition batch");
    return encode(*batch.condition_input);
}

template <typename T>
LatentChain<T> VaeModel<T>::posterior_chain(const ModelBatch& batch, Rng& rng) const {
    const std::vector<Tensor<T>> reps = encode(batch.encoder_input);
    const auto conds = encode_condition(batch);
    return build_chain(&reps, conds ? &*conds : nullptr, ChainMode::Posterior, config_, heads_, rng);
}

template <typename T>
LatentChain<T> VaeModel<T>::prior_chain(const ModelBatch& batch, Rng& rng) const {
    const auto conds = encode_condition(batch);
    return build_chain<T>(nullptr, conds ? &*conds : nullptr, ChainMode::Prior, config_, heads_, rng, batch.batch);
}

template <typename T>
LatentChain<T> VaeModel<T>::prior_chain(std::size_t count, Rng& rng) const {
    if (config_.conditional) throw ContractError("conditional prior needs condition inputs");
    return build_chain<T>(nullptr, nullptr, ChainMode::Prior, config_, heads_, rng, count);
}

template <typename T>
StackOptions<T> VaeModel<T>::decoder_stack_options(const LatentChain<T>* chain, std::size_t seq,
                                                   const DecodeOptions& options) const {
    StackOptions<T> so;
    so.causal = true;
    so.mask_memory_slot = options.mask_memory_slot;
    so.record_attention = options.record_attention;
    if (!chain) return so;
    const int top = config_.num_layers;
    switch (config_.paradigm) {
    case Paradigm::Della:
        so.hooks.values = [this, chain, seq](int layer, const Tensor<T>& v) {
            if (!config_.is_active(layer)) return v;
            return fuse_lowrank(v, chain->z(layer), fusion_.della_layer(layer), seq);
        };
        break;
    case Paradigm::Embedding:
        so.hooks.embeddings = [this, chain, seq, top](const Tensor<T>& e) {
            return inject_embedding(e, chain->z(top), fusion_.embedding, seq);
        };
        break;
    case Paradigm::Memory:
        so.hooks.memory_slot = [this, chain, top](int layer) {
            return inject_memory(chain->z(top), fusion_.memory.at(static_cast<std::size_t>(layer - 1)));
        };
        break;
    case Paradigm::Softmax:
        so.hooks.final_hidden = [this, chain, seq, top](const Tensor<T>& h) {
            return inject_softmax(h, chain->z(top), fusion_.softmax, seq);
        };
        break;
    }
    return so;
}

template <typename T>
DecodeOutput<T> VaeModel<T>::decode(const TokenBatch& input, const LatentChain<T>* chain, const DecodeOptions& options) const {
    if (chain && chain->batch() != input.batch) throw DimensionError("decode: chain batch does not match input batch");
    DecodeOutput<T> out;
    out.activations = decoder_.forward(input, decoder_stack_options(chain, input.seq, options));
    out.logits = decoder_.lm_logits(out.activations.final_hidden);
    return out;
}

template <typename T>
LossBreakdown<T> VaeModel<T>::loss(const ModelBatch& batch, Rng& rng, const LossOptions& options) const {
    const LatentChain<T> chain = posterior_chain(batch, rng);
    const DecodeOutput<T> dec = decode(batch.decoder_input, &chain);
    Tensor<T> recon = reconstruction_loss(dec.logits, batch.targets, batch.batch);
    std::optional<Tensor<T>> bow;
    if (options.use_bow) bow = bow_loss(chain, bow_, batch.targets, batch.decoder_input.seq);
    return assemble_loss(config_, std::move(recon), layerwise_kl(chain), std::move(bow), options.objective);
}

template <typename T>
std::vector<double> gaussian_log_density(const Tensor<T>& z, const GaussianParams<T>& params) {
    if (z.shape() != params.mean.shape() || z.rank() != 2) throw DimensionError("gaussian_log_density: shape mismatch");
    const std::size_t rows = z.dim(0), p = z.dim(1);
    const auto zv = z.data(), mu = params.mean.data(), lv = params.log_var.data();
    const double log_2pi = std::log(2.0 * std::numbers::pi);
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0;
        for (std::size_t i = 0; i < p; ++i) {
            const std::size_t k = r * p + i;
            const double diff = static_cast<double>(zv[k]) - static_cast<double>(mu[k]);
            const double log_var = static_cast<double>(lv[k]);
            acc += -0.5 * (log_2pi + log_var + diff * diff * std::exp(-log_var));
        }
        out[r] = acc;
    }
    return out;
}

template <typename T>
std::vector<double> VaeModel<T>::log_importance_weights(const ModelBatch& batch, Rng& rng) const {
    NoGradGuard no_grad;
    const LatentChain<T> chain = posterior_chain(batch, rng);
    const DecodeOutput<T> dec = decode(batch.decoder_input, &chain);
    const Tensor<T> nll = nll_rows(dec.logits, batch.targets);
    const std::size_t seq = batch.decoder_input.seq;
    std::vector<double> out(batch.batch, 0.0);
    const auto nv = nll.data();
    for (std::size_t b = 0; b < batch.batch; ++b) {
        for (std::size_t t = 0; t < seq; ++t) out[b] -= static_cast<double>(nv[b * seq + t]);
    }
    for (const auto& layer : chain.layers) {
        const auto lp = gaussian_log_density(layer.z, layer.prior);
        const auto lq = gaussian_log_density(layer.z, *layer.posterior);
        for (std::size_t b = 0; b < batch.batch; ++b) out[b] += lp[b] - lq[b];
    }
    for (double w : out) {
        if (!std::isfinite(w)) throw NumericError("non-finite importance weight");
    }
    return out;
}

template class VaeModel<float>;
template class VaeModel<double>;
template std::vector<double> gaussian_log_density<float>(const Tensor<float>&, const GaussianParams<float>&);
template std::vector<double> gaussian_log_density<double>(const Tensor<double>&, const GaussianParams<double>&);

} // namespace lvt
