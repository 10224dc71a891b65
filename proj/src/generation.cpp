#include "lvt/generation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lvt {

namespace {

template <typename T>
int pick_token(std::span<const T> logits, const GenerateOptions& options, Rng& rng) {
    if (options.mode == DecodeMode::Greedy || options.top_k == 1) {
        return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    }
    if (options.top_k < 1) throw ConfigError("top_k must be at least 1");
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(options.top_k), logits.size());
    std::vector<int> order(logits.size());
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](int a, int b) { return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)]; });
    const double mx = static_cast<double>(logits[static_cast<std::size_t>(order[0])]);
    std::vector<double> w(k);
    double z = 0;
    for (std::size_t i = 0; i < k; ++i) z += w[i] = std::exp(static_cast<double>(logits[static_cast<std::size_t>(order[i])]) - mx);
    double u = rng.uniform() * z;
    for (std::size_t i = 0; i < k; ++i) {
        u -= w[i];
        if (u < 0) return order[i];
    }
    return order[k - 1];
}

} // namespace

template <typename T>
std::vector<std::vector<int>> generate(const VaeModel<T>& model, const LatentChain<T>& chain,
                                       const std::vector<std::vector<int>>& conditions, const GenerateOptions& options,
                                       Rng& rng) {
    NoGradGuard no_grad;
    const ModelConfig& cfg = model.config();
    const SpecialTokens& sp = cfg.specials;
    const std::size_t rows = chain.batch();
    if (cfg.conditional && conditions.size() != rows) throw ContractError("generate: one condition per row required");
    if (options.max_new_tokens < 1) throw ConfigError("max_new_tokens must be at least 1");

    std::vector<std::vector<int>> prefix(rows, std::vector<int>{sp.bos});
    if (cfg.conditional) {
        for (std::size_t r = 0; r < rows; ++r) {
            prefix[r].insert(prefix[r].end(), conditions[r].begin(), conditions[r].end());
            prefix[r].push_back(sp.sep);
        }
    }
    std::vector<std::vector<int>> out(rows);
    std::vector<bool> done(rows, false);
    const auto cap = static_cast<std::size_t>(options.max_new_tokens);
    for (std::size_t r = 0; r < rows; ++r) {
        if (prefix[r].size() >= static_cast<std::size_t>(cfg.max_len)) done[r] = true;
    }
    while (std::find(done.begin(), done.end(), false) != done.end()) {
        // Rows are decoded together; finished rows keep their last input and
        // are ignored.
        std::vector<std::vector<int>> inputs(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            inputs[r] = prefix[r];
            inputs[r].insert(inputs[r].end(), out[r].begin(), out[r].end());
            if (done[r] && inputs[r].size() > static_cast<std::size_t>(cfg.max_len)) inputs[r].resize(static_cast<std::size_t>(cfg.max_len));
        }
        const TokenBatch batch = make_token_batch(inputs, sp.pad);
        const DecodeOutput<T> dec = model.decode(batch, &chain);
        const auto logits = dec.logits.data();
        const auto V = static_cast<std::size_t>(cfg.vocab_size);
        for (std::size_t r = 0; r < rows; ++r) {
            if (done[r]) continue;
            const std::size_t pos = inputs[r].size() - 1;
            const int tok = pick_token<T>(logits.subspan((r * batch.seq + pos) * V, V), options, rng);
            out[r].push_back(tok);
            if (tok == sp.eos || out[r].size() >= cap || prefix[r].size() + out[r].size() >= static_cast<std::size_t>(cfg.max_len)) {
                done[r] = true;
            }
        }
    }
    return out;
}

template <typename T>
std::vector<std::vector<int>> sample_from_prior(const VaeModel<T>& model, std::size_t count,
                                                const std::vector<std::vector<int>>& conditions,
                                                const GenerateOptions& options, Rng& rng) {
    NoGradGuard no_grad;
    if (!model.config().conditional) return generate(model, model.prior_chain(count, rng), conditions, options, rng);
    std::vector<Example> ex;
    for (const auto& c : conditions) ex.push_back({{}, c});
    const ModelBatch batch = make_model_batch(ex, model.config());
    return generate(model, model.prior_chain(batch, rng), conditions, options, rng);
}

template <typename T>
std::vector<Tensor<T>> mix_latents(const LatentChain<T>& first, const LatentChain<T>& second, double tau) {
    if (first.layers.size() != second.layers.size()) throw ContractError("mix_latents: chains differ in depth");
    std::vector<Tensor<T>> out;
    for (std::size_t i = 0; i < first.layers.size(); ++i) {
        const Tensor<T>& a = first.layers[i].z;
        const Tensor<T>& b = second.layers[i].z;
        if (a.shape() != b.shape()) throw DimensionError("mix_latents: latent shapes differ");
        std::vector<T> v(a.numel());
        for (std::size_t k = 0; k < v.size(); ++k) {
            v[k] = static_cast<T>(tau * static_cast<double>(a.at(k)) + (1.0 - tau) * static_cast<double>(b.at(k)));
        }
        out.push_back(Tensor<T>::from_vector(a.shape(), std::move(v)));
    }
    return out;
}

template <typename T>
std::vector<InterpolationStep<T>> interpolate(const VaeModel<T>& model, const Example& first, const Example& second,
                                              const std::vector<double>& taus, const GenerateOptions& options, Rng& rng) {
    NoGradGuard no_grad;
    if (model.config().conditional && first.condition != second.condition) {
        throw ContractError("interpolate: conditional endpoints must share a condition");
    }
    const LatentChain<T> c1 = model.posterior_chain(make_model_batch({first}, model.config()), rng);
    const LatentChain<T> c2 = model.posterior_chain(make_model_batch({second}, model.config()), rng);
    GenerateOptions greedy = options;
    greedy.mode = DecodeMode::Greedy;
    std::vector<InterpolationStep<T>> out;
    for (double tau : taus) {
        InterpolationStep<T> s;
        s.tau = tau;
        s.latents = mix_latents(c1, c2, tau);
        const LatentChain<T> mixed = chain_from_latents(model.config(), s.latents);
        Rng unused(0);
        s.ids = generate(model, mixed, {first.condition}, greedy, unused).front();
        out.push_back(std::move(s));
    }
    return out;
}

template <typename T>
void write_attention_csv(std::ostream& out, const DecodeOutput<T>& decoded, const TokenBatch& input, std::size_t row) {
    if (row >= input.batch) throw ContractError("attention export: row out of range");
    if (decoded.activations.attention.empty()) throw ContractError("attention export needs a decode with record_attention");
    out << "layer,head,query_pos,key_pos,weight\n";
    out.precision(9);
    for (std::size_t l = 0; l < decoded.activations.attention.size(); ++l) {
        const AttentionResult<T>& a = decoded.activations.attention[l];
        const std::size_t S = input.seq, K = a.keys;
        const std::size_t H = a.weights->size() / (input.batch * S * K);
        const std::size_t offset = a.has_slot ? 1 : 0;
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t q = 0; q < S; ++q) {
                if (!input.valid[row * S + q]) continue;
                const T* w = a.weights->data() + ((row * H + h) * S + q) * K;
                for (std::size_t k = 0; k < K; ++k) {
                    const long key = static_cast<long>(k) - static_cast<long>(offset);
                    if (key >= 0 && (!input.valid[row * S + static_cast<std::size_t>(key)] || static_cast<std::size_t>(key) > q)) continue;
                    out << (l + 1) << ',' << h << ',' << q << ',' << key << ',' << static_cast<double>(w[k]) << '\n';
                }
            }
        }
    }
}

#define LVT_INSTANTIATE_GENERATION(T)                                                                                \
    template std::vector<std::vector<int>> generate<T>(const VaeModel<T>&, const LatentChain<T>&,                    \
                                                       const std::vector<std::vector<int>>&, const GenerateOptions&, \
                                                       Rng&);                                                        \
    template std::vector<std::vector<int>> sample_from_prior<T>(const VaeModel<T>&, std::size_t,                     \
                                                                const std::vector<std::vector<int>>&,                \
                                                                const GenerateOptions&, Rng&);                       \
    template std::vector<Tensor<T>> mix_latents<T>(const LatentChain<T>&, const LatentChain<T>&, double);            \
    template std::vector<InterpolationStep<T>> interpolate<T>(const VaeModel<T>&, const Example&, const Example&,    \
                                                              const std::vector<double>&, const GenerateOptions&,    \
                                                              Rng&);                                                 \
    template void write_attention_csv<T>(std::ostream&, const DecodeOutput<T>&, const TokenBatch&, std::size_t);

LVT_INSTANTIATE_GENERATION(float)
LVT_INSTANTIATE_GENERATION(double)

} // namespace lvt
