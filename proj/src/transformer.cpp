#include "lvt/transformer.hpp"

#include <algorithm>

namespace lvt {

TokenBatch make_token_batch(const std::vector<std::vector<int>>& sequences, int pad_id) {
    if (sequences.empty()) throw ContractError("empty token batch");
    TokenBatch b;
    b.batch = sequences.size();
    for (const auto& s : sequences) b.seq = std::max(b.seq, s.size());
    if (b.seq == 0) throw ContractError("token batch of empty sequences");
    b.ids.assign(b.batch * b.seq, pad_id);
    b.valid.assign(b.batch * b.seq, 0);
    for (std::size_t i = 0; i < b.batch; ++i) {
        for (std::size_t t = 0; t < sequences[i].size(); ++t) {
            b.ids[i * b.seq + t] = sequences[i][t];
            b.valid[i * b.seq + t] = 1;
        }
    }
    return b;
}

template <typename T>
Transformer<T>::Transformer(const ModelConfig& config, ParameterStore<T>& store, const std::string& prefix, Rng& rng)
    : config_(config) {
    config_.validate();
    const auto d = static_cast<std::size_t>(config.hidden_dim);
    const auto v = static_cast<std::size_t>(config.vocab_size);
    constexpr double kStd = 0.02;
    token_embedding_ = store.normal(prefix + "token_embedding", {v, d}, kStd, rng);
    position_embedding_ = store.normal(prefix + "position_embedding", {static_cast<std::size_t>(config.max_len), d}, 0.01, rng);
    for (int l = 1; l <= config.num_layers; ++l) {
        const std::string p = prefix + "block" + std::to_string(l) + ".";
        BlockWeights<T> w;
        w.ln1_gain = store.constant(p + "ln1.gain", {d}, T(1));
        w.ln1_bias = store.constant(p + "ln1.bias", {d}, T(0));
        w.wq = store.normal(p + "attn.wq", {d, d}, kStd, rng);
        w.bq = store.constant(p + "attn.bq", {d}, T(0));
        w.wk = store.normal(p + "attn.wk", {d, d}, kStd, rng);
        w.bk = store.constant(p + "attn.bk", {d}, T(0));
        w.wv = store.normal(p + "attn.wv", {d, d}, kStd, rng);
        w.bv = store.constant(p + "attn.bv", {d}, T(0));
        w.wo = store.normal(p + "attn.wo", {d, d}, kStd, rng);
        w.bo = store.constant(p + "attn.bo", {d}, T(0));
        w.ln2_gain = store.constant(p + "ln2.gain", {d}, T(1));
        w.ln2_bias = store.constant(p + "ln2.bias", {d}, T(0));
        w.w_fc = store.normal(p + "mlp.w_fc", {d, 4 * d}, kStd, rng);
        w.b_fc = store.constant(p + "mlp.b_fc", {4 * d}, T(0));
        w.w_proj = store.normal(p + "mlp.w_proj", {4 * d, d}, kStd, rng);
        w.b_proj = store.constant(p + "mlp.b_proj", {d}, T(0));
        blocks_.push_back(std::move(w));
    }
    lnf_gain_ = store.constant(prefix + "ln_f.gain", {d}, T(1));
    lnf_bias_ = store.constant(prefix + "ln_f.bias", {d}, T(0));
}

template <typename T>
AttentionResult<T> Transformer<T>::attention(int layer, const Tensor<T>& normed, const TokenBatch& batch,
                                             const StackOptions<T>& options) const {
    const BlockWeights<T>& w = block(layer);
    const Tensor<T> q = add(matmul(normed, w.wq), w.bq);
    const Tensor<T> k = add(matmul(normed, w.wk), w.bk);
    Tensor<T> v = add(matmul(normed, w.wv), w.bv);
    if (options.hooks.values) v = options.hooks.values(layer, v);

    AttentionSpec<T> spec;
    spec.batch = batch.batch;
    spec.seq = batch.seq;
    spec.heads = static_cast<std::size_t>(config_.num_heads);
    spec.causal = options.causal;
    spec.key_valid = batch.valid;
    if (options.hooks.memory_slot) {
        if (Tensor<T> slot = options.hooks.memory_slot(layer); slot.defined()) {
            spec.slot_key = add(matmul(slot, w.wk), w.bk);
            spec.slot_value = add(matmul(slot, w.wv), w.bv);
            spec.slot_masked = options.mask_memory_slot;
        }
    }
    return multi_head_attention(q, k, v, spec);
}

template <typename T>
LayerActivations<T> Transformer<T>::forward(const TokenBatch& batch, const StackOptions<T>& options) const {
    if (batch.seq > static_cast<std::size_t>(config_.max_len)) {
        throw ContractError("sequence length " + std::to_string(batch.seq) + " exceeds max_len " + std::to_string(config_.max_len));
    }
    for (int id : batch.ids) {
        if (id < 0 || id >= config_.vocab_size) throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
    }
    std::vector<int> positions(batch.batch * batch.seq);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % batch.seq);

    Tensor<T> h = add(gather_rows(token_embedding_, batch.ids), gather_rows(position_embedding_, positions));
    if (options.hooks.embeddings) h = options.hooks.embeddings(h);

    LayerActivations<T> acts;
    for (int l = 1; l <= config_.num_layers; ++l) {
        const BlockWeights<T>& w = block(l);
        AttentionResult<T> att = attention(l, layer_norm(h, w.ln1_gain, w.ln1_bias), batch, options);
        h = add(h, add(matmul(att.out, w.wo), w.bo));
        const Tensor<T> m = layer_norm(h, w.ln2_gain, w.ln2_bias);
        h = add(h, add(matmul(gelu(add(matmul(m, w.w_fc), w.b_fc)), w.w_proj), w.b_proj));
        acts.hidden.push_back(h);
        if (options.record_attention) acts.attention.push_back(std::move(att));
    }
    acts.final_hidden = layer_norm(h, lnf_gain_, lnf_bias_);
    if (options.hooks.final_hidden) acts.final_hidden = options.hooks.final_hidden(acts.final_hidden);
    return acts;
}

template <typename T>
Tensor<T> Transformer<T>::lm_logits(const Tensor<T>& final_hidden) const {
    return matmul(final_hidden, token_embedding_, false, true);
}

template <typename T>
std::vector<Tensor<T>> encode_representation(const Transformer<T>& encoder, const TokenBatch& batch, bool causal) {
    if (batch.seq == 0 || batch.batch == 0) throw ContractError("encode_representation of an empty sequence");
    StackOptions<T> options;
    options.causal = causal;
    const LayerActivations<T> acts = encoder.forward(batch, options);
    std::vector<int> first(batch.batch);
    for (std::size_t b = 0; b < batch.batch; ++b) first[b] = static_cast<int>(b * batch.seq);
    std::vector<Tensor<T>> reps;
    reps.reserve(acts.hidden.size());
    for (const auto& h : acts.hidden) reps.push_back(gather_rows(h, first));
    return reps;
}

template class Transformer<float>;
template class Transformer<double>;
template std::vector<Tensor<float>> encode_representation(const Transformer<float>&, const TokenBatch&, bool);
template std::vector<Tensor<double>> encode_representation(const Transformer<double>&, const TokenBatch&, bool);

} // namespace lvt
