#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "lvt/tensor.hpp"

namespace lvt {

// Linear algebra -------------------------------------------------------------

/// Matrix product over the last two axes. Supported forms:
///   [m,k] x [k,n]; [..., m, k] x [k, n] (leading axes of `a` are batch rows);
///   [B,m,k] x [B,k,n] with either batch extent allowed to be 1.
/// Transpose flags apply to the trailing two axes.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false, bool transpose_b = false);

// Elementwise (numpy broadcasting) --------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& x, T s);
template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> square(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
/// Throws DomainError on any non-positive entry.
template <typename T> Tensor<T> log(const Tensor<T>& x);
/// tanh approximation used by GPT-2.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
/// Gradient is zero where the clamp is active.
template <typename T> Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);
/// max(x, floor) elementwise; gradient is zero where the floor wins.
template <typename T> Tensor<T> maximum(const Tensor<T>& x, T floor);

// Reductions and normalization --------------------------------------------------

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// Sums the last axis away; a rank-1 input yields shape [1].
template <typename T> Tensor<T> sum_last(const Tensor<T>& x);
/// Max-subtracted softmax along `axis` (negative counts from the back).
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis = -1);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

// Indexing and layout -----------------------------------------------------------

/// Rows of a [V, d] table selected by index; backward scatter-adds.
template <typename T> Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> rows);
/// [B, d] -> [B*times, d], each row repeated `times` times consecutively.
template <typename T> Tensor<T> repeat_rows(const Tensor<T>& x, std::size_t times);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// Concatenation along the last axis of rank-2 tensors with equal row counts.
template <typename T> Tensor<T> concat_last(const std::vector<Tensor<T>>& parts);
/// Columns [begin, end) of a rank-2 tensor.
template <typename T> Tensor<T> slice_last(const Tensor<T>& x, std::size_t begin, std::size_t end);

// Losses ------------------------------------------------------------------------

constexpr int kIgnoreTarget = -1;

/// Per-row negative log-likelihood of `targets` under softmax(logits) for
/// [N, V] logits. Rows whose target is kIgnoreTarget yield 0.
template <typename T> Tensor<T> nll_rows(const Tensor<T>& logits, std::span<const int> targets);

// Attention ---------------------------------------------------------------------

template <typename T>
struct AttentionSpec {
    std::size_t batch = 1;
    std::size_t seq = 1;
    std::size_t heads = 1;
    bool causal = true;
    /// batch*seq flags; empty means every key is valid.
    std::vector<std::uint8_t> key_valid;
    /// Optional extra key/value slot per batch row ([batch, d]); prepended
    /// before position 0 and visible from every query.
    Tensor<T> slot_key;
    Tensor<T> slot_value;
    /// Keep the slot in the weight layout but exclude it from the softmax.
    bool slot_masked = false;
};

template <typename T>
struct AttentionResult {
    Tensor<T> out;  // [batch*seq, d]
    /// [batch, heads, seq, keys]; key 0 is the slot when one is present.
    std::shared_ptr<const std::vector<T>> weights;
    std::size_t keys = 0;
    bool has_slot = false;
};

/// Multi-head scaled dot-product attention over [batch*seq, d] projections,
/// scaling logits by 1/sqrt(d / heads).
template <typename T>
AttentionResult<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        const AttentionSpec<T>& spec);

} // namespace lvt
