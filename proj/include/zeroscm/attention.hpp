#pragma once

#include <cmath>
#include <random>
#include <string>

#include "zeroscm/scm.hpp"
#include "zeroscm/tape.hpp"

namespace zeroscm {

enum class AttnKind { Softmax, Dag };

struct AttentionDims {
    int model_dim = 64;
    int heads = 4;
    int head_dim() const {
        if (model_dim % heads != 0) throw ShapeError("model_dim not divisible by head count");
        return model_dim / heads;
    }
};

struct BlockDims {
    AttentionDims attn;
    int ff_hidden = 128;  // paper preset: 2 x model_dim
};

// ---- initialization helpers ----

template <typename T>
Tensor<T> xavier_uniform(int64_t fan_in, int64_t fan_out, std::mt19937_64& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Tensor<T> t({fan_in, fan_out});
    for (T& v : t.data) v = static_cast<T>(u(rng));
    return t;
}

template <typename T>
void init_linear(ParamRegistry<T>& reg, const std::string& prefix, int64_t in, int64_t out,
                 std::mt19937_64& rng, bool zero = false) {
    reg.create(prefix + ".w", zero ? Tensor<T>::zeros({in, out}) : xavier_uniform<T>(in, out, rng));
    reg.create(prefix + ".b", Tensor<T>::zeros({out}));
}

template <typename T>
int apply_linear(Tape<T>& tp, int x, const std::string& prefix) {
    return tp.affine(x, tp.param(prefix + ".w"), tp.param(prefix + ".b"));
}

template <typename T>
void init_layer_norm(ParamRegistry<T>& reg, const std::string& prefix, int64_t dim) {
    reg.create(prefix + ".g", Tensor<T>::full({dim}, T(1)));
    reg.create(prefix + ".b", Tensor<T>::zeros({dim}));
}

/// Layer normalization with a learned per-channel scale and shift.
template <typename T>
int layer_norm_affine(Tape<T>& tp, int x, const std::string& prefix) {
    int y = tp.layer_norm(x);
    return tp.add(tp.mul(y, tp.param(prefix + ".g")), tp.param(prefix + ".b"));
}

// ---- attention matrices (Q, K already projected; last two axes = tokens x channels) ----

template <typename T>
int attention_weights(Tape<T>& tp, int q, int k, const Tensor<uint8_t>& blocked, AttnKind kind) {
    const Tensor<T>& qv = tp.value(q);
    int64_t channels = qv.shape.back();
    int kt = tp.transpose(k, tp.value(k).rank() - 2, tp.value(k).rank() - 1);
    int scores = tp.scale(tp.matmul(q, kt), T(1) / static_cast<T>(std::sqrt(double(channels))));
    return kind == AttnKind::Softmax ? tp.softmax_rows(scores, blocked)
                                     : tp.dag_softmax_rows(scores, blocked);
}

/// Row-stochastic-or-zero attention matrix: softmax over the unmasked
/// entries; a fully masked row comes out all-zero.
template <typename T>
int standard_attention_matrix(Tape<T>& tp, int q, int k, const Tensor<uint8_t>& blocked) {
    return attention_weights(tp, q, k, blocked, AttnKind::Softmax);
}

/// Same numerator; the row denominator is max(row sum, 1), so rows sum in
/// [0, 1] and masked-out root rows stay exactly zero.
template <typename T>
int dag_attention_matrix(Tape<T>& tp, int q, int k, const Tensor<uint8_t>& blocked) {
    return attention_weights(tp, q, k, blocked, AttnKind::Dag);
}

// ---- multi-head attention ----

// q/k/v projections carry no bias: a key bias is a per-row constant that the
// softmax normalizer cancels outright, leaving a dead parameter
template <typename T>
void init_attention_params(ParamRegistry<T>& reg, const std::string& prefix,
                           const AttentionDims& dims, std::mt19937_64& rng) {
    reg.create(prefix + ".q.w", xavier_uniform<T>(dims.model_dim, dims.model_dim, rng));
    reg.create(prefix + ".k.w", xavier_uniform<T>(dims.model_dim, dims.model_dim, rng));
    reg.create(prefix + ".v.w", xavier_uniform<T>(dims.model_dim, dims.model_dim, rng));
    init_linear(reg, prefix + ".o", dims.model_dim, dims.model_dim, rng);
}

/// queries (B, tq, dm), keys_values (B, tk, dm) -> (B, tq, dm).
/// `blocked` is (tq, tk) with 1 = no attention, shared across batch and heads.
template <typename T>
int multi_head_attention(Tape<T>& tp, int queries, int keys_values,
                         const Tensor<uint8_t>& blocked, const std::string& prefix,
                         const AttentionDims& dims, AttnKind kind) {
    const auto& qshape = tp.value(queries).shape;
    const auto& kshape = tp.value(keys_values).shape;
    if (qshape.size() != 3 || kshape.size() != 3)
        throw ShapeError("multi_head_attention expects (batch, tokens, channels)");
    int64_t batch = qshape[0], tq = qshape[1], dm = qshape[2], tk = kshape[1];
    if (dm != dims.model_dim || kshape[2] != dm || kshape[0] != batch)
        throw ShapeError("multi_head_attention: dims mismatch");
    int64_t heads = dims.heads, hd = dims.head_dim();

    auto split_heads = [&](int x, int64_t t) {
        x = tp.reshape(x, {batch, t, heads, hd});
        x = tp.transpose(x, 1, 2);
        return tp.reshape(x, {batch * heads, t, hd});
    };
    int q = split_heads(tp.matmul(queries, tp.param(prefix + ".q.w")), tq);
    int k = split_heads(tp.matmul(keys_values, tp.param(prefix + ".k.w")), tk);
    int v = split_heads(tp.matmul(keys_values, tp.param(prefix + ".v.w")), tk);

    int weights = attention_weights(tp, q, k, blocked, kind);
    int ctx = tp.matmul(weights, v);  // (batch*heads, tq, hd)
    ctx = tp.reshape(ctx, {batch, heads, tq, hd});
    ctx = tp.transpose(ctx, 1, 2);
    ctx = tp.reshape(ctx, {batch, tq, dm});
    return apply_linear(tp, ctx, prefix + ".o");
}

// ---- feed-forward (GELU, one hidden layer) ----

template <typename T>
void init_feed_forward(ParamRegistry<T>& reg, const std::string& prefix, int64_t dim,
                       int64_t hidden, std::mt19937_64& rng) {
    init_linear(reg, prefix + ".in", dim, hidden, rng);
    init_linear(reg, prefix + ".out", hidden, dim, rng);
}

template <typename T>
int feed_forward(Tape<T>& tp, int x, const std::string& prefix) {
    return apply_linear(tp, tp.gelu(apply_linear(tp, x, prefix + ".in")), prefix + ".out");
}

// ---- transformer block (pre-norm residual) ----

template <typename T>
void init_block_params(ParamRegistry<T>& reg, const std::string& prefix, const BlockDims& dims,
                       std::mt19937_64& rng) {
    init_layer_norm(reg, prefix + ".ln1", dims.attn.model_dim);
    init_attention_params(reg, prefix + ".attn", dims.attn, rng);
    init_layer_norm(reg, prefix + ".ln2", dims.attn.model_dim);
    init_feed_forward(reg, prefix + ".ff", dims.attn.model_dim, dims.ff_hidden, rng);
}

/// t <- t + Attn(LN(t)); t <- t + FF(LN(t)). `skip_attention` drops the
/// attention residual entirely (test ablation hook).
template <typename T>
int transformer_block(Tape<T>& tp, int tokens, const Tensor<uint8_t>& blocked,
                      const std::string& prefix, const BlockDims& dims, AttnKind kind,
                      bool skip_attention = false) {
    if (!skip_attention) {
        int a = layer_norm_affine(tp, tokens, prefix + ".ln1");
        a = multi_head_attention(tp, a, a, blocked, prefix + ".attn", dims.attn, kind);
        tokens = tp.add(tokens, a);
    }
    int f = layer_norm_affine(tp, tokens, prefix + ".ln2");
    f = feed_forward(tp, f, prefix + ".ff");
    return tp.add(tokens, f);
}

// ---- condition-adaptive block ----

template <typename T>
void init_ada_block_params(ParamRegistry<T>& reg, const std::string& prefix,
                           const BlockDims& dims, std::mt19937_64& rng) {
    int64_t dm = dims.attn.model_dim;
    // one shared hidden layer, four zero-initialized heads: the block starts
    // as unit scale / zero shift regardless of the condition
    init_linear(reg, prefix + ".mod.h", dm, dm, rng);
    init_linear(reg, prefix + ".mod.scale1", dm, dm, rng, /*zero=*/true);
    init_linear(reg, prefix + ".mod.shift1", dm, dm, rng, /*zero=*/true);
    init_linear(reg, prefix + ".mod.scale2", dm, dm, rng, /*zero=*/true);
    init_linear(reg, prefix + ".mod.shift2", dm, dm, rng, /*zero=*/true);
    init_attention_params(reg, prefix + ".attn", dims.attn, rng);
    init_feed_forward(reg, prefix + ".ff", dm, dims.ff_hidden, rng);
}

/// Cross-attention update of the noise tokens against the embedded point,
/// with every layer norm's scale/shift produced per node from the pooled
/// condition. noise_tokens, point_tokens: (B, d, dm); pooled: (d, dm).
template <typename T>
int ada_block(Tape<T>& tp, int noise_tokens, int point_tokens, const Tensor<uint8_t>& blocked,
              int pooled, const std::string& prefix, const BlockDims& dims) {
    int h = tp.gelu(apply_linear(tp, pooled, prefix + ".mod.h"));
    int ones = tp.input(Tensor<T>::full({1}, T(1)));
    int scale1 = tp.add(apply_linear(tp, h, prefix + ".mod.scale1"), ones);
    int shift1 = apply_linear(tp, h, prefix + ".mod.shift1");
    int scale2 = tp.add(apply_linear(tp, h, prefix + ".mod.scale2"), ones);
    int shift2 = apply_linear(tp, h, prefix + ".mod.shift2");

    int a = tp.add(tp.mul(tp.layer_norm(noise_tokens), scale1), shift1);
    a = multi_head_attention(tp, a, point_tokens, blocked, prefix + ".attn", dims.attn,
                             AttnKind::Dag);
    noise_tokens = tp.add(noise_tokens, a);
    int f = tp.add(tp.mul(tp.layer_norm(noise_tokens), scale2), shift2);
    f = feed_forward(tp, f, prefix + ".ff");
    return tp.add(noise_tokens, f);
}

// ---- graph masks ----

/// blocked(i, j) = 1 unless j is a parent of i (decoder mask: roots read nothing).
inline Tensor<uint8_t> graph_mask(const Dag& dag) {
    Tensor<uint8_t> m({dag.d, dag.d}, 1);
    for (int i = 0; i < dag.d; ++i)
        for (int j = 0; j < dag.d; ++j)
            if (dag.parent(i, j)) m.at2(i, j) = 0;
    return m;
}

/// blocked(i, j) = 1 unless j is a parent of i or j == i (encoder node mask:
/// the self edge keeps root rows alive under standard softmax).
inline Tensor<uint8_t> graph_mask_with_self(const Dag& dag) {
    Tensor<uint8_t> m = graph_mask(dag);
    for (int i = 0; i < dag.d; ++i) m.at2(i, i) = 0;
    return m;
}

}  // namespace zeroscm
