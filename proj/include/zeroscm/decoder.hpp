#pragma once

#include "zeroscm/attention.hpp"

namespace zeroscm {

/// Conditional fixed-point decoder: derives codebook / positional / starting
/// tokens linearly from the pooled dataset embedding, runs adaptive
/// DAG-attention blocks reading the embedded point, and projects back to R^d.
struct DecoderConfig {
    int model_dim = 64;
    int heads = 4;
    int ff_hidden = 128;
    int blocks = 4;

    BlockDims block_dims() const { return BlockDims{{model_dim, heads}, ff_hidden}; }
};

template <typename T>
void init_decoder_params(ParamRegistry<T>& reg, const DecoderConfig& cfg, std::mt19937_64& rng) {
    int64_t dm = cfg.model_dim;
    reg.create("decoder.codebook.w", xavier_uniform<T>(dm, dm, rng));
    reg.create("decoder.positional.w", xavier_uniform<T>(dm, dm, rng));
    reg.create("decoder.start.w", xavier_uniform<T>(dm, dm, rng));
    for (int i = 0; i < cfg.blocks; ++i)
        init_ada_block_params(reg, "decoder.block" + std::to_string(i), cfg.block_dims(), rng);
    init_linear(reg, "decoder.out", dm, 1, rng);
}

template <typename T>
struct ConditionNodes {
    int pooled;      // (d, dm)
    int codebook;    // (d, dm)
    int positional;  // (d, dm)
    int start;       // (d, dm)
};

/// All three derived tensors are linear in the pooled embedding.
template <typename T>
ConditionNodes<T> build_condition(Tape<T>& tp, int pooled) {
    return ConditionNodes<T>{
        pooled,
        tp.matmul(pooled, tp.param("decoder.codebook.w")),
        tp.matmul(pooled, tp.param("decoder.positional.w")),
        tp.matmul(pooled, tp.param("decoder.start.w")),
    };
}

/// z (B, d) -> (B, d, dm): per-node scalar times codebook row, plus the
/// positional row.
template <typename T>
int embed_point(Tape<T>& tp, int z, const ConditionNodes<T>& cond) {
    const auto& s = tp.value(z).shape;
    if (s.size() != 2) throw ShapeError("embed_point expects (rows, d)");
    int z3 = tp.reshape(z, {s[0], s[1], 1});
    return tp.add(tp.mul(z3, cond.codebook), cond.positional);
}

/// The conditional functional model: (B, d) -> (B, d). Attention reads only
/// parent columns, so the map's Jacobian respects the graph exactly.
template <typename T>
int decode(Tape<T>& tp, int z, const ConditionNodes<T>& cond, const Dag& dag,
           const DecoderConfig& cfg) {
    const auto& s = tp.value(z).shape;
    int64_t batch = s[0], d = s[1];
    if (d != dag.d) throw ShapeError("decode: node count mismatch");
    int point_tokens = embed_point(tp, z, cond);
    Tensor<uint8_t> blocked = graph_mask(dag);
    // broadcast the conditional starting tokens over the batch
    int tokens = tp.add(cond.start, tp.input(Tensor<T>::zeros({batch, d, cfg.model_dim})));
    for (int i = 0; i < cfg.blocks; ++i)
        tokens = ada_block(tp, tokens, point_tokens, blocked, cond.pooled,
                           "decoder.block" + std::to_string(i), cfg.block_dims());
    int out = apply_linear(tp, tokens, "decoder.out");
    return tp.reshape(out, {batch, d});
}

/// Mean squared error over all entries of the target rows.
template <typename T>
int decoder_loss(Tape<T>& tp, int predicted, int target) {
    return tp.mse(predicted, target);
}

}  // namespace zeroscm
