#pragma once

#include "zeroscm/attention.hpp"

namespace zeroscm {

/// Dataset encoder: value embedding, four transformer blocks alternating
/// between the sample axis (unmasked) and the node axis (graph mask plus
/// self edges), and a per-token prediction head.
struct EncoderConfig {
    int model_dim = 64;
    int heads = 4;
    int ff_hidden = 128;
    int blocks = 4;  // axis pattern fixed: [samples, nodes, samples, nodes]
    int head_hidden = 64;

    BlockDims block_dims() const { return BlockDims{{model_dim, heads}, ff_hidden}; }
    static bool sample_axis_block(int index) { return index % 2 == 0; }
};

template <typename T>
void init_encoder_params(ParamRegistry<T>& reg, const EncoderConfig& cfg, std::mt19937_64& rng) {
    init_linear(reg, "encoder.embed", 1, cfg.model_dim, rng);
    for (int i = 0; i < cfg.blocks; ++i)
        init_block_params(reg, "encoder.block" + std::to_string(i), cfg.block_dims(), rng);
    init_linear(reg, "encoder.head.h1", cfg.model_dim, cfg.head_hidden, rng);
    init_linear(reg, "encoder.head.h2", cfg.head_hidden, cfg.head_hidden, rng);
    init_linear(reg, "encoder.head.out", cfg.head_hidden, 1, rng);
}

/// (n, d) observations -> (n, d, dm) tokens through the shared scalar affine.
template <typename T>
int embed_values(Tape<T>& tp, int x) {
    const auto& s = tp.value(x).shape;
    if (s.size() != 2) throw ShapeError("embed_values expects (n, d)");
    return apply_linear(tp, tp.reshape(x, {s[0], s[1], 1}), "encoder.embed");
}

template <typename T>
struct EncoderOut {
    int tokens;  // (n, d, dm)
    int pooled;  // (d, dm), max over the sample axis
};

template <typename T>
EncoderOut<T> encode(Tape<T>& tp, int x, const Dag& dag, const EncoderConfig& cfg,
                     bool ablate_sample_attention = false) {
    int tokens = embed_values(tp, x);
    Tensor<uint8_t> node_blocked = graph_mask_with_self(dag);
    Tensor<uint8_t> unmasked;  // empty = no mask
    for (int i = 0; i < cfg.blocks; ++i) {
        std::string prefix = "encoder.block" + std::to_string(i);
        if (EncoderConfig::sample_axis_block(i)) {
            int t = tp.transpose(tokens, 0, 1);  // (d, n, dm): attention over samples
            t = transformer_block(tp, t, unmasked, prefix, cfg.block_dims(), AttnKind::Softmax,
                                  ablate_sample_attention);
            tokens = tp.transpose(t, 0, 1);
        } else {
            tokens = transformer_block(tp, tokens, node_blocked, prefix, cfg.block_dims(),
                                       AttnKind::Softmax);
        }
    }
    return {tokens, tp.max_pool(tokens, 0)};
}

/// Prediction head H applied per token: (n, d, dm) -> (n, d).
template <typename T>
int predict_functional(Tape<T>& tp, int tokens) {
    int h = tp.gelu(apply_linear(tp, tokens, "encoder.head.h1"));
    h = tp.gelu(apply_linear(tp, h, "encoder.head.h2"));
    h = apply_linear(tp, h, "encoder.head.out");
    const auto& s = tp.value(h).shape;
    return tp.reshape(h, {s[0], s[1]});
}

/// Mean squared error over all n x d entries.
template <typename T>
int encoder_loss(Tape<T>& tp, int predicted, int target) {
    return tp.mse(predicted, target);
}

}  // namespace zeroscm
