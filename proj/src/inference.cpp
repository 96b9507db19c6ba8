#include "zeroscm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace zeroscm {

OracleFunctional::OracleFunctional(Scm scm, Standardizer stats)
    : scm_(std::move(scm)), stats_(std::move(stats)) {}

Tensor<double> OracleFunctional::evaluate(const Tensor<double>& z) const {
    Tensor<double> raw = stats_.invert(z);
    Tensor<double> f = evaluate_functional(scm_, raw);
    int64_t n = f.shape[0], d = f.shape[1];
    Tensor<double> out({n, d});
    for (int64_t r = 0; r < n; ++r)
        for (int64_t j = 0; j < d; ++j)
            out.at2(r, j) = (f.at2(r, j) - stats_.mean[static_cast<size_t>(j)]) /
                            stats_.scale[static_cast<size_t>(j)];
    return out;
}

Tensor<float> encode_condition(const ParamRegistry<float>& params, const EncoderConfig& cfg,
                               const Dag& dag, const Tensor<double>& conditioning_standardized) {
    Tape<float> tape(&params);
    int x = tape.input(conditioning_standardized.cast<float>());
    auto out = encode(tape, x, dag, cfg);
    tape.replay_inference({out.pooled});
    return tape.value(out.pooled);
}

CondFipFunctional::CondFipFunctional(const ParamRegistry<float>* params, EncoderConfig enc_cfg,
                                     DecoderConfig dec_cfg, Dag dag,
                                     const Tensor<double>& conditioning_standardized)
    : params_(params), dec_cfg_(dec_cfg), dag_(std::move(dag)) {
    if (conditioning_standardized.shape[1] != dag_.d)
        throw ShapeError("conditioning split and graph disagree on node count");
    pooled_ = encode_condition(*params, enc_cfg, dag_, conditioning_standardized);
}

Tensor<double> CondFipFunctional::evaluate(const Tensor<double>& z) const {
    if (z.rank() != 2 || z.shape[1] != dag_.d)
        throw ShapeError("CondFipFunctional: rows must be (m, d)");
    int64_t rows = z.shape[0];
    if (rows != tape_rows_) {
        tape_ = std::make_unique<Tape<float>>(params_);
        z_input_ = tape_->input(z.cast<float>());
        auto cond = build_condition(*tape_, tape_->input(pooled_));
        out_ = decode(*tape_, z_input_, cond, dag_, dec_cfg_);
        tape_rows_ = rows;
    } else {
        tape_->set_input(z_input_, z.cast<float>());
        tape_->replay();
    }
    return tape_->value(out_).cast<double>();
}

void validate_interventions(const InterventionSpec& spec, int d) {
    std::set<int> seen;
    for (auto [node, value] : spec.clamps) {
        (void)value;
        if (node < 0 || node >= d) throw DataError("intervention on invalid node");
        if (!seen.insert(node).second) throw DataError("duplicate intervention node");
    }
}

Tensor<double> InferenceEngine::predict_noise(const Tensor<double>& x) const {
    if (x.rank() != 2 || x.shape[1] != f_.nodes()) throw ShapeError("predict_noise: bad shape");
    Tensor<double> f = f_.evaluate(x);
    Tensor<double> out = x;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= f.data[i];
    return out;
}

Tensor<double> InferenceEngine::generate(const Tensor<double>& noise, int iterations) const {
    if (noise.rank() != 2 || noise.shape[1] != f_.nodes()) throw ShapeError("generate: bad shape");
    int iters = iterations > 0 ? iterations : f_.nodes();
    Tensor<double> x = noise;
    for (int it = 0; it < iters; ++it) {
        Tensor<double> f = f_.evaluate(x);
        if (!f.all_finite()) throw NumericError("generate: non-finite iterate");
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] = f.data[i] + noise.data[i];
    }
    return x;
}

Tensor<double> InferenceEngine::generate_interventional(const Tensor<double>& noise,
                                                        const InterventionSpec& spec,
                                                        int iterations) const {
    validate_interventions(spec, f_.nodes());
    int64_t rows = noise.shape[0];
    int iters = iterations > 0 ? iterations : f_.nodes();
    auto clamp = [&](Tensor<double>& x) {
        for (auto [node, value] : spec.clamps)
            for (int64_t r = 0; r < rows; ++r) x.at2(r, node) = value;
    };
    Tensor<double> x = noise;
    clamp(x);
    for (int it = 0; it < iters; ++it) {
        Tensor<double> f = f_.evaluate(x);
        if (!f.all_finite()) throw NumericError("generate_interventional: non-finite iterate");
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] = f.data[i] + noise.data[i];
        clamp(x);
    }
    return x;
}

MarginalNoiseModel fit_noise_marginals(const Tensor<double>& noise_rows) {
    if (noise_rows.rank() != 2 || noise_rows.shape[0] < 2)
        throw DataError("fit_noise_marginals: need at least two rows");
    int64_t n = noise_rows.shape[0], d = noise_rows.shape[1];
    MarginalNoiseModel model;
    model.sorted_samples.resize(static_cast<size_t>(d));
    for (int64_t j = 0; j < d; ++j) {
        auto& col = model.sorted_samples[static_cast<size_t>(j)];
        col.resize(static_cast<size_t>(n));
        for (int64_t r = 0; r < n; ++r) col[static_cast<size_t>(r)] = noise_rows.at2(r, j);
        std::sort(col.begin(), col.end());
    }
    return model;
}

Tensor<double> sample_marginals(const MarginalNoiseModel& model, int m, std::mt19937_64& rng) {
    int d = model.nodes();
    if (d == 0) throw DataError("sample_marginals: empty model");
    Tensor<double> out({m, d});
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int r = 0; r < m; ++r) {
        for (int j = 0; j < d; ++j) {
            const auto& col = model.sorted_samples[static_cast<size_t>(j)];
            double pos = u01(rng) * static_cast<double>(col.size() - 1);
            size_t lo = static_cast<size_t>(pos);
            double frac = pos - static_cast<double>(lo);
            double hi = col[std::min(lo + 1, col.size() - 1)];
            out.at2(r, j) = col[lo] + frac * (hi - col[lo]);
        }
    }
    return out;
}

}  // namespace zeroscm
