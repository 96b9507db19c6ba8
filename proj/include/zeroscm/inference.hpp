#pragma once

#include <memory>
#include <random>
#include <vector>

#include "zeroscm/dataset.hpp"
#include "zeroscm/decoder.hpp"
#include "zeroscm/encoder.hpp"
#include "zeroscm/scm.hpp"

namespace zeroscm {

/// A conditional functional model in standardized coordinates: rows z
/// (m, d) -> estimated mechanism values (m, d).
struct FunctionalModel {
    virtual ~FunctionalModel() = default;
    virtual int nodes() const = 0;
    virtual Tensor<double> evaluate(const Tensor<double>& z) const = 0;
};

/// Ground-truth mechanisms rewritten in standardized coordinates:
/// F~_i(z) = (F_i(s*z + m) - m_i) / s_i.
class OracleFunctional : public FunctionalModel {
  public:
    OracleFunctional(Scm scm, Standardizer stats);
    int nodes() const override { return scm_.dag.d; }
    Tensor<double> evaluate(const Tensor<double>& z) const override;

  private:
    Scm scm_;
    Standardizer stats_;
};

/// The trivial predictor: F^ == 0 (baseline).
class ZeroFunctional : public FunctionalModel {
  public:
    explicit ZeroFunctional(int d) : d_(d) {}
    int nodes() const override { return d_; }
    Tensor<double> evaluate(const Tensor<double>& z) const override {
        return Tensor<double>::zeros(z.shape);
    }

  private:
    int d_;
};

/// Trained encoder + decoder conditioned on one dataset. The condition is
/// built once from the standardized conditioning split; evaluation replays a
/// cached decoder tape per row-count.
class CondFipFunctional : public FunctionalModel {
  public:
    CondFipFunctional(const ParamRegistry<float>* params, EncoderConfig enc_cfg,
                      DecoderConfig dec_cfg, Dag dag,
                      const Tensor<double>& conditioning_standardized);
    int nodes() const override { return dag_.d; }
    Tensor<double> evaluate(const Tensor<double>& z) const override;

    const Tensor<float>& pooled() const { return pooled_; }

  private:
    const ParamRegistry<float>* params_;
    DecoderConfig dec_cfg_;
    Dag dag_;
    Tensor<float> pooled_;
    mutable std::unique_ptr<Tape<float>> tape_;
    mutable int64_t tape_rows_ = -1;
    mutable int z_input_ = -1, out_ = -1;
};

/// Runs the trained encoder on a standardized conditioning split and returns
/// the pooled per-node embedding (d, model_dim).
Tensor<float> encode_condition(const ParamRegistry<float>& params, const EncoderConfig& cfg,
                               const Dag& dag, const Tensor<double>& conditioning_standardized);

struct InterventionSpec {
    std::vector<std::pair<int, double>> clamps;  // (node, standardized value)
};

void validate_interventions(const InterventionSpec& spec, int d);

/// Zero-shot inference around a functional model, all in standardized
/// coordinates. Generation iterates x <- f(x) + n exactly d times.
class InferenceEngine {
  public:
    explicit InferenceEngine(const FunctionalModel& f) : f_(f) {}

    Tensor<double> predict_noise(const Tensor<double>& x) const;
    Tensor<double> generate(const Tensor<double>& noise, int iterations = -1) const;
    Tensor<double> generate_interventional(const Tensor<double>& noise,
                                           const InterventionSpec& spec,
                                           int iterations = -1) const;

  private:
    const FunctionalModel& f_;
};

/// Empirical per-node inverse CDF support: sorted estimated-noise samples.
struct MarginalNoiseModel {
    std::vector<std::vector<double>> sorted_samples;  // one ascending array per node
    int nodes() const { return static_cast<int>(sorted_samples.size()); }
};

MarginalNoiseModel fit_noise_marginals(const Tensor<double>& noise_rows);

/// Draws u ~ Uniform(0,1) per node and linearly interpolates the empirical
/// quantile function; nodes are sampled independently.
Tensor<double> sample_marginals(const MarginalNoiseModel& model, int m, std::mt19937_64& rng);

}  // namespace zeroscm
