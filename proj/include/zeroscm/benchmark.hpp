#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zeroscm/inference.hpp"
#include "zeroscm/training.hpp"

namespace zeroscm {

enum class EvalTask { NoisePrediction, Generation, Intervention };
std::string to_string(EvalTask t);

struct Scenario {
    DistTag preset;
    MechTag mechanism;  // Lin or Rff
    std::string name() const { return to_string(mechanism) + "-" + to_string(preset); }
};

struct BenchmarkSuiteConfig {
    std::vector<int> node_counts{10, 20, 50, 100};
    int datasets_per_scenario = 6;
    int n_test = 800;  // split: first half conditioning, second half evaluation
    std::vector<Scenario> scenarios{{DistTag::In, MechTag::Lin},
                                    {DistTag::In, MechTag::Rff},
                                    {DistTag::Out, MechTag::Lin},
                                    {DistTag::Out, MechTag::Rff}};
    double intervention_shift = 1.0;  // clamp to mean + shift * std (user units)
    uint64_t seed = 0;
    int threads = 1;
    bool include_baseline = true;  // the trivial predictor F^ == 0
    bool include_oracle = false;   // the true simulator mechanisms
};

BenchmarkSuiteConfig suite_config_from_kv(const KeyValueConfig& kv);

/// A model under evaluation: a loaded checkpoint plus its architecture.
struct TrainedModel {
    ParamRegistry<float> params;
    EncoderConfig encoder;
    DecoderConfig decoder;
};

/// Reconstructs the registry (encoder + decoder) from a combined checkpoint.
TrainedModel trained_model_from_checkpoint(const Checkpoint& ckpt, bool use_ema);

struct EvalCell {
    std::string model;  // "model" | "baseline" | "oracle"
    EvalTask task;
    std::string scenario;
    int node_count;
    std::vector<double> per_dataset;

    double mean() const;
    double stderr_mean() const;  // over datasets
};

struct EvalReport {
    std::map<std::string, std::string> metadata;
    std::vector<EvalCell> cells;

    const EvalCell* find(const std::string& model, EvalTask task, const std::string& scenario,
                         int node_count) const;
};

/// The three zero-shot tasks over the scenario x node-count grid. All RMSEs
/// are computed in standardized (conditioning-split) units. model may be
/// null when only the baseline/oracle routes are wanted.
EvalReport run_benchmark(const BenchmarkSuiteConfig& cfg, const TrainedModel* model);

void write_report(const EvalReport& report, const std::string& path);
EvalReport read_report(const std::string& path);

/// Per-node gaussian noise refit protocol for datasets without ground-truth
/// noise: abduct on the first half, refit, resample, generate, and compare
/// against the held-out second half with MMD.
struct RealDataReport {
    double mmd_sampled;        // MMD(generated-from-refit-noise, test)
    double mmd_reconstructed;  // MMD(generated-from-abducted-noise, test)
    double mmd_train_test;     // MMD(train, test), the oracle reference
};

/// Builds the functional model for a split: the graph, the conditioning-split
/// statistics, and the standardized conditioning rows.
using ModelFactory = std::function<std::unique_ptr<FunctionalModel>(
    const Dag&, const Standardizer&, const Tensor<double>&)>;

ModelFactory cond_fip_factory(const TrainedModel& model);

RealDataReport real_data_protocol(const Dataset& data, const ModelFactory& factory, uint64_t seed);

}  // namespace zeroscm
