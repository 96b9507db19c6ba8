#pragma once

#include <optional>
#include <string>
#include <vector>

#include "zeroscm/config.hpp"
#include "zeroscm/decoder.hpp"
#include "zeroscm/encoder.hpp"
#include "zeroscm/optimizer.hpp"
#include "zeroscm/scm.hpp"

namespace zeroscm {

enum class TrainStage { Encoder, Decoder };

struct TrainConfig {
    TrainStage stage = TrainStage::Encoder;
    DistTag preset = DistTag::In;
    MechTag mechanisms = MechTag::Both;
    int nodes = 5;
    int samples_per_dataset = 100;
    int datasets_per_epoch = 200;
    int epochs = 50;
    int batch_size = 2;
    float learning_rate = 1e-3f;
    float weight_decay = 5e-9f;
    float ema_decay = 0.999f;
    uint64_t seed = 0;
    int fixed_pool = 0;        // > 0: cycle a fixed dataset pool instead of fresh draws
    int checkpoint_every = 0;  // steps; 0 = final only
    int val_pool = 0;          // validation datasets; 0 = no validation
    int val_every = 50;
    bool use_ema_encoder = false;  // decoder stage: freeze the EMA encoder weights

    EncoderConfig encoder;
    DecoderConfig decoder;

    int total_steps() const {
        int64_t total = static_cast<int64_t>(datasets_per_epoch) * epochs / batch_size;
        return static_cast<int>(total);
    }
};

/// CPU-friendly defaults: d=5, n=100, 200 datasets/epoch, 50 epochs.
TrainConfig desk_train_config(TrainStage stage);
/// The reference full-scale recipe: d=20, n=400, d_h=256, 8 heads, lr 1e-4,
/// weight decay 5e-9, batch 2, 10k epochs of ~400 datasets.
TrainConfig paper_train_config(TrainStage stage);

TrainConfig train_config_from_kv(const KeyValueConfig& kv);
KeyValueConfig train_config_to_kv(const TrainConfig& cfg);

struct Checkpoint {
    std::string config_echo;
    uint64_t step = 0;
    std::map<std::string, Tensor<float>> params;
    std::map<std::string, Tensor<float>> adam_first, adam_second;
    std::map<std::string, Tensor<float>> ema;
};

// Binary layout: magic "CFIP", u16 version=1, u32-length UTF-8 config echo,
// u64 step, then four record sections (params, adam first/second moments,
// EMA shadows); each record is (u16 name length, name, u8 rank, u32 extents,
// f32 little-endian data).
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Copies checkpoint parameters into an already-initialized registry,
/// validating shapes. use_ema substitutes the EMA shadow wherever one exists.
void load_params_into(ParamRegistry<float>& params, const Checkpoint& ckpt, bool use_ema);

struct TrainResult {
    std::vector<double> losses;                      // per optimization step
    std::vector<std::pair<int, double>> val_losses;  // (step, loss)
    std::string checkpoint_path;
    std::string loss_log_path;
};

/// One amortized training stage. The decoder stage requires the path of a
/// trained encoder checkpoint; its weights are frozen and echoed into the
/// combined output checkpoint. A non-finite loss halts with a diagnostic
/// checkpoint and rethrows.
TrainResult run_training(const TrainConfig& cfg, const std::string& out_dir,
                         const std::string& encoder_checkpoint = "");

/// One simulated training example in standardized coordinates.
struct TrainExample {
    Dag dag;
    Tensor<double> x_std;       // conditioning rows
    Tensor<double> target_std;  // F(D_X) = D_X - D_N in standardized units
    Tensor<double> z_std;       // decoder stage: independent target rows
    Tensor<double> z_target_std;
};

TrainExample make_train_example(const TrainConfig& cfg, uint64_t dataset_index);

}  // namespace zeroscm
