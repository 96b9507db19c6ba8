#include "zeroscm/training.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "zeroscm/dataset.hpp"
#include "zeroscm/inference.hpp"
#include "zeroscm/rng.hpp"

namespace zeroscm {

namespace {

constexpr uint64_t kDataStream = 0x5eed0001;
constexpr uint64_t kValStream = 0x5eed0002;
constexpr uint64_t kInitStream = 0x5eed0003;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

TrainConfig desk_train_config(TrainStage stage) {
    TrainConfig cfg;
    cfg.stage = stage;
    cfg.nodes = 5;
    cfg.samples_per_dataset = 100;
    cfg.datasets_per_epoch = 200;
    cfg.epochs = 50;
    cfg.batch_size = 2;
    cfg.learning_rate = 1e-3f;
    cfg.encoder = EncoderConfig{32, 4, 64, 4, 32};
    cfg.decoder = DecoderConfig{32, 4, 64, 4};
    return cfg;
}

TrainConfig paper_train_config(TrainStage stage) {
    TrainConfig cfg;
    cfg.stage = stage;
    cfg.nodes = 20;
    cfg.samples_per_dataset = 400;
    cfg.datasets_per_epoch = 400;
    cfg.epochs = 10000;
    cfg.batch_size = 2;
    cfg.learning_rate = 1e-4f;
    cfg.weight_decay = 5e-9f;
    cfg.encoder = EncoderConfig{256, 8, 512, 4, 64};
    cfg.decoder = DecoderConfig{256, 8, 512, 4};
    return cfg;
}

TrainConfig train_config_from_kv(const KeyValueConfig& kv) {
    std::string base = kv.get_string("base", "desk");
    std::string stage_s = kv.get_string("stage", "encoder");
    TrainStage stage = stage_s == "decoder" ? TrainStage::Decoder : TrainStage::Encoder;
    if (stage_s != "encoder" && stage_s != "decoder")
        throw DataError("config: stage must be encoder or decoder");
    TrainConfig cfg = base == "paper" ? paper_train_config(stage) : desk_train_config(stage);
    std::string preset = kv.get_string("preset", cfg.preset == DistTag::In ? "in" : "out");
    if (preset == "in")
        cfg.preset = DistTag::In;
    else if (preset == "out")
        cfg.preset = DistTag::Out;
    else
        throw DataError("config: preset must be in or out");
    std::string mech = kv.get_string("mechanisms", "both");
    if (mech == "both")
        cfg.mechanisms = MechTag::Both;
    else if (mech == "lin")
        cfg.mechanisms = MechTag::Lin;
    else if (mech == "rff")
        cfg.mechanisms = MechTag::Rff;
    else
        throw DataError("config: mechanisms must be both, lin, or rff");
    cfg.nodes = static_cast<int>(kv.get_int("nodes", cfg.nodes));
    cfg.samples_per_dataset = static_cast<int>(kv.get_int("samples", cfg.samples_per_dataset));
    cfg.datasets_per_epoch = static_cast<int>(kv.get_int("datasets_per_epoch", cfg.datasets_per_epoch));
    cfg.epochs = static_cast<int>(kv.get_int("epochs", cfg.epochs));
    cfg.batch_size = static_cast<int>(kv.get_int("batch_size", cfg.batch_size));
    cfg.learning_rate = static_cast<float>(kv.get_double("learning_rate", cfg.learning_rate));
    cfg.weight_decay = static_cast<float>(kv.get_double("weight_decay", cfg.weight_decay));
    cfg.ema_decay = static_cast<float>(kv.get_double("ema_decay", cfg.ema_decay));
    cfg.seed = static_cast<uint64_t>(kv.get_int("seed", 0));
    cfg.fixed_pool = static_cast<int>(kv.get_int("fixed_pool", 0));
    cfg.checkpoint_every = static_cast<int>(kv.get_int("checkpoint_every", 0));
    cfg.val_pool = static_cast<int>(kv.get_int("val_pool", 0));
    cfg.val_every = static_cast<int>(kv.get_int("val_every", 50));
    cfg.use_ema_encoder = kv.get_bool("use_ema_encoder", false);
    int dm = static_cast<int>(kv.get_int("model_dim", cfg.encoder.model_dim));
    int heads = static_cast<int>(kv.get_int("heads", cfg.encoder.heads));
    int ff = static_cast<int>(kv.get_int("ff_hidden", cfg.encoder.ff_hidden));
    cfg.encoder.model_dim = dm;
    cfg.encoder.heads = heads;
    cfg.encoder.ff_hidden = ff;
    cfg.encoder.head_hidden = static_cast<int>(kv.get_int("head_hidden", cfg.encoder.head_hidden));
    cfg.decoder.model_dim = dm;
    cfg.decoder.heads = heads;
    cfg.decoder.ff_hidden = ff;
    return cfg;
}

KeyValueConfig train_config_to_kv(const TrainConfig& cfg) {
    KeyValueConfig kv;
    kv.set("stage", cfg.stage == TrainStage::Encoder ? "encoder" : "decoder");
    kv.set("preset", cfg.preset == DistTag::In ? "in" : "out");
    kv.set("mechanisms",
           cfg.mechanisms == MechTag::Both ? "both" : (cfg.mechanisms == MechTag::Lin ? "lin" : "rff"));
    kv.set("nodes", std::to_string(cfg.nodes));
    kv.set("samples", std::to_string(cfg.samples_per_dataset));
    kv.set("datasets_per_epoch", std::to_string(cfg.datasets_per_epoch));
    kv.set("epochs", std::to_string(cfg.epochs));
    kv.set("batch_size", std::to_string(cfg.batch_size));
    kv.set("learning_rate", fmt_double(cfg.learning_rate));
    kv.set("weight_decay", fmt_double(cfg.weight_decay));
    kv.set("ema_decay", fmt_double(cfg.ema_decay));
    kv.set("seed", std::to_string(cfg.seed));
    kv.set("fixed_pool", std::to_string(cfg.fixed_pool));
    kv.set("val_pool", std::to_string(cfg.val_pool));
    kv.set("val_every", std::to_string(cfg.val_every));
    kv.set("use_ema_encoder", cfg.use_ema_encoder ? "1" : "0");
    kv.set("model_dim", std::to_string(cfg.encoder.model_dim));
    kv.set("heads", std::to_string(cfg.encoder.heads));
    kv.set("ff_hidden", std::to_string(cfg.encoder.ff_hidden));
    kv.set("head_hidden", std::to_string(cfg.encoder.head_hidden));
    return kv;
}

// ---- checkpoint io ----

namespace {

constexpr char kCkptMagic[4] = {'C', 'F', 'I', 'P'};
constexpr uint16_t kCkptVersion = 1;

template <typename T>
void write_le(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("checkpoint: truncated payload");
    return v;
}

void write_section(std::ostream& out, const std::map<std::string, Tensor<float>>& section) {
    write_le<uint32_t>(out, static_cast<uint32_t>(section.size()));
    for (const auto& [name, tensor] : section) {
        write_le<uint16_t>(out, static_cast<uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_le<uint8_t>(out, static_cast<uint8_t>(tensor.rank()));
        for (int64_t e : tensor.shape) write_le<uint32_t>(out, static_cast<uint32_t>(e));
        out.write(reinterpret_cast<const char*>(tensor.data.data()),
                  static_cast<std::streamsize>(tensor.data.size() * sizeof(float)));
    }
}

std::map<std::string, Tensor<float>> read_section(std::istream& in) {
    std::map<std::string, Tensor<float>> section;
    uint32_t count = read_le<uint32_t>(in);
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t len = read_le<uint16_t>(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        uint8_t rank = read_le<uint8_t>(in);
        std::vector<int64_t> shape(rank);
        for (auto& e : shape) e = read_le<uint32_t>(in);
        Tensor<float> t(shape);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!in) throw DataError("checkpoint: truncated tensor " + name);
        section.emplace(std::move(name), std::move(t));
    }
    return section;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write(kCkptMagic, 4);
    write_le<uint16_t>(out, kCkptVersion);
    write_le<uint32_t>(out, static_cast<uint32_t>(ckpt.config_echo.size()));
    out.write(ckpt.config_echo.data(), static_cast<std::streamsize>(ckpt.config_echo.size()));
    write_le<uint64_t>(out, ckpt.step);
    write_section(out, ckpt.params);
    write_section(out, ckpt.adam_first);
    write_section(out, ckpt.adam_second);
    write_section(out, ckpt.ema);
    if (!out) throw DataError("checkpoint: write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCkptMagic, 4) != 0) throw DataError("checkpoint: bad magic");
    uint16_t version = read_le<uint16_t>(in);
    if (version != kCkptVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ckpt;
    uint32_t len = read_le<uint32_t>(in);
    ckpt.config_echo.resize(len);
    in.read(ckpt.config_echo.data(), len);
    ckpt.step = read_le<uint64_t>(in);
    ckpt.params = read_section(in);
    ckpt.adam_first = read_section(in);
    ckpt.adam_second = read_section(in);
    ckpt.ema = read_section(in);
    return ckpt;
}

void load_params_into(ParamRegistry<float>& params, const Checkpoint& ckpt, bool use_ema) {
    for (const auto& name : params.names()) {
        auto it = ckpt.params.find(name);
        if (it == ckpt.params.end()) throw ShapeError("checkpoint missing parameter: " + name);
        const Tensor<float>* src = &it->second;
        if (use_ema) {
            auto eit = ckpt.ema.find(name);
            if (eit != ckpt.ema.end()) src = &eit->second;
        }
        Tensor<float>& dst = params.get(name);
        if (src->shape != dst.shape)
            throw ShapeError("checkpoint shape mismatch for " + name + ": stored " +
                             shape_str(src->shape) + ", model wants " + shape_str(dst.shape));
        dst = *src;
    }
}

// ---- data assembly ----

TrainExample make_train_example(const TrainConfig& cfg, uint64_t dataset_index) {
    uint64_t index = cfg.fixed_pool > 0 ? dataset_index % static_cast<uint64_t>(cfg.fixed_pool)
                                        : dataset_index;
    auto rng = make_engine(derive_seed(cfg.seed, kDataStream, index));
    ScmDistributionConfig dist = make_distribution(cfg.preset, cfg.mechanisms, cfg.nodes);
    SampledScm s = sample_scm(dist, rng);

    int n = cfg.samples_per_dataset;
    bool decoder_stage = cfg.stage == TrainStage::Decoder;
    int rows = decoder_stage ? 2 * n : n;
    Tensor<double> noise = sample_noise(s.scm.noise, rows, rng);
    Tensor<double> x = generate_observations(s.scm, noise);

    // conditioning rows 0..n-1; the decoder target half n..2n-1 is disjoint
    Tensor<double> x_cond = slice_rows(x, 0, n);
    Standardizer st = Standardizer::fit(x_cond);

    TrainExample ex;
    ex.dag = s.scm.dag;
    ex.x_std = st.apply(x_cond);
    Tensor<double> n_cond = st.scale_noise(slice_rows(noise, 0, n));
    ex.target_std = ex.x_std;
    for (size_t i = 0; i < ex.target_std.data.size(); ++i) ex.target_std.data[i] -= n_cond.data[i];
    if (decoder_stage) {
        ex.z_std = st.apply(slice_rows(x, n, n));
        Tensor<double> n_tgt = st.scale_noise(slice_rows(noise, n, n));
        ex.z_target_std = ex.z_std;
        for (size_t i = 0; i < ex.z_target_std.data.size(); ++i)
            ex.z_target_std.data[i] -= n_tgt.data[i];
    }
    return ex;
}

// ---- training loop ----

namespace {

// batch loss node over per-example losses
int mean_loss(Tape<float>& tape, const std::vector<int>& losses) {
    int acc = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) acc = tape.add(acc, losses[i]);
    return tape.scale(acc, 1.0f / static_cast<float>(losses.size()));
}

int encoder_example_loss(Tape<float>& tape, const TrainExample& ex, const EncoderConfig& cfg) {
    int x = tape.input(ex.x_std.cast<float>());
    auto out = encode(tape, x, ex.dag, cfg);
    int pred = predict_functional(tape, out.tokens);
    return encoder_loss(tape, pred, tape.input(ex.target_std.cast<float>()));
}

int decoder_example_loss(Tape<float>& tape, const TrainExample& ex, const Tensor<float>& pooled,
                         const DecoderConfig& cfg) {
    auto cond = build_condition(tape, tape.input(pooled));
    int pred = decode(tape, tape.input(ex.z_std.cast<float>()), cond, ex.dag, cfg);
    return decoder_loss(tape, pred, tape.input(ex.z_target_std.cast<float>()));
}

}  // namespace

TrainResult run_training(const TrainConfig& cfg, const std::string& out_dir,
                         const std::string& encoder_checkpoint) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    bool decoder_stage = cfg.stage == TrainStage::Decoder;

    ParamRegistry<float> params;
    auto init_rng = make_engine(derive_seed(cfg.seed, kInitStream, decoder_stage ? 2 : 1));
    init_encoder_params(params, cfg.encoder, init_rng);
    std::vector<std::string> trained;
    if (decoder_stage) {
        if (encoder_checkpoint.empty())
            throw DataError("decoder stage requires a trained encoder checkpoint");
        Checkpoint enc = load_checkpoint(encoder_checkpoint);
        load_params_into(params, enc, cfg.use_ema_encoder);
        init_decoder_params(params, cfg.decoder, init_rng);
        for (const auto& name : params.names())
            if (name.rfind("decoder.", 0) == 0) trained.push_back(name);
    } else {
        trained = params.names();
    }

    AdamState<float> adam;
    adam_init(adam, params, trained);
    EmaState<float> ema;
    ema_init(ema, params, trained, cfg.ema_decay);

    TrainResult result;
    result.loss_log_path = out_dir + "/loss_log.tsv";
    std::ofstream log(result.loss_log_path);
    if (!log) throw DataError("cannot open loss log: " + result.loss_log_path);

    // frozen validation pool, distinct stream from the training data
    std::vector<TrainExample> val_pool;
    for (int i = 0; i < cfg.val_pool; ++i) {
        TrainConfig vcfg = cfg;
        vcfg.seed = derive_seed(cfg.seed, kValStream, 0);
        vcfg.fixed_pool = 0;
        val_pool.push_back(make_train_example(vcfg, static_cast<uint64_t>(i)));
    }

    auto make_checkpoint = [&](uint64_t step) {
        Checkpoint ckpt;
        ckpt.config_echo = train_config_to_kv(cfg).to_text();
        ckpt.step = step;
        ckpt.params = params.store();
        ckpt.adam_first = adam.first_moment;
        ckpt.adam_second = adam.second_moment;
        ckpt.ema = ema.shadow;
        return ckpt;
    };

    auto forward_val = [&]() {
        double acc = 0;
        for (const auto& ex : val_pool) {
            Tape<float> tape(&params);
            int loss;
            if (decoder_stage) {
                Tensor<float> pooled = encode_condition(params, cfg.encoder, ex.dag, ex.x_std);
                loss = decoder_example_loss(tape, ex, pooled, cfg.decoder);
            } else {
                loss = encoder_example_loss(tape, ex, cfg.encoder);
            }
            acc += static_cast<double>(tape.scalar_value(loss));
        }
        return acc / static_cast<double>(val_pool.size());
    };

    int steps = cfg.total_steps();
    for (int step = 0; step < steps; ++step) {
        Tape<float> tape(&params);
        std::vector<int> losses;
        for (int b = 0; b < cfg.batch_size; ++b) {
            uint64_t index = static_cast<uint64_t>(step) * cfg.batch_size + b;
            TrainExample ex = make_train_example(cfg, index);
            if (decoder_stage) {
                Tensor<float> pooled = encode_condition(params, cfg.encoder, ex.dag, ex.x_std);
                losses.push_back(decoder_example_loss(tape, ex, pooled, cfg.decoder));
            } else {
                losses.push_back(encoder_example_loss(tape, ex, cfg.encoder));
            }
        }
        int loss_node = mean_loss(tape, losses);
        double loss = static_cast<double>(tape.scalar_value(loss_node));
        if (!std::isfinite(loss)) {
            save_checkpoint(make_checkpoint(static_cast<uint64_t>(step)),
                            out_dir + "/diagnostic.ckpt");
            throw NumericError("training halted: non-finite loss at step " + std::to_string(step));
        }

        auto grads = tape.gradients(loss_node);
        adam_step(params, grads, adam, trained, cfg.learning_rate, cfg.weight_decay);
        ema_update(ema, params);

        result.losses.push_back(loss);
        log << step << "\t" << fmt_double(loss);
        if (!val_pool.empty() && (step % cfg.val_every == 0 || step + 1 == steps)) {
            double val = forward_val();
            result.val_losses.emplace_back(step, val);
            log << "\t" << fmt_double(val);
        }
        log << "\n";

        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
            save_checkpoint(make_checkpoint(static_cast<uint64_t>(step + 1)),
                            out_dir + "/step" + std::to_string(step + 1) + ".ckpt");
    }

    result.checkpoint_path = out_dir + "/final.ckpt";
    save_checkpoint(make_checkpoint(static_cast<uint64_t>(steps)), result.checkpoint_path);
    log.close();
    return result;
}

}  // namespace zeroscm
