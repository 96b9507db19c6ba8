#include "zeroscm/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "zeroscm/benchmark.hpp"
#include "zeroscm/dataset.hpp"
#include "zeroscm/inference.hpp"
#include "zeroscm/metrics.hpp"
#include "zeroscm/rng.hpp"
#include "zeroscm/svg_plot.hpp"
#include "zeroscm/training.hpp"

namespace zeroscm {

namespace {

struct PresetSpec {
    DistTag dist;
    MechTag mech;
};

PresetSpec parse_preset(const std::string& name) {
    auto dash = name.find('-');
    if (dash == std::string::npos) throw DataError("preset must look like in-lin, out-rff, ...");
    std::string d = name.substr(0, dash), m = name.substr(dash + 1);
    PresetSpec out{};
    if (d == "in")
        out.dist = DistTag::In;
    else if (d == "out")
        out.dist = DistTag::Out;
    else
        throw DataError("unknown distribution tag: " + d);
    if (m == "lin")
        out.mech = MechTag::Lin;
    else if (m == "rff")
        out.mech = MechTag::Rff;
    else if (m == "both")
        out.mech = MechTag::Both;
    else
        throw DataError("unknown mechanism tag: " + m);
    return out;
}

Dataset simulate_dataset(const PresetSpec& preset, int d, int n, uint64_t seed) {
    auto rng = make_engine(derive_seed(seed, 0x51u, 0));
    ScmDistributionConfig dist = make_distribution(preset.dist, preset.mech, d);
    SampledScm s = sample_scm(dist, rng);
    Dataset ds;
    ds.dag = s.scm.dag;
    ds.noise = sample_noise(s.scm.noise, n, rng);
    ds.x = generate_observations(s.scm, *ds.noise);
    ds.meta.seed = seed;
    ds.meta.preset = to_string(preset.dist);
    ds.meta.mechanism = to_string(s.kind);
    ds.meta.extra["scheme"] = to_string(s.scheme);
    return ds;
}

TrainedModel load_model(const std::string& checkpoint, bool use_ema) {
    return trained_model_from_checkpoint(load_checkpoint(checkpoint), use_ema);
}

// conditions on every row of the dataset file (the single-dataset utilities
// have no separate conditioning split)
struct LoadedModelContext {
    Dataset data;
    Standardizer stats;
    TrainedModel model;
    std::unique_ptr<CondFipFunctional> functional;

    LoadedModelContext(const std::string& data_path, const std::string& checkpoint, bool use_ema)
        : data(load_dataset(data_path)), stats(Standardizer::fit(data.x)),
          model(load_model(checkpoint, use_ema)) {
        functional = std::make_unique<CondFipFunctional>(&model.params, model.encoder,
                                                         model.decoder, data.dag,
                                                         stats.apply(data.x));
    }
};

void print_report_summary(const EvalReport& report, std::ostream& os) {
    os << "model\ttask\tscenario\tnodes\tmean_rmse\tstderr\n";
    for (const auto& cell : report.cells) {
        char line[160];
        std::snprintf(line, sizeof(line), "%s\t%s\t%s\t%d\t%.4f\t%.4f", cell.model.c_str(),
                      to_string(cell.task).c_str(), cell.scenario.c_str(), cell.node_count,
                      cell.mean(), cell.stderr_mean());
        os << line << "\n";
    }
}

void write_task_plots(const EvalReport& report, const BenchmarkSuiteConfig& cfg,
                      const std::string& out_dir) {
    std::vector<double> xs(cfg.node_counts.begin(), cfg.node_counts.end());
    for (EvalTask task :
         {EvalTask::NoisePrediction, EvalTask::Generation, EvalTask::Intervention}) {
        std::vector<PlotSeries> series;
        std::vector<std::string> models;
        for (const auto& cell : report.cells)
            if (std::find(models.begin(), models.end(), cell.model) == models.end())
                models.push_back(cell.model);
        for (const auto& model : models) {
            for (const auto& sc : cfg.scenarios) {
                PlotSeries s;
                s.name = model == "model" ? sc.name() : sc.name() + " (" + model + ")";
                for (int d : cfg.node_counts) {
                    const EvalCell* cell = report.find(model, task, sc.name(), d);
                    s.values.push_back(cell ? cell->mean()
                                            : std::numeric_limits<double>::quiet_NaN());
                }
                series.push_back(std::move(s));
            }
        }
        write_line_plot(out_dir + "/" + to_string(task) + ".svg",
                        "RMSE vs node count (" + to_string(task) + ")", "nodes", "mean RMSE", xs,
                        series);
    }
}

int cmd_simulate(const std::string& preset, int d, int n, int count, uint64_t seed,
                 const std::string& out) {
    PresetSpec spec = parse_preset(preset);
    for (int k = 0; k < count; ++k) {
        Dataset ds = simulate_dataset(spec, d, n, derive_seed(seed, 0xda7a5e7ULL, k));
        ds.meta.seed = seed;
        std::string path = count == 1 ? out : out + "." + std::to_string(k);
        save_dataset(ds, path);
        std::cout << "wrote " << path << " (n=" << n << ", d=" << d << ", edges "
                  << ds.dag.edge_count() << ")\n";
    }
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& stage_flag,
              const std::string& out_dir, const std::string& encoder_checkpoint, uint64_t seed,
              int64_t epochs_override) {
    KeyValueConfig kv =
        config_path.empty() ? KeyValueConfig() : KeyValueConfig::load(config_path);
    if (!stage_flag.empty()) kv.set("stage", stage_flag);
    if (!kv.has("seed")) kv.set("seed", std::to_string(seed));
    if (epochs_override > 0) kv.set("epochs", std::to_string(epochs_override));
    TrainConfig cfg = train_config_from_kv(kv);
    TrainResult result = run_training(cfg, out_dir, encoder_checkpoint);
    std::cout << "trained " << (cfg.stage == TrainStage::Encoder ? "encoder" : "decoder") << " for "
              << result.losses.size() << " steps; final loss "
              << (result.losses.empty() ? 0.0 : result.losses.back()) << "\n"
              << "checkpoint: " << result.checkpoint_path << "\n"
              << "loss log:   " << result.loss_log_path << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path,
             const std::string& out_dir, bool use_ema, bool oracle, uint64_t seed, int threads) {
    KeyValueConfig kv =
        config_path.empty() ? KeyValueConfig() : KeyValueConfig::load(config_path);
    if (!kv.has("seed")) kv.set("seed", std::to_string(seed));
    if (threads > 0) kv.set("threads", std::to_string(threads));
    if (oracle) kv.set("oracle", "1");
    BenchmarkSuiteConfig cfg = suite_config_from_kv(kv);
    TrainedModel model = load_model(checkpoint, use_ema);
    EvalReport report = run_benchmark(cfg, &model);
    report.metadata["checkpoint"] = checkpoint;
    report.metadata["ema"] = use_ema ? "1" : "0";
    std::filesystem::create_directories(out_dir);
    write_report(report, out_dir + "/report.tsv");
    write_task_plots(report, cfg, out_dir);
    print_report_summary(report, std::cout);
    std::cout << "report: " << out_dir << "/report.tsv\n";
    return 0;
}

int cmd_predict_noise(const std::string& checkpoint, const std::string& data_path,
                      const std::string& out_path, bool use_ema) {
    LoadedModelContext ctx(data_path, checkpoint, use_ema);
    InferenceEngine engine(*ctx.functional);
    Tensor<double> noise_std = engine.predict_noise(ctx.stats.apply(ctx.data.x));
    Dataset out = ctx.data;
    out.noise = ctx.stats.unscale_noise(noise_std);
    out.meta.extra["derived"] = "predicted-noise";
    save_dataset(out, out_path);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int cmd_generate(const std::string& checkpoint, const std::string& data_path,
                 const std::string& out_path, int rows, bool from_marginals, bool use_ema,
                 uint64_t seed) {
    LoadedModelContext ctx(data_path, checkpoint, use_ema);
    InferenceEngine engine(*ctx.functional);
    Tensor<double> noise_user;
    if (!from_marginals && ctx.data.noise) {
        noise_user = *ctx.data.noise;
    } else {
        // abduct on the conditioning rows, then resample the marginals
        Tensor<double> abducted = engine.predict_noise(ctx.stats.apply(ctx.data.x));
        MarginalNoiseModel marginals = fit_noise_marginals(ctx.stats.unscale_noise(abducted));
        auto rng = make_engine(derive_seed(seed, 0x9e4eULL, 0));
        noise_user = sample_marginals(marginals, rows > 0 ? rows : ctx.data.rows(), rng);
    }
    Tensor<double> x = ctx.stats.invert(engine.generate(ctx.stats.scale_noise(noise_user)));
    Dataset out;
    out.dag = ctx.data.dag;
    out.x = x;
    out.noise = noise_user;
    out.meta = ctx.data.meta;
    out.meta.extra["derived"] = "generated";
    save_dataset(out, out_path);
    std::cout << "wrote " << out_path << " (" << x.shape[0] << " rows)\n";
    return 0;
}

int cmd_intervene(const std::string& checkpoint, const std::string& data_path,
                  const std::string& out_path, int node, double value, bool use_ema,
                  uint64_t seed) {
    LoadedModelContext ctx(data_path, checkpoint, use_ema);
    InferenceEngine engine(*ctx.functional);
    Tensor<double> noise_user;
    if (ctx.data.noise) {
        noise_user = *ctx.data.noise;
    } else {
        Tensor<double> abducted = engine.predict_noise(ctx.stats.apply(ctx.data.x));
        MarginalNoiseModel marginals = fit_noise_marginals(ctx.stats.unscale_noise(abducted));
        auto rng = make_engine(derive_seed(seed, 0xd0ULL, 0));
        noise_user = sample_marginals(marginals, ctx.data.rows(), rng);
    }
    InterventionSpec spec{{{node, ctx.stats.standardize_value(node, value)}}};
    Tensor<double> x =
        ctx.stats.invert(engine.generate_interventional(ctx.stats.scale_noise(noise_user), spec));
    Dataset out;
    out.dag = ctx.data.dag;
    out.x = x;
    out.noise = noise_user;
    out.meta = ctx.data.meta;
    out.meta.extra["derived"] = "intervened node=" + std::to_string(node) +
                                " value=" + std::to_string(value);
    save_dataset(out, out_path);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int cmd_real_data(const std::string& checkpoint, const std::string& data_path, bool use_ema,
                  uint64_t seed) {
    Dataset data = load_dataset(data_path);
    TrainedModel model = load_model(checkpoint, use_ema);
    RealDataReport report = real_data_protocol(data, cond_fip_factory(model), seed);
    std::printf("mmd_sampled\t%.6f\nmmd_reconstructed\t%.6f\nmmd_train_test\t%.6f\n",
                report.mmd_sampled, report.mmd_reconstructed, report.mmd_train_test);
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"amortized zero-shot inference of causal mechanisms"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    uint64_t seed = 0;
    int threads = 1;
    std::string checkpoint;
    bool use_ema = false;
    app.add_option("--seed", seed, "master seed");
    app.add_option("--threads", threads, "worker thread bound");
    app.add_option("--checkpoint", checkpoint, "checkpoint path");
    app.add_flag("--ema", use_ema, "evaluate with EMA shadow weights");

    auto* sim = app.add_subcommand("simulate", "sample datasets from a preset");
    std::string sim_preset = "in-both", sim_out = "dataset.scmd";
    int sim_d = 5, sim_n = 200, sim_count = 1;
    sim->add_option("--preset", sim_preset, "in-lin | in-rff | in-both | out-lin | out-rff | out-both");
    sim->add_option("--d", sim_d, "node count");
    sim->add_option("--n", sim_n, "rows");
    sim->add_option("--count", sim_count, "number of datasets");
    sim->add_option("--out", sim_out, "output file")->required();

    auto* train = app.add_subcommand("train", "run one training stage");
    std::string train_stage, train_config, train_out = "run", train_enc;
    int64_t train_epochs = 0;
    train->add_option("--stage", train_stage, "encoder | decoder");
    train->add_option("--config", train_config, "key=value config file");
    train->add_option("--out", train_out, "output directory");
    train->add_option("--encoder-checkpoint", train_enc, "frozen encoder for the decoder stage");
    train->add_option("--epochs", train_epochs, "override epoch count");

    auto* eval = app.add_subcommand("eval", "run the benchmark suite");
    std::string eval_config, eval_out = "eval";
    bool eval_oracle = false;
    eval->add_option("--config", eval_config, "suite config file");
    eval->add_option("--out", eval_out, "output directory");
    eval->add_flag("--oracle", eval_oracle, "also run the true-mechanism oracle");

    auto* pn = app.add_subcommand("predict-noise", "abduct noise for a dataset file");
    std::string pn_data, pn_out;
    pn->add_option("--data", pn_data, "dataset file")->required();
    pn->add_option("--out", pn_out, "output dataset file")->required();

    auto* gen = app.add_subcommand("generate", "generate observations from noise");
    std::string gen_data, gen_out;
    int gen_rows = 0;
    bool gen_marginals = false;
    gen->add_option("--data", gen_data, "conditioning dataset file")->required();
    gen->add_option("--out", gen_out, "output dataset file")->required();
    gen->add_option("--rows", gen_rows, "rows to generate (marginal resampling)");
    gen->add_flag("--from-marginals", gen_marginals, "resample noise marginals instead of file noise");

    auto* iv = app.add_subcommand("intervene", "generate under a clamped node");
    std::string iv_data, iv_out;
    int iv_node = 0;
    double iv_value = 0.0;
    iv->add_option("--data", iv_data, "conditioning dataset file")->required();
    iv->add_option("--out", iv_out, "output dataset file")->required();
    iv->add_option("--node", iv_node, "node index")->required();
    iv->add_option("--value", iv_value, "clamp value (user units)")->required();

    auto* rd = app.add_subcommand("real-data", "gaussian-refit MMD protocol on a dataset file");
    std::string rd_data;
    rd->add_option("--data", rd_data, "dataset file")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (sim->parsed()) return cmd_simulate(sim_preset, sim_d, sim_n, sim_count, seed, sim_out);
        if (train->parsed())
            return cmd_train(train_config, train_stage, train_out, train_enc, seed, train_epochs);
        if (eval->parsed()) {
            if (checkpoint.empty()) {
                std::cerr << "eval requires --checkpoint\n";
                return 2;
            }
            return cmd_eval(checkpoint, eval_config, eval_out, use_ema, eval_oracle, seed, threads);
        }
        if (pn->parsed()) {
            if (checkpoint.empty()) {
                std::cerr << "predict-noise requires --checkpoint\n";
                return 2;
            }
            return cmd_predict_noise(checkpoint, pn_data, pn_out, use_ema);
        }
        if (gen->parsed()) {
            if (checkpoint.empty()) {
                std::cerr << "generate requires --checkpoint\n";
                return 2;
            }
            return cmd_generate(checkpoint, gen_data, gen_out, gen_rows, gen_marginals, use_ema,
                                seed);
        }
        if (iv->parsed()) {
            if (checkpoint.empty()) {
                std::cerr << "intervene requires --checkpoint\n";
                return 2;
            }
            return cmd_intervene(checkpoint, iv_data, iv_out, iv_node, iv_value, use_ema, seed);
        }
        if (rd->parsed()) {
            if (checkpoint.empty()) {
                std::cerr << "real-data requires --checkpoint\n";
                return 2;
            }
            return cmd_real_data(checkpoint, rd_data, use_ema, seed);
        }
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}

}  // namespace zeroscm
