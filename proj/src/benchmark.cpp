#include "zeroscm/benchmark.hpp"

#include <atomic>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include "zeroscm/metrics.hpp"
#include "zeroscm/rng.hpp"

namespace zeroscm {

namespace {
constexpr uint64_t kEvalStream = 0xe7a10001;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace

std::string to_string(EvalTask t) {
    switch (t) {
        case EvalTask::NoisePrediction: return "noise";
        case EvalTask::Generation: return "generation";
        case EvalTask::Intervention: return "intervention";
    }
    return "?";
}

BenchmarkSuiteConfig suite_config_from_kv(const KeyValueConfig& kv) {
    BenchmarkSuiteConfig cfg;
    cfg.node_counts = kv.get_int_list("node_counts", cfg.node_counts);
    cfg.datasets_per_scenario =
        static_cast<int>(kv.get_int("datasets_per_scenario", cfg.datasets_per_scenario));
    cfg.n_test = static_cast<int>(kv.get_int("n_test", cfg.n_test));
    cfg.intervention_shift = kv.get_double("intervention_shift", cfg.intervention_shift);
    cfg.seed = static_cast<uint64_t>(kv.get_int("seed", 0));
    cfg.threads = static_cast<int>(kv.get_int("threads", 1));
    cfg.include_baseline = kv.get_bool("baseline", cfg.include_baseline);
    cfg.include_oracle = kv.get_bool("oracle", cfg.include_oracle);
    if (kv.has("scenarios")) {
        cfg.scenarios.clear();
        std::istringstream is(kv.get_string("scenarios"));
        std::string tok;
        while (std::getline(is, tok, ',')) {
            if (tok == "lin-in")
                cfg.scenarios.push_back({DistTag::In, MechTag::Lin});
            else if (tok == "rff-in")
                cfg.scenarios.push_back({DistTag::In, MechTag::Rff});
            else if (tok == "lin-out")
                cfg.scenarios.push_back({DistTag::Out, MechTag::Lin});
            else if (tok == "rff-out")
                cfg.scenarios.push_back({DistTag::Out, MechTag::Rff});
            else
                throw DataError("unknown scenario: " + tok);
        }
    }
    return cfg;
}

TrainedModel trained_model_from_checkpoint(const Checkpoint& ckpt, bool use_ema) {
    KeyValueConfig kv = KeyValueConfig::parse(ckpt.config_echo);
    TrainConfig tc = train_config_from_kv(kv);
    TrainedModel model;
    model.encoder = tc.encoder;
    model.decoder = tc.decoder;
    auto rng = make_engine(0);  // values are overwritten by the checkpoint
    init_encoder_params(model.params, model.encoder, rng);
    init_decoder_params(model.params, model.decoder, rng);
    load_params_into(model.params, ckpt, use_ema);
    return model;
}

double EvalCell::mean() const {
    double acc = 0;
    for (double v : per_dataset) acc += v;
    return acc / static_cast<double>(per_dataset.size());
}

double EvalCell::stderr_mean() const {
    size_t n = per_dataset.size();
    if (n < 2) return 0.0;
    double m = mean();
    double var = 0;
    for (double v : per_dataset) var += (v - m) * (v - m);
    var /= static_cast<double>(n - 1);
    return std::sqrt(var / static_cast<double>(n));
}

const EvalCell* EvalReport::find(const std::string& model, EvalTask task,
                                 const std::string& scenario, int node_count) const {
    for (const auto& cell : cells)
        if (cell.model == model && cell.task == task && cell.scenario == scenario &&
            cell.node_count == node_count)
            return &cell;
    return nullptr;
}

namespace {

struct TaskErrors {
    double noise, generation, intervention;
};

// one dataset, one functional model: the three tasks in standardized units
TaskErrors evaluate_model_on_dataset(const FunctionalModel& f, const Scm& scm,
                                     const Standardizer& st, const Tensor<double>& x_eval,
                                     const Tensor<double>& noise_eval, int intervened_node,
                                     double clamp_user_value) {
    InferenceEngine engine(f);
    Tensor<double> xs = st.apply(x_eval);
    Tensor<double> ns = st.scale_noise(noise_eval);

    TaskErrors out{};
    out.noise = rmse(ns, engine.predict_noise(xs));
    out.generation = rmse(xs, engine.generate(ns));

    Tensor<double> truth =
        generate_observations(intervene(scm, intervened_node, clamp_user_value), noise_eval);
    InterventionSpec spec{
        {{intervened_node, st.standardize_value(intervened_node, clamp_user_value)}}};
    out.intervention = rmse(st.apply(truth), engine.generate_interventional(ns, spec));
    return out;
}

// clamp target: one uniformly chosen node with at least one child
int choose_intervention_node(const Dag& dag, std::mt19937_64& rng) {
    std::vector<int> non_leaf;
    for (int j = 0; j < dag.d; ++j) {
        bool has_child = false;
        for (int i = 0; i < dag.d && !has_child; ++i) has_child = dag.parent(i, j);
        if (has_child) non_leaf.push_back(j);
    }
    if (non_leaf.empty()) return 0;
    std::uniform_int_distribution<size_t> pick(0, non_leaf.size() - 1);
    return non_leaf[pick(rng)];
}

}  // namespace

EvalReport run_benchmark(const BenchmarkSuiteConfig& cfg, const TrainedModel* model) {
    if (cfg.n_test < 4 || cfg.n_test % 2 != 0)
        throw DataError("run_benchmark: n_test must be even and >= 4");
    EvalReport report;
    report.metadata["seed"] = std::to_string(cfg.seed);
    report.metadata["n_test"] = std::to_string(cfg.n_test);
    report.metadata["datasets_per_scenario"] = std::to_string(cfg.datasets_per_scenario);

    struct Job {
        Scenario scenario;
        int node_count;
        int dataset_index;
    };
    std::vector<Job> jobs;
    for (const auto& sc : cfg.scenarios)
        for (int d : cfg.node_counts)
            for (int k = 0; k < cfg.datasets_per_scenario; ++k) jobs.push_back({sc, d, k});

    struct JobResult {
        std::optional<TaskErrors> model, baseline, oracle;
    };
    std::vector<JobResult> results(jobs.size());

    auto worker = [&](size_t index) {
        const Job& job = jobs[index];
        uint64_t seed = derive_seed(cfg.seed, kEvalStream,
                                    static_cast<uint64_t>(job.node_count) * 1000003u +
                                        static_cast<uint64_t>(job.dataset_index) * 101u +
                                        (job.scenario.preset == DistTag::In ? 0u : 7u) +
                                        (job.scenario.mechanism == MechTag::Lin ? 0u : 13u));
        auto rng = make_engine(seed);
        ScmDistributionConfig dist =
            make_distribution(job.scenario.preset, job.scenario.mechanism, job.node_count);
        SampledScm s = sample_scm(dist, rng);
        int half = cfg.n_test / 2;
        Tensor<double> noise = sample_noise(s.scm.noise, cfg.n_test, rng);
        Tensor<double> x = generate_observations(s.scm, noise);

        // conditioning rows [0, half), evaluation rows [half, n_test): disjoint
        Tensor<double> x_cond = slice_rows(x, 0, half);
        Tensor<double> x_eval = slice_rows(x, half, half);
        Tensor<double> noise_eval = slice_rows(noise, half, half);
        Standardizer st = Standardizer::fit(x_cond);

        int node = choose_intervention_node(s.scm.dag, rng);
        // clamp value: empirical mean + shift * std of the conditioning split
        double clamp = st.mean[static_cast<size_t>(node)] +
                       cfg.intervention_shift * st.scale[static_cast<size_t>(node)];

        JobResult& out = results[index];
        if (model) {
            CondFipFunctional f(&model->params, model->encoder, model->decoder, s.scm.dag,
                                st.apply(x_cond));
            out.model = evaluate_model_on_dataset(f, s.scm, st, x_eval, noise_eval, node, clamp);
        }
        if (cfg.include_baseline) {
            ZeroFunctional zero(s.scm.dag.d);
            out.baseline =
                evaluate_model_on_dataset(zero, s.scm, st, x_eval, noise_eval, node, clamp);
        }
        if (cfg.include_oracle) {
            OracleFunctional oracle(s.scm, st);
            out.oracle =
                evaluate_model_on_dataset(oracle, s.scm, st, x_eval, noise_eval, node, clamp);
        }
    };

    int threads = std::max(1, cfg.threads);
    if (threads == 1) {
        for (size_t i = 0; i < jobs.size(); ++i) worker(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&]() {
                for (size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1))
                    worker(i);
            });
        for (auto& th : pool) th.join();
    }

    auto collect = [&](const std::string& name,
                       const std::function<const std::optional<TaskErrors>*(const JobResult&)>& get) {
        for (const auto& sc : cfg.scenarios) {
            for (int d : cfg.node_counts) {
                EvalCell noise_cell{name, EvalTask::NoisePrediction, sc.name(), d, {}};
                EvalCell gen_cell{name, EvalTask::Generation, sc.name(), d, {}};
                EvalCell int_cell{name, EvalTask::Intervention, sc.name(), d, {}};
                for (size_t i = 0; i < jobs.size(); ++i) {
                    if (jobs[i].scenario.name() != sc.name() || jobs[i].node_count != d) continue;
                    const auto* errs = get(results[i]);
                    if (!errs->has_value()) continue;
                    noise_cell.per_dataset.push_back((*errs)->noise);
                    gen_cell.per_dataset.push_back((*errs)->generation);
                    int_cell.per_dataset.push_back((*errs)->intervention);
                }
                if (noise_cell.per_dataset.empty()) continue;
                report.cells.push_back(std::move(noise_cell));
                report.cells.push_back(std::move(gen_cell));
                report.cells.push_back(std::move(int_cell));
            }
        }
    };
    if (model)
        collect("model", [](const JobResult& r) { return &r.model; });
    if (cfg.include_baseline)
        collect("baseline", [](const JobResult& r) { return &r.baseline; });
    if (cfg.include_oracle)
        collect("oracle", [](const JobResult& r) { return &r.oracle; });
    return report;
}

void write_report(const EvalReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const auto& kv : report.metadata) out << "# " << kv.first << "=" << kv.second << "\n";
    out << "record\tmodel\ttask\tscenario\tnodes\tdataset\trmse\n";
    for (const auto& cell : report.cells)
        for (size_t k = 0; k < cell.per_dataset.size(); ++k)
            out << "dataset\t" << cell.model << "\t" << to_string(cell.task) << "\t"
                << cell.scenario << "\t" << cell.node_count << "\t" << k << "\t"
                << fmt_double(cell.per_dataset[k]) << "\n";
    out << "record\tmodel\ttask\tscenario\tnodes\tcount\tmean\tstderr\n";
    for (const auto& cell : report.cells)
        out << "aggregate\t" << cell.model << "\t" << to_string(cell.task) << "\t" << cell.scenario
            << "\t" << cell.node_count << "\t" << cell.per_dataset.size() << "\t"
            << fmt_double(cell.mean()) << "\t" << fmt_double(cell.stderr_mean()) << "\n";
    if (!out) throw DataError("report: write failed");
}

EvalReport read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    EvalReport report;
    std::map<std::string, EvalCell> cells;  // keyed by model|task|scenario|nodes
    std::map<std::string, std::pair<double, double>> aggregates;
    std::string line;
    auto task_from = [](const std::string& s) {
        if (s == "noise") return EvalTask::NoisePrediction;
        if (s == "generation") return EvalTask::Generation;
        if (s == "intervention") return EvalTask::Intervention;
        throw DataError("report: unknown task " + s);
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto eq = line.find('=');
            if (eq != std::string::npos)
                report.metadata[line.substr(2, eq - 2)] = line.substr(eq + 1);
            continue;
        }
        std::istringstream is(line);
        std::vector<std::string> tok;
        std::string t;
        while (std::getline(is, t, '\t')) tok.push_back(t);
        if (tok.empty() || tok[0] == "record") continue;
        if (tok[0] == "dataset" && tok.size() == 7) {
            std::string key = tok[1] + "|" + tok[2] + "|" + tok[3] + "|" + tok[4];
            auto [it, fresh] = cells.try_emplace(
                key, EvalCell{tok[1], task_from(tok[2]), tok[3], std::stoi(tok[4]), {}});
            it->second.per_dataset.push_back(std::stod(tok[6]));
        } else if (tok[0] == "aggregate" && tok.size() == 8) {
            std::string key = tok[1] + "|" + tok[2] + "|" + tok[3] + "|" + tok[4];
            aggregates[key] = {std::stod(tok[6]), std::stod(tok[7])};
        }
    }
    for (auto& [key, cell] : cells) {
        auto it = aggregates.find(key);
        if (it == aggregates.end()) throw DataError("report: missing aggregate for " + key);
        // header aggregates must reproduce from the per-dataset rows exactly
        if (fmt_double(cell.mean()) != fmt_double(it->second.first) ||
            fmt_double(cell.stderr_mean()) != fmt_double(it->second.second))
            throw DataError("report: aggregate mismatch for " + key);
        report.cells.push_back(std::move(cell));
    }
    return report;
}

RealDataReport real_data_protocol(const Dataset& data, const ModelFactory& factory,
                                  uint64_t seed) {
    int n = data.rows();
    if (n < 4) throw DataError("real_data_protocol: need at least 4 rows");
    int half = n / 2;
    Tensor<double> train = slice_rows(data.x, 0, half);
    Tensor<double> test = slice_rows(data.x, half, n - half);
    Standardizer st = Standardizer::fit(train);
    Tensor<double> train_std = st.apply(train);

    std::unique_ptr<FunctionalModel> f = factory(data.dag, st, train_std);
    InferenceEngine engine(*f);
    Tensor<double> noise_hat = engine.predict_noise(train_std);

    // reconstruction: regenerate the train split from its abducted noise
    Tensor<double> recon = st.invert(engine.generate(noise_hat));

    // per-node gaussian refit of the abducted noise, then fresh samples
    int d = data.nodes();
    Tensor<double> fresh({half, d});
    auto rng = make_engine(derive_seed(seed, 0x4eafda7aULL, 1));
    std::normal_distribution<double> g(0.0, 1.0);
    for (int j = 0; j < d; ++j) {
        double m = 0, var = 0;
        for (int r = 0; r < half; ++r) m += noise_hat.at2(r, j);
        m /= half;
        for (int r = 0; r < half; ++r) {
            double dv = noise_hat.at2(r, j) - m;
            var += dv * dv;
        }
        var /= half;
        double sd = std::sqrt(var);
        for (int r = 0; r < half; ++r) fresh.at2(r, j) = m + sd * g(rng);
    }
    Tensor<double> sampled = st.invert(engine.generate(fresh));

    RealDataReport out{};
    out.mmd_sampled = mmd_rbf(sampled, test);
    out.mmd_reconstructed = mmd_rbf(recon, test);
    out.mmd_train_test = mmd_rbf(train, test);
    return out;
}

ModelFactory cond_fip_factory(const TrainedModel& model) {
    return [&model](const Dag& dag, const Standardizer&, const Tensor<double>& train_std) {
        return std::unique_ptr<FunctionalModel>(std::make_unique<CondFipFunctional>(
            &model.params, model.encoder, model.decoder, dag, train_std));
    };
}

}  // namespace zeroscm
