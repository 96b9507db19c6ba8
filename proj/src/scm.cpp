#include "zeroscm/scm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <set>

namespace zeroscm {

std::string to_string(DistTag t) { return t == DistTag::In ? "IN" : "OUT"; }
std::string to_string(MechTag t) {
    switch (t) {
        case MechTag::Both: return "BOTH";
        case MechTag::Lin: return "LIN";
        case MechTag::Rff: return "RFF";
    }
    return "?";
}
std::string to_string(GraphScheme s) {
    switch (s) {
        case GraphScheme::ErdosRenyi: return "er";
        case GraphScheme::ScaleFree: return "sf";
        case GraphScheme::WattsStrogatz: return "ws";
        case GraphScheme::StochasticBlock: return "sbm";
    }
    return "?";
}

std::vector<int> topological_order(const Dag& dag) {
    int d = dag.d;
    std::vector<int> indegree(d, 0);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            if (dag.parent(i, j)) indegree[i]++;
    std::priority_queue<int, std::vector<int>, std::greater<int>> ready;
    for (int i = 0; i < d; ++i)
        if (indegree[i] == 0) ready.push(i);
    std::vector<int> order;
    order.reserve(d);
    while (!ready.empty()) {
        int u = ready.top();
        ready.pop();
        order.push_back(u);
        for (int i = 0; i < d; ++i) {
            if (dag.parent(i, u) && --indegree[i] == 0) ready.push(i);
        }
    }
    if (static_cast<int>(order.size()) != d) throw DataError("topological_order: cycle detected");
    return order;
}

int graph_depth(const Dag& dag) {
    std::vector<int> order = topological_order(dag);
    std::vector<int> depth(dag.d, 0);
    int best = 0;
    for (int u : order) {
        for (int j : dag.parents(u)) depth[u] = std::max(depth[u], depth[j] + 1);
        best = std::max(best, depth[u]);
    }
    return best;
}

std::vector<uint8_t> descendants(const Dag& dag, int node) {
    std::vector<uint8_t> seen(dag.d, 0);
    std::vector<int> stack{node};
    while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        for (int i = 0; i < dag.d; ++i) {
            if (dag.parent(i, u) && !seen[i]) {
                seen[i] = 1;
                stack.push_back(i);
            }
        }
    }
    seen[node] = 0;
    return seen;
}

ScmDistributionConfig make_distribution(DistTag tag, MechTag mech, int d) {
    ScmDistributionConfig cfg;
    cfg.d = d;
    cfg.mechanisms = mech;
    cfg.tag = tag;
    // average in-degree ~1.5 for ER regardless of d
    cfg.er_edge_prob = std::min(1.0, 3.0 / std::max(1, d - 1));
    if (tag == DistTag::In) {
        cfg.schemes = {GraphScheme::ErdosRenyi, GraphScheme::ScaleFree};
        cfg.noise_family = NoiseFamily::Gaussian;
        cfg.noise_scale_lo = 0.5;
        cfg.noise_scale_hi = 1.5;
        cfg.rff_lengthscale_lo = 3.0;
        cfg.rff_lengthscale_hi = 10.0;
        cfg.rff_output_scale_lo = 1.0;
        cfg.rff_output_scale_hi = 3.0;
    } else {
        cfg.schemes = {GraphScheme::WattsStrogatz, GraphScheme::StochasticBlock};
        cfg.noise_family = NoiseFamily::Laplace;
        cfg.noise_scale_lo = 0.5;
        cfg.noise_scale_hi = 1.5;
        cfg.rff_lengthscale_lo = 1.0;
        cfg.rff_lengthscale_hi = 3.0;
        cfg.rff_output_scale_lo = 3.0;
        cfg.rff_output_scale_hi = 6.0;
    }
    return cfg;
}

namespace {

using EdgeSet = std::set<std::pair<int, int>>;  // undirected, first < second

EdgeSet erdos_renyi_edges(int d, double p, std::mt19937_64& rng) {
    if (p < 0.0 || p > 1.0) throw DataError("erdos-renyi edge probability out of [0,1]");
    EdgeSet edges;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j)
            if (u(rng) < p) edges.insert({i, j});
    return edges;
}

EdgeSet scale_free_edges(int d, int m, std::mt19937_64& rng) {
    if (m < 1) throw DataError("scale-free out-stub count must be >= 1");
    EdgeSet edges;
    std::vector<int> pool;  // one entry per edge endpoint; seeds once per node
    for (int i = 0; i < std::min(m, d); ++i) pool.push_back(i);
    for (int t = std::min(m, d); t < d; ++t) {
        std::set<int> targets;
        int want = std::min(m, t);
        while (static_cast<int>(targets.size()) < want) {
            std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
            targets.insert(pool[pick(rng)]);
        }
        for (int v : targets) {
            edges.insert({std::min(t, v), std::max(t, v)});
            pool.push_back(v);
            pool.push_back(t);
        }
    }
    return edges;
}

EdgeSet watts_strogatz_edges(int d, int k, double beta, std::mt19937_64& rng) {
    EdgeSet edges;
    int half = std::max(1, k / 2);
    for (int i = 0; i < d; ++i) {
        for (int j = 1; j <= half; ++j) {
            int v = (i + j) % d;
            if (v == i) continue;
            edges.insert({std::min(i, v), std::max(i, v)});
        }
    }
    // rewire each lattice edge with probability beta
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> pick(0, d - 1);
    EdgeSet rewired;
    for (auto [a, b] : edges) {
        if (u(rng) < beta) {
            int tries = 0;
            while (tries++ < 32) {
                int v = pick(rng);
                if (v == a) continue;
                auto e = std::make_pair(std::min(a, v), std::max(a, v));
                if (rewired.count(e) || edges.count(e)) continue;
                rewired.insert(e);
                break;
            }
            if (tries >= 32) rewired.insert({a, b});  // dense graph: keep original
        } else {
            rewired.insert({a, b});
        }
    }
    return rewired;
}

EdgeSet sbm_edges(int d, const ScmDistributionConfig& cfg, std::mt19937_64& rng) {
    int max_blocks = std::min(cfg.sbm_max_blocks, d);
    int min_blocks = std::min(cfg.sbm_min_blocks, max_blocks);
    std::uniform_int_distribution<int> bcount(min_blocks, max_blocks);
    int blocks = bcount(rng);
    std::uniform_int_distribution<int> assign(0, blocks - 1);
    std::vector<int> block(d);
    for (int i = 0; i < d; ++i) block[i] = assign(rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    EdgeSet edges;
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            double p = block[i] == block[j] ? cfg.sbm_within_prob : cfg.sbm_between_prob;
            if (u(rng) < p) edges.insert({i, j});
        }
    return edges;
}

}  // namespace

Dag sample_dag(const ScmDistributionConfig& cfg, std::mt19937_64& rng) {
    if (cfg.d < 1) throw DataError("sample_dag: d must be >= 1");
    if (cfg.schemes.empty()) throw DataError("sample_dag: no graph schemes configured");
    std::uniform_int_distribution<size_t> pick(0, cfg.schemes.size() - 1);
    GraphScheme scheme = cfg.schemes[pick(rng)];

    EdgeSet edges;
    switch (scheme) {
        case GraphScheme::ErdosRenyi:
            edges = erdos_renyi_edges(cfg.d, cfg.er_edge_prob, rng);
            break;
        case GraphScheme::ScaleFree:
            edges = scale_free_edges(cfg.d, cfg.sf_out_stubs, rng);
            break;
        case GraphScheme::WattsStrogatz:
            edges = watts_strogatz_edges(cfg.d, cfg.ws_ring_degree, cfg.ws_rewire_prob, rng);
            break;
        case GraphScheme::StochasticBlock:
            edges = sbm_edges(cfg.d, cfg, rng);
            break;
    }

    // orient along a uniformly random node permutation: earlier -> later
    std::vector<int> perm(cfg.d);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> pos(cfg.d);
    for (int i = 0; i < cfg.d; ++i) pos[perm[i]] = i;

    Dag dag(cfg.d);
    for (auto [a, b] : edges) {
        if (pos[a] < pos[b])
            dag.set_edge(a, b);
        else
            dag.set_edge(b, a);
    }
    return dag;
}

MechanismSpec sample_mechanisms(const ScmDistributionConfig& cfg, const Dag& dag,
                                std::mt19937_64& rng) {
    if (cfg.mechanisms == MechTag::Both)
        throw DataError("sample_mechanisms: resolve Both to Lin or Rff first");
    MechanismSpec spec;
    spec.nodes.resize(static_cast<size_t>(dag.d));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int i = 0; i < dag.d; ++i) {
        std::vector<int> pa = dag.parents(i);
        if (pa.empty()) {
            spec.nodes[static_cast<size_t>(i)] = LinearMechanism{};  // F_i == 0
            continue;
        }
        if (cfg.mechanisms == MechTag::Lin) {
            LinearMechanism mech;
            mech.weights.resize(pa.size());
            for (double& w : mech.weights) {
                double mag = cfg.linear_weight_lo +
                             (cfg.linear_weight_hi - cfg.linear_weight_lo) * u01(rng);
                w = (u01(rng) < 0.5 ? -1.0 : 1.0) * mag;
            }
            spec.nodes[static_cast<size_t>(i)] = std::move(mech);
        } else {
            RffMechanism mech;
            mech.features = cfg.rff_features;
            double lengthscale = cfg.rff_lengthscale_lo +
                                 (cfg.rff_lengthscale_hi - cfg.rff_lengthscale_lo) * u01(rng);
            std::normal_distribution<double> freq(0.0, 1.0 / lengthscale);
            std::normal_distribution<double> std_normal(0.0, 1.0);
            mech.freq.resize(static_cast<size_t>(mech.features) * pa.size());
            for (double& f : mech.freq) f = freq(rng);
            mech.phase.resize(static_cast<size_t>(mech.features));
            for (double& p : mech.phase) p = 2.0 * M_PI * u01(rng);
            mech.amp.resize(static_cast<size_t>(mech.features));
            for (double& a : mech.amp) a = std_normal(rng);
            mech.out_scale = cfg.rff_output_scale_lo +
                             (cfg.rff_output_scale_hi - cfg.rff_output_scale_lo) * u01(rng);
            spec.nodes[static_cast<size_t>(i)] = std::move(mech);
        }
    }
    return spec;
}

NoiseSpec sample_noise_spec(const ScmDistributionConfig& cfg, std::mt19937_64& rng) {
    NoiseSpec spec;
    spec.family = cfg.noise_family;
    spec.scale.resize(static_cast<size_t>(cfg.d));
    std::uniform_real_distribution<double> u(cfg.noise_scale_lo, cfg.noise_scale_hi);
    for (double& s : spec.scale) s = u(rng);
    return spec;
}

Tensor<double> sample_noise(const NoiseSpec& spec, int n, std::mt19937_64& rng) {
    if (n < 1) throw DataError("sample_noise: n must be >= 1");
    int d = static_cast<int>(spec.scale.size());
    for (double s : spec.scale)
        if (!(s > 0.0)) throw DataError("sample_noise: scales must be strictly positive");
    Tensor<double> out({n, d});
    if (spec.family == NoiseFamily::Gaussian) {
        std::normal_distribution<double> g(0.0, 1.0);
        for (int r = 0; r < n; ++r)
            for (int j = 0; j < d; ++j) out.at2(r, j) = spec.scale[static_cast<size_t>(j)] * g(rng);
    } else {
        // Laplace via inverse CDF of Uniform(-1/2, 1/2)
        std::uniform_real_distribution<double> u(-0.5, 0.5);
        for (int r = 0; r < n; ++r)
            for (int j = 0; j < d; ++j) {
                double v = u(rng);
                double s = spec.scale[static_cast<size_t>(j)];
                out.at2(r, j) = -s * (v < 0 ? -1.0 : 1.0) * std::log(1.0 - 2.0 * std::abs(v));
            }
    }
    return out;
}

double evaluate_node(const Scm& scm, int node, const double* row) {
    const NodeMechanism& mech = scm.mechanisms.nodes[static_cast<size_t>(node)];
    if (std::holds_alternative<ConstantMechanism>(mech))
        return std::get<ConstantMechanism>(mech).value;
    std::vector<int> pa = scm.dag.parents(node);
    if (std::holds_alternative<LinearMechanism>(mech)) {
        const auto& lin = std::get<LinearMechanism>(mech);
        if (lin.weights.size() != pa.size())
            throw DataError("linear mechanism arity mismatch at node " + std::to_string(node));
        double acc = lin.bias;
        for (size_t k = 0; k < pa.size(); ++k) acc += lin.weights[k] * row[pa[k]];
        return acc;
    }
    const auto& rff = std::get<RffMechanism>(mech);
    if (pa.empty()) return rff.bias;
    if (rff.freq.size() != static_cast<size_t>(rff.features) * pa.size())
        throw DataError("rff mechanism arity mismatch at node " + std::to_string(node));
    double acc = 0.0;
    for (int k = 0; k < rff.features; ++k) {
        double dot = rff.phase[static_cast<size_t>(k)];
        const double* fr = rff.freq.data() + static_cast<size_t>(k) * pa.size();
        for (size_t p = 0; p < pa.size(); ++p) dot += fr[p] * row[pa[p]];
        acc += rff.amp[static_cast<size_t>(k)] * std::cos(dot);
    }
    return rff.bias + rff.out_scale * std::sqrt(2.0 / rff.features) * acc;
}

Tensor<double> evaluate_functional(const Scm& scm, const Tensor<double>& x) {
    int n = static_cast<int>(x.shape[0]);
    int d = static_cast<int>(x.shape[1]);
    if (d != scm.dag.d) throw ShapeError("evaluate_functional: node count mismatch");
    Tensor<double> out({n, d});
    for (int r = 0; r < n; ++r) {
        const double* row = x.data.data() + static_cast<size_t>(r) * d;
        for (int i = 0; i < d; ++i) out.at2(r, i) = evaluate_node(scm, i, row);
    }
    return out;
}

Tensor<double> generate_observations(const Scm& scm, const Tensor<double>& noise) {
    int n = static_cast<int>(noise.shape[0]);
    int d = static_cast<int>(noise.shape[1]);
    if (d != scm.dag.d) throw ShapeError("generate_observations: node count mismatch");
    std::vector<int> order = topological_order(scm.dag);
    Tensor<double> x({n, d});
    std::vector<double> row(static_cast<size_t>(d), 0.0);
    for (int r = 0; r < n; ++r) {
        std::fill(row.begin(), row.end(), 0.0);
        for (int i : order) {
            double f = evaluate_node(scm, i, row.data());
            bool constant =
                std::holds_alternative<ConstantMechanism>(scm.mechanisms.nodes[static_cast<size_t>(i)]);
            row[static_cast<size_t>(i)] = constant ? f : f + noise.at2(r, i);
        }
        for (int i = 0; i < d; ++i) x.at2(r, i) = row[static_cast<size_t>(i)];
    }
    return x;
}

Tensor<double> generate_fixed_point(const Scm& scm, const Tensor<double>& noise, int iters) {
    int n = static_cast<int>(noise.shape[0]);
    int d = static_cast<int>(noise.shape[1]);
    Tensor<double> x = noise;
    for (int i = 0; i < d; ++i)
        if (std::holds_alternative<ConstantMechanism>(scm.mechanisms.nodes[static_cast<size_t>(i)]))
            for (int r = 0; r < n; ++r)
                x.at2(r, i) = std::get<ConstantMechanism>(scm.mechanisms.nodes[static_cast<size_t>(i)]).value;
    for (int it = 0; it < iters; ++it) {
        Tensor<double> f = evaluate_functional(scm, x);
        for (int r = 0; r < n; ++r)
            for (int i = 0; i < d; ++i) {
                bool constant = std::holds_alternative<ConstantMechanism>(
                    scm.mechanisms.nodes[static_cast<size_t>(i)]);
                x.at2(r, i) = constant ? f.at2(r, i) : f.at2(r, i) + noise.at2(r, i);
            }
    }
    return x;
}

Scm intervene(const Scm& scm, int node, double value) {
    if (node < 0 || node >= scm.dag.d) throw DataError("intervene: invalid node index");
    Scm out = scm;
    for (int j = 0; j < out.dag.d; ++j) out.dag.adj[static_cast<size_t>(node) * out.dag.d + j] = 0;
    out.mechanisms.nodes[static_cast<size_t>(node)] = ConstantMechanism{value};
    return out;
}

SampledScm sample_scm(const ScmDistributionConfig& cfg, std::mt19937_64& rng) {
    if (cfg.schemes.empty()) throw DataError("sample_scm: no graph schemes configured");
    SampledScm out;
    ScmDistributionConfig resolved = cfg;
    std::uniform_int_distribution<size_t> pick(0, cfg.schemes.size() - 1);
    out.scheme = cfg.schemes[pick(rng)];
    resolved.schemes = {out.scheme};
    if (cfg.mechanisms == MechTag::Both) {
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        resolved.mechanisms = u01(rng) < 0.5 ? MechTag::Lin : MechTag::Rff;
    }
    out.kind = resolved.mechanisms;
    out.scm.dag = sample_dag(resolved, rng);
    out.scm.mechanisms = sample_mechanisms(resolved, out.scm.dag, rng);
    out.scm.noise = sample_noise_spec(resolved, rng);
    return out;
}

}  // namespace zeroscm
