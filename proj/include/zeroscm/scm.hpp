#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "zeroscm/tensor.hpp"

namespace zeroscm {

/// Directed acyclic graph over d nodes. adj is d x d row-major with
/// adj[i*d + j] == 1 meaning node j is a parent of node i.
struct Dag {
    int d = 0;
    std::vector<uint8_t> adj;

    Dag() = default;
    explicit Dag(int nodes) : d(nodes), adj(static_cast<size_t>(nodes) * nodes, 0) {}

    bool parent(int i, int j) const { return adj[static_cast<size_t>(i) * d + j] != 0; }
    void set_edge(int parent_node, int child_node) {
        adj[static_cast<size_t>(child_node) * d + parent_node] = 1;
    }
    std::vector<int> parents(int i) const {
        std::vector<int> out;
        for (int j = 0; j < d; ++j)
            if (parent(i, j)) out.push_back(j);
        return out;
    }
    int edge_count() const {
        int c = 0;
        for (uint8_t v : adj) c += v;
        return c;
    }
};

/// Kahn order with the lowest-index-first tie break. Throws DataError when the
/// graph has a cycle.
std::vector<int> topological_order(const Dag& dag);

/// Longest root-to-node path length; the number of fixed-point iterations
/// needed for exact reconstruction.
int graph_depth(const Dag& dag);

/// All nodes reachable from `node` through child edges (node itself excluded).
std::vector<uint8_t> descendants(const Dag& dag, int node);

enum class NoiseFamily { Gaussian, Laplace };

struct NoiseSpec {
    NoiseFamily family = NoiseFamily::Gaussian;
    std::vector<double> scale;  // strictly positive, one per node
};

struct LinearMechanism {
    std::vector<double> weights;  // aligned with Dag::parents(i)
    double bias = 0.0;
};

// f(x) = out_scale * sqrt(2/K) * sum_k amp[k] * cos(<freq_k, x> + phase[k]) + bias
struct RffMechanism {
    int features = 0;
    std::vector<double> freq;   // features x n_parents, row-major
    std::vector<double> phase;  // features
    std::vector<double> amp;    // features
    double out_scale = 1.0;
    double bias = 0.0;
};

struct ConstantMechanism {
    double value = 0.0;  // intervened node: no parents, no noise
};

using NodeMechanism = std::variant<LinearMechanism, RffMechanism, ConstantMechanism>;

struct MechanismSpec {
    std::vector<NodeMechanism> nodes;
};

struct Scm {
    Dag dag;
    MechanismSpec mechanisms;
    NoiseSpec noise;
};

enum class DistTag { In, Out };
enum class MechTag { Both, Lin, Rff };
enum class GraphScheme { ErdosRenyi, ScaleFree, WattsStrogatz, StochasticBlock };

std::string to_string(DistTag t);
std::string to_string(MechTag t);
std::string to_string(GraphScheme s);

struct ScmDistributionConfig {
    int d = 20;
    std::vector<GraphScheme> schemes;  // uniform choice per SCM
    double er_edge_prob = 0.15;
    int sf_out_stubs = 2;
    int ws_ring_degree = 4;
    double ws_rewire_prob = 0.3;
    int sbm_min_blocks = 2, sbm_max_blocks = 4;
    double sbm_within_prob = 0.4, sbm_between_prob = 0.06;
    NoiseFamily noise_family = NoiseFamily::Gaussian;
    double noise_scale_lo = 0.5, noise_scale_hi = 1.5;
    MechTag mechanisms = MechTag::Both;
    double linear_weight_lo = 0.5, linear_weight_hi = 2.0;
    int rff_features = 128;
    double rff_lengthscale_lo = 3.0, rff_lengthscale_hi = 10.0;
    double rff_output_scale_lo = 1.0, rff_output_scale_hi = 3.0;
    DistTag tag = DistTag::In;
};

/// Preset factory. In: {ER, scale-free} graphs, gaussian noise, RFF
/// lengthscale [3,10], output scale [1,3]. Out: {Watts-Strogatz, SBM},
/// laplace noise with scale [0.5,1.5], lengthscale [1,3], output scale [3,6].
ScmDistributionConfig make_distribution(DistTag tag, MechTag mech, int d);

Dag sample_dag(const ScmDistributionConfig& cfg, std::mt19937_64& rng);

/// cfg.mechanisms must be Lin or Rff here; sample_scm resolves Both first.
MechanismSpec sample_mechanisms(const ScmDistributionConfig& cfg, const Dag& dag,
                                std::mt19937_64& rng);
NoiseSpec sample_noise_spec(const ScmDistributionConfig& cfg, std::mt19937_64& rng);

/// n i.i.d. rows from the per-node noise distributions.
Tensor<double> sample_noise(const NoiseSpec& spec, int n, std::mt19937_64& rng);

/// F_i applied to one full coordinate row (reads only parent coordinates).
double evaluate_node(const Scm& scm, int node, const double* row);

/// Row-wise F(x) for every row of x.
Tensor<double> evaluate_functional(const Scm& scm, const Tensor<double>& x);

/// Ancestral evaluation in topological order: X_i = F_i(PA) + N_i.
Tensor<double> generate_observations(const Scm& scm, const Tensor<double>& noise);

/// Fixed-point route: x <- F(x) + N for `iters` sweeps starting from x = N.
Tensor<double> generate_fixed_point(const Scm& scm, const Tensor<double>& noise, int iters);

/// do(X_node = value): constant mechanism, incoming edges removed, noise
/// contribution dropped.
Scm intervene(const Scm& scm, int node, double value);

struct SampledScm {
    Scm scm;
    GraphScheme scheme;
    MechTag kind;  // Lin or Rff after resolution
};

SampledScm sample_scm(const ScmDistributionConfig& cfg, std::mt19937_64& rng);

}  // namespace zeroscm
