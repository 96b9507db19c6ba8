#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "zeroscm/dataset.hpp"
#include "zeroscm/rng.hpp"
#include "zeroscm/scm.hpp"

using namespace zeroscm;

namespace {

Scm linear_chain(double weight) {
    // X1 = N1, X2 = weight * X1 + N2
    Scm scm;
    scm.dag = Dag(2);
    scm.dag.set_edge(0, 1);
    scm.mechanisms.nodes = {LinearMechanism{}, LinearMechanism{{weight}, 0.0}};
    scm.noise = {NoiseFamily::Gaussian, {1.0, 1.0}};
    return scm;
}

bool order_respects_edges(const Dag& dag, const std::vector<int>& order) {
    std::vector<int> pos(dag.d);
    for (int i = 0; i < dag.d; ++i) pos[order[static_cast<size_t>(i)]] = i;
    for (int i = 0; i < dag.d; ++i)
        for (int j = 0; j < dag.d; ++j)
            if (dag.parent(i, j) && pos[j] >= pos[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("erdos-renyi edge cases") {
    auto cfg = make_distribution(DistTag::In, MechTag::Lin, 5);
    cfg.schemes = {GraphScheme::ErdosRenyi};
    auto rng = make_engine(42);

    cfg.er_edge_prob = 0.0;
    CHECK(sample_dag(cfg, rng).edge_count() == 0);

    cfg.er_edge_prob = 1.0;
    Dag full = sample_dag(cfg, rng);
    CHECK(full.edge_count() == 10);
    // complete DAG: strictly triangular under the sampled order
    auto order = topological_order(full);
    CHECK(order_respects_edges(full, order));

    cfg.er_edge_prob = 1.5;
    CHECK_THROWS_AS(sample_dag(cfg, rng), DataError);
}

TEST_CASE("erdos-renyi mean edge count matches binomial moments") {
    auto cfg = make_distribution(DistTag::In, MechTag::Lin, 20);
    cfg.schemes = {GraphScheme::ErdosRenyi};
    cfg.er_edge_prob = 0.15;
    auto rng = make_engine(1234);
    const int draws = 10000;
    double total = 0;
    for (int i = 0; i < draws; ++i) total += sample_dag(cfg, rng).edge_count();
    double mean = total / draws;
    double pair_count = 20.0 * 19.0 / 2.0;
    double expect = pair_count * 0.15;  // 28.5
    double sigma = std::sqrt(pair_count * 0.15 * 0.85 / draws);
    CHECK(std::abs(mean - expect) < 3.0 * sigma);
}

TEST_CASE("topological order") {
    Dag empty(4);
    CHECK(topological_order(empty) == std::vector<int>{0, 1, 2, 3});

    Dag chain(3);
    chain.set_edge(0, 1);
    chain.set_edge(1, 2);
    CHECK(topological_order(chain) == std::vector<int>{0, 1, 2});

    Dag cyc(2);
    cyc.set_edge(0, 1);
    cyc.set_edge(1, 0);
    CHECK_THROWS_AS(topological_order(cyc), DataError);

    auto cfg = make_distribution(DistTag::In, MechTag::Lin, 12);
    auto rng = make_engine(5);
    for (int i = 0; i < 50; ++i) {
        Dag dag = sample_dag(cfg, rng);
        CHECK(order_respects_edges(dag, topological_order(dag)));
    }
}

TEST_CASE("sampled graphs are acyclic across schemes and configs") {
    auto rng = make_engine(9);
    int count = 0;
    for (int rep = 0; rep < 2500; ++rep) {
        for (DistTag tag : {DistTag::In, DistTag::Out}) {
            std::uniform_int_distribution<int> dsize(2, 24);
            auto cfg = make_distribution(tag, MechTag::Lin, dsize(rng));
            Dag dag = sample_dag(cfg, rng);
            CHECK_NOTHROW(topological_order(dag));
            ++count;
        }
    }
    CHECK(count >= 5000);
}

TEST_CASE("mechanism construction") {
    auto cfg = make_distribution(DistTag::In, MechTag::Lin, 2);
    Dag chain(2);
    chain.set_edge(0, 1);
    auto rng = make_engine(3);
    MechanismSpec lin = sample_mechanisms(cfg, chain, rng);

    // root: F == 0
    double row[2] = {3.7, -1.2};
    Scm scm{chain, lin, {NoiseFamily::Gaussian, {1, 1}}};
    CHECK(evaluate_node(scm, 0, row) == 0.0);

    // explicit chain weight 2: F2(x1) = 2 x1
    Scm built = linear_chain(2.0);
    CHECK(evaluate_node(built, 1, row) == doctest::Approx(7.4).epsilon(1e-15));

    // rff with zero amplitudes is identically zero
    cfg.mechanisms = MechTag::Rff;
    MechanismSpec rff = sample_mechanisms(cfg, chain, rng);
    auto& mech = std::get<RffMechanism>(rff.nodes[1]);
    std::fill(mech.amp.begin(), mech.amp.end(), 0.0);
    Scm scm2{chain, rff, {NoiseFamily::Gaussian, {1, 1}}};
    CHECK(evaluate_node(scm2, 1, row) == 0.0);

    // sampled weights stay inside the configured magnitude band
    cfg = make_distribution(DistTag::In, MechTag::Lin, 6);
    for (int rep = 0; rep < 40; ++rep) {
        Dag dag = sample_dag(cfg, rng);
        MechanismSpec spec = sample_mechanisms(cfg, dag, rng);
        for (int i = 0; i < dag.d; ++i) {
            if (!std::holds_alternative<LinearMechanism>(spec.nodes[static_cast<size_t>(i)]))
                continue;
            for (double w : std::get<LinearMechanism>(spec.nodes[static_cast<size_t>(i)]).weights) {
                CHECK(std::abs(w) >= 0.5);
                CHECK(std::abs(w) <= 2.0);
            }
        }
    }
}

TEST_CASE("noise sampling moments and validation") {
    auto rng = make_engine(77);
    NoiseSpec gauss{NoiseFamily::Gaussian, {1.0}};
    Tensor<double> g = sample_noise(gauss, 100000, rng);
    double var = 0, mean = 0;
    for (double v : g.data) mean += v;
    mean /= g.numel();
    for (double v : g.data) var += (v - mean) * (v - mean);
    var /= g.numel();
    // var(sample variance) ~ 2 sigma^4 / n
    CHECK(std::abs(var - 1.0) < 3.0 * std::sqrt(2.0 / 100000.0));

    NoiseSpec lap{NoiseFamily::Laplace, {0.8}};
    Tensor<double> l = sample_noise(lap, 100000, rng);
    double lvar = 0, lmean = 0;
    for (double v : l.data) lmean += v;
    lmean /= l.numel();
    for (double v : l.data) lvar += (v - lmean) * (v - lmean);
    lvar /= l.numel();
    double expect = 2.0 * 0.8 * 0.8;  // Laplace variance 2 b^2
    CHECK(std::abs(lvar - expect) / expect < 0.05);

    NoiseSpec zero{NoiseFamily::Gaussian, {0.0}};
    CHECK_THROWS_AS(sample_noise(zero, 10, rng), DataError);
}

TEST_CASE("ancestral generation") {
    Scm chain = linear_chain(2.0);

    Tensor<double> zero({3, 2});
    Tensor<double> x0 = generate_observations(chain, zero);
    for (double v : x0.data) CHECK(v == 0.0);

    Tensor<double> n = Tensor<double>::from({1, 2}, {1.0, 0.5});
    Tensor<double> x = generate_observations(chain, n);
    CHECK(x.at2(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(x.at2(0, 1) == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("ancestral evaluation equals fixed-point iteration") {
    auto rng = make_engine(100);
    for (int rep = 0; rep < 50; ++rep) {
        MechTag mech = rep % 2 == 0 ? MechTag::Lin : MechTag::Rff;
        auto cfg = make_distribution(rep % 3 == 0 ? DistTag::Out : DistTag::In, mech, 10);
        SampledScm s = sample_scm(cfg, rng);
        Tensor<double> noise = sample_noise(s.scm.noise, 7, rng);
        Tensor<double> anc = generate_observations(s.scm, noise);
        Tensor<double> fp = generate_fixed_point(s.scm, noise, s.scm.dag.d);
        for (size_t i = 0; i < anc.data.size(); ++i)
            CHECK(std::abs(anc.data[i] - fp.data[i]) < 1e-9);
    }
}

TEST_CASE("generated data satisfies X - F(X) = N") {
    auto rng = make_engine(200);
    for (int rep = 0; rep < 30; ++rep) {
        auto cfg = make_distribution(DistTag::In, rep % 2 ? MechTag::Rff : MechTag::Lin, 8);
        SampledScm s = sample_scm(cfg, rng);
        Tensor<double> noise = sample_noise(s.scm.noise, 5, rng);
        Tensor<double> x = generate_observations(s.scm, noise);
        Tensor<double> f = evaluate_functional(s.scm, x);
        for (size_t i = 0; i < x.data.size(); ++i)
            CHECK(std::abs(x.data[i] - f.data[i] - noise.data[i]) < 1e-9);
    }
}

TEST_CASE("interventions") {
    Scm chain = linear_chain(2.0);
    Tensor<double> n = Tensor<double>::from({1, 2}, {1.0, 0.5});

    Scm done = intervene(chain, 0, 0.0);
    Tensor<double> x = generate_observations(done, n);
    CHECK(x.at2(0, 0) == 0.0);
    CHECK(x.at2(0, 1) == doctest::Approx(0.5).epsilon(1e-15));

    // leaf intervention: other coordinates unchanged for fixed noise
    Scm leaf = intervene(chain, 1, 9.0);
    Tensor<double> xl = generate_observations(leaf, n);
    CHECK(xl.at2(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(xl.at2(0, 1) == 9.0);

    // repeated intervention keeps only the last value
    Scm twice = intervene(intervene(chain, 0, 5.0), 0, -2.0);
    Tensor<double> xt = generate_observations(twice, n);
    CHECK(xt.at2(0, 0) == -2.0);

    CHECK_THROWS_AS(intervene(chain, 7, 0.0), DataError);
}

TEST_CASE("interventional data matches observational on non-descendants") {
    auto rng = make_engine(321);
    for (int rep = 0; rep < 25; ++rep) {
        auto cfg = make_distribution(DistTag::In, MechTag::Lin, 8);
        SampledScm s = sample_scm(cfg, rng);
        Tensor<double> noise = sample_noise(s.scm.noise, 4, rng);
        Tensor<double> base = generate_observations(s.scm, noise);
        std::uniform_int_distribution<int> pick(0, 7);
        int node = pick(rng);
        Tensor<double> intervened = generate_observations(intervene(s.scm, node, 1.5), noise);
        // brute-force reachability through child edges
        std::vector<uint8_t> desc = descendants(s.scm.dag, node);
        for (int r = 0; r < 4; ++r)
            for (int j = 0; j < 8; ++j)
                if (j != node && !desc[static_cast<size_t>(j)])
                    CHECK(intervened.at2(r, j) == doctest::Approx(base.at2(r, j)).epsilon(1e-12));
    }
}

TEST_CASE("preset composition") {
    auto rng = make_engine(404);
    auto in_cfg = make_distribution(DistTag::In, MechTag::Both, 20);
    CHECK(in_cfg.d == 20);
    for (int rep = 0; rep < 10; ++rep) {
        SampledScm s = sample_scm(in_cfg, rng);
        CHECK((s.scheme == GraphScheme::ErdosRenyi || s.scheme == GraphScheme::ScaleFree));
        CHECK(s.scm.noise.family == NoiseFamily::Gaussian);
        CHECK((s.kind == MechTag::Lin || s.kind == MechTag::Rff));
    }
    auto out_cfg = make_distribution(DistTag::Out, MechTag::Both, 20);
    for (int rep = 0; rep < 10; ++rep) {
        SampledScm s = sample_scm(out_cfg, rng);
        CHECK((s.scheme == GraphScheme::WattsStrogatz || s.scheme == GraphScheme::StochasticBlock));
        CHECK(s.scm.noise.family == NoiseFamily::Laplace);
    }
    // LIN restriction yields linear mechanisms only
    auto lin_cfg = make_distribution(DistTag::In, MechTag::Lin, 10);
    for (int rep = 0; rep < 5; ++rep) {
        SampledScm s = sample_scm(lin_cfg, rng);
        CHECK(s.kind == MechTag::Lin);
        for (const auto& m : s.scm.mechanisms.nodes)
            CHECK(!std::holds_alternative<RffMechanism>(m));
    }
}

TEST_CASE("dataset serialization") {
    auto rng = make_engine(7);
    auto cfg = make_distribution(DistTag::In, MechTag::Lin, 6);
    SampledScm s = sample_scm(cfg, rng);
    Dataset ds;
    ds.dag = s.scm.dag;
    ds.noise = sample_noise(s.scm.noise, 12, rng);
    ds.x = generate_observations(s.scm, *ds.noise);
    ds.meta.seed = 7;
    ds.meta.preset = "IN";
    ds.meta.mechanism = "LIN";
    ds.meta.extra["note"] = "round-trip";

    std::ostringstream buf;
    serialize_dataset(ds, buf);
    std::string bytes = buf.str();

    std::istringstream in(bytes);
    Dataset back = deserialize_dataset(in);
    CHECK(back.x.data == ds.x.data);  // bitwise
    CHECK(back.noise.has_value());
    CHECK(back.noise->data == ds.noise->data);
    CHECK(back.dag.adj == ds.dag.adj);
    CHECK(back.meta.seed == 7);
    CHECK(back.meta.preset == "IN");
    CHECK(back.meta.extra.at("note") == "round-trip");

    // second serialization of the load is byte-identical
    std::ostringstream buf2;
    serialize_dataset(back, buf2);
    CHECK(buf2.str() == bytes);

    // corrupted magic
    std::string corrupt = bytes;
    corrupt[0] = 'X';
    std::istringstream bad(corrupt);
    CHECK_THROWS_AS(deserialize_dataset(bad), DataError);

    // truncated payload
    std::istringstream trunc(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(deserialize_dataset(trunc), DataError);

    // noise absent round trip
    Dataset no_noise = ds;
    no_noise.noise.reset();
    std::ostringstream buf3;
    serialize_dataset(no_noise, buf3);
    std::istringstream in3(buf3.str());
    CHECK(!deserialize_dataset(in3).noise.has_value());
}

TEST_CASE("seeded determinism of simulation") {
    auto run = [](uint64_t seed) {
        auto rng = make_engine(seed);
        auto cfg = make_distribution(DistTag::In, MechTag::Both, 10);
        SampledScm s = sample_scm(cfg, rng);
        Tensor<double> noise = sample_noise(s.scm.noise, 20, rng);
        Dataset ds;
        ds.dag = s.scm.dag;
        ds.noise = noise;
        ds.x = generate_observations(s.scm, noise);
        ds.meta.seed = seed;
        std::ostringstream buf;
        serialize_dataset(ds, buf);
        return buf.str();
    };
    CHECK(run(99) == run(99));
    CHECK(run(99) != run(100));
}

TEST_CASE("standardizer round trips") {
    auto rng = make_engine(55);
    auto cfg = make_distribution(DistTag::In, MechTag::Lin, 4);
    SampledScm s = sample_scm(cfg, rng);
    Tensor<double> noise = sample_noise(s.scm.noise, 64, rng);
    Tensor<double> x = generate_observations(s.scm, noise);
    Standardizer st = Standardizer::fit(x);
    Tensor<double> z = st.apply(x);
    // standardized columns: zero mean, unit variance
    for (int j = 0; j < 4; ++j) {
        double m = 0, v = 0;
        for (int r = 0; r < 64; ++r) m += z.at2(r, j);
        m /= 64;
        for (int r = 0; r < 64; ++r) v += (z.at2(r, j) - m) * (z.at2(r, j) - m);
        v /= 64;
        CHECK(std::abs(m) < 1e-12);
        CHECK(v == doctest::Approx(1.0).epsilon(1e-10));
    }
    Tensor<double> xr = st.invert(z);
    for (size_t i = 0; i < x.data.size(); ++i)
        CHECK(xr.data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));
}
