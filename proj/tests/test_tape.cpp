#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "zeroscm/rng.hpp"
#include "zeroscm/tape.hpp"

using namespace zeroscm;

namespace {

Tensor<double> random_tensor(std::vector<int64_t> shape, std::mt19937_64& rng, double lo = -1.5,
                             double hi = 1.5) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<double> t(std::move(shape));
    for (double& v : t.data) v = u(rng);
    return t;
}

// builds loss = mse(out(param-driven graph), target) and checks every param
double worst_fd(Tape<double>& tp, ParamRegistry<double>& reg, int loss, double eps = 1e-4) {
    double worst = 0;
    for (const auto& name : reg.names())
        worst = std::max(worst, finite_difference_check(tp, reg, loss, name, eps));
    return worst;
}

}  // namespace

TEST_CASE("matmul with identity returns the input") {
    Tape<double> tp;
    std::mt19937_64 rng(1);
    Tensor<double> a = random_tensor({3, 3}, rng);
    Tensor<double> eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.at2(i, i) = 1.0;
    int y = tp.matmul(tp.input(a), tp.input(eye));
    for (size_t i = 0; i < a.data.size(); ++i) CHECK(tp.value(y).data[i] == doctest::Approx(a.data[i]).epsilon(1e-15));
}

TEST_CASE("row softmax of an all-zero row is uniform") {
    Tape<double> tp;
    int y = tp.softmax_rows(tp.input(Tensor<double>::zeros({1, 4})));
    for (int j = 0; j < 4; ++j) CHECK(tp.value(y).data[j] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("layer normalization of [1,3] with unit scale and zero shift") {
    Tape<double> tp;
    int y = tp.layer_norm(tp.input(Tensor<double>::from({1, 2}, {1.0, 3.0})));
    CHECK(tp.value(y).data[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(tp.value(y).data[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("gradient of x^2 at x=3 is 6") {
    ParamRegistry<double> reg;
    reg.create("x", Tensor<double>::from({1}, {3.0}));
    Tape<double> tp(&reg);
    int loss = tp.mse(tp.param("x"), tp.input(Tensor<double>::zeros({1})));
    auto g = tp.gradients(loss);
    CHECK(g.at("x").data[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("parameters off the loss path get zero gradients") {
    ParamRegistry<double> reg;
    reg.create("used", Tensor<double>::from({1}, {2.0}));
    reg.create("unused", Tensor<double>::from({2}, {1.0, 1.0}));
    Tape<double> tp(&reg);
    int loss = tp.mse(tp.param("used"), tp.input(Tensor<double>::zeros({1})));
    auto g = tp.gradients(loss);
    CHECK(g.at("unused").shape == std::vector<int64_t>{2});
    CHECK(g.at("unused").data[0] == 0.0);
    CHECK(g.at("unused").data[1] == 0.0);
}

TEST_CASE("mse over softmax matches finite differences") {
    std::mt19937_64 rng(7);
    ParamRegistry<double> reg;
    reg.create("logits", random_tensor({2, 5}, rng));
    Tape<double> tp(&reg);
    int y = tp.softmax_rows(tp.param("logits"));
    int loss = tp.mse(y, tp.input(random_tensor({2, 5}, rng)));
    CHECK(finite_difference_check(tp, reg, loss, "logits", 1e-4) < 1e-4);
}

TEST_CASE("finite differences: linear map is exact, layer norm tight") {
    std::mt19937_64 rng(11);
    ParamRegistry<double> reg;
    reg.create("w", random_tensor({3, 2}, rng));
    reg.create("b", random_tensor({2}, rng));
    Tape<double> tp(&reg);
    int y = tp.affine(tp.input(random_tensor({4, 3}, rng)), tp.param("w"), tp.param("b"));
    int loss = tp.mse(y, tp.input(random_tensor({4, 2}, rng)));
    CHECK(finite_difference_check(tp, reg, loss, "w", 1e-5) < 1e-9);

    ParamRegistry<double> reg2;
    reg2.create("x", random_tensor({3, 6}, rng));
    Tape<double> tp2(&reg2);
    int loss2 = tp2.mse(tp2.layer_norm(tp2.param("x")), tp2.input(random_tensor({3, 6}, rng)));
    CHECK(finite_difference_check(tp2, reg2, loss2, "x", 1e-5) < 1e-5);
}

TEST_CASE("every primitive passes gradient checks across seeds") {
    // one shallow graph per primitive keeps gradient magnitudes well above
    // finite-difference noise
    for (uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(derive_seed(123, seed));

        {  // affine
            ParamRegistry<double> reg;
            reg.create("x", random_tensor({3, 4}, rng));
            reg.create("w", random_tensor({4, 3}, rng));
            reg.create("b", random_tensor({3}, rng));
            Tape<double> tp(&reg);
            int y = tp.affine(tp.param("x"), tp.param("w"), tp.param("b"));
            int loss = tp.mse(y, tp.input(random_tensor({3, 3}, rng)));
            CHECK(worst_fd(tp, reg, loss) < 1e-4);
        }
        {  // batched matmul, shared right operand
            ParamRegistry<double> reg;
            reg.create("a", random_tensor({2, 3, 4}, rng));
            reg.create("b", random_tensor({4, 2}, rng));
            Tape<double> tp(&reg);
            int y = tp.matmul(tp.param("a"), tp.param("b"));
            int loss = tp.mse(y, tp.input(random_tensor({2, 3, 2}, rng)));
            CHECK(worst_fd(tp, reg, loss) < 1e-4);
        }
        {  // transpose + reshape + scale
            ParamRegistry<double> reg;
            reg.create("x", random_tensor({2, 3, 4}, rng));
            Tape<double> tp(&reg);
            int y = tp.scale(tp.reshape(tp.transpose(tp.param("x"), 0, 2), {12, 2}), 1.3);
            int loss = tp.mse(y, tp.input(random_tensor({12, 2}, rng)));
            CHECK(worst_fd(tp, reg, loss) < 1e-4);
        }
        {  // broadcast add and mul
            ParamRegistry<double> reg;
            reg.create("a", random_tensor({2, 3, 4}, rng));
            reg.create("b", random_tensor({3, 4}, rng));
            reg.create("c", random_tensor({3, 1}, rng));
            Tape<double> tp(&reg);
            int y = tp.mul(tp.add(tp.param("a"), tp.param("b")), tp.param("c"));
            int loss = tp.mse(y, tp.input(random_tensor({2, 3, 4}, rng)));
            CHECK(worst_fd(tp, reg, loss) < 1e-4);
        }
        {  // gelu
            ParamRegistry<double> reg;
            reg.create("x", random_tensor({4, 4}, rng));
            Tape<double> tp(&reg);
            int loss = tp.mse(tp.gelu(tp.param("x")), tp.input(random_tensor({4, 4}, rng)));
            CHECK(worst_fd(tp, reg, loss) < 1e-4);
        }
        {  // layer norm
            ParamRegistry<double> reg;
            reg.create("x", random_tensor({3, 6}, rng));
            Tape<double> tp(&reg);
            int loss = tp.mse(tp.layer_norm(tp.param("x")), tp.input(random_tensor({3, 6}, rng)));
            CHECK(worst_fd(tp, reg, loss) < 1e-4);
        }
        {  // masked softmax
            ParamRegistry<double> reg;
            reg.create("x", random_tensor({3, 4}, rng));
            Tensor<uint8_t> blocked({3, 4}, 0);
            blocked.at2(0, 1) = 1;
            blocked.at2(2, 3) = 1;
            Tape<double> tp(&reg);
            int y = tp.softmax_rows(tp.param("x"), blocked);
            int loss = tp.mse(y, tp.input(random_tensor({3, 4}, rng)));
            CHECK(worst_fd(tp, reg, loss) < 1e-4);
        }
    }
}

TEST_CASE("dag softmax gradients away from the denominator switch") {
    int checked = 0;
    for (uint64_t seed = 0; checked < 100; ++seed) {
        std::mt19937_64 rng(derive_seed(321, seed));
        Tensor<double> logits = random_tensor({3, 4}, rng, -3.0, 3.0);
        bool near_switch = false;
        for (int r = 0; r < 3; ++r) {
            double s = 0;
            for (int c = 0; c < 4; ++c) s += std::exp(logits.at2(r, c));
            if (std::abs(s - 1.0) < 1e-3) near_switch = true;
        }
        if (near_switch) continue;  // the normalizer is non-smooth exactly at sum == 1
        ParamRegistry<double> reg;
        reg.create("logits", logits);
        Tape<double> tp(&reg);
        int y = tp.dag_softmax_rows(tp.param("logits"));
        int loss = tp.mse(y, tp.input(random_tensor({3, 4}, rng)));
        CHECK(finite_difference_check(tp, reg, loss, "logits", 1e-4) < 1e-4);
        ++checked;
    }
}

TEST_CASE("max pool gradients away from argmax ties") {
    int checked = 0;
    for (uint64_t seed = 0; checked < 100; ++seed) {
        std::mt19937_64 rng(derive_seed(555, seed));
        Tensor<double> x = random_tensor({4, 3}, rng);
        bool tie = false;
        for (int j = 0; j < 3; ++j) {
            std::vector<double> col;
            for (int i = 0; i < 4; ++i) col.push_back(x.at2(i, j));
            std::sort(col.begin(), col.end());
            if (col[3] - col[2] < 1e-3) tie = true;  // FD would straddle the kink
        }
        if (tie) continue;
        ParamRegistry<double> reg;
        reg.create("x", x);
        Tape<double> tp(&reg);
        int y = tp.max_pool(tp.param("x"), 0);
        int loss = tp.mse(y, tp.input(random_tensor({3}, rng)));
        CHECK(finite_difference_check(tp, reg, loss, "x", 1e-4) < 1e-4);
        ++checked;
    }
}

TEST_CASE("masked softmax conventions") {
    Tape<double> tp;
    std::mt19937_64 rng(3);
    Tensor<uint8_t> blocked({2, 3}, 0);
    for (int j = 0; j < 3; ++j) blocked.at2(0, j) = 1;  // row 0 fully masked
    blocked.at2(1, 2) = 1;
    int y = tp.softmax_rows(tp.input(random_tensor({2, 3}, rng)), blocked);
    const auto& v = tp.value(y);
    for (int j = 0; j < 3; ++j) CHECK(v.at2(0, j) == 0.0);  // exactly zero, never NaN
    CHECK(v.at2(1, 2) == 0.0);                              // masked pair bit-zero
    CHECK(v.at2(1, 0) + v.at2(1, 1) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("dag softmax rows sum in [0,1] and match softmax when sums exceed 1") {
    std::mt19937_64 rng(17);
    for (int rep = 0; rep < 200; ++rep) {
        Tensor<double> logits = random_tensor({4, 4}, rng, -4.0, 4.0);
        Tensor<uint8_t> blocked({4, 4}, 0);
        std::uniform_real_distribution<double> u(0, 1);
        for (auto& m : blocked.data) m = u(rng) < 0.35 ? 1 : 0;
        Tape<double> tp;
        int in = tp.input(logits);
        int dg = tp.dag_softmax_rows(in, blocked);
        int sm = tp.softmax_rows(in, blocked);
        for (int r = 0; r < 4; ++r) {
            double dag_sum = 0, exp_sum = 0;
            for (int c = 0; c < 4; ++c) {
                dag_sum += tp.value(dg).at2(r, c);
                if (!blocked.at2(r, c)) exp_sum += std::exp(logits.at2(r, c));
            }
            CHECK(dag_sum >= 0.0);
            CHECK(dag_sum <= 1.0 + 1e-12);
            if (exp_sum >= 1.0) {
                for (int c = 0; c < 4; ++c)
                    CHECK(tp.value(dg).at2(r, c) ==
                          doctest::Approx(tp.value(sm).at2(r, c)).epsilon(1e-12));
            } else {
                for (int c = 0; c < 4; ++c)
                    if (!blocked.at2(r, c))
                        CHECK(tp.value(dg).at2(r, c) ==
                              doctest::Approx(std::exp(logits.at2(r, c))).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("replay reproduces values bit-identically") {
    std::mt19937_64 rng(23);
    ParamRegistry<double> reg;
    reg.create("w", random_tensor({5, 5}, rng));
    reg.create("b", random_tensor({5}, rng));
    Tape<double> tp(&reg);
    int x = tp.input(random_tensor({3, 5}, rng));
    int y = tp.gelu(tp.affine(x, tp.param("w"), tp.param("b")));
    int z = tp.softmax_rows(tp.layer_norm(y));
    std::vector<double> snapshot = tp.value(z).data;
    tp.replay();
    CHECK(tp.value(z).data == snapshot);  // bitwise
}

TEST_CASE("replay_inference keeps requested outputs and frees scratch") {
    std::mt19937_64 rng(29);
    Tape<double> tp;
    int x = tp.input(random_tensor({4, 4}, rng));
    int a = tp.gelu(x);
    int b = tp.layer_norm(a);
    int c = tp.softmax_rows(b);
    std::vector<double> expect = tp.value(c).data;
    tp.replay_inference({c});
    CHECK(tp.value(c).data == expect);
    CHECK(tp.value(a).data.empty());  // intermediate dropped
}

TEST_CASE("non-finite values raise NumericError") {
    Tape<double> tp;
    Tensor<double> bad = Tensor<double>::from({1}, {std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS(tp.input(bad), NumericError);
    int x = tp.input(Tensor<double>::from({1}, {1e308}));
    CHECK_THROWS_AS(tp.scale(x, 10.0), NumericError);  // overflow to inf
}

TEST_CASE("shape errors are rejected") {
    Tape<double> tp;
    int a = tp.input(Tensor<double>::zeros({2, 3}));
    int b = tp.input(Tensor<double>::zeros({4, 2}));
    CHECK_THROWS_AS(tp.matmul(a, b), ShapeError);
    CHECK_THROWS_AS(tp.mse(a, b), ShapeError);
    CHECK_THROWS_AS(tp.gradients(a), ShapeError);  // loss not scalar
}

TEST_CASE("broadcast add and mul agree with explicit loops") {
    std::mt19937_64 rng(31);
    Tensor<double> big = random_tensor({2, 3, 4}, rng);
    Tensor<double> small = random_tensor({3, 4}, rng);
    Tensor<double> col = random_tensor({3, 1}, rng);
    Tape<double> tp;
    int s = tp.add(tp.input(big), tp.input(small));
    int m = tp.mul(tp.input(big), tp.input(col));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 4; ++k) {
                CHECK(tp.value(s).at3(i, j, k) ==
                      doctest::Approx(big.at3(i, j, k) + small.at2(j, k)).epsilon(1e-15));
                CHECK(tp.value(m).at3(i, j, k) ==
                      doctest::Approx(big.at3(i, j, k) * col.at2(j, 0)).epsilon(1e-15));
            }
}

TEST_CASE("max pool matches a brute-force scan and routes gradients") {
    std::mt19937_64 rng(37);
    ParamRegistry<double> reg;
    reg.create("x", random_tensor({5, 3, 2}, rng));
    Tape<double> tp(&reg);
    int y = tp.max_pool(tp.param("x"), 0);
    const auto& x = reg.get("x");
    for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 2; ++k) {
            double best = -1e300;
            for (int i = 0; i < 5; ++i) best = std::max(best, x.at3(i, j, k));
            CHECK(tp.value(y).at2(j, k) == best);
        }
    int loss = tp.mse(y, tp.input(random_tensor({3, 2}, rng)));
    CHECK(finite_difference_check(tp, reg, loss, "x", 1e-4) < 1e-4);
}
