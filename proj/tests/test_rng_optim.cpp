#include <catch2/catch_amalgamated.hpp>

#include "sema/gradcheck.hpp"
#include "sema/optim.hpp"
#include "sema/rng.hpp"

#include <cmath>

using namespace sema;

TEST_CASE("identical (seed, stream) reproduces identical draws", "[rng]") {
    RngStream a(99, 7), b(99, 7);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
    RngStream c(99, 7), d(99, 7);
    for (int i = 0; i < 100; ++i) REQUIRE(c.normal() == d.normal());
}

TEST_CASE("normal draws have correct moments", "[rng]") {
    RngStream rng(2024, 0);
    const int n = 1000000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    double m = s / n;
    double var = s2 / n - m * m;
    REQUIRE(std::abs(m) < 0.01);
    REQUIRE(std::abs(var - 1.0) < 0.01);
}

TEST_CASE("distinct stream ids are uncorrelated", "[rng]") {
    RngStream a(5, 1), b(5, 2);
    const int n = 100000;
    double sa = 0, sb = 0, sab = 0, sa2 = 0, sb2 = 0;
    for (int i = 0; i < n; ++i) {
        double x = a.normal(), y = b.normal();
        sa += x;
        sb += y;
        sab += x * y;
        sa2 += x * x;
        sb2 += y * y;
    }
    double ma = sa / n, mb = sb / n;
    double cov = sab / n - ma * mb;
    double r = cov / std::sqrt((sa2 / n - ma * ma) * (sb2 / n - mb * mb));
    REQUIRE(std::abs(r) < 0.01);
}

TEST_CASE("uniform_int stays in range and hits endpoints", "[rng]") {
    RngStream rng(3, 3);
    bool lo = false, hi = false;
    for (int i = 0; i < 10000; ++i) {
        auto v = rng.uniform_int(1, 8);
        REQUIRE(v >= 1);
        REQUIRE(v <= 8);
        lo = lo || v == 1;
        hi = hi || v == 8;
    }
    REQUIRE(lo);
    REQUIRE(hi);
}

TEST_CASE("forked streams derive deterministically", "[rng]") {
    RngStream root(10, 0);
    auto a1 = root.fork(1), a2 = root.fork(1), b = root.fork(2);
    REQUIRE(a1.next_u64() == a2.next_u64());
    REQUIRE(a1.next_u64() != b.next_u64());
}

TEST_CASE("adam leaves parameters unchanged on zero grad", "[optim]") {
    ParamStore<double> store;
    auto& w = store.add("w", Tensor<double>::param({3}, {1.0, -2.0, 0.5}));
    store.zero_grads();
    auto before = w.data();
    adam_step(store, AdamConfig{0.1, 0.9, 0.999, 1e-8});
    REQUIRE(w.data() == before);
    REQUIRE(store.step() == 1);
}

TEST_CASE("adam requires populated grads", "[optim]") {
    ParamStore<double> store;
    store.add("w", Tensor<double>::param({1}, {1.0}));
    REQUIRE_THROWS_AS(adam_step(store, AdamConfig{}), UsageError);
}

TEST_CASE("one adam step on f(w)=w^2 decreases w", "[optim]") {
    ParamStore<double> store;
    auto& w = store.add("w", Tensor<double>::param({1}, {1.0}));
    store.zero_grads();
    backward(mul(w, w));
    adam_step(store, AdamConfig{0.1, 0.9, 0.999, 1e-8});
    REQUIRE(w.data()[0] < 1.0);
    // grads untouched by the step; caller clears
    REQUIRE(w.grad()[0] == 2.0);
}

TEST_CASE("adam reaches loss < 1e-6 on a convex quadratic in 500 steps", "[optim]") {
    // f(w) = sum((w - c)^2) with fixed targets
    ParamStore<double> store;
    auto& w = store.add("w", Tensor<double>::param({4}, {2.0, -1.0, 0.0, 3.0}));
    auto c = Tensor<double>::constant({4}, {0.5, 0.25, -0.75, 1.0});
    double loss_val = 0;
    for (int step = 0; step < 500; ++step) {
        store.zero_grads();
        auto d = sub(w, c);
        auto loss = sum(mul(d, d));
        loss_val = loss.item();
        backward(loss);
        adam_step(store, AdamConfig{0.05, 0.9, 0.999, 1e-8});
    }
    REQUIRE(loss_val < 1e-6);
}

TEST_CASE("parameter names are unique and shapes immutable", "[optim]") {
    ParamStore<double> store;
    store.add("w", Tensor<double>::param({2}, {0, 0}));
    REQUIRE_THROWS_AS(store.add("w", Tensor<double>::param({2}, {1, 1})), UsageError);
    REQUIRE(store.get("w").shape() == Shape{2});
}

TEST_CASE("cosine schedule warms up then decays to zero", "[optim]") {
    REQUIRE(cosine_lr(0, 1.0, 10, 100) == Catch::Approx(0.1));
    REQUIRE(cosine_lr(9, 1.0, 10, 100) == Catch::Approx(1.0));
    REQUIRE(cosine_lr(10, 1.0, 10, 100) == Catch::Approx(1.0));
    REQUIRE(cosine_lr(55, 1.0, 10, 100) == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(cosine_lr(100, 1.0, 10, 100) == Catch::Approx(0.0).margin(1e-12));
}
