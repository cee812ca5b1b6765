#include <catch2/catch_amalgamated.hpp>

#include "sema/conv.hpp"
#include "sema/gradcheck.hpp"
#include "sema/rng.hpp"
#include "sema/tensor.hpp"

#include <cmath>

using namespace sema;

namespace {

Tensor<double> random_tensor(RngStream& rng, Shape shape, bool param = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal();
    return param ? Tensor<double>::param(shape, std::move(v)) : Tensor<double>::constant(shape, std::move(v));
}

} // namespace

TEST_CASE("matmul identity cases", "[tensor]") {
    auto I2 = Tensor<double>::constant({2, 2}, {1, 0, 0, 1});
    auto B = Tensor<double>::constant({2, 3}, {1, 2, 3, 4, 5, 6});
    auto C = matmul(I2, B);
    REQUIRE(C.data() == B.data());

    auto A = Tensor<double>::constant({2, 2}, {1, 2, 3, 4});
    auto AI = matmul(A, I2);
    REQUIRE(AI.data() == A.data());
}

TEST_CASE("matmul matches naive triple-loop oracle", "[tensor]") {
    RngStream rng(42, 1);
    auto A = random_tensor(rng, {5, 7});
    auto B = random_tensor(rng, {7, 3});
    auto C = matmul(A, B);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < 7; ++k) s += A.data()[i * 7 + k] * B.data()[k * 3 + j];
            REQUIRE(std::abs(C.data()[i * 3 + j] - s) < 1e-12);
        }
    }
}

TEST_CASE("matmul rejects mismatched shapes before touching data", "[tensor]") {
    auto A = Tensor<double>::zeros({2, 3});
    auto B = Tensor<double>::zeros({4, 2});
    REQUIRE_THROWS_AS(matmul(A, B), DimensionError);
    REQUIRE_THROWS_AS(matmul(A, Tensor<double>::zeros({3})), DimensionError);
}

TEST_CASE("softmax of uniform logits is uniform", "[tensor]") {
    auto x = Tensor<double>::constant({3}, {0, 0, 0});
    auto y = softmax(x, 0);
    for (double v : y.data()) REQUIRE(v == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("mean of [1,2,3] is 2", "[tensor]") {
    auto x = Tensor<double>::constant({3}, {1, 2, 3});
    REQUIRE(mean(x).item() == Catch::Approx(2.0));
}

TEST_CASE("layer_norm rows have zero mean and unit variance", "[tensor]") {
    RngStream rng(7, 0);
    auto x = random_tensor(rng, {6, 32});
    auto y = layer_norm(x, 1, 1e-10);
    for (std::size_t r = 0; r < 6; ++r) {
        double m = 0, v = 0;
        for (std::size_t c = 0; c < 32; ++c) m += y.data()[r * 32 + c];
        m /= 32;
        for (std::size_t c = 0; c < 32; ++c) {
            double d = y.data()[r * 32 + c] - m;
            v += d * d;
        }
        v /= 32;
        REQUIRE(std::abs(m) < 1e-6);
        REQUIRE(std::abs(v - 1.0) < 1e-6);
    }
}

TEST_CASE("broadcast add follows trailing-dimension rule", "[tensor]") {
    auto x = Tensor<double>::constant({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = Tensor<double>::constant({3}, {10, 20, 30});
    auto y = add(x, b);
    REQUIRE(y.data() == std::vector<double>{11, 22, 33, 14, 25, 36});
    REQUIRE_THROWS_AS(add(x, Tensor<double>::zeros({2})), DimensionError);
}

TEST_CASE("domain errors on log and sqrt of negatives", "[tensor]") {
    auto neg = Tensor<double>::constant({1}, {-1.0});
    REQUIRE_THROWS_AS(log(neg), DomainError);
    REQUIRE_THROWS_AS(sqrt(neg), DomainError);
    REQUIRE_THROWS_AS(div(neg, Tensor<double>::scalar(0.0)), DomainError);
}

TEST_CASE("conv1d identity and hand-computed cases", "[tensor]") {
    // kernel [1], stride 1 -> identity
    auto x = Tensor<double>::constant({1, 1, 4}, {1, 2, 3, 4});
    auto w = Tensor<double>::constant({1, 1, 1}, {1});
    auto b = Tensor<double>::zeros({1});
    auto y = conv1d(x, w, b, 1, 0);
    REQUIRE(y.data() == x.data());

    // x=[1,2,3,4], kernel [1,1], stride 2 -> [3,7]
    auto w2 = Tensor<double>::constant({1, 1, 2}, {1, 1});
    auto y2 = conv1d(x, w2, b, 2, 0);
    REQUIRE(y2.shape() == Shape{1, 1, 2});
    REQUIRE(y2.data() == std::vector<double>{3, 7});
}

TEST_CASE("conv1d matches naive sliding-window oracle", "[tensor]") {
    RngStream rng(11, 3);
    for (int iter = 0; iter < 8; ++iter) {
        std::size_t B = 1 + iter % 2, Cin = 2, Cout = 3, T = 11 + iter, K = 3, stride = 1 + iter % 3,
                    pad = iter % 2;
        auto x = random_tensor(rng, {B, Cin, T});
        auto w = random_tensor(rng, {Cout, Cin, K});
        auto bias = random_tensor(rng, {Cout});
        auto y = conv1d(x, w, bias, stride, pad);
        std::size_t To = (T + 2 * pad - K) / stride + 1;
        REQUIRE(y.shape() == Shape{B, Cout, To});
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t oc = 0; oc < Cout; ++oc)
                for (std::size_t to = 0; to < To; ++to) {
                    double acc = bias.data()[oc];
                    for (std::size_t ic = 0; ic < Cin; ++ic)
                        for (std::size_t k = 0; k < K; ++k) {
                            std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * stride + k) -
                                                static_cast<std::ptrdiff_t>(pad);
                            if (ti >= 0 && ti < static_cast<std::ptrdiff_t>(T))
                                acc += x.data()[(b * Cin + ic) * T + ti] * w.data()[(oc * Cin + ic) * K + k];
                        }
                    REQUIRE(std::abs(y.data()[(b * Cout + oc) * To + to] - acc) < 1e-12);
                }
    }
}

TEST_CASE("conv1d rejects invalid geometry", "[tensor]") {
    auto x = Tensor<double>::zeros({1, 1, 3});
    auto w = Tensor<double>::zeros({1, 1, 5});
    auto b = Tensor<double>::zeros({1});
    REQUIRE_THROWS_AS(conv1d(x, w, b, 1, 0), DimensionError);
    REQUIRE_THROWS_AS(conv1d(x, Tensor<double>::zeros({2, 3, 1}), b, 1, 0), DimensionError);
}

TEST_CASE("depth_to_time round trip geometry", "[tensor]") {
    auto x = Tensor<double>::constant({1, 4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    auto y = depth_to_time(x, 2);
    REQUIRE(y.shape() == Shape{1, 2, 4});
    // channel block [c*s + j] at frame t -> output position t*s + j
    REQUIRE(y.data() == std::vector<double>{1, 3, 2, 4, 5, 7, 6, 8});
}

TEST_CASE("backward analytic derivatives", "[tensor]") {
    // loss = sum(x^2), x=[1,2] -> grad [2,4]
    auto x = Tensor<double>::param({2}, {1, 2});
    auto loss = sum(mul(x, x));
    backward(loss);
    REQUIRE(x.grad() == std::vector<double>{2, 4});

    // loss = sum(a*b) -> grad_a = b, grad_b = a
    auto a = Tensor<double>::param({3}, {1, 2, 3});
    auto b = Tensor<double>::param({3}, {4, 5, 6});
    backward(sum(mul(a, b)));
    REQUIRE(a.grad() == b.data());
    REQUIRE(b.grad() == a.data());
}

TEST_CASE("backward requires scalar loss", "[tensor]") {
    auto x = Tensor<double>::param({2}, {1, 2});
    REQUIRE_THROWS_AS(backward(mul(x, x)), UsageError);
}

TEST_CASE("gradient accumulation doubles exactly across backward calls", "[tensor]") {
    auto x = Tensor<double>::param({3}, {0.5, -1.25, 2.0});
    auto loss = sum(mul(x, tanh(x)));
    backward(loss);
    auto g1 = x.grad();
    backward(loss);
    auto g2 = x.grad();
    for (std::size_t i = 0; i < g1.size(); ++i) REQUIRE(g2[i] == 2.0 * g1[i]);
}

TEST_CASE("finite_diff_grad basics", "[tensor]") {
    auto f_sum = [](const Tensor<double>& t) { return sum(t).item(); };
    auto x = Tensor<double>::constant({4}, {1, -2, 3, 0.5});
    auto g = finite_diff_grad<double>(f_sum, x, 1e-5);
    for (double v : g.data()) REQUIRE(v == Catch::Approx(1.0).margin(1e-8));

    auto f_sq = [](const Tensor<double>& t) { return sum(mul(t, t)).item(); };
    auto x3 = Tensor<double>::constant({1}, {3});
    REQUIRE(finite_diff_grad<double>(f_sq, x3, 1e-5).data()[0] == Catch::Approx(6.0).margin(1e-7));
}

namespace {

// random composite graph exercising most kernels; keeps values in safe domains
Tensor<double> composite_graph(const Tensor<double>& x) {
    auto a = tanh(x);                        // (4, 6)
    auto b = gelu(add(mul(x, 0.5), 0.1));    // (4, 6)
    auto c = softmax(add(a, b), 1);
    auto d = layer_norm(matmul(c, transpose(x)), 1, 1e-5); // (4, 4)
    auto e = sigmoid(slice_cols(d, 0, 2));
    auto f = log1p(exp(neg(abs(e))));
    auto g = mean(mul(f, f), 1);
    return add(sum(g), mul(mean(sqrt(add(mul(x, x), 1e-3))), 0.25));
}

} // namespace

TEST_CASE("backward matches finite differences on random composite graphs", "[tensor]") {
    // property: >= 100 randomized instances, 64-bit, h = 1e-5, rel err < 1e-4
    double worst = 0;
    for (std::uint64_t seedi = 0; seedi < 100; ++seedi) {
        RngStream rng(1000 + seedi, 0);
        auto x = random_tensor(rng, {4, 6}, true);
        auto loss = composite_graph(x);
        auto gm = backward_collect(loss);
        auto ad = gm.at(x.node().get());
        auto fd = finite_diff_grad<double>(
            [&](const Tensor<double>& t) { return composite_graph(t).item(); },
            Tensor<double>::constant(x.shape(), x.data()), 1e-5);
        worst = std::max(worst, max_rel_error(ad, fd.data()));
    }
    INFO("max relative error over 100 seeds: " << worst);
    REQUIRE(worst < 1e-4);
}

TEST_CASE("conv and stft-free 3-layer network gradient agrees with finite differences", "[tensor]") {
    RngStream rng(77, 5);
    auto x = random_tensor(rng, {1, 2, 12});
    auto w1 = random_tensor(rng, {3, 2, 3}, true);
    auto b1 = random_tensor(rng, {3}, true);
    auto w2 = random_tensor(rng, {3, 1, 3}, true); // depthwise, groups=3
    auto b2 = random_tensor(rng, {3}, true);
    auto w3 = random_tensor(rng, {2, 3, 1}, true);
    auto b3 = random_tensor(rng, {2}, true);
    auto net = [&](const Tensor<double>& w1t) {
        auto h1 = gelu(conv1d(x, w1t, b1, 2, 1));
        auto h2 = tanh(conv1d(h1, w2, b2, 1, 1, 3));
        auto h3 = conv1d(h2, w3, b3, 1, 0);
        return mean(mul(h3, h3));
    };
    auto loss = net(w1);
    auto gm = backward_collect(loss);
    auto fd = finite_diff_grad<double>(
        [&](const Tensor<double>& t) { return net(t).item(); },
        Tensor<double>::constant(w1.shape(), w1.data()), 1e-5);
    REQUIRE(max_rel_error(gm.at(w1.node().get()), fd.data()) < 1e-4);
}

TEST_CASE("recomputation is bit-identical for identical inputs", "[tensor]") {
    RngStream rng1(123, 9), rng2(123, 9);
    auto x1 = random_tensor(rng1, {5, 5}, true);
    auto x2 = random_tensor(rng2, {5, 5}, true);
    auto l1 = composite_graph(x1);
    auto l2 = composite_graph(x2);
    REQUIRE(l1.item() == l2.item());
    backward(l1);
    backward(l2);
    REQUIRE(x1.grad() == x2.grad());
}

TEST_CASE("embedding gathers rows and scatters gradients", "[tensor]") {
    auto table = Tensor<double>::param({3, 2}, {1, 2, 3, 4, 5, 6});
    auto rows = embedding(table, {2, 0, 2});
    REQUIRE(rows.data() == std::vector<double>{5, 6, 1, 2, 5, 6});
    backward(sum(rows));
    REQUIRE(table.grad() == std::vector<double>{1, 1, 0, 0, 2, 2});
    REQUIRE_THROWS_AS(embedding(table, {3}), InputError);
}
