#include <doctest.h>

#include <cmath>

#include "dla/init.hpp"
#include "dla/ops.hpp"
#include "dla/verify.hpp"
#include "oracles.hpp"

using namespace dla;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad = false, double scale = 1.0) {
    std::vector<double> data(static_cast<size_t>(numel(shape)));
    for (double& v : data) v = rng.normal(0.0, scale);
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// Random linear functional; keeps op-level gradchecks well conditioned.
std::vector<double> random_weights(Rng& rng, long n) {
    std::vector<double> w(static_cast<size_t>(n));
    for (double& v : w) v = rng.uniform(-1.0, 1.0);
    return w;
}

}  // namespace

TEST_CASE("matmul identity and scalar cases") {
    Rng rng(1);
    Tensor x = random_tensor(rng, {3, 3});
    Tensor eye = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye.data()[static_cast<size_t>(i) * 3 + i] = 1.0;
    Tensor out = matmul(eye, x);
    for (size_t i = 0; i < 9; ++i) CHECK(out.data()[i] == x.data()[i]);

    Tensor a = Tensor::from_data({1, 1}, {2.0});
    Tensor b = Tensor::from_data({1, 1}, {3.0});
    CHECK(matmul(a, b).item() == 6.0);
}

TEST_CASE("matmul equals the naive loop oracle exactly") {
    Rng rng(2);
    Tensor a = random_tensor(rng, {4, 5});
    Tensor b = random_tensor(rng, {5, 3});
    Tensor c = matmul(a, b);
    auto want = oracle::matmul(a.data(), b.data(), 4, 5, 3);
    for (size_t i = 0; i < want.size(); ++i) CHECK(c.data()[i] == want[i]);

    // also a shape where the panel kernel and the scalar tail both run
    Tensor a2 = random_tensor(rng, {7, 23});
    Tensor b2 = random_tensor(rng, {23, 19});
    Tensor c2 = matmul(a2, b2);
    auto want2 = oracle::matmul(a2.data(), b2.data(), 7, 23, 19);
    for (size_t i = 0; i < want2.size(); ++i) CHECK(c2.data()[i] == want2[i]);
}

TEST_CASE("matmul shape mismatch raises a dimension error") {
    Rng rng(3);
    Tensor a = random_tensor(rng, {2, 3});
    Tensor b = random_tensor(rng, {4, 2});
    CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("conv2d identity kernel") {
    Rng rng(4);
    Tensor x = random_tensor(rng, {1, 1, 5, 5});
    Tensor w = Tensor::from_data({1, 1, 1, 1}, {1.0});
    Tensor out = conv2d(x, w, 1, 0);
    REQUIRE(out.shape() == x.shape());
    for (size_t i = 0; i < x.data().size(); ++i) CHECK(out.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d all-ones 3x3 on a constant field") {
    const double c = 0.37;
    Tensor x = Tensor::full({1, 1, 6, 6}, c);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor out = conv2d(x, w, 1, 1);
    REQUIRE(out.shape() == Shape{1, 1, 6, 6});
    for (int y = 1; y < 5; ++y)
        for (int x2 = 1; x2 < 5; ++x2)
            CHECK(out.data()[static_cast<size_t>(y) * 6 + x2] == doctest::Approx(9 * c).epsilon(1e-15));
}

TEST_CASE("conv2d equals the naive loop oracle exactly") {
    Rng rng(5);
    for (int stride : {1, 2}) {
        Tensor x = random_tensor(rng, {2, 3, 8, 8});
        Tensor w = random_tensor(rng, {4, 3, 3, 3});
        Tensor bias = random_tensor(rng, {4});
        Tensor out = conv2d(x, w, stride, 1, &bias);
        auto want = oracle::conv2d(x.data(), w.data(), 2, 3, 8, 8, 4, 3, stride, 1, &bias.data());
        REQUIRE(out.data().size() == want.size());
        for (size_t i = 0; i < want.size(); ++i) CHECK(out.data()[i] == want[i]);
    }
}

TEST_CASE("conv2d rejects bad geometry") {
    Rng rng(6);
    Tensor x = random_tensor(rng, {1, 1, 2, 2});
    Tensor w5 = random_tensor(rng, {1, 1, 5, 5});
    CHECK_THROWS_AS(conv2d(x, w5, 1, 0), DimensionError);  // non-positive output extent
    Tensor w2 = random_tensor(rng, {1, 1, 2, 2});
    CHECK_THROWS_AS(conv2d(x, w2, 1, 1), DimensionError);  // even kernel
}

TEST_CASE("global average pool examples and oracle") {
    Tensor constant = Tensor::full({2, 3, 4, 4}, 1.25);
    Tensor pooled = global_average_pool(constant);
    for (double v : pooled.data()) CHECK(v == 1.25);

    Tensor tiny = Tensor::from_data({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    CHECK(global_average_pool(tiny).item() == doctest::Approx(2.5).epsilon(1e-16));

    Rng rng(7);
    Tensor x = random_tensor(rng, {3, 5, 6, 7});
    Tensor out = global_average_pool(x);
    auto want = oracle::global_average_pool(x.data(), 3, 5, 6, 7);
    for (size_t i = 0; i < want.size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(want[i]).epsilon(1e-15));
}

TEST_CASE("softmax fixed points") {
    Tensor uniform = softmax_lastdim(Tensor::zeros({3}));
    for (double v : uniform.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

    Tensor two = softmax_lastdim(Tensor::from_data({2}, {std::log(2.0), 0.0}));
    CHECK(two.data()[0] == doctest::Approx(2.0 / 3).epsilon(1e-14));
    CHECK(two.data()[1] == doctest::Approx(1.0 / 3).epsilon(1e-14));

    Tensor big = softmax_lastdim(Tensor::from_data({2}, {1000.0, 0.0}));
    CHECK(big.data()[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(big.data()[1] < 1e-300);
}

TEST_CASE("softmax sums to one and shifts away") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + static_cast<int>(rng.integer(9));
        Tensor v = random_tensor(rng, {n}, false, 3.0);
        Tensor s = softmax_lastdim(v);
        double sum = 0.0;
        for (double x : s.data()) {
            CHECK(x > 0.0);
            sum += x;
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-12);

        const double shift = rng.uniform(-5.0, 5.0);
        Tensor shifted = v;
        std::vector<double> moved = v.data();
        for (double& x : moved) x += shift;
        Tensor s2 = softmax_lastdim(Tensor::from_data({n}, std::move(moved)));
        for (size_t i = 0; i < s.data().size(); ++i)
            CHECK(std::fabs(s.data()[i] - s2.data()[i]) <= 1e-12);
    }
}

TEST_CASE("softmax propagates NaN input as a numeric error") {
    Tensor bad = Tensor::from_data({2}, {std::nan(""), 0.0});
    CHECK_THROWS_AS(softmax_lastdim(bad), NumericError);
}

TEST_CASE("backward computes classic derivatives") {
    Tensor x = Tensor::from_data({1}, {3.0}, true);
    Tensor loss = mul(x, x);
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));

    Tensor z = Tensor::from_data({1}, {0.0}, true);
    backward(sigmoid(z));
    CHECK(z.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("backward contract checks") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor y = add(x, x);
    CHECK_THROWS_AS(backward(y), ContractError);

    // gradient accumulates across both uses of x
    backward(sum_all(y));
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 2.0);

    // a leaf untouched by the graph reads back zero gradient
    Tensor unused = Tensor::from_data({2}, {5.0, 5.0}, true);
    CHECK(unused.grad() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("no-grad mode records nothing") {
    Tensor x = Tensor::from_data({1}, {2.0}, true);
    {
        NoGradGuard guard;
        Tensor y = mul(x, x);
        CHECK_FALSE(y.requires_grad());
    }
    Tensor y = mul(x, x);
    CHECK(y.requires_grad());
}

TEST_CASE("forward ops reject non-finite results") {
    Tensor big = Tensor::full({2}, 1e308);
    CHECK_THROWS_AS(add(big, big), NumericError);
}

TEST_CASE("determinism: identical seeds give bitwise-identical outputs and gradients") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Tensor x = random_tensor(rng, {2, 3, 6, 6}, true);
        Tensor w = random_tensor(rng, {4, 3, 3, 3}, true);
        Tensor out = conv2d(x, w, 1, 1);
        backward(dot_const(out, random_weights(rng, out.size())));
        return std::make_pair(out.data(), w.grad());
    };
    auto [o1, g1] = run(99);
    auto [o2, g2] = run(99);
    CHECK(o1 == o2);
    CHECK(g1 == g2);
}

TEST_CASE("gradcheck passes for every tensor op") {
    Rng rng(11);
    auto check = [&](const char* name, const std::vector<NamedTensor>& leaves,
                     const std::function<Tensor()>& loss_fn, double tol = 1e-4) {
        GradCheckReport report = finite_diff_gradcheck(loss_fn, leaves, 1e-5, 200, 13);
        INFO(name << " worst=" << report.worst_tensor << " rel=" << report.max_rel_error);
        CHECK(report.max_rel_error <= tol);
    };

    {
        Tensor a = random_tensor(rng, {3, 4}, true);
        Tensor b = random_tensor(rng, {3, 4}, true);
        auto w = random_weights(rng, 12);
        check("add", {{"a", a}, {"b", b}}, [&] { return dot_const(add(a, b), w); });
        check("mul", {{"a", a}, {"b", b}}, [&] { return dot_const(mul(a, b), w); });
        check("scale", {{"a", a}}, [&] { return dot_const(scale(a, -1.7), w); });
        check("sigmoid", {{"a", a}}, [&] { return dot_const(sigmoid(a), w); });
        check("tanh", {{"a", a}}, [&] { return dot_const(tanh_op(a), w); });
        check("view", {{"a", a}}, [&] { return dot_const(view(a, {2, 6}), w); });
        check("softmax", {{"a", a}}, [&] { return dot_const(softmax_lastdim(a), w); });
        check("sum_all", {{"a", a}}, [&] { return sum_all(mul(a, a)); });
    }
    {
        // offset away from the kink so central differences stay valid
        Tensor a = random_tensor(rng, {3, 4}, true);
        for (double& v : a.data()) v += (v >= 0 ? 0.5 : -0.5);
        auto w = random_weights(rng, 12);
        check("relu", {{"a", a}}, [&] { return dot_const(relu(a), w); });
    }
    {
        Tensor a = random_tensor(rng, {3, 5}, true);
        Tensor b = random_tensor(rng, {5, 4}, true);
        auto w = random_weights(rng, 12);
        check("matmul", {{"a", a}, {"b", b}}, [&] { return dot_const(matmul(a, b), w); });
    }
    {
        Tensor x = random_tensor(rng, {3, 5}, true);
        Tensor w2 = random_tensor(rng, {4, 5}, true);
        Tensor bias = random_tensor(rng, {4}, true);
        auto w = random_weights(rng, 12);
        check("linear", {{"x", x}, {"w", w2}, {"b", bias}},
              [&] { return dot_const(linear(x, w2, &bias), w); });
    }
    {
        Tensor x = random_tensor(rng, {2, 3, 5, 5}, true);
        Tensor k = random_tensor(rng, {4, 3, 3, 3}, true);
        Tensor bias = random_tensor(rng, {4}, true);
        Tensor out = conv2d(x, k, 2, 1, &bias);
        auto w = random_weights(rng, out.size());
        check("conv2d", {{"x", x}, {"k", k}, {"b", bias}},
              [&] { return dot_const(conv2d(x, k, 2, 1, &bias), w); });
    }
    {
        Tensor x = random_tensor(rng, {2, 3, 4, 4}, true);
        auto w = random_weights(rng, 6);
        check("global_average_pool", {{"x", x}},
              [&] { return dot_const(global_average_pool(x), w); });
    }
    {
        Tensor x = random_tensor(rng, {3, 4, 3, 3}, true);
        Tensor gamma = random_tensor(rng, {4}, true);
        for (double& v : gamma.data()) v += 1.5;
        Tensor beta = random_tensor(rng, {4}, true);
        Tensor mean = Tensor::zeros({4});
        Tensor var = Tensor::full({4}, 1.0);
        auto w = random_weights(rng, 3 * 4 * 9);
        check("batch_norm train", {{"x", x}, {"gamma", gamma}, {"beta", beta}}, [&] {
            return dot_const(batch_norm(x, gamma, beta, mean, var, true), w);
        });
        check("batch_norm eval", {{"x", x}, {"gamma", gamma}, {"beta", beta}}, [&] {
            return dot_const(batch_norm(x, gamma, beta, mean, var, false), w);
        });
    }
    {
        Tensor a = random_tensor(rng, {3, 4}, true);
        Tensor b = random_tensor(rng, {3, 2}, true);
        auto w = random_weights(rng, 18);
        check("concat_cols", {{"a", a}, {"b", b}}, [&] { return dot_const(concat_cols(a, b), w); });
        auto w2 = random_weights(rng, 6);
        check("slice_cols", {{"a", a}}, [&] { return dot_const(slice_cols(a, 1, 3), w2); });
    }
    {
        Tensor q = random_tensor(rng, {2, 2, 3}, true);
        Tensor k = random_tensor(rng, {2, 2, 3}, true);
        auto w = random_weights(rng, 4);
        check("head_dot", {{"q", q}, {"k", k}}, [&] { return dot_const(head_dot(q, k), w); });
    }
    {
        Tensor s1 = random_tensor(rng, {2, 2}, true);
        Tensor s2 = random_tensor(rng, {2, 2}, true);
        Tensor s3 = random_tensor(rng, {2, 2}, true);
        auto w = random_weights(rng, 12);
        check("stack_lastdim", {{"s1", s1}, {"s2", s2}, {"s3", s3}}, [&] {
            std::vector<Tensor> parts = {s1, s2, s3};
            return dot_const(stack_lastdim(parts), w);
        });
    }
    {
        Tensor weights = random_tensor(rng, {2, 2, 2}, true);
        Tensor v1 = random_tensor(rng, {2, 4, 3, 3}, true);
        Tensor v2 = random_tensor(rng, {2, 4, 3, 3}, true);
        auto w = random_weights(rng, 2 * 4 * 9);
        check("head_mix", {{"w", weights}, {"v1", v1}, {"v2", v2}}, [&] {
            std::vector<Tensor> values = {v1, v2};
            return dot_const(head_mix(weights, values, 2), w);
        });
    }
    {
        Tensor x = random_tensor(rng, {2, 4, 3, 3}, true);
        Tensor s = random_tensor(rng, {4}, true);
        Tensor sb = random_tensor(rng, {2, 4}, true);
        auto w = random_weights(rng, 2 * 4 * 9);
        check("channel_scale", {{"x", x}, {"s", s}}, [&] { return dot_const(channel_scale(x, s), w); });
        check("channel_scale_batched", {{"x", x}, {"s", sb}},
              [&] { return dot_const(channel_scale_batched(x, sb), w); });
    }
    {
        Tensor logits = random_tensor(rng, {4, 5}, true);
        std::vector<int> labels = {0, 3, 2, 4};
        check("cross_entropy", {{"logits", logits}},
              [&] { return cross_entropy_mean(logits, labels); });
    }
}

TEST_CASE("gradcheck detects a central-difference mismatch scale") {
    // f(x) = x^3 at x = 1 with step 1e-3: the quadratic truncation term is
    // h^2 = 1e-6, a relative error near 3.3e-7 against the analytic 3.
    Tensor x = Tensor::from_data({1}, {1.0}, true);
    auto loss_fn = [&] { return mul(x, mul(x, x)); };
    GradCheckReport report = finite_diff_gradcheck(loss_fn, {{"x", x}}, 1e-3, 10, 1);
    CHECK(report.max_rel_error == doctest::Approx(3.3333e-7).epsilon(0.01));
    CHECK(report.analytic == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("gradcheck on a linear map is exact to rounding") {
    Rng rng(21);
    Tensor x = random_tensor(rng, {2, 3}, true);
    auto w = random_weights(rng, 6);
    auto loss_fn = [&] { return dot_const(x, w); };
    GradCheckReport report = finite_diff_gradcheck(loss_fn, {{"x", x}}, 1e-5, 10, 2);
    CHECK(report.max_rel_error < 1e-10);
}
