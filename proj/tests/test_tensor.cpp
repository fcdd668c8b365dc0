#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "mtlk/tensor.hpp"
#include "testutil.hpp"

using namespace mtlk;

TEST_CASE("matmul identity and 1x1") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor out = matmul(eye, m);
    CHECK(out.values() == std::vector<double>{1, 2, 3, 4});

    Tensor a = Tensor::from_data({1, 1}, {2});
    Tensor b = Tensor::from_data({1, 1}, {3});
    CHECK(matmul(a, b).item() == 6.0);
}

TEST_CASE("matmul rejects mismatched inner dims") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("matmul gradient of sum(a.b) with b = ones equals ones.b^T") {
    Rng rng(7);
    Tensor a = Tensor::randn({2, 2}, rng).set_requires_grad(true);
    Tensor b = Tensor::ones({2, 2});
    auto loss = [&] { return sum(matmul(a, b)); };
    loss().backward();
    // d sum(a.b) / da = ones(2,2) . b^T = all twos here
    for (double g : a.grad()) CHECK(g == doctest::Approx(2.0));
    CHECK(testutil::max_rel_err(a.grad(), testutil::fd_gradient(a, loss)) < 1e-4);
}

TEST_CASE("softmax trivials") {
    Tensor x = Tensor::from_data({2}, {0, 0});
    Tensor y = softmax(x, 0);
    CHECK(y.values()[0] == doctest::Approx(0.5));
    CHECK(y.values()[1] == doctest::Approx(0.5));

    // shift invariance
    Rng rng(3);
    Tensor a = Tensor::randn({5}, rng);
    Tensor shifted = add_scalar(a, 17.5);
    CHECK(testutil::max_abs_diff(softmax(a, 0).values(), softmax(shifted, 0).values()) < 1e-12);
}

TEST_CASE("softmax rows sum to one within 1e-12") {
    Rng rng(11);
    for (int trial = 0; trial < 25; ++trial) {
        Tensor x = scale(Tensor::randn({4, 7}, rng), 10.0);
        Tensor y = softmax(x, 1);
        for (std::size_t r = 0; r < 4; ++r) {
            double total = 0.0;
            for (std::size_t c = 0; c < 7; ++c) total += y.at(r, c);
            CHECK(std::fabs(total - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("softmax gradient vs finite differences") {
    Rng rng(5);
    Tensor x = Tensor::randn({3, 6}, rng).set_requires_grad(true);
    Tensor w = Tensor::randn({3, 6}, rng);
    auto loss = [&] { return sum(mul(softmax(x, 1), w)); };
    loss().backward();
    CHECK(testutil::max_rel_err(x.grad(), testutil::fd_gradient(x, loss)) < 1e-6);
}

TEST_CASE("layer_norm trivials") {
    Tensor gain = Tensor::ones({3});
    Tensor bias = Tensor::zeros({3});
    Tensor constant = Tensor::from_data({1, 3}, {5, 5, 5});
    Tensor normed = layer_norm(constant, gain, bias);
    for (double v : normed.values()) CHECK(v == doctest::Approx(0.0));

    const double eps = 1e-5;
    Tensor two = Tensor::from_data({1, 2}, {1, -1});
    Tensor g2 = Tensor::ones({2});
    Tensor b2 = Tensor::zeros({2});
    Tensor out = layer_norm(two, g2, b2, eps);
    const double expected = 1.0 / std::sqrt(1.0 + eps);
    CHECK(out.values()[0] == doctest::Approx(expected).epsilon(1e-9));
    CHECK(out.values()[1] == doctest::Approx(-expected).epsilon(1e-9));
}

TEST_CASE("layer_norm gradient vs finite differences") {
    Rng rng(9);
    Tensor x = Tensor::randn({4, 6}, rng).set_requires_grad(true);
    Tensor gain = Tensor::randn({6}, rng).set_requires_grad(true);
    Tensor bias = Tensor::randn({6}, rng).set_requires_grad(true);
    Tensor w = Tensor::randn({4, 6}, rng);
    auto loss = [&] { return sum(mul(layer_norm(x, gain, bias), w)); };
    loss().backward();
    CHECK(testutil::max_rel_err(x.grad(), testutil::fd_gradient(x, loss)) < 1e-4);
    CHECK(testutil::max_rel_err(gain.grad(), testutil::fd_gradient(gain, loss)) < 1e-4);
    CHECK(testutil::max_rel_err(bias.grad(), testutil::fd_gradient(bias, loss)) < 1e-4);
}

TEST_CASE("mse trivials and gradient formula") {
    Tensor a = Tensor::from_data({2}, {1, 1});
    CHECK(mse(a, a).item() == 0.0);
    Tensor zero = Tensor::zeros({2});
    CHECK(mse(a, zero).item() == doctest::Approx(1.0));

    Rng rng(13);
    Tensor pred = Tensor::randn({3, 4}, rng).set_requires_grad(true);
    Tensor target = Tensor::randn({3, 4}, rng);
    mse(pred, target).backward();
    const auto& g = pred.grad();
    const double n = 12.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double expect = 2.0 * (pred.values()[i] - target.values()[i]) / n;
        CHECK(g[i] == doctest::Approx(expect).epsilon(1e-12));
    }
    auto loss = [&] { return mse(pred, target); };
    CHECK(testutil::max_rel_err(pred.grad(), testutil::fd_gradient(pred, loss)) < 1e-4);
}

TEST_CASE("mse rejects shape mismatch") {
    CHECK_THROWS_AS(mse(Tensor::zeros({2, 2}), Tensor::zeros({4})), ShapeError);
}

TEST_CASE("backward of x squared at x = 3") {
    Tensor x = Tensor::scalar(3.0).set_requires_grad(true);
    mul(x, x).backward();
    CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward through a three-matrix chain matches finite differences") {
    Rng rng(21);
    Tensor a = Tensor::randn({3, 4}, rng).set_requires_grad(true);
    Tensor b = Tensor::randn({4, 5}, rng).set_requires_grad(true);
    Tensor c = Tensor::randn({5, 2}, rng).set_requires_grad(true);
    auto loss = [&] { return sum(matmul(matmul(a, b), c)); };
    loss().backward();
    CHECK(testutil::max_rel_err(a.grad(), testutil::fd_gradient(a, loss)) < 1e-4);
    CHECK(testutil::max_rel_err(b.grad(), testutil::fd_gradient(b, loss)) < 1e-4);
    CHECK(testutil::max_rel_err(c.grad(), testutil::fd_gradient(c, loss)) < 1e-4);
}

TEST_CASE("backward requires a scalar loss") {
    Tensor x = Tensor::ones({2, 2}).set_requires_grad(true);
    CHECK_THROWS_AS(add(x, x).backward(), ValueError);
}

TEST_CASE("detached tensor receives no gradient") {
    Tensor x = Tensor::ones({3}).set_requires_grad(true);
    Tensor d = x.detach();
    Tensor y = sum(add(x, d));
    y.backward();
    CHECK(x.has_grad());
    CHECK_FALSE(d.has_grad());
    for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("backward twice accumulates, and is bitwise deterministic after reset") {
    Rng rng(31);
    Tensor x = Tensor::randn({4, 4}, rng).set_requires_grad(true);
    Tensor w = Tensor::randn({4, 4}, rng);
    Tensor loss = sum(mul(softmax(matmul(x, w), 1), w));

    loss.backward();
    const std::vector<double> once = x.grad();
    loss.backward();
    const std::vector<double> twice = x.grad();
    for (std::size_t i = 0; i < once.size(); ++i) {
        CHECK(twice[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-12));
    }

    x.zero_grad();
    loss.backward();
    CHECK(x.grad() == once);  // bitwise
}

TEST_CASE("non-finite forward output aborts") {
    Tensor big = Tensor::full({2}, 1e308);
    CHECK_THROWS_AS(mul(big, big), NumericalError);
    CHECK_THROWS_AS(Tensor::from_data({1}, {std::nan("")}), NumericalError);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::from_data({3}, {1, 2, 3}).set_requires_grad(true);
    Adam opt({p}, {});
    opt.step();
    opt.step();
    CHECK(p.values() == std::vector<double>{1, 2, 3});
}

TEST_CASE("adam with constant positive gradient decreases the parameter") {
    Tensor p = Tensor::scalar(1.0).set_requires_grad(true);
    AdamConfig cfg;
    cfg.lr = 0.01;
    Adam opt({p}, cfg);
    double prev = p.item();
    for (int i = 0; i < 10; ++i) {
        p.zero_grad();
        Tensor loss = sum(p);  // gradient 1
        loss.backward();
        opt.step();
        CHECK(p.item() < prev);
        prev = p.item();
    }
}

TEST_CASE("adam first step on f(x) = x^2 from x = 1 with lr 0.1") {
    Tensor x = Tensor::scalar(1.0).set_requires_grad(true);
    AdamConfig cfg;
    cfg.lr = 0.1;
    Adam opt({x}, cfg);
    mul(x, x).backward();
    opt.step();
    // first Adam step moves by ~lr regardless of gradient magnitude:
    // m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
    CHECK(x.item() == doctest::Approx(0.9).epsilon(1e-8));
}

TEST_CASE("gradients only flow to tensors that require them") {
    Rng rng(41);
    Tensor a = Tensor::randn({2, 2}, rng).set_requires_grad(true);
    Tensor frozen = Tensor::randn({2, 2}, rng);  // requires_grad false
    sum(matmul(a, frozen)).backward();
    CHECK(a.has_grad());
    CHECK_FALSE(frozen.has_grad());
}
