#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "mtlk/nn.hpp"
#include "testutil.hpp"

using namespace mtlk;
using nn::LinearLayer;
using nn::LoraAdapter;

TEST_CASE("lora zero-init forward equals base forward exactly") {
    Rng rng(1);
    LinearLayer base = LinearLayer::init(6, 4, rng);
    LoraAdapter adapter = LoraAdapter::inject(base, 2, 2.0, rng);
    Tensor x = Tensor::randn({5, 6}, rng);
    CHECK(adapter.forward(x).values() == base.forward(x).values());
}

TEST_CASE("lora rejects invalid ranks") {
    Rng rng(2);
    LinearLayer base = LinearLayer::init(4, 3, rng);
    CHECK_THROWS_AS(LoraAdapter::inject(base, 5, 1.0, rng), ValueError);
    CHECK_THROWS_AS(LoraAdapter::inject(base, 0, 1.0, rng), ValueError);
}

TEST_CASE("full-rank lora matches the dense-merge oracle to 1e-12") {
    Rng rng(3);
    const std::size_t in = 5, out = 7, rank = 5;  // rank == min(in,out)
    LinearLayer base = LinearLayer::init(in, out, rng);
    LoraAdapter adapter = LoraAdapter::inject(base, rank, 3.0, rng);
    for (double& v : adapter.up.values_mut()) v = rng.normal();

    // oracle: dense merge W + (alpha/r) up.down applied directly
    NoGradGuard guard;
    Tensor merged_w =
        add(base.weight, scale(matmul(adapter.up, adapter.down), adapter.alpha / double(rank)));
    Tensor x = Tensor::randn({9, in}, rng);
    Tensor expect = linear(x, merged_w, base.bias);
    Tensor got = adapter.forward(x);
    CHECK(testutil::max_abs_diff(expect.values(), got.values()) < 1e-12);
}

TEST_CASE("adam step trains lora matrices only; base stays bitwise identical") {
    Rng rng(4);
    LinearLayer base = LinearLayer::init(6, 4, rng);
    LoraAdapter adapter = LoraAdapter::inject(base, 2, 2.0, rng);
    const std::vector<double> weight_before = adapter.base.weight.values();
    const std::vector<double> bias_before = adapter.base.bias.values();

    Adam opt({adapter.down, adapter.up}, {});
    for (int step = 0; step < 3; ++step) {
        Tensor x = Tensor::randn({8, 6}, rng);
        Tensor target = Tensor::randn({8, 4}, rng);
        opt.zero_grad();
        mse(adapter.forward(x), target).backward();
        opt.step();
    }
    CHECK(adapter.base.weight.values() == weight_before);
    CHECK(adapter.base.bias.values() == bias_before);
    CHECK_FALSE(adapter.base.weight.has_grad());
}

TEST_CASE("merge_lora equivalence") {
    Rng rng(5);
    LinearLayer base = LinearLayer::init(6, 4, rng);
    LoraAdapter adapter = LoraAdapter::inject(base, 3, 3.0, rng);

    // up == 0: merged equals base
    LinearLayer merged0 = nn::merge_lora(adapter);
    CHECK(merged0.weight.values() == base.weight.values());

    for (double& v : adapter.up.values_mut()) v = rng.normal();
    LinearLayer merged = nn::merge_lora(adapter);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Tensor x = Tensor::randn({3, 6}, rng);
        worst = std::max(worst, testutil::max_abs_diff(merged.forward(x).values(),
                                                       adapter.forward(x).values()));
    }
    CHECK(worst < 1e-12);

    // merge then re-inject a fresh adapter: forward unchanged
    LoraAdapter fresh = LoraAdapter::inject(merged, 3, 3.0, rng);
    Tensor x = Tensor::randn({4, 6}, rng);
    CHECK(fresh.forward(x).values() == merged.forward(x).values());
}

TEST_CASE("transformer config validation") {
    nn::TransformerConfig cfg;
    cfg.hidden = 10;
    cfg.heads = 4;
    cfg.head_dim = 4;
    CHECK_THROWS_AS(cfg.validate(), ValueError);
}

TEST_CASE("velocity model shape contract and width mismatch") {
    Rng rng(6);
    nn::VelocityModelConfig cfg;
    cfg.in_channels = 10;
    cfg.motion_dim = 5;
    cfg.max_frames = 16;
    cfg.transformer.hidden = 16;
    cfg.transformer.layers = 2;
    cfg.transformer.heads = 2;
    cfg.transformer.head_dim = 8;
    nn::VelocityModel model(cfg, rng);

    Tensor input = Tensor::randn({7, 10}, rng);
    Tensor out = model.forward(input, 0.5);
    CHECK(out.rows() == 7);
    CHECK(out.cols() == 5);

    CHECK_THROWS_AS(model.forward(Tensor::randn({7, 9}, rng), 0.5), ShapeError);
    CHECK_THROWS_AS(model.forward(Tensor::randn({17, 10}, rng), 0.5), ShapeError);
}

TEST_CASE("zero weights make every frame identical") {
    Rng rng(7);
    nn::VelocityModelConfig cfg;
    cfg.in_channels = 6;
    cfg.motion_dim = 4;
    cfg.max_frames = 8;
    cfg.transformer.hidden = 8;
    cfg.transformer.layers = 2;
    cfg.transformer.heads = 2;
    cfg.transformer.head_dim = 4;
    nn::VelocityModel model(cfg, rng);
    for (auto& [name, param] : model.named_params()) {
        if (name.ends_with(".weight") || name == "positions") {
            for (double& v : param.values_mut()) v = 0.0;
        } else if (name.ends_with(".bias")) {
            for (double& v : param.values_mut()) v = rng.normal();
        }
    }
    Tensor input = Tensor::randn({5, 6}, rng);
    Tensor out = model.forward(input, 0.25);
    for (std::size_t r = 1; r < 5; ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(out.at(r, c) == doctest::Approx(out.at(0, c)).epsilon(1e-14));
        }
    }
}

TEST_CASE("attention is permutation-equivariant without positional encoding") {
    Rng rng(8);
    nn::VelocityModelConfig cfg;
    cfg.in_channels = 6;
    cfg.motion_dim = 4;
    cfg.max_frames = 12;
    cfg.transformer.hidden = 16;
    cfg.transformer.layers = 2;
    cfg.transformer.heads = 2;
    cfg.transformer.head_dim = 8;
    nn::VelocityModel model(cfg, rng);

    Tensor input = Tensor::randn({6, 6}, rng);
    Tensor out = model.forward(input, 0.4, /*positional=*/false);

    // swap frames 1 and 4
    std::vector<double> swapped = input.values();
    for (std::size_t c = 0; c < 6; ++c) std::swap(swapped[1 * 6 + c], swapped[4 * 6 + c]);
    Tensor out2 = model.forward(Tensor::from_data({6, 6}, swapped), 0.4, false);

    for (std::size_t r = 0; r < 6; ++r) {
        const std::size_t src = r == 1 ? 4 : (r == 4 ? 1 : r);
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(out2.at(r, c) == doctest::Approx(out.at(src, c)).epsilon(1e-9));
        }
    }
}

TEST_CASE("velocity model end-to-end gradient vs finite differences") {
    Rng rng(9);
    nn::VelocityModelConfig cfg;
    cfg.in_channels = 5;
    cfg.motion_dim = 3;
    cfg.max_frames = 6;
    cfg.transformer.hidden = 8;
    cfg.transformer.layers = 2;
    cfg.transformer.heads = 2;
    cfg.transformer.head_dim = 4;
    nn::VelocityModel model(cfg, rng);

    Tensor input = Tensor::randn({4, 5}, rng);
    Tensor w = Tensor::randn({4, 3}, rng);
    auto loss = [&] { return sum(mul(model.forward(input, 0.6), w)); };
    loss().backward();
    for (auto& [name, param] : model.named_params()) {
        if (!param.has_grad()) continue;
        const double err = testutil::max_rel_err(param.grad(), testutil::fd_gradient(param, loss));
        INFO(name);
        CHECK(err < 1e-3);
    }
}

TEST_CASE("time embedding basics") {
    Tensor e0 = nn::time_embed(0.0, 16);
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(e0.values()[i] == 0.0);
        CHECK(e0.values()[8 + i] == 1.0);
    }

    CHECK(nn::time_embed(0.37, 16).values() == nn::time_embed(0.37, 16).values());
    CHECK_THROWS_AS(nn::time_embed(-0.1, 16), ValueError);
    CHECK_THROWS_AS(nn::time_embed(1.1, 16), ValueError);

    // injective on a 1e-3 grid: consecutive points differ in some component
    for (int k = 0; k + 1 <= 1000; ++k) {
        const double t = static_cast<double>(k) / 1000.0;
        const double t2 = t + 1e-3 > 1.0 ? 1.0 : t + 1e-3;
        const double diff = testutil::max_abs_diff(nn::time_embed(t, 16).values(),
                                                   nn::time_embed(t2, 16).values());
        CHECK(diff > 1e-6);
    }
}
