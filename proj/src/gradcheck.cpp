#include "mtlk/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "mtlk/nn.hpp"

namespace mtlk::gradcheck {

namespace {

// Weighted sum against fixed coefficients so that sign errors cannot cancel.
Tensor weighted_sum(const Tensor& out, const Tensor& weights) {
    return sum(mul(out, weights));
}

Tensor fixed_weights(const Shape& shape, Rng& rng) {
    Tensor w = Tensor::randn(shape, rng);
    return w;
}

CheckCase unary_case(const std::string& name, Tensor (*op)(const Tensor&)) {
    return CheckCase{name, 1e-4, [op](Rng& rng) {
                         BuiltCase built;
                         Tensor x = Tensor::randn({4, 5}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({4, 5}, rng);
                         built.inputs = {x};
                         built.loss = [x, w, op] { return weighted_sum(op(x), w); };
                         return built;
                     }};
}

}  // namespace

CheckResult check(const CheckCase& c, std::uint64_t seed, double fd_eps) {
    Rng rng(seed);
    BuiltCase built = c.build(rng);

    for (Tensor& input : built.inputs) input.zero_grad();
    Tensor loss = built.loss();
    loss.backward();

    double max_err = 0.0;
    for (Tensor& input : built.inputs) {
        std::vector<double> analytic(input.size(), 0.0);
        if (input.has_grad()) analytic = input.grad();
        auto& values = input.values_mut();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            double plus, minus;
            {
                NoGradGuard guard;
                values[i] = saved + fd_eps;
                plus = built.loss().item();
                values[i] = saved - fd_eps;
                minus = built.loss().item();
            }
            values[i] = saved;
            const double numeric = (plus - minus) / (2.0 * fd_eps);
            const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-3});
            max_err = std::max(max_err, std::fabs(analytic[i] - numeric) / denom);
        }
    }
    return CheckResult{c.name, max_err, c.tolerance, max_err < c.tolerance};
}

std::vector<CheckResult> run(const std::vector<CheckCase>& cases, std::uint64_t seed) {
    std::vector<CheckResult> results;
    results.reserve(cases.size());
    for (std::size_t i = 0; i < cases.size(); ++i) {
        results.push_back(check(cases[i], mix_seed(seed, i)));
    }
    return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
    return std::all_of(results.begin(), results.end(),
                       [](const CheckResult& r) { return r.pass; });
}

std::vector<CheckCase> standard_suite() {
    std::vector<CheckCase> cases;

    cases.push_back({"matmul", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor a = Tensor::randn({4, 3}, rng).set_requires_grad(true);
                         Tensor c = Tensor::randn({3, 5}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({4, 5}, rng);
                         b.inputs = {a, c};
                         b.loss = [a, c, w] { return weighted_sum(matmul(a, c), w); };
                         return b;
                     }});
    cases.push_back({"matmul_nt", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor a = Tensor::randn({4, 3}, rng).set_requires_grad(true);
                         Tensor c = Tensor::randn({5, 3}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({4, 5}, rng);
                         b.inputs = {a, c};
                         b.loss = [a, c, w] { return weighted_sum(matmul_nt(a, c), w); };
                         return b;
                     }});
    cases.push_back({"linear", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({4, 3}, rng).set_requires_grad(true);
                         Tensor weight = Tensor::randn({6, 3}, rng).set_requires_grad(true);
                         Tensor bias = Tensor::randn({6}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({4, 6}, rng);
                         b.inputs = {x, weight, bias};
                         b.loss = [x, weight, bias, w] {
                             return weighted_sum(linear(x, weight, bias), w);
                         };
                         return b;
                     }});
    cases.push_back({"add", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({3, 4}, rng).set_requires_grad(true);
                         Tensor y = Tensor::randn({3, 4}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({3, 4}, rng);
                         b.inputs = {x, y};
                         b.loss = [x, y, w] { return weighted_sum(add(x, y), w); };
                         return b;
                     }});
    cases.push_back({"sub", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({3, 4}, rng).set_requires_grad(true);
                         Tensor y = Tensor::randn({3, 4}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({3, 4}, rng);
                         b.inputs = {x, y};
                         b.loss = [x, y, w] { return weighted_sum(sub(x, y), w); };
                         return b;
                     }});
    cases.push_back({"mul", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({3, 4}, rng).set_requires_grad(true);
                         Tensor y = Tensor::randn({3, 4}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({3, 4}, rng);
                         b.inputs = {x, y};
                         b.loss = [x, y, w] { return weighted_sum(mul(x, y), w); };
                         return b;
                     }});
    cases.push_back({"scale", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({3, 4}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({3, 4}, rng);
                         b.inputs = {x};
                         b.loss = [x, w] { return weighted_sum(scale(x, -1.7), w); };
                         return b;
                     }});
    cases.push_back({"add_rowvec", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({3, 4}, rng).set_requires_grad(true);
                         Tensor v = Tensor::randn({4}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({3, 4}, rng);
                         b.inputs = {x, v};
                         b.loss = [x, v, w] { return weighted_sum(add_rowvec(x, v), w); };
                         return b;
                     }});
    cases.push_back({"transpose", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({3, 5}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({5, 3}, rng);
                         b.inputs = {x};
                         b.loss = [x, w] { return weighted_sum(transpose(x), w); };
                         return b;
                     }});
    cases.push_back({"reshape", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({3, 4}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({2, 6}, rng);
                         b.inputs = {x};
                         b.loss = [x, w] { return weighted_sum(reshape(x, {2, 6}), w); };
                         return b;
                     }});
    cases.push_back({"slice_rows", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({6, 4}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({3, 4}, rng);
                         b.inputs = {x};
                         b.loss = [x, w] { return weighted_sum(slice_rows(x, 2, 3), w); };
                         return b;
                     }});
    cases.push_back({"slice_cols", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({4, 6}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({4, 3}, rng);
                         b.inputs = {x};
                         b.loss = [x, w] { return weighted_sum(slice_cols(x, 1, 3), w); };
                         return b;
                     }});
    cases.push_back({"concat_rows", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({2, 4}, rng).set_requires_grad(true);
                         Tensor y = Tensor::randn({3, 4}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({5, 4}, rng);
                         b.inputs = {x, y};
                         b.loss = [x, y, w] { return weighted_sum(concat_rows({x, y}), w); };
                         return b;
                     }});
    cases.push_back({"concat_cols", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({4, 2}, rng).set_requires_grad(true);
                         Tensor y = Tensor::randn({4, 3}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({4, 5}, rng);
                         b.inputs = {x, y};
                         b.loss = [x, y, w] { return weighted_sum(concat_cols({x, y}), w); };
                         return b;
                     }});
    cases.push_back({"softmax_rows", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({4, 6}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({4, 6}, rng);
                         b.inputs = {x};
                         b.loss = [x, w] { return weighted_sum(softmax(x, 1), w); };
                         return b;
                     }});
    cases.push_back({"softmax_cols", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({4, 6}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({4, 6}, rng);
                         b.inputs = {x};
                         b.loss = [x, w] { return weighted_sum(softmax(x, 0), w); };
                         return b;
                     }});
    cases.push_back({"layer_norm", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({4, 6}, rng).set_requires_grad(true);
                         Tensor gain = Tensor::randn({6}, rng).set_requires_grad(true);
                         Tensor bias = Tensor::randn({6}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({4, 6}, rng);
                         b.inputs = {x, gain, bias};
                         b.loss = [x, gain, bias, w] {
                             return weighted_sum(layer_norm(x, gain, bias), w);
                         };
                         return b;
                     }});
    cases.push_back({"mse", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor p = Tensor::randn({4, 5}, rng).set_requires_grad(true);
                         Tensor t = Tensor::randn({4, 5}, rng).set_requires_grad(true);
                         b.inputs = {p, t};
                         b.loss = [p, t] { return mse(p, t); };
                         return b;
                     }});
    cases.push_back({"mean_abs_error", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         // keep |p - t| away from the kink at zero
                         Tensor p = Tensor::randn({4, 5}, rng);
                         Tensor t = Tensor::randn({4, 5}, rng);
                         auto& pv = p.values_mut();
                         const auto& tv = t.values();
                         for (std::size_t i = 0; i < pv.size(); ++i) {
                             if (std::fabs(pv[i] - tv[i]) < 0.05) pv[i] = tv[i] + 0.5;
                         }
                         p.set_requires_grad(true);
                         b.inputs = {p};
                         b.loss = [p, t] { return mean_abs_error(p, t); };
                         return b;
                     }});
    cases.push_back({"sum", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({3, 4}, rng).set_requires_grad(true);
                         b.inputs = {x};
                         b.loss = [x] { return sum(x); };
                         return b;
                     }});
    cases.push_back({"mean", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({3, 4}, rng).set_requires_grad(true);
                         b.inputs = {x};
                         b.loss = [x] { return mean(x); };
                         return b;
                     }});
    cases.push_back(unary_case("gelu", &gelu));
    cases.push_back(unary_case("sigmoid", &sigmoid));
    cases.push_back(unary_case("tanh", &tanh_act));
    cases.push_back(unary_case("softplus", &softplus));
    cases.push_back({"abs", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         Tensor x = Tensor::randn({4, 5}, rng);
                         auto& xv = x.values_mut();
                         for (double& v : xv) {
                             if (std::fabs(v) < 0.05) v += 0.5;  // away from the kink
                         }
                         x.set_requires_grad(true);
                         Tensor w = fixed_weights({4, 5}, rng);
                         b.inputs = {x};
                         b.loss = [x, w] { return weighted_sum(abs_val(x), w); };
                         return b;
                     }});
    cases.push_back({"lora_forward", 1e-4, [](Rng& rng) {
                         BuiltCase b;
                         auto base = nn::LinearLayer::init(5, 4, rng);
                         auto adapter = nn::LoraAdapter::inject(base, 2, 2.0, rng);
                         // give the zero-init up matrix some mass so its path is live
                         for (double& v : adapter.up.values_mut()) v = 0.3 * rng.normal();
                         Tensor x = Tensor::randn({3, 5}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({3, 4}, rng);
                         b.inputs = {x, adapter.down, adapter.up};
                         b.loss = [x, adapter, w] { return weighted_sum(adapter.forward(x), w); };
                         return b;
                     }});
    cases.push_back({"attention_block", 1e-3, [](Rng& rng) {
                         BuiltCase b;
                         nn::TransformerConfig cfg;
                         cfg.hidden = 8;
                         cfg.layers = 1;
                         cfg.heads = 2;
                         cfg.head_dim = 4;
                         cfg.mlp_layers = 2;
                         auto block = std::make_shared<nn::TransformerBlock>(cfg, rng);
                         Tensor x = Tensor::randn({3, 8}, rng).set_requires_grad(true);
                         Tensor w = fixed_weights({3, 8}, rng);
                         b.inputs = {x};
                         b.loss = [block, x, w] { return weighted_sum(block->forward(x), w); };
                         return b;
                     }});
    cases.push_back({"velocity_model_e2e", 1e-3, [](Rng& rng) {
                         BuiltCase b;
                         nn::VelocityModelConfig cfg;
                         cfg.in_channels = 6;
                         cfg.motion_dim = 3;
                         cfg.max_frames = 8;
                         cfg.transformer.hidden = 8;
                         cfg.transformer.layers = 2;
                         cfg.transformer.heads = 2;
                         cfg.transformer.head_dim = 4;
                         cfg.transformer.mlp_layers = 2;
                         auto model = std::make_shared<nn::VelocityModel>(cfg, rng);
                         Tensor input = Tensor::randn({4, 6}, rng);
                         Tensor w = fixed_weights({4, 3}, rng);
                         b.inputs = model->params();
                         b.loss = [model, input, w] {
                             return weighted_sum(model->forward(input, 0.37), w);
                         };
                         return b;
                     }});

    return cases;
}

}  // namespace mtlk::gradcheck
