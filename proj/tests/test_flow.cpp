#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "mtlk/flow.hpp"
#include "testutil.hpp"
#include "toy2d.hpp"

using namespace mtlk;
namespace fl = mtlk::flow;

TEST_CASE("interpolate endpoints and midpoints") {
    Rng rng(1);
    Tensor x0 = Tensor::randn({3, 4}, rng);
    Tensor x1 = Tensor::randn({3, 4}, rng);
    CHECK(fl::interpolate(x0, x1, 0.0).values() == x0.values());
    CHECK(fl::interpolate(x0, x1, 1.0).values() == x1.values());

    Tensor a = Tensor::zeros({2});
    Tensor b = Tensor::full({2}, 2.0);
    Tensor quarter = fl::interpolate(a, b, 0.25);
    for (double v : quarter.values()) CHECK(v == doctest::Approx(0.5));

    CHECK_THROWS_AS(fl::interpolate(Tensor::zeros({2}), Tensor::zeros({3}), 0.5), ShapeError);
}

TEST_CASE("ot velocity basics") {
    Tensor x1 = Tensor::full({2}, 1.0);
    CHECK(fl::ot_velocity(x1, x1, 0.3).values() == std::vector<double>{0, 0});
    CHECK(fl::ot_velocity(x1, Tensor::zeros({2}), 0.0).values() == std::vector<double>{1, 1});
    CHECK_THROWS_AS(fl::ot_velocity(x1, x1, 1.0 - 1e-6), NumericalError);
}

TEST_CASE("path identity: ot_velocity(interpolate(x0,x1,t)) == x1 - x0") {
    Rng rng(2);
    double worst = 0.0;
    for (int trial = 0; trial < 10000; ++trial) {
        Tensor x0 = Tensor::randn({4}, rng);
        Tensor x1 = Tensor::randn({4}, rng);
        const double t = rng.uniform() * 0.99;
        Tensor u = fl::ot_velocity(x1, fl::interpolate(x0, x1, t), t);
        Tensor expect = sub(x1, x0);
        worst = std::max(worst, testutil::max_abs_diff(u.values(), expect.values()));
    }
    CHECK(worst < 1e-12);
}

namespace {

// Velocity oracle that returns the exact path velocity toward a target.
class OracleModel : public fl::ConditionalVelocityModel {
public:
    explicit OracleModel(Tensor x1) : x1_(std::move(x1)) {}
    Tensor velocity(const Tensor& x_t, const Tensor&, const Tensor&, double t) const override {
        return fl::ot_velocity(x1_, x_t, t);
    }

private:
    Tensor x1_;
};

// Model that always predicts zero velocity.
class ZeroModel : public fl::ConditionalVelocityModel {
public:
    Tensor velocity(const Tensor& x_t, const Tensor&, const Tensor&, double) const override {
        return Tensor::zeros(x_t.shape());
    }
};

}  // namespace

TEST_CASE("cfm loss of the exact-velocity oracle is zero for every draw") {
    Rng rng(3);
    for (int draw = 0; draw < 100; ++draw) {
        Tensor x1 = Tensor::randn({3, 4}, rng);
        OracleModel model(x1);
        CHECK(fl::cfm_loss(model, x1, {}, {}, rng).item() < 1e-20);
    }
}

TEST_CASE("cfm loss of the zero model at t=0 with x1=0 estimates E||x0||^2 = 1") {
    Rng rng(4);
    ZeroModel model;
    Tensor x1 = Tensor::zeros({1, 4});
    double acc = 0.0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        Tensor x0 = Tensor::randn({1, 4}, rng);
        acc += fl::cfm_loss_at(model, x1, {}, {}, x0, 0.0).item();
    }
    CHECK(acc / draws == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("cfm loss gradient on a tiny model matches finite differences") {
    Rng rng(5);
    toy2d::MlpVelocity model(rng);
    Tensor x1 = toy2d::mixture_draws(4, rng);
    Tensor x0 = Tensor::randn({4, 2}, rng);
    const double t = 0.42;
    auto loss = [&] { return fl::cfm_loss_at(model, x1, {}, {}, x0, t); };
    loss().backward();
    for (Tensor param : model.params()) {
        if (!param.has_grad()) continue;
        CHECK(testutil::max_rel_err(param.grad(), testutil::fd_gradient(param, loss)) < 1e-3);
    }
}

TEST_CASE("ode solvers are exact on constant fields") {
    Tensor x0 = Tensor::from_data({2}, {1.0, -2.0});
    auto field = [](const Tensor& x, double) { return Tensor::from_data({2}, {0.5, 2.0}); (void)x; };
    for (fl::OdeMethod method : {fl::OdeMethod::Euler, fl::OdeMethod::Midpoint}) {
        for (std::size_t steps : {1u, 3u, 5u, 17u}) {
            Tensor out = fl::ode_solve(field, x0, {method, steps});
            CHECK(out.values()[0] == doctest::Approx(1.5).epsilon(1e-13));
            CHECK(out.values()[1] == doctest::Approx(0.0).epsilon(1e-13));
        }
    }
}

namespace {

double exp_growth_error(fl::OdeMethod method, std::size_t steps) {
    auto field = [](const Tensor& x, double) { return x; };
    Tensor out = fl::ode_solve(field, Tensor::scalar(1.0), {method, steps});
    return std::fabs(out.item() - std::exp(1.0));
}

}  // namespace

TEST_CASE("midpoint with 5 steps lands within 0.5% of e") {
    const double rel = exp_growth_error(fl::OdeMethod::Midpoint, 5) / std::exp(1.0);
    CHECK(rel < 0.005);
}

TEST_CASE("solver orders: error ratios under step doubling") {
    const double mid = exp_growth_error(fl::OdeMethod::Midpoint, 5) /
                       exp_growth_error(fl::OdeMethod::Midpoint, 10);
    CHECK(mid > 3.5);
    CHECK(mid < 4.5);

    const double euler = exp_growth_error(fl::OdeMethod::Euler, 5) /
                         exp_growth_error(fl::OdeMethod::Euler, 10);
    CHECK(euler > 1.8);
    CHECK(euler < 2.2);
}

TEST_CASE("ode solver aborts on divergence") {
    auto field = [](const Tensor& x, double) { return scale(x, 1e160); };
    CHECK_THROWS_AS(fl::ode_solve(field, Tensor::scalar(1.0), {fl::OdeMethod::Euler, 4}),
                    NumericalError);
}

TEST_CASE("solver config validation") {
    CHECK_THROWS_AS(fl::SolverConfig({fl::OdeMethod::Euler, 0}).validate(), ValueError);
    CHECK(fl::parse_ode_method("euler") == fl::OdeMethod::Euler);
    CHECK(fl::parse_ode_method("midpoint") == fl::OdeMethod::Midpoint);
    CHECK_THROWS_AS(fl::parse_ode_method("rk4"), ValueError);
}

TEST_CASE("cfg velocity algebra") {
    Rng rng(6);
    Tensor vc = Tensor::randn({3, 2}, rng);
    Tensor vu = Tensor::randn({3, 2}, rng);

    CHECK(fl::cfg_velocity(vc, vu, 0.0).values() == vc.values());
    CHECK(fl::cfg_velocity(vc, vc, 7.3).values() == vc.values());

    Tensor one = Tensor::scalar(1.0);
    Tensor zero = Tensor::scalar(0.0);
    CHECK(fl::cfg_velocity(one, zero, 2.0).item() == doctest::Approx(3.0));

    // affine in w: cfg(w1) + cfg(w2) == 2 cfg((w1+w2)/2)
    Tensor lhs = add(fl::cfg_velocity(vc, vu, 0.7), fl::cfg_velocity(vc, vu, 2.9));
    Tensor rhs = scale(fl::cfg_velocity(vc, vu, 1.8), 2.0);
    CHECK(testutil::max_abs_diff(lhs.values(), rhs.values()) < 1e-12);
}

TEST_CASE("sampling an oracle field toward a fixed target returns the target") {
    Rng rng(7);
    Tensor target = Tensor::randn({2, 3}, rng);
    fl::GuidedField field;
    field.cond = [&target](const Tensor& x, double t) { return fl::ot_velocity(target, x, t); };
    field.uncond = field.cond;
    for (double w : {0.0, 2.0}) {
        Tensor out = fl::sample(field, {2, 3}, w, {fl::OdeMethod::Midpoint, 5}, rng);
        CHECK(testutil::max_abs_diff(out.values(), target.values()) < 1e-9);
    }
}

TEST_CASE("sampling is bitwise deterministic under a fixed seed") {
    Rng rng_model(8);
    toy2d::MlpVelocity model(rng_model);
    fl::GuidedField field;
    field.cond = [&model](const Tensor& x, double t) { return model.velocity(x, {}, {}, t); };
    field.uncond = field.cond;

    Rng rng_a(99), rng_b(99);
    Tensor a = fl::sample(field, {4, 2}, 2.0, {fl::OdeMethod::Midpoint, 5}, rng_a);
    Tensor b = fl::sample(field, {4, 2}, 2.0, {fl::OdeMethod::Midpoint, 5}, rng_b);
    CHECK(a.values() == b.values());
}

TEST_CASE("short flow-matching run moves toward the toy mixture") {
    toy2d::MlpVelocity model(*[] {
        static Rng rng(10);
        return &rng;
    }());
    toy2d::train(model, 600, 128, 1234);
    Rng rng(77);
    Tensor truth = toy2d::mixture_draws(400, rng);
    Tensor samples = toy2d::sample_model(model, 400, {fl::OdeMethod::Midpoint, 5}, rng);
    CHECK(toy2d::energy_distance(samples, truth) < 0.3);
}
