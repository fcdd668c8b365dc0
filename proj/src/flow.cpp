#include "mtlk/flow.hpp"

#include <cmath>

namespace mtlk::flow {

namespace {

// Fixed-point sweeps for the midpoint rule. Three sweeps after the Euler
// predictor keep the method deterministic at a bounded cost per step.
constexpr int kMidpointSweeps = 3;

void check_finite(const Tensor& x, const char* where) {
    for (double v : x.values()) {
        if (!std::isfinite(v)) {
            throw NumericalError(std::string(where) + ": non-finite state");
        }
    }
}

}  // namespace

Tensor interpolate(const Tensor& x0, const Tensor& x1, double t) {
    if (x0.shape() != x1.shape()) throw ShapeError("interpolate: shape mismatch");
    if (t < 0.0 || t > 1.0) throw ValueError("interpolate: t out of [0,1]");
    return add(scale(x0, 1.0 - t), scale(x1, t));
}

Tensor ot_velocity(const Tensor& x1, const Tensor& x_t, double t) {
    if (x1.shape() != x_t.shape()) throw ShapeError("ot_velocity: shape mismatch");
    if (t > 1.0 - OtPath::time_guard) {
        throw NumericalError("ot_velocity: t too close to 1 (singular denominator)");
    }
    return scale(sub(x1, x_t), 1.0 / (1.0 - t));
}

OdeMethod parse_ode_method(const std::string& name) {
    if (name == "euler") return OdeMethod::Euler;
    if (name == "midpoint") return OdeMethod::Midpoint;
    throw ValueError("unknown ODE method '" + name + "' (expected euler or midpoint)");
}

std::string to_string(OdeMethod method) {
    return method == OdeMethod::Euler ? "euler" : "midpoint";
}

void SolverConfig::validate() const {
    if (steps == 0) throw ValueError("solver: steps must be >= 1");
}

Tensor cfm_loss_at(const ConditionalVelocityModel& model, const Tensor& x1, const Tensor& audio,
                   const Tensor& style, const Tensor& x0, double t) {
    Tensor x_t = interpolate(x0, x1, t).detach();
    Tensor target = sub(x1, x0).detach();  // the path velocity, constant in t
    Tensor v = model.velocity(x_t, audio, style, t);
    return mse(v, target);
}

Tensor cfm_loss(const ConditionalVelocityModel& model, const Tensor& x1, const Tensor& audio,
                const Tensor& style, Rng& rng) {
    const double t = rng.uniform() * (1.0 - OtPath::time_guard);
    Tensor x0 = Tensor::randn(x1.shape(), rng);
    return cfm_loss_at(model, x1, audio, style, x0, t);
}

Tensor ode_solve(const FieldFn& field, Tensor x0, const SolverConfig& config) {
    config.validate();
    NoGradGuard guard;
    const double h = 1.0 / static_cast<double>(config.steps);
    Tensor x = x0.detach();
    for (std::size_t n = 0; n < config.steps; ++n) {
        const double t = static_cast<double>(n) * h;
        if (config.method == OdeMethod::Euler) {
            x = add(x, scale(field(x, t), h));
        } else {
            Tensor y = add(x, scale(field(x, t), h));  // Euler predictor
            for (int sweep = 0; sweep < kMidpointSweeps; ++sweep) {
                Tensor mid = scale(add(x, y), 0.5);
                y = add(x, scale(field(mid, t + 0.5 * h), h));
            }
            x = y;
        }
        check_finite(x, "ode_solve");
    }
    return x;
}

Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_uncond, double w) {
    if (v_cond.shape() != v_uncond.shape()) throw ShapeError("cfg_velocity: shape mismatch");
    return add(v_cond, scale(sub(v_cond, v_uncond), w));
}

Tensor sample(const GuidedField& field, Shape noise_shape, double cfg_w,
              const SolverConfig& config, Rng& rng) {
    return sample_from(field, Tensor::randn(std::move(noise_shape), rng), cfg_w, config);
}

Tensor sample_from(const GuidedField& field, const Tensor& x0, double cfg_w,
                   const SolverConfig& config) {
    FieldFn mixed;
    if (cfg_w == 0.0) {
        mixed = field.cond;
    } else {
        mixed = [&field, cfg_w](const Tensor& x, double t) {
            return cfg_velocity(field.cond(x, t), field.uncond(x, t), cfg_w);
        };
    }
    return ode_solve(mixed, x0, config);
}

}  // namespace mtlk::flow
