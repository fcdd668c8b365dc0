#pragma once

#include <functional>
#include <string>

#include "mtlk/tensor.hpp"

namespace mtlk::flow {

// The straight-line probability path with final sigma fixed at 0:
// x_t = (1-t) x0 + t x1, with velocity (x1 - x_t)/(1 - t) = x1 - x0.
struct OtPath {
    static constexpr double final_sigma = 0.0;
    // Guard band below t=1; the velocity denominator is singular there.
    static constexpr double time_guard = 1e-5;
};

Tensor interpolate(const Tensor& x0, const Tensor& x1, double t);
Tensor ot_velocity(const Tensor& x1, const Tensor& x_t, double t);

enum class OdeMethod { Euler, Midpoint };

OdeMethod parse_ode_method(const std::string& name);
std::string to_string(OdeMethod method);

struct SolverConfig {
    OdeMethod method = OdeMethod::Midpoint;
    std::size_t steps = 5;

    void validate() const;
};

// Velocity model seen by the flow-matching objective. Audio/style may be
// undefined tensors for unconditional models.
class ConditionalVelocityModel {
public:
    virtual ~ConditionalVelocityModel() = default;
    virtual Tensor velocity(const Tensor& x_t, const Tensor& audio, const Tensor& style,
                            double t) const = 0;
};

// Squared-error regression of the model velocity onto the path velocity for
// a fixed draw of (x0, t). Gradients reach the model only.
Tensor cfm_loss_at(const ConditionalVelocityModel& model, const Tensor& x1, const Tensor& audio,
                   const Tensor& style, const Tensor& x0, double t);

// Draws t ~ U[0, 1 - guard) and x0 ~ N(0, 1), then defers to cfm_loss_at.
Tensor cfm_loss(const ConditionalVelocityModel& model, const Tensor& x1, const Tensor& audio,
                const Tensor& style, Rng& rng);

// Plain-value velocity field for sampling.
using FieldFn = std::function<Tensor(const Tensor& x, double t)>;

// Fixed-step integration of dx/dt = field(x, t) from t=0 to t=1. Euler, or
// the midpoint rule (implicit midpoint solved with a fixed number of
// fixed-point sweeps; exact on constant fields, second order on smooth ones).
Tensor ode_solve(const FieldFn& field, Tensor x0, const SolverConfig& config);

// v_cond + w * (v_cond - v_uncond).
Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_uncond, double w);

struct GuidedField {
    FieldFn cond;
    FieldFn uncond;
};

// Draws x0 ~ N(0,1) of the given shape and integrates the guidance-mixed
// field. With w == 0 only the conditional branch is evaluated.
Tensor sample(const GuidedField& field, Shape noise_shape, double cfg_w,
              const SolverConfig& config, Rng& rng);

// Same integration from a caller-supplied start state.
Tensor sample_from(const GuidedField& field, const Tensor& x0, double cfg_w,
                   const SolverConfig& config);

}  // namespace mtlk::flow
