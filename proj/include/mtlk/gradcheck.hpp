#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mtlk/tensor.hpp"

namespace mtlk::gradcheck {

// A built case: the leaf tensors whose gradients get verified, plus a thunk
// that recomputes the scalar loss from their current values.
struct BuiltCase {
    std::vector<Tensor> inputs;
    std::function<Tensor()> loss;
};

struct CheckCase {
    std::string name;
    double tolerance = 1e-4;
    std::function<BuiltCase(Rng&)> build;
};

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

// Central finite differences against reverse-mode gradients.
// rel err = |a - n| / max(|a|, |n|, 1e-3).
CheckResult check(const CheckCase& c, std::uint64_t seed, double fd_eps = 1e-5);

// Every differentiable op plus composite network paths; the velocity-model
// end-to-end case carries a 1e-3 tolerance, plain ops 1e-4.
std::vector<CheckCase> standard_suite();

std::vector<CheckResult> run(const std::vector<CheckCase>& cases, std::uint64_t seed);

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace mtlk::gradcheck
