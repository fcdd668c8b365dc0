#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "mtlk/tensor.hpp"

namespace testutil {

// Central-difference gradient of a scalar loss w.r.t. one leaf input.
inline std::vector<double> fd_gradient(mtlk::Tensor& input,
                                       const std::function<mtlk::Tensor()>& loss,
                                       double eps = 1e-5) {
    std::vector<double> grad(input.size());
    auto& values = input.values_mut();
    mtlk::NoGradGuard guard;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + eps;
        const double plus = loss().item();
        values[i] = saved - eps;
        const double minus = loss().item();
        values[i] = saved;
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    return grad;
}

inline double max_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), 1e-3});
        worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::fabs(a[i] - b[i]));
    }
    return worst;
}

}  // namespace testutil
