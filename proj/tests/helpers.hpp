#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ctxgen/tensor.hpp"

namespace testutil {

using ctxgen::real;
using ctxgen::Tensor;

// Central-difference derivative of loss_fn w.r.t. one scalar of `param`.
// loss_fn must recompute the loss from the current parameter values.
inline double finite_diff(Tensor& param, std::size_t index,
                          const std::function<double()>& loss_fn, double h) {
    const real saved = param.values()[index];
    param.values()[index] = static_cast<real>(static_cast<double>(saved) + h);
    const double up = loss_fn();
    param.values()[index] = static_cast<real>(static_cast<double>(saved) - h);
    const double down = loss_fn();
    param.values()[index] = saved;
    return (up - down) / (2.0 * h);
}

// Relative error with a floor: gradients far below the floor are compared
// absolutely, since central differences carry irreducible rounding noise.
inline double grad_rel_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

// The fp32 floor absorbs central-difference rounding noise (~eps32 * |L| / h,
// a few 1e-3 absolute): small gradients compare absolutely at tol * floor.
// The fp64 build re-checks the same pipeline with a floor four orders tighter.
#ifdef CTXGEN_FP64
constexpr double kGradStep = 1e-5;
constexpr double kGradTol = 1e-4;
constexpr double kGradFloor = 1e-4;
#else
constexpr double kGradStep = 1e-3;
constexpr double kGradTol = 1e-2;
constexpr double kGradFloor = 0.5;
#endif

inline bool tensors_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        return false;
    }
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        if (a.values()[i] != b.values()[i]) {
            return false;
        }
    }
    return true;
}

inline double max_abs_diff(const std::vector<real>& a, const std::vector<real>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    return m;
}

}  // namespace testutil
