#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ctxgen/tensor.hpp"

namespace ctxgen {

/// Adam with bias correction. Moments are kept per parameter, matched by
/// position in the parameter list the state was initialized with.
struct AdamState {
    std::int64_t step_count = 0;
    real learning_rate = real(1e-3);
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real epsilon = real(1e-8);
    std::vector<std::vector<real>> first_moment;
    std::vector<std::vector<real>> second_moment;

    static AdamState init(const std::vector<Tensor>& params, real learning_rate,
                          real beta1 = real(0.9), real beta2 = real(0.999),
                          real epsilon = real(1e-8)) {
        AdamState s;
        s.learning_rate = learning_rate;
        s.beta1 = beta1;
        s.beta2 = beta2;
        s.epsilon = epsilon;
        s.first_moment.reserve(params.size());
        s.second_moment.reserve(params.size());
        for (const Tensor& p : params) {
            s.first_moment.emplace_back(p.values().size(), real(0));
            s.second_moment.emplace_back(p.values().size(), real(0));
        }
        return s;
    }
};

/// One Adam update over `params`, reading gradients in place. Parameters
/// whose gradient was never populated are left untouched (their moments do
/// not decay either).
inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
    if (params.size() != state.first_moment.size()) {
        throw std::invalid_argument("adam_step: state does not match parameter list");
    }
    state.step_count += 1;
    const real t = static_cast<real>(state.step_count);
    const real bc1 = real(1) - std::pow(state.beta1, t);
    const real bc2 = real(1) - std::pow(state.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = params[k];
        if (!p.has_grad()) {
            continue;
        }
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        if (m.size() != p.values().size()) {
            throw std::invalid_argument("adam_step: moment shape mismatch");
        }
        const auto& g = p.grad();
        auto& vals = p.values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            m[i] = state.beta1 * m[i] + (real(1) - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (real(1) - state.beta2) * g[i] * g[i];
            const real mhat = m[i] / bc1;
            const real vhat = v[i] / bc2;
            vals[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
inline double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (Tensor& p : params) {
        if (!p.has_grad()) {
            continue;
        }
        for (real g : p.grad()) {
            sq += static_cast<double>(g) * static_cast<double>(g);
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const real factor = static_cast<real>(max_norm / norm);
        for (Tensor& p : params) {
            if (!p.has_grad()) {
                continue;
            }
            for (real& g : p.grad()) {
                g *= factor;
            }
        }
    }
    return norm;
}

}  // namespace ctxgen
