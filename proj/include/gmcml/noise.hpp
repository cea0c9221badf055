#pragma once

// Coupled adaptive input noise: both corruption ratios are functions of the
// variance ratio Var(M') / (Var(M) + m_noise).

#include <cmath>
#include <stdexcept>
#include <vector>

#include "gmcml/rng.hpp"
#include "gmcml/tensor.hpp"

namespace gmcml {

struct NoiseState {
    double alpha = 0.25;
    double beta = 2.0;
    double m_noise = 1e-6;
    double var_ratio = 0.0;
    double r_rec = 0.0;                 // tanh(alpha * var_ratio)
    double r_cls = std::tanh(1.0);      // tanh(1 - tanh(beta * var_ratio))
};

// pooled population variance over every pixel and channel of the batch
inline double batch_variance(const std::vector<Tensor>& images) {
    if (images.empty()) throw std::invalid_argument("batch_variance: empty batch");
    double sum = 0;
    int64_t n = 0;
    for (const auto& t : images) {
        for (double v : t.data()) sum += v;
        n += t.size();
    }
    const double mean = sum / n;
    double ss = 0;
    for (const auto& t : images)
        for (double v : t.data()) ss += (v - mean) * (v - mean);
    return ss / n;
}

inline NoiseState update_ratios(const NoiseState& state, const std::vector<Tensor>& m_hat_batch,
                                const std::vector<Tensor>& m_batch) {
    NoiseState next = state;
    next.var_ratio = batch_variance(m_hat_batch) / (batch_variance(m_batch) + state.m_noise);
    next.r_rec = std::tanh(state.alpha * next.var_ratio);
    next.r_cls = std::tanh(1.0 - std::tanh(state.beta * next.var_ratio));
    return next;
}

// convex blend with a fresh Gaussian noise field (mean 0.5, sd 0.25,
// clamped to [0,1]); output clamped to [0,1]
inline Tensor corrupt(const Tensor& x, double r, Rng& rng) {
    if (r < 0.0 || r > 1.0)
        throw std::invalid_argument("corrupt: ratio " + std::to_string(r) + " outside [0,1]");
    if (r == 0.0) return Tensor(x.shape(), x.data());
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) {
        double ran = 0.5 + 0.25 * rng.normal();
        ran = std::min(1.0, std::max(0.0, ran));
        const double v = r * ran + (1.0 - r) * x.data()[i];
        out.data()[i] = std::min(1.0, std::max(0.0, v));
    }
    return out;
}

// residual of the coupling identity R_cls = tanh(1 - tanh((beta/alpha) atanh(R_rec)))
inline double coupling_check(const NoiseState& state) {
    if (state.r_rec >= 1.0) throw std::domain_error("coupling_check: R_rec >= 1, arctanh undefined");
    const double expected = std::tanh(1.0 - std::tanh(state.beta / state.alpha * std::atanh(state.r_rec)));
    return std::fabs(state.r_cls - expected);
}

}  // namespace gmcml
