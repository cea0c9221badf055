#pragma once

// Small trainable layer building blocks shared by both sub-networks.

#include <cmath>
#include <string>
#include <vector>

#include "gmcml/rng.hpp"
#include "gmcml/tensor.hpp"

namespace gmcml {

inline void init_uniform_fan_in(Tensor& t, int fan_in, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data()) v = rng.uniform(-s, s);
}

struct ConvLayer {
    Tensor w, b;
    int stride = 1, pad = 0;

    ConvLayer() = default;
    ConvLayer(int in_ch, int out_ch, int ksize, int stride_, int pad_, Rng& rng)
        : w({out_ch, in_ch, ksize, ksize}), b({out_ch}), stride(stride_), pad(pad_) {
        init_uniform_fan_in(w, in_ch * ksize * ksize, rng);
        w.set_requires_grad(true);
        b.set_requires_grad(true);
    }

    Tensor operator()(const Tensor& x) const { return add_channel_bias(conv2d(x, w, stride, pad), b); }
};

struct LinearLayer {
    Tensor w, b;

    LinearLayer() = default;
    LinearLayer(int in_dim, int out_dim, Rng& rng) : w({out_dim, in_dim}), b({out_dim}) {
        init_uniform_fan_in(w, in_dim, rng);
        w.set_requires_grad(true);
        b.set_requires_grad(true);
    }

    Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
};

inline void collect_params(std::vector<Tensor>& out, const ConvLayer& l) {
    out.push_back(l.w);
    out.push_back(l.b);
}
inline void collect_params(std::vector<Tensor>& out, const LinearLayer& l) {
    out.push_back(l.w);
    out.push_back(l.b);
}

inline int64_t param_count(const std::vector<Tensor>& params) {
    int64_t n = 0;
    for (const auto& p : params) n += p.size();
    return n;
}

}  // namespace gmcml
