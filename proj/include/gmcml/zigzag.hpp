#pragma once

// Compact classification sub-network built from Zigzag micro-modules:
// 1x1 squeeze, parallel 1x1/3x3 expansion, additive 1x1 bypass, and a
// single ReLU after the sum.

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gmcml/layers.hpp"
#include "gmcml/tensor.hpp"

namespace gmcml {

struct ZigzagModuleConfig {
    int in_channels = 0;
    int squeeze_channels = 0;
    int expand1_channels = 0;
    int expand3_channels = 0;
    int bypass_channels = 0;

    void validate() const {
        if (in_channels < 1 || squeeze_channels < 1 || expand1_channels < 1 || expand3_channels < 1 ||
            bypass_channels < 1)
            throw std::invalid_argument("ZigzagModuleConfig: channel counts must be positive");
        if (bypass_channels != expand1_channels + expand3_channels)
            throw std::invalid_argument("ZigzagModuleConfig: bypass must equal expand1 + expand3");
        if (squeeze_channels >= in_channels)
            throw std::invalid_argument("ZigzagModuleConfig: squeeze must compress the input channels");
    }
};

struct ZigzagModule {
    ZigzagModuleConfig cfg;
    ConvLayer squeeze, expand1, expand3, bypass;

    ZigzagModule() = default;
    ZigzagModule(const ZigzagModuleConfig& c, Rng& rng) : cfg(c) {
        cfg.validate();
        squeeze = ConvLayer(c.in_channels, c.squeeze_channels, 1, 1, 0, rng);
        expand1 = ConvLayer(c.squeeze_channels, c.expand1_channels, 1, 1, 0, rng);
        expand3 = ConvLayer(c.squeeze_channels, c.expand3_channels, 3, 1, 1, rng);
        bypass = ConvLayer(c.in_channels, c.bypass_channels, 1, 1, 0, rng);
    }

    // relu((concat(expand1(s), expand3(s)) + bypass(x))), s = squeeze(x);
    // the expansion branches carry no activation before the sum.
    Tensor operator()(const Tensor& x) const {
        if (x.shape().size() != 3 || x.shape()[0] != cfg.in_channels)
            throw std::invalid_argument("ZigzagModule: expected " + std::to_string(cfg.in_channels) +
                                        " channels, got " + shape_str(x.shape()));
        Tensor s = squeeze(x);
        Tensor expanded = concat_channels(expand1(s), expand3(s));
        return relu_t(add(expanded, bypass(x)));
    }

    std::vector<Tensor> params() const {
        std::vector<Tensor> p;
        collect_params(p, squeeze);
        collect_params(p, expand1);
        collect_params(p, expand3);
        collect_params(p, bypass);
        return p;
    }
};

struct ClassifierConfig {
    int num_classes = 12;
    int image_size = 32;  // input is [6,S,S], S divisible by 4
    int descriptor_dim = 64;
};

inline ZigzagModuleConfig make_zigzag_cfg(int in_ch, int out_ch) {
    ZigzagModuleConfig c;
    c.in_channels = in_ch;
    c.squeeze_channels = std::max(1, out_ch / 4);
    c.expand1_channels = out_ch / 2;
    c.expand3_channels = out_ch - out_ch / 2;
    c.bypass_channels = out_ch;
    return c;
}

class ZigzagClassifier {
public:
    ZigzagClassifier() = default;

    ZigzagClassifier(const ClassifierConfig& cfg, Rng& rng) : cfg_(cfg) {
        if (cfg.image_size % 4 != 0 || cfg.image_size < 8)
            throw std::invalid_argument("ZigzagClassifier: image size must be a multiple of 4, >= 8");
        if (cfg.num_classes < 2) throw std::invalid_argument("ZigzagClassifier: need at least 2 classes");
        if (cfg.descriptor_dim != 64)
            throw std::invalid_argument("ZigzagClassifier: descriptor dim is fixed at 64 by the macro layout");
        stem_ = ConvLayer(6, 16, 3, 1, 1, rng);
        zz1_ = ZigzagModule(make_zigzag_cfg(16, 32), rng);
        zz2_ = ZigzagModule(make_zigzag_cfg(32, 64), rng);
        zz3_ = ZigzagModule(make_zigzag_cfg(64, 64), rng);
        head_ = LinearLayer(64, cfg.num_classes, rng);
    }

    const ClassifierConfig& config() const { return cfg_; }

    // returns (penultimate descriptor, logits)
    std::pair<Tensor, Tensor> forward(const Tensor& x6) const {
        if (x6.shape() != Shape{6, cfg_.image_size, cfg_.image_size})
            throw std::invalid_argument("ZigzagClassifier: expected [6," + std::to_string(cfg_.image_size) +
                                        "," + std::to_string(cfg_.image_size) + "], got " +
                                        shape_str(x6.shape()));
        Tensor h = relu_t(stem_(x6));
        h = zz1_(h);
        h = maxpool2(h);
        h = zz2_(h);
        h = maxpool2(h);
        h = zz3_(h);
        Tensor descriptor = global_avg_pool(h);
        Tensor logits = head_(descriptor);
        return {descriptor, logits};
    }

    std::vector<Tensor> params() const {
        std::vector<Tensor> p;
        collect_params(p, stem_);
        for (const auto& m : {zz1_, zz2_, zz3_})
            for (const auto& t : m.params()) p.push_back(t);
        collect_params(p, head_);
        return p;
    }

private:
    ClassifierConfig cfg_;
    ConvLayer stem_;
    ZigzagModule zz1_, zz2_, zz3_;
    LinearLayer head_;
};

}  // namespace gmcml
