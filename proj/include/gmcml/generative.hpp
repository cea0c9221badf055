#pragma once

// Reconstruction sub-network: convolutional encoder to a diagonal Gaussian
// over the latent code, reparameterized sampling, and an upsampling
// generator producing the 3-channel mask estimate.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "gmcml/layers.hpp"
#include "gmcml/rng.hpp"
#include "gmcml/tensor.hpp"

namespace gmcml {

struct LatentGaussian {
    Tensor mu;       // [k]
    Tensor log_var;  // [k], clamped into [-20, 20]
};

struct GenerativeConfig {
    int latent_dim = 16;
    int image_size = 32;  // S, must be divisible by 8
    double sigma = 0.1;   // likelihood scale of the mask Gaussian
};

class GenerativeModel {
public:
    GenerativeModel() = default;

    GenerativeModel(const GenerativeConfig& cfg, Rng& rng) : cfg_(cfg) {
        if (cfg.image_size % 8 != 0 || cfg.image_size < 8)
            throw std::invalid_argument("GenerativeModel: image size must be a positive multiple of 8");
        if (cfg.latent_dim < 1) throw std::invalid_argument("GenerativeModel: latent_dim must be positive");
        const int s8 = cfg.image_size / 8;
        flat_ = 64 * s8 * s8;
        enc1_ = ConvLayer(3, 16, 3, 2, 1, rng);
        enc2_ = ConvLayer(16, 32, 3, 2, 1, rng);
        enc3_ = ConvLayer(32, 64, 3, 2, 1, rng);
        head_mu_ = LinearLayer(flat_, cfg.latent_dim, rng);
        head_lv_ = LinearLayer(flat_, cfg.latent_dim, rng);
        gen_fc_ = LinearLayer(cfg.latent_dim, flat_, rng);
        gen1_ = ConvLayer(64, 32, 3, 1, 1, rng);
        gen2_ = ConvLayer(32, 16, 3, 1, 1, rng);
        gen3_ = ConvLayer(16, 3, 3, 1, 1, rng);
        // start the mask head near the sparse-mask prior; without this the
        // sum-form likelihood slams the sigmoid into saturation early on
        for (double& v : gen3_.b.data()) v = -3.0;
    }

    const GenerativeConfig& config() const { return cfg_; }

    LatentGaussian encode(const Tensor& x) const {
        if (x.shape() != Shape{3, cfg_.image_size, cfg_.image_size})
            throw std::invalid_argument("encode: expected [3," + std::to_string(cfg_.image_size) + "," +
                                        std::to_string(cfg_.image_size) + "], got " + shape_str(x.shape()));
        Tensor h = relu_t(enc1_(x));
        h = relu_t(enc2_(h));
        h = relu_t(enc3_(h));
        h = reshape(h, {flat_});
        LatentGaussian g;
        g.mu = head_mu_(h);
        g.log_var = clamp_t(head_lv_(h), -20.0, 20.0);
        return g;
    }

    // z = mu + exp(log_var / 2) * eps
    static Tensor sample_latent(const LatentGaussian& g, const Tensor& eps) {
        if (eps.shape() != g.mu.shape())
            throw std::invalid_argument("sample_latent: eps length mismatch, " + shape_str(eps.shape()) +
                                        " vs " + shape_str(g.mu.shape()));
        return add(g.mu, mul(exp_t(scale(g.log_var, 0.5)), eps));
    }

    Tensor generate(const Tensor& z) const {
        if (z.shape() != Shape{cfg_.latent_dim})
            throw std::invalid_argument("generate: expected latent of length " +
                                        std::to_string(cfg_.latent_dim) + ", got " + shape_str(z.shape()));
        const int s8 = cfg_.image_size / 8;
        Tensor h = relu_t(gen_fc_(z));
        h = reshape(h, {64, s8, s8});
        h = relu_t(gen1_(upsample2(h)));
        h = relu_t(gen2_(upsample2(h)));
        return sigmoid_t(gen3_(upsample2(h)));
    }

    std::vector<Tensor> params() const {
        std::vector<Tensor> p;
        collect_params(p, enc1_);
        collect_params(p, enc2_);
        collect_params(p, enc3_);
        collect_params(p, head_mu_);
        collect_params(p, head_lv_);
        collect_params(p, gen_fc_);
        collect_params(p, gen1_);
        collect_params(p, gen2_);
        collect_params(p, gen3_);
        return p;
    }

private:
    GenerativeConfig cfg_;
    int flat_ = 0;
    ConvLayer enc1_, enc2_, enc3_;
    LinearLayer head_mu_, head_lv_, gen_fc_;
    ConvLayer gen1_, gen2_, gen3_;
};

// KL(N(mu, diag(exp(log_var))) || N(0, I)) in closed form
inline Tensor loss_enc(const LatentGaussian& g) {
    const double k = static_cast<double>(g.mu.size());
    Tensor s = add(sum_t(exp_t(g.log_var)), sum_t(square_t(g.mu)));
    s = sub(s, sum_t(g.log_var));
    return scale(add_scalar(s, -k), 0.5);
}

// (1 / 2 sigma^2) * ||M - M'||^2 summed over all pixels and channels
inline Tensor loss_gen(const Tensor& m_hat, const Tensor& m, double sigma) {
    if (sigma <= 0.0) throw std::invalid_argument("loss_gen: sigma must be positive");
    detail::check_same_shape(m_hat, m, "loss_gen");
    return scale(sq_dist(m, m_hat), 1.0 / (2.0 * sigma * sigma));
}

inline Tensor loss_enc_gen(const LatentGaussian& g, const Tensor& m_hat, const Tensor& m, double sigma) {
    return add(loss_enc(g), loss_gen(m_hat, m, sigma));
}

// Decode a 2-D slice of the latent space (dims 0 and 1 varying over
// [center - span, center + span]) and tile the outputs into one mosaic.
inline Tensor sample_manifold(const GenerativeModel& model, const Tensor& center, double span, int grid) {
    if (grid < 2) throw std::invalid_argument("sample_manifold: grid must be >= 2");
    if (span < 0.0) throw std::invalid_argument("sample_manifold: span must be non-negative");
    if (center.shape() != Shape{model.config().latent_dim})
        throw std::invalid_argument("sample_manifold: center length mismatch");
    const int s = model.config().image_size;
    Tensor mosaic({3, grid * s, grid * s});
    const size_t mplane = static_cast<size_t>(grid * s) * (grid * s);
    const size_t tplane = static_cast<size_t>(s) * s;
    for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx) {
            Tensor z({model.config().latent_dim}, center.data());
            z.data()[0] += span * (2.0 * gx / (grid - 1) - 1.0);
            if (model.config().latent_dim > 1) z.data()[1] += span * (2.0 * gy / (grid - 1) - 1.0);
            Tensor tile = model.generate(z);
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < s; ++y)
                    for (int x = 0; x < s; ++x)
                        mosaic.data()[c * mplane + static_cast<size_t>(gy * s + y) * (grid * s) + gx * s + x] =
                            tile.data()[c * tplane + static_cast<size_t>(y) * s + x];
        }
    return mosaic;
}

}  // namespace gmcml
