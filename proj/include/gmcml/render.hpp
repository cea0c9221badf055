#pragma once

// Paired training data: shaded procedural solids over noise backgrounds (O)
// and semantic-depth masks (M). Solids are signed-distance fields rendered
// by sphere tracing.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmcml/camera.hpp"
#include "gmcml/rng.hpp"
#include "gmcml/tensor.hpp"

namespace gmcml {

constexpr int kPaletteSize = 12;
constexpr double kCameraRadius = 3.0;

// 12 well-separated RGB points: cube corners minus black plus face centers.
inline Vec3 category_color(int category) {
    static const Vec3 palette[kPaletteSize] = {
        {1, 0, 0},       {0, 1, 0},       {0, 0, 1},       {1, 1, 0},
        {1, 0, 1},       {0, 1, 1},       {1, 1, 1},       {0.5, 0.5, 0},
        {0.5, 0, 0.5},   {0, 0.5, 0.5},   {0.5, 0.5, 1},   {1, 0.5, 0.5},
    };
    if (category < 0 || category >= kPaletteSize)
        throw std::invalid_argument("category_color: category " + std::to_string(category) +
                                    " outside palette of " + std::to_string(kPaletteSize));
    return palette[category];
}

struct SceneSpec {
    int kind = 0;                      // which solid, equals the category id
    double deform[3] = {1, 1, 1};      // per-axis scale, bounded near 1
    uint64_t texture_seed = 0;
    uint64_t background_seed = 0;
};

inline SceneSpec make_scene(int category, uint64_t rng_seed) {
    if (category < 0 || category >= kPaletteSize)
        throw std::invalid_argument("make_scene: category " + std::to_string(category) + " out of range [0," +
                                    std::to_string(kPaletteSize) + ")");
    Rng rng(rng_seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(category) + 1);
    SceneSpec s;
    s.kind = category;
    for (double& d : s.deform) d = rng.uniform(0.8, 1.2);
    s.texture_seed = rng.raw();
    s.background_seed = rng.raw();
    return s;
}

namespace detail {

inline double hash_to_unit(uint64_t h) {
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    h *= 0xc4ceb9fe1a85ec53ULL;
    h ^= h >> 33;
    return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

inline double lattice(uint64_t seed, int64_t x, int64_t y) {
    uint64_t h = seed;
    h ^= static_cast<uint64_t>(x) * 0x8da6b343ULL;
    h ^= static_cast<uint64_t>(y) * 0xd8163841ULL;
    return hash_to_unit(h * 0x2545f4914f6cdd1dULL + 0x123456789abcdefULL);
}

// smooth 2-D value noise in [0,1]
inline double value_noise(uint64_t seed, double x, double y) {
    const int64_t xi = static_cast<int64_t>(std::floor(x)), yi = static_cast<int64_t>(std::floor(y));
    const double fx = x - xi, fy = y - yi;
    const double sx = fx * fx * (3 - 2 * fx), sy = fy * fy * (3 - 2 * fy);
    const double a = lattice(seed, xi, yi), b = lattice(seed, xi + 1, yi);
    const double c = lattice(seed, xi, yi + 1), d = lattice(seed, xi + 1, yi + 1);
    return (a + (b - a) * sx) * (1 - sy) + (c + (d - c) * sx) * sy;
}

inline double octave_noise(uint64_t seed, double x, double y, int octaves) {
    double v = 0, amp = 0.5, freq = 1.0;
    for (int o = 0; o < octaves; ++o) {
        v += amp * value_noise(seed + static_cast<uint64_t>(o) * 7919, x * freq, y * freq);
        amp *= 0.5;
        freq *= 2.0;
    }
    return v;
}

inline double sd_sphere(const Vec3& p, double r) { return p.norm() - r; }

inline double sd_box(const Vec3& p, const Vec3& b) {
    const Vec3 q{std::fabs(p.x) - b.x, std::fabs(p.y) - b.y, std::fabs(p.z) - b.z};
    const Vec3 qp{std::max(q.x, 0.0), std::max(q.y, 0.0), std::max(q.z, 0.0)};
    return qp.norm() + std::min(std::max(q.x, std::max(q.y, q.z)), 0.0);
}

inline double sd_torus(const Vec3& p, double R, double r) {
    const double qx = std::sqrt(p.x * p.x + p.y * p.y) - R;
    return std::sqrt(qx * qx + p.z * p.z) - r;
}

inline double sd_cylinder(const Vec3& p, double r, double hh) {
    const double dx = std::sqrt(p.x * p.x + p.y * p.y) - r;
    const double dz = std::fabs(p.z) - hh;
    const double ox = std::max(dx, 0.0), oz = std::max(dz, 0.0);
    return std::min(std::max(dx, dz), 0.0) + std::sqrt(ox * ox + oz * oz);
}

inline double sd_cone(const Vec3& p, double r, double hh) {
    // capped cone: radius r at z=-hh shrinking to 0 at z=+hh
    const double q = std::sqrt(p.x * p.x + p.y * p.y);
    const double t = (p.z + hh) / (2 * hh);  // 0 at base, 1 at tip
    const double rad = r * (1.0 - std::min(1.0, std::max(0.0, t)));
    const double side = q - rad;
    const double cap = std::fabs(p.z) - hh;
    return std::max(side * (2 * hh) / std::sqrt(4 * hh * hh + r * r), cap);
}

inline double sd_capsule(const Vec3& p, double hh, double r) {
    Vec3 q = p;
    q.z -= std::min(hh, std::max(-hh, q.z));
    return q.norm() - r;
}

inline double sd_ellipsoid(const Vec3& p, const Vec3& r) {
    const double k0 = Vec3{p.x / r.x, p.y / r.y, p.z / r.z}.norm();
    const double k1 = Vec3{p.x / (r.x * r.x), p.y / (r.y * r.y), p.z / (r.z * r.z)}.norm();
    return k1 > 0 ? k0 * (k0 - 1.0) / k1 : -r.x;
}

inline double sd_octahedron(const Vec3& p, double s) {
    return (std::fabs(p.x) + std::fabs(p.y) + std::fabs(p.z) - s) * 0.57735027;
}

inline double sd_hex_prism(const Vec3& p, double r, double hh) {
    const double px = std::fabs(p.x), py = std::fabs(p.y);
    // distance in the hexagonal cross-section
    const double dxy = std::max(px * 0.8660254 + py * 0.5, py) - r;
    const double dz = std::fabs(p.z) - hh;
    const double ox = std::max(dxy, 0.0), oz = std::max(dz, 0.0);
    return std::min(std::max(dxy, dz), 0.0) + std::sqrt(ox * ox + oz * oz);
}

inline double sd_tri_prism(const Vec3& p, double r, double hh) {
    const Vec3 q{std::fabs(p.x), std::fabs(p.y), std::fabs(p.z)};
    return std::max(q.z - hh, std::max(q.x * 0.866025 + p.y * 0.5, -p.y) - r * 0.5);
}

inline double sd_link(const Vec3& p, double le, double r1, double r2) {
    const Vec3 q{p.x, std::max(std::fabs(p.y) - le, 0.0), p.z};
    const double qx = std::sqrt(q.x * q.x + q.y * q.y) - r1;
    return std::sqrt(qx * qx + q.z * q.z) - r2;
}

inline double scene_sdf(const SceneSpec& s, const Vec3& pin) {
    // apply the bounded per-axis deformation
    const Vec3 p{pin.x / s.deform[0], pin.y / s.deform[1], pin.z / s.deform[2]};
    const double comp = std::min({s.deform[0], s.deform[1], s.deform[2]});
    double d;
    switch (s.kind) {
        case 0: d = sd_sphere(p, 0.62); break;
        case 1: d = sd_box(p, {0.46, 0.46, 0.46}); break;
        case 2: d = sd_torus(p, 0.45, 0.18); break;
        case 3: d = sd_cylinder(p, 0.34, 0.55); break;
        case 4: d = sd_cone(p, 0.5, 0.55); break;
        case 5: d = sd_capsule(p, 0.34, 0.3); break;
        case 6: d = sd_ellipsoid(p, {0.62, 0.4, 0.3}); break;
        case 7: d = sd_octahedron(p, 0.72); break;
        case 8: d = sd_hex_prism(p, 0.45, 0.3); break;
        case 9: d = sd_tri_prism(p, 0.85, 0.3); break;
        case 10: d = sd_link(p, 0.22, 0.32, 0.14); break;
        case 11: d = sd_box(p, {0.55, 0.35, 0.18}); break;
        default: throw std::invalid_argument("scene_sdf: unknown solid kind " + std::to_string(s.kind));
    }
    // conservative bound under non-uniform scaling
    return d * comp;
}

inline Vec3 sdf_normal(const SceneSpec& s, const Vec3& p) {
    const double h = 1e-4;
    const double dx = scene_sdf(s, {p.x + h, p.y, p.z}) - scene_sdf(s, {p.x - h, p.y, p.z});
    const double dy = scene_sdf(s, {p.x, p.y + h, p.z}) - scene_sdf(s, {p.x, p.y - h, p.z});
    const double dz = scene_sdf(s, {p.x, p.y, p.z + h}) - scene_sdf(s, {p.x, p.y, p.z - h});
    const Vec3 n{dx, dy, dz};
    const double nn = n.norm();
    return nn > 0 ? Vec3{n.x / nn, n.y / nn, n.z / nn} : Vec3{0, 0, 1};
}

// procedural surface albedo: tinted multi-octave noise on the hit point
inline Vec3 surface_albedo(uint64_t seed, const Vec3& p) {
    const double n1 = octave_noise(seed, 3.0 * p.x + 7.1, 3.0 * p.y + 2.3, 3);
    const double n2 = octave_noise(seed ^ 0xabcdefULL, 3.0 * p.y + 1.7, 3.0 * p.z + 4.9, 3);
    const double n3 = octave_noise(seed ^ 0x55aa55ULL, 3.0 * p.z + 9.2, 3.0 * p.x + 0.4, 3);
    return {0.25 + 0.75 * n1, 0.25 + 0.75 * n2, 0.25 + 0.75 * n3};
}

}  // namespace detail

struct RasterResult {
    Tensor rgb;       // [3,res,res], shaded object, zero off-coverage
    Tensor depth;     // [1,res,res], per-image normalized to (0,1], nearest = 1
    Tensor coverage;  // [1,res,res], 1 on object pixels
};

inline RasterResult rasterize(const SceneSpec& scene, const CameraRig& rig, int resolution) {
    if (resolution < 16 || resolution > 128)
        throw std::invalid_argument("rasterize: resolution " + std::to_string(resolution) +
                                    " outside [16,128]");
    if (detail::scene_sdf(scene, rig.position) <= 0.0)
        throw std::runtime_error("rasterize: camera inside the solid");

    const Vec3 fwd = (rig.focal - rig.position).normalized();
    Vec3 upref{0, 0, 1};
    if (std::fabs(fwd.dot(upref)) > 0.999) upref = {0, 1, 0};
    const Vec3 right = fwd.cross(upref).normalized();
    const Vec3 up = right.cross(fwd);
    const double tan_half = 0.42;

    const int res = resolution;
    Tensor rgb({3, res, res});
    Tensor depth({1, res, res});
    Tensor cover({1, res, res});
    std::vector<double> raw(static_cast<size_t>(res) * res, 0.0);
    const size_t plane = static_cast<size_t>(res) * res;

    double mind = 1e30;
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            const double u = (2.0 * (x + 0.5) / res - 1.0) * tan_half;
            const double v = (1.0 - 2.0 * (y + 0.5) / res) * tan_half;
            const Vec3 dir = (fwd + right * u + up * v).normalized();
            double t = 0.0;
            bool hit = false;
            for (int step = 0; step < 160 && t < 3.0 * kCameraRadius; ++step) {
                const Vec3 p = rig.position + dir * t;
                const double d = detail::scene_sdf(scene, p);
                if (d < 1e-4) {
                    hit = true;
                    break;
                }
                t += std::max(d, 1e-4);
            }
            if (!hit) continue;
            const size_t idx = static_cast<size_t>(y) * res + x;
            const Vec3 p = rig.position + dir * t;
            const Vec3 n = detail::sdf_normal(scene, p);
            const Vec3 to_cam = dir * -1.0;
            const double lambert = std::max(0.0, n.dot(to_cam));
            const Vec3 albedo = detail::surface_albedo(scene.texture_seed, p);
            const double shade = rig.light * (0.2 + 0.8 * lambert);
            rgb.data()[0 * plane + idx] = std::min(1.0, albedo.x * shade);
            rgb.data()[1 * plane + idx] = std::min(1.0, albedo.y * shade);
            rgb.data()[2 * plane + idx] = std::min(1.0, albedo.z * shade);
            cover.data()[idx] = 1.0;
            raw[idx] = t;
            mind = std::min(mind, t);
        }

    // per-image depth normalization: nearest surface point maps to 1
    for (size_t i = 0; i < plane; ++i)
        if (cover.data()[i] > 0.0) depth.data()[i] = mind / raw[i];

    return {std::move(rgb), std::move(depth), std::move(cover)};
}

inline Tensor make_background(uint64_t seed, int res) {
    Rng rng(seed);
    // random palette endpoints for each channel
    double lo[3], hi[3];
    for (int c = 0; c < 3; ++c) {
        lo[c] = rng.uniform(0.0, 0.5);
        hi[c] = rng.uniform(0.5, 1.0);
    }
    Tensor bg({3, res, res});
    const size_t plane = static_cast<size_t>(res) * res;
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            const size_t idx = static_cast<size_t>(y) * res + x;
            for (int c = 0; c < 3; ++c) {
                const double n = detail::octave_noise(seed + static_cast<uint64_t>(c) * 104729,
                                                      6.0 * x / res, 6.0 * y / res, 4);
                bg.data()[c * plane + idx] = lo[c] + (hi[c] - lo[c]) * std::min(1.0, std::max(0.0, n * 1.4));
            }
        }
    return bg;
}

struct SamplePair {
    Tensor image;  // O, realistic render over background, [3,S,S]
    Tensor mask;   // M, semantic-depth mask, [3,S,S]
    int category = 0;
    Vec3 pose;     // camera position on the unit sphere
    double light = 1.0;
    CameraMode mode = CameraMode::centered;
    uint64_t seed = 0;
};

inline SamplePair compose_pair(const SceneSpec& scene, const CameraRig& rig, int category, int resolution) {
    RasterResult r = rasterize(scene, rig, resolution);
    double covered = 0;
    for (double v : r.coverage.data()) covered += v;
    if (covered == 0.0) throw std::runtime_error("compose_pair: empty coverage, pair rejected");

    const int res = resolution;
    const size_t plane = static_cast<size_t>(res) * res;
    Tensor bg = make_background(scene.background_seed, res);
    SamplePair pair;
    pair.image = Tensor({3, res, res});
    pair.mask = Tensor({3, res, res});
    const Vec3 col = category_color(category);
    const double colv[3] = {col.x, col.y, col.z};
    for (size_t i = 0; i < plane; ++i) {
        const bool fg = r.coverage.data()[i] > 0.0;
        for (int c = 0; c < 3; ++c) {
            pair.image.data()[c * plane + i] = fg ? r.rgb.data()[c * plane + i] : bg.data()[c * plane + i];
            pair.mask.data()[c * plane + i] = fg ? colv[c] * r.depth.data()[i] : 0.0;
        }
    }
    pair.category = category;
    pair.pose = rig.position * (1.0 / rig.position.norm());
    pair.light = rig.light;
    pair.mode = rig.mode;
    return pair;
}

}  // namespace gmcml
