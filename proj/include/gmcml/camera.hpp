#pragma once

// Camera placement on an icosphere: recursive subdivision, the vertical
// camera band, shifted focal points and angular pose distance.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

namespace gmcml {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        const double n = norm();
        if (n == 0.0) throw std::invalid_argument("Vec3: cannot normalize zero vector");
        return {x / n, y / n, z / n};
    }
};

enum class CameraMode { centered, shifted };

struct CameraRig {
    Vec3 position;   // on the sphere of radius R
    Vec3 focal;      // look-at point
    double light = 1.0;  // diffuse intensity multiplier in [0.5, 1.5]
    CameraMode mode = CameraMode::centered;
};

// Vertices of the icosahedron subdivided `level` times, projected onto the
// sphere of the given radius. Midpoints shared by adjacent triangles are
// merged, so the count is 10*4^level + 2.
inline std::vector<Vec3> subdivide_icosahedron(int level, double radius) {
    if (level < 0) throw std::invalid_argument("subdivide_icosahedron: negative level");
    if (level > 6) throw std::invalid_argument("subdivide_icosahedron: level > 6 rejected");
    if (radius <= 0.0) throw std::invalid_argument("subdivide_icosahedron: radius must be positive");

    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> verts = {
        {-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
        {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
        {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1},
    };
    for (auto& v : verts) v = v.normalized();

    std::vector<std::array<int, 3>> faces = {
        {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
        {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
        {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1},
    };

    for (int l = 0; l < level; ++l) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            Vec3 m = ((verts[a] + verts[b]) * 0.5).normalized();
            verts.push_back(m);
            const int idx = static_cast<int>(verts.size()) - 1;
            midpoint.emplace(key, idx);
            return idx;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(faces.size() * 4);
        for (const auto& f : faces) {
            const int a = mid(f[0], f[1]), b = mid(f[1], f[2]), c = mid(f[2], f[0]);
            next.push_back({f[0], a, c});
            next.push_back({f[1], b, a});
            next.push_back({f[2], c, b});
            next.push_back({a, b, c});
        }
        faces = std::move(next);
    }

    for (auto& v : verts) v = v * radius;
    return verts;
}

// Keep only cameras whose elevation lies in the band V_z in [-0.1 R, 0.6 R].
inline std::vector<Vec3> clip_band(const std::vector<Vec3>& vertices, double radius) {
    std::vector<Vec3> kept;
    for (const auto& v : vertices)
        if (v.z >= -0.1 * radius && v.z <= 0.6 * radius) kept.push_back(v);
    if (kept.empty())
        throw std::runtime_error("clip_band: band excludes all cameras (radius " + std::to_string(radius) + ")");
    return kept;
}

// Focal point for the shifted camera mode: F' = F + 0.2 (C - P_axis).
inline Vec3 shift_focal(const Vec3& f, const Vec3& c, const Vec3& p_axis) {
    return f + (c - p_axis) * 0.2;
}

// Angle in radians between two pose vectors, range [0, pi].
inline double pose_distance(const Vec3& a, const Vec3& b) {
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("pose_distance: zero vector");
    double c = a.dot(b) / (na * nb);
    c = std::min(1.0, std::max(-1.0, c));
    return std::acos(c);
}

}  // namespace gmcml
