#pragma once

// Dataset layout: one directory with meta.jsonl plus <id>_o.png / <id>_m.png
// per pair. Floats are serialized with 9 significant digits.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gmcml/camera.hpp"
#include "gmcml/image_io.hpp"
#include "gmcml/render.hpp"
#include "gmcml/rng.hpp"

namespace gmcml {

// quantize to the serialized precision so write/read round-trips bit-exactly
inline double round9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::strtod(buf, nullptr);
}

inline std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline const char* mode_name(CameraMode m) { return m == CameraMode::centered ? "centered" : "shifted"; }

inline CameraMode mode_from_name(const std::string& s) {
    if (s == "centered") return CameraMode::centered;
    if (s == "shifted") return CameraMode::shifted;
    throw std::runtime_error("mode_from_name: unknown camera mode '" + s + "'");
}

inline void write_dataset(const std::vector<SamplePair>& pairs, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream meta(dir + "/meta.jsonl", std::ios::trunc);
    if (!meta) throw std::runtime_error("write_dataset: cannot open " + dir + "/meta.jsonl");
    for (size_t i = 0; i < pairs.size(); ++i) {
        const SamplePair& p = pairs[i];
        char id[16];
        std::snprintf(id, sizeof(id), "%06zu", i);
        const std::string o_file = std::string(id) + "_o.png";
        const std::string m_file = std::string(id) + "_m.png";
        write_png_rgb(dir + "/" + o_file, p.image);
        write_png_rgb(dir + "/" + m_file, p.mask);
        meta << "{\"id\":" << i << ",\"category\":" << p.category << ",\"pose\":[" << fmt9(p.pose.x) << ","
             << fmt9(p.pose.y) << "," << fmt9(p.pose.z) << "],\"light\":" << fmt9(p.light) << ",\"mode\":\""
             << mode_name(p.mode) << "\",\"seed\":" << p.seed << ",\"o_file\":\"" << o_file
             << "\",\"m_file\":\"" << m_file << "\"}\n";
    }
}

inline std::vector<SamplePair> read_dataset(const std::string& dir) {
    std::vector<SamplePair> pairs;
    const std::string meta_path = dir + "/meta.jsonl";
    if (!std::filesystem::exists(meta_path)) return pairs;  // empty directory, empty dataset
    std::ifstream meta(meta_path);
    if (!meta) throw std::runtime_error("read_dataset: cannot open " + meta_path);
    std::string line;
    int lineno = 0;
    while (std::getline(meta, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            SamplePair p;
            p.category = j.at("category").get<int>();
            const auto& pose = j.at("pose");
            p.pose = {pose.at(0).get<double>(), pose.at(1).get<double>(), pose.at(2).get<double>()};
            p.light = j.at("light").get<double>();
            p.mode = mode_from_name(j.at("mode").get<std::string>());
            p.seed = j.at("seed").get<uint64_t>();
            p.image = read_png_rgb(dir + "/" + j.at("o_file").get<std::string>());
            p.mask = read_png_rgb(dir + "/" + j.at("m_file").get<std::string>());
            pairs.push_back(std::move(p));
        } catch (const std::exception& e) {
            throw std::runtime_error("read_dataset: corrupt metadata at line " + std::to_string(lineno) +
                                     ": " + e.what());
        }
    }
    return pairs;
}

struct RenderConfig {
    int classes = 12;
    int per_class = 100;      // pairs per class per camera mode
    int resolution = 32;
    uint64_t seed = 0;
    int subdivision_level = 2;
    bool centered = true;
    bool shifted = true;
};

namespace detail {

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t h = a + 0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2);
    h ^= h >> 30;
    h *= 0xbf58476d1ce4e5b9ULL;
    h ^= h >> 27;
    return h;
}

inline SamplePair render_one(const RenderConfig& cfg, const std::vector<Vec3>& cameras, CameraMode mode,
                             int category, uint64_t sample_seed) {
    Rng rng(sample_seed);
    for (int attempt = 0; attempt < 16; ++attempt) {
        CameraRig rig;
        rig.position = cameras[rng.below(cameras.size())];
        rig.light = rng.uniform(0.5, 1.5);
        rig.mode = mode;
        if (mode == CameraMode::centered) {
            // focal jitter inside a ball of radius 0.05 R around the center
            Vec3 jitter;
            do {
                jitter = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
            } while (jitter.norm() > 1.0);
            rig.focal = jitter * (0.05 * kCameraRadius);
        } else {
            rig.focal = shift_focal({0, 0, 0}, rig.position, {kCameraRadius, 0, 0});
        }
        SceneSpec scene = make_scene(category, rng.raw());
        try {
            SamplePair p = compose_pair(scene, rig, category, cfg.resolution);
            p.seed = sample_seed;
            p.pose = {round9(p.pose.x), round9(p.pose.y), round9(p.pose.z)};
            p.light = round9(p.light);
            return p;
        } catch (const std::runtime_error&) {
            // empty coverage or camera inside solid; redraw
        }
    }
    throw std::runtime_error("render_one: no usable camera found for category " + std::to_string(category));
}

inline int env_thread_count() {
    const char* v = std::getenv("GMCML_THREADS");
    if (!v) return 1;
    const int n = std::atoi(v);
    return n > 0 ? n : 1;
}

}  // namespace detail

// Fully reproducible from the config; parallel across samples when
// GMCML_THREADS is set (per-sample rng streams are keyed by sample id).
inline std::vector<SamplePair> generate_dataset(const RenderConfig& cfg) {
    if (cfg.classes < 1 || cfg.classes > kPaletteSize)
        throw std::invalid_argument("generate_dataset: classes must be in [1," +
                                    std::to_string(kPaletteSize) + "], got " + std::to_string(cfg.classes));
    const std::vector<Vec3> cameras =
        clip_band(subdivide_icosahedron(cfg.subdivision_level, kCameraRadius), kCameraRadius);

    struct Job {
        CameraMode mode;
        int category;
        uint64_t seed;
    };
    std::vector<Job> jobs;
    std::vector<CameraMode> modes;
    if (cfg.centered) modes.push_back(CameraMode::centered);
    if (cfg.shifted) modes.push_back(CameraMode::shifted);
    for (CameraMode mode : modes)
        for (int k = 0; k < cfg.classes; ++k)
            for (int i = 0; i < cfg.per_class; ++i) {
                const uint64_t sid = detail::mix_seed(
                    cfg.seed, (static_cast<uint64_t>(mode == CameraMode::shifted) << 40) |
                                  (static_cast<uint64_t>(k) << 24) | static_cast<uint64_t>(i));
                jobs.push_back({mode, k, sid});
            }

    std::vector<SamplePair> pairs(jobs.size());
    const int threads = std::min<int>(detail::env_thread_count(), static_cast<int>(jobs.size()));
    if (threads <= 1) {
        for (size_t i = 0; i < jobs.size(); ++i)
            pairs[i] = detail::render_one(cfg, cameras, jobs[i].mode, jobs[i].category, jobs[i].seed);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&, t]() {
                for (size_t i = t; i < jobs.size(); i += threads)
                    pairs[i] = detail::render_one(cfg, cameras, jobs[i].mode, jobs[i].category, jobs[i].seed);
            });
        for (auto& th : pool) th.join();
    }
    return pairs;
}

}  // namespace gmcml
