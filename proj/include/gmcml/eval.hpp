#pragma once

// Evaluation: softmax and nearest-neighbour accuracy on penultimate
// descriptors, PCA projection export, reconstruction and manifold grids.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gmcml/dataset.hpp"
#include "gmcml/image_io.hpp"
#include "gmcml/trainer.hpp"

namespace gmcml {

struct EvalReport {
    double softmax_accuracy = 0;
    double nn_accuracy = 0;
    std::vector<std::vector<int>> confusion;  // K x K, rows = true class
    double mask_mse = 0;
    int train_count = 0;
    int test_count = 0;
};

// label of the gallery descriptor at minimal squared Euclidean distance;
// ties resolve to the lowest label
inline int nn_classify(const std::vector<std::pair<std::vector<double>, int>>& gallery,
                       const std::vector<double>& query) {
    if (gallery.empty()) throw std::invalid_argument("nn_classify: empty gallery");
    double best = 0;
    int label = -1;
    for (const auto& [desc, lab] : gallery) {
        if (desc.size() != query.size())
            throw std::invalid_argument("nn_classify: descriptor length mismatch");
        double d = 0;
        for (size_t i = 0; i < desc.size(); ++i) d += (desc[i] - query[i]) * (desc[i] - query[i]);
        if (label < 0 || d < best || (d == best && lab < label)) {
            best = d;
            label = lab;
        }
    }
    return label;
}

namespace detail {

// cyclic Jacobi eigendecomposition of a symmetric matrix
inline void jacobi_eigen(std::vector<std::vector<double>> a, std::vector<double>& eigvals,
                         std::vector<std::vector<double>>& eigvecs) {
    const int n = static_cast<int>(a.size());
    eigvecs.assign(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < n; ++i) eigvecs[i][i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-22) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                if (std::fabs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = a[i][p], aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = a[p][i], aqi = a[q][i];
                    a[p][i] = c * api - s * aqi;
                    a[q][i] = s * api + c * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = eigvecs[i][p], viq = eigvecs[i][q];
                    eigvecs[i][p] = c * vip - s * viq;
                    eigvecs[i][q] = s * vip + c * viq;
                }
            }
    }
    eigvals.resize(n);
    for (int i = 0; i < n; ++i) eigvals[i] = a[i][i];
}

}  // namespace detail

// Mean-centered projection onto the top eigenvectors of the sample
// covariance, eigenvalues descending; each eigenvector's first nonzero
// coordinate is made positive.
inline std::vector<std::vector<double>> pca_project(const std::vector<std::vector<double>>& descriptors,
                                                    int out_dims) {
    const int n = static_cast<int>(descriptors.size());
    if (n == 0) throw std::invalid_argument("pca_project: no descriptors");
    const int d = static_cast<int>(descriptors[0].size());
    if (out_dims < 1 || out_dims > d) throw std::invalid_argument("pca_project: out_dims out of range");
    if (n < out_dims + 1) throw std::invalid_argument("pca_project: need at least out_dims+1 samples");

    std::vector<double> mean(d, 0.0);
    for (const auto& v : descriptors)
        for (int i = 0; i < d; ++i) mean[i] += v[i] / n;
    bool degenerate = true;
    for (const auto& v : descriptors)
        for (int i = 0; i < d; ++i)
            if (std::fabs(v[i] - mean[i]) > 1e-12) degenerate = false;
    if (degenerate) throw std::invalid_argument("pca_project: degenerate input, all samples equal");

    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (const auto& v : descriptors)
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) cov[i][j] += (v[i] - mean[i]) * (v[j] - mean[j]) / n;

    std::vector<double> eigvals;
    std::vector<std::vector<double>> eigvecs;
    detail::jacobi_eigen(cov, eigvals, eigvecs);

    std::vector<int> order(d);
    for (int i = 0; i < d; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return eigvals[a] > eigvals[b]; });

    std::vector<std::vector<double>> basis(out_dims, std::vector<double>(d));
    for (int k = 0; k < out_dims; ++k) {
        for (int i = 0; i < d; ++i) basis[k][i] = eigvecs[i][order[k]];
        for (int i = 0; i < d; ++i) {
            if (std::fabs(basis[k][i]) > 1e-12) {
                if (basis[k][i] < 0)
                    for (int j = 0; j < d; ++j) basis[k][j] = -basis[k][j];
                break;
            }
        }
    }

    std::vector<std::vector<double>> projected(n, std::vector<double>(out_dims, 0.0));
    for (int s = 0; s < n; ++s)
        for (int k = 0; k < out_dims; ++k)
            for (int i = 0; i < d; ++i) projected[s][k] += (descriptors[s][i] - mean[i]) * basis[k][i];
    return projected;
}

struct EvalOutputs {
    EvalReport report;
    std::string report_csv, proj2d_csv, recon_grid, manifold_grid;
};

inline EvalOutputs evaluate(const Trainer& trainer, const std::vector<SamplePair>& train_split,
                            const std::vector<SamplePair>& test_split, const std::string& out_dir,
                            const std::string& run_id) {
    const TrainConfig& cfg = trainer.config();
    if (test_split.empty()) throw std::invalid_argument("evaluate: empty test split");
    for (const auto& p : test_split) {
        if (p.image.shape() != Shape{3, cfg.image_size, cfg.image_size})
            throw std::runtime_error("evaluate: dataset resolution " + shape_str(p.image.shape()) +
                                     " does not match checkpoint image size " +
                                     std::to_string(cfg.image_size));
        if (p.category < 0 || p.category >= cfg.num_classes)
            throw std::runtime_error("evaluate: dataset category " + std::to_string(p.category) +
                                     " outside checkpoint's " + std::to_string(cfg.num_classes) + " classes");
    }

    std::filesystem::create_directories(out_dir);
    EvalReport rep;
    rep.confusion.assign(cfg.num_classes, std::vector<int>(cfg.num_classes, 0));
    rep.train_count = static_cast<int>(train_split.size());
    rep.test_count = static_cast<int>(test_split.size());

    std::vector<std::pair<std::vector<double>, int>> gallery;
    gallery.reserve(train_split.size());
    for (const auto& p : train_split) {
        InferResult r = trainer.infer(p.image);
        gallery.emplace_back(r.descriptor.data(), p.category);
    }

    int soft_correct = 0, nn_correct = 0;
    double mse_sum = 0;
    std::vector<std::vector<double>> test_desc;
    std::vector<int> test_cats;
    for (const auto& p : test_split) {
        InferResult r = trainer.infer(p.image);
        const auto& logits = r.logits.data();
        const int pred = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        rep.confusion[p.category][pred]++;
        if (pred == p.category) ++soft_correct;
        if (!gallery.empty() && nn_classify(gallery, r.descriptor.data()) == p.category) ++nn_correct;
        double mse = 0;
        for (int64_t i = 0; i < r.mask.size(); ++i) {
            const double d = r.mask.data()[i] - p.mask.data()[i];
            mse += d * d;
        }
        mse_sum += mse / r.mask.size();
        test_desc.push_back(r.descriptor.data());
        test_cats.push_back(p.category);
    }
    rep.softmax_accuracy = static_cast<double>(soft_correct) / test_split.size();
    rep.nn_accuracy = gallery.empty() ? 0.0 : static_cast<double>(nn_correct) / test_split.size();
    rep.mask_mse = mse_sum / test_split.size();

    EvalOutputs out;
    out.report = rep;

    // report.csv, append-safe with a run id column
    out.report_csv = out_dir + "/report.csv";
    const bool fresh = !std::filesystem::exists(out.report_csv);
    std::ofstream rcsv(out.report_csv, std::ios::app);
    if (fresh) rcsv << "run_id,softmax_accuracy,nn_accuracy,mask_mse,train_count,test_count\n";
    rcsv << run_id << ',' << fmt9(rep.softmax_accuracy) << ',' << fmt9(rep.nn_accuracy) << ','
         << fmt9(rep.mask_mse) << ',' << rep.train_count << ',' << rep.test_count << "\n";

    // 2-D PCA projection of the test descriptors
    out.proj2d_csv = out_dir + "/proj2d.csv";
    std::ofstream pcsv(out.proj2d_csv, std::ios::trunc);
    pcsv << "x,y,category\n";
    auto projected = pca_project(test_desc, 2);
    for (size_t i = 0; i < projected.size(); ++i)
        pcsv << fmt9(projected[i][0]) << ',' << fmt9(projected[i][1]) << ',' << test_cats[i] << "\n";

    // 8x8 reconstruction grid over the first test samples
    const int s = cfg.image_size;
    const int rg = 8;
    Tensor recon_grid({3, rg * s, rg * s});
    const size_t gplane = static_cast<size_t>(rg * s) * (rg * s);
    const size_t tplane = static_cast<size_t>(s) * s;
    for (int gy = 0; gy < rg; ++gy)
        for (int gx = 0; gx < rg; ++gx) {
            const size_t idx = static_cast<size_t>(gy) * rg + gx;
            if (idx >= test_split.size()) break;
            Tensor tile = trainer.infer(test_split[idx].image).mask;
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < s; ++y)
                    for (int x = 0; x < s; ++x)
                        recon_grid.data()[c * gplane + static_cast<size_t>(gy * s + y) * (rg * s) + gx * s +
                                          x] = tile.data()[c * tplane + static_cast<size_t>(y) * s + x];
        }
    out.recon_grid = out_dir + "/recon_grid.png";
    write_png_rgb(out.recon_grid, recon_grid);

    // 10x10 manifold grid around the mean latent of the test set
    Tensor center({cfg.latent_dim});
    for (const auto& p : test_split) {
        LatentGaussian g = trainer.generative().encode(p.image);
        for (int i = 0; i < cfg.latent_dim; ++i) center.data()[i] += g.mu.data()[i] / test_split.size();
    }
    out.manifold_grid = out_dir + "/manifold_grid.png";
    write_png_rgb(out.manifold_grid, sample_manifold(trainer.generative(), center, 2.0, 10));

    return out;
}

}  // namespace gmcml
