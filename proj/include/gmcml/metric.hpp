#pragma once

// Pose-driven metric losses: multi-triplet set construction, the pairwise
// term, the log-damped triplet loss with analytic gradients, softmax
// cross-entropy, and the staged total loss.

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "gmcml/camera.hpp"
#include "gmcml/rng.hpp"
#include "gmcml/tensor.hpp"

namespace gmcml {

struct TripletSet {
    int ref = -1;
    int pos = -1;
    std::array<int, 3> negs = {-1, -1, -1};
};

struct LossWeights {
    double w_pair = 1.0;
    double w_tri = 1.0;
    double w_softmax = 1.0;
    double w_encgen = 1.0;
    double m_tri = 0.01;
};

enum class TrainStage { pretrain, finetune };

// One set per eligible reference: the positive is the same-category sample
// with minimal pose distance (a same-pose different-lighting twin wins at
// distance zero), negs[0] is same-category with strictly larger pose
// distance, negs[1] and negs[2] come from other categories. Ties break on
// the lowest batch index; candidate draws come from rng, so the result is
// deterministic for a fixed seed.
inline std::vector<TripletSet> build_triplet_sets(const std::vector<int>& categories,
                                                  const std::vector<Vec3>& poses, Rng& rng) {
    const int n = static_cast<int>(categories.size());
    if (n != static_cast<int>(poses.size()))
        throw std::invalid_argument("build_triplet_sets: categories and poses differ in length");
    bool multi_category = false;
    for (int i = 1; i < n; ++i)
        if (categories[i] != categories[0]) multi_category = true;
    if (!multi_category) throw std::invalid_argument("build_triplet_sets: single-category batch rejected");

    std::vector<TripletSet> sets;
    for (int ref = 0; ref < n; ++ref) {
        // positive: same category, minimal pose distance
        int pos = -1;
        double best = 0;
        for (int j = 0; j < n; ++j) {
            if (j == ref || categories[j] != categories[ref]) continue;
            const double d = pose_distance(poses[ref], poses[j]);
            if (pos < 0 || d < best) {
                pos = j;
                best = d;
            }
        }
        if (pos < 0) continue;

        // same-category negative with strictly larger pose distance
        std::vector<int> far_same;
        for (int j = 0; j < n; ++j)
            if (j != ref && j != pos && categories[j] == categories[ref] &&
                pose_distance(poses[ref], poses[j]) > best)
                far_same.push_back(j);
        if (far_same.empty()) continue;
        const int neg0 = far_same[rng.below(far_same.size())];

        // two negatives from other categories, distinct categories preferred
        std::vector<int> others;
        for (int j = 0; j < n; ++j)
            if (categories[j] != categories[ref]) others.push_back(j);
        if (others.size() < 2) continue;
        const int neg1 = others[rng.below(others.size())];
        std::vector<int> second;
        for (int j : others)
            if (j != neg1 && categories[j] != categories[neg1]) second.push_back(j);
        if (second.empty())
            for (int j : others)
                if (j != neg1) second.push_back(j);
        if (second.empty()) continue;
        const int neg2 = second[rng.below(second.size())];

        sets.push_back({ref, pos, {neg0, neg1, neg2}});
    }
    return sets;
}

// L_pair = ||fi - fj||^2
inline Tensor loss_pair(const Tensor& fi, const Tensor& fj) {
    if (fi.shape() != fj.shape())
        throw std::invalid_argument("loss_pair: length mismatch " + shape_str(fi.shape()) + " vs " +
                                    shape_str(fj.shape()));
    return sq_dist(fi, fj);
}

// L_tri = ln(max(1, 2 - D_ik / (D_ij + m))), D squared Euclidean; in [0, ln 2]
inline Tensor loss_tri(const Tensor& fi, const Tensor& fj, const Tensor& fk, double m_tri) {
    if (m_tri <= 0.0) throw std::invalid_argument("loss_tri: margin must be positive");
    if (fi.shape() != fj.shape() || fi.shape() != fk.shape())
        throw std::invalid_argument("loss_tri: descriptor length mismatch");
    Tensor d_ij = sq_dist(fi, fj);
    Tensor d_ik = sq_dist(fi, fk);
    Tensor ratio = div(d_ik, add_scalar(d_ij, m_tri));
    return log_t(clamp_min(add_scalar(neg(ratio), 2.0), 1.0));
}

// Closed-form gradients of loss_tri; exactly zero in the clamped region.
inline void grad_tri(const std::vector<double>& fi, const std::vector<double>& fj,
                     const std::vector<double>& fk, double m_tri, std::vector<double>& dfi,
                     std::vector<double>& dfj, std::vector<double>& dfk) {
    if (m_tri <= 0.0) throw std::invalid_argument("grad_tri: margin must be positive");
    if (fi.size() != fj.size() || fi.size() != fk.size())
        throw std::invalid_argument("grad_tri: descriptor length mismatch");
    const size_t n = fi.size();
    dfi.assign(n, 0.0);
    dfj.assign(n, 0.0);
    dfk.assign(n, 0.0);
    double d_ij = 0, d_ik = 0;
    for (size_t i = 0; i < n; ++i) {
        d_ij += (fi[i] - fj[i]) * (fi[i] - fj[i]);
        d_ik += (fi[i] - fk[i]) * (fi[i] - fk[i]);
    }
    const double denom = d_ij + m_tri;
    const double g = 2.0 - d_ik / denom;
    if (g <= 1.0) return;  // clamped, flat loss
    // dL/dD_ik = -1 / (g * denom); dL/dD_ij = D_ik / (g * denom^2)
    const double dl_dik = -1.0 / (g * denom);
    const double dl_dij = d_ik / (g * denom * denom);
    for (size_t i = 0; i < n; ++i) {
        dfi[i] = dl_dij * 2.0 * (fi[i] - fj[i]) + dl_dik * 2.0 * (fi[i] - fk[i]);
        dfj[i] = dl_dij * 2.0 * (fj[i] - fi[i]);
        dfk[i] = dl_dik * 2.0 * (fk[i] - fi[i]);
    }
}

// Sum of loss_tri over the three (ref, pos, neg) triples of every set,
// plus the optional pairwise term on (ref, pos).
inline Tensor loss_multi_triplet(const std::vector<Tensor>& descriptors, const std::vector<TripletSet>& sets,
                                 double m_tri, bool include_pair) {
    Tensor total = Tensor::scalar(0.0);
    const int n = static_cast<int>(descriptors.size());
    for (const auto& s : sets) {
        for (int idx : {s.ref, s.pos, s.negs[0], s.negs[1], s.negs[2]})
            if (idx < 0 || idx >= n)
                throw std::out_of_range("loss_multi_triplet: index " + std::to_string(idx) +
                                        " out of range for " + std::to_string(n) + " descriptors");
        if (include_pair) total = add(total, loss_pair(descriptors[s.ref], descriptors[s.pos]));
        for (int neg : s.negs)
            total = add(total, loss_tri(descriptors[s.ref], descriptors[s.pos], descriptors[neg], m_tri));
    }
    return total;
}

// cross-entropy with log-sum-exp stabilization
inline Tensor loss_softmax(const Tensor& logits, int label) {
    if (logits.shape().size() != 1) throw std::invalid_argument("loss_softmax: logits must be rank 1");
    if (label < 0 || label >= logits.size())
        throw std::out_of_range("loss_softmax: label " + std::to_string(label) + " out of range [0," +
                                std::to_string(logits.size()) + ")");
    const double m = *std::max_element(logits.data().begin(), logits.data().end());
    Tensor lse = add_scalar(log_t(sum_t(exp_t(add_scalar(logits, -m)))), m);
    return sub(lse, pick(logits, label));
}

struct LossParts {
    Tensor enc_gen;
    Tensor pair;
    Tensor tri;
    Tensor softmax;  // ignored during pretraining
};

inline Tensor loss_total(const LossParts& parts, const LossWeights& w, TrainStage stage) {
    Tensor total = add(scale(parts.enc_gen, w.w_encgen),
                       add(scale(parts.pair, w.w_pair), scale(parts.tri, w.w_tri)));
    if (stage == TrainStage::finetune) total = add(total, scale(parts.softmax, w.w_softmax));
    return total;
}

}  // namespace gmcml
