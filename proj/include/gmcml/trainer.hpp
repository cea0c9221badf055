#pragma once

// Conjugate training loop: cls(ren(map(noi(O))), noi'(O)) with coupled
// adaptive input noise, two-stage scheduling (triplet pretrain, softmax
// fine-tune) and binary checkpointing.
//
// Reproducibility is structural: the per-epoch sample order and the
// per-step noise/eps streams are derived from (seed, epoch) and
// (seed, step), so resuming from a checkpoint replays the exact
// trajectory of an uninterrupted run.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmcml/dataset.hpp"
#include "gmcml/generative.hpp"
#include "gmcml/metric.hpp"
#include "gmcml/noise.hpp"
#include "gmcml/render.hpp"
#include "gmcml/rng.hpp"
#include "gmcml/zigzag.hpp"

namespace gmcml {

enum class OptimizerKind { sgd, sgd_momentum };

struct TrainConfig {
    int batch_size = 20;
    double lr = 0.02;
    OptimizerKind optimizer = OptimizerKind::sgd_momentum;
    double momentum = 0.9;
    int epochs_stage1 = 30;
    int epochs_stage2 = 10;
    LossWeights weights;
    double alpha = 0.25;
    double beta = 2.0;
    double m_noise = 1e-6;
    uint64_t seed = 0;
    bool adaptive_noise = true;   // false = fixed-noise baseline
    double fixed_r_rec = 0.5;
    double fixed_r_cls = 0.5;
    int latent_dim = 16;
    int image_size = 32;
    double sigma = 0.1;
    int num_classes = 12;
    int checkpoint_every = 0;     // 0 = only at stage boundaries / end
    double grad_clip = 5.0;       // per-network global-norm clip, 0 disables
    int stage2_warmup = 100;      // lr warmup steps entering stage 2, 0 disables
    double lr2 = 0.0;             // fine-tuning learning rate, 0 = same as lr

    std::string canonical() const {
        std::ostringstream os;
        os.precision(17);
        os << batch_size << '|' << lr << '|' << static_cast<int>(optimizer) << '|' << momentum << '|'
           << epochs_stage1 << '|' << epochs_stage2 << '|' << weights.w_pair << '|' << weights.w_tri << '|'
           << weights.w_softmax << '|' << weights.w_encgen << '|' << weights.m_tri << '|' << alpha << '|'
           << beta << '|' << m_noise << '|' << seed << '|' << adaptive_noise << '|' << fixed_r_rec << '|'
           << fixed_r_cls << '|' << latent_dim << '|' << image_size << '|' << sigma << '|' << num_classes
           << '|' << stage2_warmup << '|' << lr2;
        return os.str();
    }
    uint64_t hash() const { return std::hash<std::string>{}(canonical()); }

    static TrainConfig from_canonical(const std::string& s) {
        std::istringstream is(s);
        std::string tok;
        std::vector<std::string> f;
        while (std::getline(is, tok, '|')) f.push_back(tok);
        if (f.size() != 24) throw std::runtime_error("TrainConfig: malformed canonical string '" + s + "'");
        TrainConfig c;
        size_t i = 0;
        c.batch_size = std::stoi(f[i++]);
        c.lr = std::stod(f[i++]);
        c.optimizer = static_cast<OptimizerKind>(std::stoi(f[i++]));
        c.momentum = std::stod(f[i++]);
        c.epochs_stage1 = std::stoi(f[i++]);
        c.epochs_stage2 = std::stoi(f[i++]);
        c.weights.w_pair = std::stod(f[i++]);
        c.weights.w_tri = std::stod(f[i++]);
        c.weights.w_softmax = std::stod(f[i++]);
        c.weights.w_encgen = std::stod(f[i++]);
        c.weights.m_tri = std::stod(f[i++]);
        c.alpha = std::stod(f[i++]);
        c.beta = std::stod(f[i++]);
        c.m_noise = std::stod(f[i++]);
        c.seed = std::stoull(f[i++]);
        c.adaptive_noise = std::stoi(f[i++]) != 0;
        c.fixed_r_rec = std::stod(f[i++]);
        c.fixed_r_cls = std::stod(f[i++]);
        c.latent_dim = std::stoi(f[i++]);
        c.image_size = std::stoi(f[i++]);
        c.sigma = std::stod(f[i++]);
        c.num_classes = std::stoi(f[i++]);
        c.stage2_warmup = std::stoi(f[i++]);
        c.lr2 = std::stod(f[i++]);
        return c;
    }
};

// read only the embedded config of a checkpoint, without loading weights
inline TrainConfig read_checkpoint_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_checkpoint_config: cannot open " + path);
    auto read_u64 = [&]() {
        uint64_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    auto read_str = [&]() {
        const uint64_t n = read_u64();
        if (!f || n > (1ULL << 30)) throw std::runtime_error("read_checkpoint_config: corrupt " + path);
        std::string s(n, '\0');
        f.read(s.data(), static_cast<std::streamsize>(n));
        return s;
    };
    if (read_str() != "GMCK1") throw std::runtime_error("read_checkpoint_config: bad magic in " + path);
    return TrainConfig::from_canonical(read_str());
}

struct StepMetrics {
    int64_t step = 0;
    int stage = 1;
    double loss_total = 0, loss_enc = 0, loss_gen = 0, loss_pair = 0, loss_tri = 0, loss_softmax = 0;
    double var_ratio = 0, r_rec = 0, r_cls = 0;
    double mask_mse = 0;       // derived convenience metric, not in the CSV
    double gen_grad_norm = 0;  // gradient norm reaching the generative params
};

constexpr const char* kMetricsHeader =
    "step,stage,loss_total,loss_enc,loss_gen,loss_pair,loss_tri,loss_softmax,var_ratio,r_rec,r_cls";

inline std::string metrics_row(const StepMetrics& m) {
    std::ostringstream os;
    os << m.step << ',' << m.stage << ',' << fmt9(m.loss_total) << ',' << fmt9(m.loss_enc) << ','
       << fmt9(m.loss_gen) << ',' << fmt9(m.loss_pair) << ',' << fmt9(m.loss_tri) << ','
       << fmt9(m.loss_softmax) << ',' << fmt9(m.var_ratio) << ',' << fmt9(m.r_rec) << ',' << fmt9(m.r_cls);
    return os.str();
}

struct InferResult {
    Tensor mask;        // M'
    Tensor descriptor;  // penultimate layer
    Tensor logits;
};

class Trainer {
public:
    explicit Trainer(const TrainConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
        gen_ = GenerativeModel({cfg.latent_dim, cfg.image_size, cfg.sigma}, rng_);
        cls_ = ZigzagClassifier({cfg.num_classes, cfg.image_size, 64}, rng_);
        params_ = gen_.params();
        gen_param_count_ = params_.size();
        for (const auto& p : cls_.params()) params_.push_back(p);
        velocity_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) velocity_[i].assign(params_[i].size(), 0.0);
        noise_.alpha = cfg.alpha;
        noise_.beta = cfg.beta;
        noise_.m_noise = cfg.m_noise;
        noise_.r_rec = std::tanh(cfg.alpha * 0.0);
        noise_.r_cls = std::tanh(1.0 - std::tanh(cfg.beta * 0.0));
    }

    const TrainConfig& config() const { return cfg_; }
    const GenerativeModel& generative() const { return gen_; }
    const ZigzagClassifier& classifier() const { return cls_; }
    const NoiseState& noise_state() const { return noise_; }
    int64_t step() const { return step_; }

    // One optimization step over a batch. Corruption uses the NoiseState
    // carried over from the previous step; the state is refreshed from this
    // step's (M', M) afterwards.
    StepMetrics train_step(const std::vector<const SamplePair*>& batch, TrainStage stage) {
        if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
        Rng step_rng(detail::mix_seed(cfg_.seed ^ 0x5747a1ULL, static_cast<uint64_t>(step_)));

        // Entering fine-tuning is a distribution shift (shifted cameras):
        // restart the optimizer so stale stage-1 momentum and full-size
        // steps do not slam the decoder back into output saturation.
        if (stage == TrainStage::finetune && stage2_start_ < 0) {
            stage2_start_ = step_;
            for (auto& v : velocity_) std::fill(v.begin(), v.end(), 0.0);
        }

        const double r_rec = cfg_.adaptive_noise ? noise_.r_rec : cfg_.fixed_r_rec;
        const double r_cls = cfg_.adaptive_noise ? noise_.r_cls : cfg_.fixed_r_cls;
        const double inv_b = 1.0 / static_cast<double>(batch.size());

        for (auto& p : params_) p.zero_grad();

        StepMetrics m;
        std::vector<Tensor> m_hats, masks;
        {
            Tape tape;
            Tensor enc_total = Tensor::scalar(0.0);
            Tensor rec_total = Tensor::scalar(0.0);
            Tensor soft_total = Tensor::scalar(0.0);
            std::vector<Tensor> descriptors;
            std::vector<int> cats;
            std::vector<Vec3> poses;
            for (const SamplePair* s : batch) {
                Tensor o_rec = corrupt(s->image, r_rec, step_rng);
                Tensor o_cls = corrupt(s->image, r_cls, step_rng);
                LatentGaussian g = gen_.encode(o_rec);
                Tensor eps({cfg_.latent_dim});
                for (double& e : eps.data()) e = step_rng.normal();
                Tensor m_hat = gen_.generate(GenerativeModel::sample_latent(g, eps));
                auto [desc, logits] = cls_.forward(concat_channels(o_cls, m_hat));
                enc_total = add(enc_total, loss_enc(g));
                rec_total = add(rec_total, loss_gen(m_hat, s->mask, cfg_.sigma));
                if (stage == TrainStage::finetune)
                    soft_total = add(soft_total, loss_softmax(logits, s->category));
                descriptors.push_back(desc);
                cats.push_back(s->category);
                poses.push_back(s->pose);
                m_hats.push_back(m_hat);
                masks.push_back(s->mask);
            }

            LossParts parts;
            parts.enc_gen = scale(add(enc_total, rec_total), inv_b);
            parts.softmax = scale(soft_total, inv_b);
            std::vector<TripletSet> sets;
            try {
                sets = build_triplet_sets(cats, poses, step_rng);
            } catch (const std::invalid_argument&) {
                if (stage == TrainStage::pretrain) throw;
                // fine-tuning tolerates batches with no valid triplet sets
            }
            if (!sets.empty()) {
                const double inv_s = 1.0 / static_cast<double>(sets.size());
                Tensor pair_total = Tensor::scalar(0.0);
                for (const auto& s : sets)
                    pair_total = add(pair_total, loss_pair(descriptors[s.ref], descriptors[s.pos]));
                parts.pair = scale(pair_total, inv_s);
                parts.tri = scale(loss_multi_triplet(descriptors, sets, cfg_.weights.m_tri, false), inv_s);
            } else {
                parts.pair = Tensor::scalar(0.0);
                parts.tri = Tensor::scalar(0.0);
            }

            Tensor total = loss_total(parts, cfg_.weights, stage);
            m.loss_total = total.item();
            m.loss_enc = scale(enc_total, inv_b).item();
            m.loss_gen = scale(rec_total, inv_b).item();
            m.loss_pair = parts.pair.item();
            m.loss_tri = parts.tri.item();
            m.loss_softmax = parts.softmax.item();
            if (!std::isfinite(m.loss_total))
                throw std::runtime_error("train_step: non-finite loss at step " + std::to_string(step_));
            tape.backward(total);
        }

        m.gen_grad_norm = grad_norm(0, gen_param_count_);
        apply_update();

        // refresh the noise state from this step's reconstructions
        m.var_ratio = noise_.var_ratio;
        m.r_rec = r_rec;
        m.r_cls = r_cls;
        noise_ = update_ratios(noise_, m_hats, masks);

        double mse = 0;
        int64_t n = 0;
        for (size_t i = 0; i < m_hats.size(); ++i) {
            for (int64_t j = 0; j < m_hats[i].size(); ++j) {
                const double d = m_hats[i].data()[j] - masks[i].data()[j];
                mse += d * d;
            }
            n += m_hats[i].size();
        }
        m.mask_mse = mse / n;

        m.step = step_;
        m.stage = stage == TrainStage::pretrain ? 1 : 2;
        ++step_;
        return m;
    }

    InferResult infer(const Tensor& image) const {
        LatentGaussian g = gen_.encode(image);
        Tensor z(g.mu.shape(), g.mu.data());  // eps = 0: posterior mean
        Tensor mask = gen_.generate(z);
        auto [desc, logits] = cls_.forward(concat_channels(image, mask));
        return {mask, desc, logits};
    }

    // ---- persistence ----

    void save_checkpoint(const std::string& path) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
        write_str(f, "GMCK1");
        write_str(f, cfg_.canonical());
        write_u64(f, cfg_.hash());
        write_u64(f, static_cast<uint64_t>(step_));
        // named parameter sections
        write_str(f, "generative");
        write_u64(f, gen_param_count_);
        for (size_t i = 0; i < gen_param_count_; ++i) write_tensor(f, params_[i]);
        write_str(f, "classifier");
        write_u64(f, params_.size() - gen_param_count_);
        for (size_t i = gen_param_count_; i < params_.size(); ++i) write_tensor(f, params_[i]);
        write_str(f, "optimizer");
        write_u64(f, velocity_.size());
        for (const auto& v : velocity_) write_vec(f, v);
        write_str(f, "noise");
        for (double d : {noise_.alpha, noise_.beta, noise_.m_noise, noise_.var_ratio, noise_.r_rec,
                         noise_.r_cls})
            write_f64(f, d);
        write_str(f, "schedule");
        write_u64(f, static_cast<uint64_t>(stage2_start_ + 1));  // 0 = not entered yet
        write_str(f, "rng");
        write_str(f, rng_.save_state());
        if (!f) throw std::runtime_error("save_checkpoint: write failure on " + path);
    }

    void load_checkpoint(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
        expect(read_str(f) == "GMCK1", "bad magic");
        const std::string canon = read_str(f);
        const uint64_t hash = read_u64(f);
        if (hash != cfg_.hash())
            throw std::runtime_error("load_checkpoint: config hash mismatch (checkpoint '" + canon +
                                     "' vs current '" + cfg_.canonical() + "')");
        step_ = static_cast<int64_t>(read_u64(f));
        expect(read_str(f) == "generative", "missing generative section");
        expect(read_u64(f) == gen_param_count_, "generative parameter count mismatch");
        for (size_t i = 0; i < gen_param_count_; ++i) read_tensor(f, params_[i]);
        expect(read_str(f) == "classifier", "missing classifier section");
        expect(read_u64(f) == params_.size() - gen_param_count_, "classifier parameter count mismatch");
        for (size_t i = gen_param_count_; i < params_.size(); ++i) read_tensor(f, params_[i]);
        expect(read_str(f) == "optimizer", "missing optimizer section");
        expect(read_u64(f) == velocity_.size(), "optimizer slot count mismatch");
        for (auto& v : velocity_) read_vec(f, v);
        expect(read_str(f) == "noise", "missing noise section");
        noise_.alpha = read_f64(f);
        noise_.beta = read_f64(f);
        noise_.m_noise = read_f64(f);
        noise_.var_ratio = read_f64(f);
        noise_.r_rec = read_f64(f);
        noise_.r_cls = read_f64(f);
        expect(read_str(f) == "schedule", "missing schedule section");
        stage2_start_ = static_cast<int64_t>(read_u64(f)) - 1;
        expect(read_str(f) == "rng", "missing rng section");
        rng_.load_state(read_str(f));
        if (!f) throw std::runtime_error("load_checkpoint: truncated file " + path);
    }

    std::vector<Tensor>& params() { return params_; }
    size_t generative_param_count() const { return gen_param_count_; }

    double grad_norm(size_t first, size_t last) const {
        double ss = 0;
        for (size_t i = first; i < last; ++i)
            if (params_[i].has_grad())
                for (double g : params_[i].grad()) ss += g * g;
        return std::sqrt(ss);
    }

private:
    // The two networks are clipped independently: the sum-form likelihood
    // gives the generative gradient a norm orders of magnitude above the
    // metric/softmax gradient, and a shared norm would let the former set
    // the scale and freeze the classifier.
    void apply_update() {
        double lr = cfg_.lr;
        if (stage2_start_ >= 0) {
            if (cfg_.lr2 > 0.0) lr = cfg_.lr2;
            if (cfg_.stage2_warmup > 0) {
                const int64_t since = step_ - stage2_start_;
                if (since < cfg_.stage2_warmup) lr *= static_cast<double>(since + 1) / cfg_.stage2_warmup;
            }
        }
        apply_group(0, gen_param_count_, lr);
        apply_group(gen_param_count_, params_.size(), lr);
    }

    void apply_group(size_t first, size_t last, double lr) {
        double clip_scale = 1.0;
        if (cfg_.grad_clip > 0) {
            const double norm = grad_norm(first, last);
            if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
        }
        for (size_t i = first; i < last; ++i) {
            auto& p = params_[i];
            if (!p.has_grad()) continue;
            auto& v = velocity_[i];
            for (int64_t j = 0; j < p.size(); ++j) {
                const double g = p.grad()[j] * clip_scale;
                if (cfg_.optimizer == OptimizerKind::sgd_momentum) {
                    v[j] = cfg_.momentum * v[j] - lr * g;
                    p.data()[j] += v[j];
                } else {
                    p.data()[j] -= lr * g;
                }
            }
        }
    }

    static void expect(bool ok, const char* what) {
        if (!ok) throw std::runtime_error(std::string("load_checkpoint: ") + what);
    }
    static void write_u64(std::ostream& f, uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
    static uint64_t read_u64(std::istream& f) {
        uint64_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 8);
        return v;
    }
    static void write_f64(std::ostream& f, double v) { f.write(reinterpret_cast<const char*>(&v), 8); }
    static double read_f64(std::istream& f) {
        double v = 0;
        f.read(reinterpret_cast<char*>(&v), 8);
        return v;
    }
    static void write_str(std::ostream& f, const std::string& s) {
        write_u64(f, s.size());
        f.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    static std::string read_str(std::istream& f) {
        const uint64_t n = read_u64(f);
        if (n > (1ULL << 30)) throw std::runtime_error("load_checkpoint: corrupt string length");
        std::string s(n, '\0');
        f.read(s.data(), static_cast<std::streamsize>(n));
        return s;
    }
    static void write_vec(std::ostream& f, const std::vector<double>& v) {
        write_u64(f, v.size());
        f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
    }
    static void read_vec(std::istream& f, std::vector<double>& v) {
        const uint64_t n = read_u64(f);
        if (n != v.size()) throw std::runtime_error("load_checkpoint: vector size mismatch");
        f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
    }
    static void write_tensor(std::ostream& f, const Tensor& t) { write_vec(f, t.data()); }
    static void read_tensor(std::istream& f, Tensor& t) { read_vec(f, t.data()); }

    TrainConfig cfg_;
    Rng rng_;
    GenerativeModel gen_;
    ZigzagClassifier cls_;
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> velocity_;
    size_t gen_param_count_ = 0;
    int64_t stage2_start_ = -1;  // step at which fine-tuning began
    NoiseState noise_;
    int64_t step_ = 0;
};

// ---- full training run ----

struct RunResult {
    std::string checkpoint_path;
    std::string metrics_path;
    std::vector<StepMetrics> metrics;
};

namespace detail {

inline std::vector<std::vector<const SamplePair*>> epoch_batches(const std::vector<const SamplePair*>& data,
                                                                 int batch_size, uint64_t order_seed,
                                                                 int num_classes) {
    Rng rng(order_seed);
    std::vector<std::vector<const SamplePair*>> per_class(num_classes);
    for (const SamplePair* s : data) {
        if (s->category < 0 || s->category >= num_classes)
            throw std::runtime_error("epoch_batches: sample category " + std::to_string(s->category) +
                                     " outside configured " + std::to_string(num_classes) + " classes");
        per_class[s->category].push_back(s);
    }
    for (auto& v : per_class)
        for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
    // round-robin interleave so every batch mixes categories
    std::vector<const SamplePair*> order;
    order.reserve(data.size());
    for (size_t i = 0;; ++i) {
        bool any = false;
        for (auto& v : per_class)
            if (i < v.size()) {
                order.push_back(v[i]);
                any = true;
            }
        if (!any) break;
    }
    std::vector<std::vector<const SamplePair*>> batches;
    for (size_t i = 0; i + batch_size <= order.size(); i += batch_size)
        batches.emplace_back(order.begin() + i, order.begin() + i + batch_size);
    if (batches.empty() && !order.empty()) batches.push_back(order);
    return batches;
}

}  // namespace detail

inline RunResult run_training(const TrainConfig& cfg, const std::string& dataset_dir,
                              const std::string& out_dir, const std::string& resume_path = "",
                              const std::function<bool(const StepMetrics&)>& on_step = nullptr) {
    std::vector<SamplePair> dataset = read_dataset(dataset_dir);
    std::vector<const SamplePair*> centered, shifted;
    for (const auto& p : dataset)
        (p.mode == CameraMode::centered ? centered : shifted).push_back(&p);
    if (cfg.epochs_stage1 > 0 && centered.empty())
        throw std::runtime_error("run_training: dataset has no centered-focal samples for stage 1");
    if (cfg.epochs_stage2 > 0 && shifted.empty())
        throw std::runtime_error("run_training: dataset has no shifted-focal samples for stage 2");

    std::filesystem::create_directories(out_dir);
    const std::string ckpt_path = out_dir + "/checkpoint.bin";
    const std::string metrics_path = out_dir + "/metrics.csv";

    Trainer trainer(cfg);
    bool resumed = false;
    if (!resume_path.empty()) {
        trainer.load_checkpoint(resume_path);
        resumed = true;
    }

    std::ofstream metrics(metrics_path, resumed ? std::ios::app : std::ios::trunc);
    if (!metrics) throw std::runtime_error("run_training: cannot open " + metrics_path);
    if (!resumed) metrics << kMetricsHeader << "\n";

    RunResult result{ckpt_path, metrics_path, {}};
    const int64_t start_step = trainer.step();
    int64_t planned = 0;
    bool stop = false;

    for (int stage_idx = 1; stage_idx <= 2 && !stop; ++stage_idx) {
        const TrainStage stage = stage_idx == 1 ? TrainStage::pretrain : TrainStage::finetune;
        const int epochs = stage_idx == 1 ? cfg.epochs_stage1 : cfg.epochs_stage2;
        const auto& data = stage_idx == 1 ? centered : shifted;
        for (int epoch = 0; epoch < epochs && !stop; ++epoch) {
            const uint64_t order_seed =
                detail::mix_seed(cfg.seed ^ 0x0eadULL, static_cast<uint64_t>(stage_idx) * 1000003ULL + epoch);
            auto batches = detail::epoch_batches(data, cfg.batch_size, order_seed, cfg.num_classes);
            for (auto& batch : batches) {
                if (planned++ < start_step) continue;  // replay position after resume
                StepMetrics m = trainer.train_step(batch, stage);
                metrics << metrics_row(m) << "\n";
                result.metrics.push_back(m);
                if (cfg.checkpoint_every > 0 && trainer.step() % cfg.checkpoint_every == 0)
                    trainer.save_checkpoint(ckpt_path);
                if (on_step && !on_step(m)) {
                    stop = true;
                    break;
                }
            }
        }
        trainer.save_checkpoint(ckpt_path);  // stage boundary
    }
    metrics.flush();
    trainer.save_checkpoint(ckpt_path);
    return result;
}

}  // namespace gmcml
