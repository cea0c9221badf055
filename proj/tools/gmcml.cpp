// gmcml: render synthetic datasets, train the joint model, evaluate checkpoints.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "gmcml/dataset.hpp"
#include "gmcml/eval.hpp"
#include "gmcml/trainer.hpp"

namespace {

int cmd_render(const gmcml::RenderConfig& cfg, const std::string& out) {
    auto pairs = gmcml::generate_dataset(cfg);
    gmcml::write_dataset(pairs, out);
    std::printf("rendered %zu pairs into %s\n", pairs.size(), out.c_str());
    return 0;
}

int cmd_train(const gmcml::TrainConfig& cfg, const std::string& dataset, const std::string& out,
              const std::string& resume) {
    gmcml::RunResult r = gmcml::run_training(cfg, dataset, out, resume);
    std::printf("trained %zu steps; checkpoint %s; metrics %s\n", r.metrics.size(),
                r.checkpoint_path.c_str(), r.metrics_path.c_str());
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset, const std::string& train_dataset,
             const std::string& out, const std::string& run_id) {
    gmcml::TrainConfig cfg = gmcml::read_checkpoint_config(checkpoint);
    gmcml::Trainer trainer(cfg);
    trainer.load_checkpoint(checkpoint);
    std::vector<gmcml::SamplePair> test = gmcml::read_dataset(dataset);
    std::vector<gmcml::SamplePair> train;
    if (!train_dataset.empty()) train = gmcml::read_dataset(train_dataset);
    gmcml::EvalOutputs o = gmcml::evaluate(trainer, train, test, out, run_id);
    std::printf("softmax_accuracy=%s nn_accuracy=%s mask_mse=%s\n",
                gmcml::fmt9(o.report.softmax_accuracy).c_str(), gmcml::fmt9(o.report.nn_accuracy).c_str(),
                gmcml::fmt9(o.report.mask_mse).c_str());
    std::printf("wrote %s, %s, %s, %s\n", o.report_csv.c_str(), o.proj2d_csv.c_str(), o.recon_grid.c_str(),
                o.manifold_grid.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"coordinate metric learning over synthetic solids"};
    app.require_subcommand(1);

    // render
    auto* render = app.add_subcommand("render", "generate a synthetic dataset");
    gmcml::RenderConfig rcfg;
    std::string r_out = "dataset";
    std::string modes = "both";
    render->add_option("--seed", rcfg.seed, "rng seed");
    render->add_option("--out", r_out, "output directory");
    render->add_option("--res", rcfg.resolution, "image resolution")->check(CLI::Range(16, 128));
    render->add_option("--classes", rcfg.classes, "number of categories");
    render->add_option("--per-class", rcfg.per_class, "pairs per class per camera mode")
        ->check(CLI::PositiveNumber);
    render->add_option("--modes", modes, "camera modes: centered, shifted or both")
        ->check(CLI::IsMember({"centered", "shifted", "both"}));
    render->add_option("--subdiv", rcfg.subdivision_level, "icosphere subdivision level")
        ->check(CLI::Range(0, 6));

    // train
    auto* train = app.add_subcommand("train", "run the two-stage training loop");
    gmcml::TrainConfig tcfg;
    std::string t_dataset, t_out = "run", t_resume;
    bool fixed_noise = false;
    train->add_option("--dataset", t_dataset, "dataset directory")->required();
    train->add_option("--out", t_out, "output directory for checkpoint and metrics");
    train->add_option("--seed", tcfg.seed, "rng seed");
    train->add_option("--res", tcfg.image_size, "image resolution the model is built for");
    train->add_option("--classes", tcfg.num_classes, "number of categories");
    train->add_option("--epochs", tcfg.epochs_stage1, "pretraining epochs (stage 1)")
        ->check(CLI::NonNegativeNumber);
    train->add_option("--epochs2", tcfg.epochs_stage2, "fine-tuning epochs (stage 2)")
        ->check(CLI::NonNegativeNumber);
    train->add_option("--lr", tcfg.lr, "learning rate")->check(CLI::PositiveNumber);
    train->add_option("--batch", tcfg.batch_size, "batch size")->check(CLI::PositiveNumber);
    train->add_option("--alpha", tcfg.alpha, "reconstruction noise coupling gain");
    train->add_option("--beta", tcfg.beta, "classification noise coupling gain");
    train->add_option("--m-tri", tcfg.weights.m_tri, "triplet margin")->check(CLI::PositiveNumber);
    train->add_flag("--fixed-noise", fixed_noise, "disable adaptive noise, use fixed ratios");
    train->add_option("--fixed-r", tcfg.fixed_r_rec, "corruption ratio for the fixed-noise baseline");
    train->add_option("--resume", t_resume, "checkpoint to resume from");
    train->add_option("--checkpoint-every", tcfg.checkpoint_every, "save every N steps (0 = boundaries only)");
    train->add_option("--latent", tcfg.latent_dim, "latent dimension")->check(CLI::PositiveNumber);
    train->add_option("--clip", tcfg.grad_clip, "per-network gradient-norm clip, 0 disables");
    train->add_option("--warmup", tcfg.stage2_warmup, "lr warmup steps entering stage 2, 0 disables")
        ->check(CLI::NonNegativeNumber);
    train->add_option("--lr2", tcfg.lr2, "fine-tuning learning rate, 0 = same as --lr")
        ->check(CLI::NonNegativeNumber);
    train->add_option("--w-encgen", tcfg.weights.w_encgen, "weight of the reconstruction objective");
    train->add_option("--sigma", tcfg.sigma, "mask likelihood scale")->check(CLI::PositiveNumber);

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string e_ckpt, e_dataset, e_train_dataset, e_out = "eval", e_run_id = "run";
    eval->add_option("--checkpoint", e_ckpt, "checkpoint file")->required();
    eval->add_option("--dataset", e_dataset, "test dataset directory")->required();
    eval->add_option("--train-dataset", e_train_dataset, "gallery dataset for the NN classifier");
    eval->add_option("--out", e_out, "output directory");
    eval->add_option("--run-id", e_run_id, "identifier for the report.csv row");

    CLI11_PARSE(app, argc, argv);

    try {
        if (render->parsed()) {
            rcfg.centered = modes != "shifted";
            rcfg.shifted = modes != "centered";
            return cmd_render(rcfg, r_out);
        }
        if (train->parsed()) {
            tcfg.adaptive_noise = !fixed_noise;
            tcfg.fixed_r_cls = tcfg.fixed_r_rec;
            return cmd_train(tcfg, t_dataset, t_out, t_resume);
        }
        return cmd_eval(e_ckpt, e_dataset, e_train_dataset, e_out, e_run_id);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
