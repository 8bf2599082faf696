// Command-line front end. Links only the C API of the vpfnet shared library.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vpfnet/vpfnet.h"

namespace {

struct ConfigGuard {
    vpf_config* cfg = vpf_config_create();
    ~ConfigGuard() { vpf_config_destroy(cfg); }
};

int finish(vpf_status status) {
    if (status == VPF_OK) return 0;
    std::fprintf(stderr, "error: %s: %s\n", vpf_status_name(status), vpf_last_error());
    return static_cast<int>(status);
}

// Applies --config file first, then --set overrides, then dedicated flags.
struct CommonOpts {
    std::string config_file;
    std::vector<std::string> sets;
    std::string run_dir, data_root, seed, epochs, beta, ns, checkpoint, missing;
    bool force = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "key=value configuration file");
        cmd->add_option("--set", sets, "override a config key (key=value, repeatable)");
        cmd->add_option("--run-dir", run_dir, "run directory (run.dir)");
        cmd->add_option("--data-root", data_root, "dataset root (data.root)");
        cmd->add_option("--seed", seed, "training seed (train.seed)");
        cmd->add_option("--epochs", epochs, "training epochs (train.epochs)");
        cmd->add_option("--beta", beta, "KL weight (loss.beta)");
        cmd->add_option("--ns", ns, "inference sample count (eval.ns)");
        cmd->add_option("--checkpoint", checkpoint, "checkpoint path (eval.checkpoint)");
        cmd->add_option("--missing", missing, "missing modality: none|rgb|thermal");
        cmd->add_flag("--force", force, "overwrite non-empty targets (run.force)");
    }

    vpf_status apply(vpf_config* cfg) const {
        vpf_status st = VPF_OK;
        if (!config_file.empty())
            if ((st = vpf_config_load(cfg, config_file.c_str())) != VPF_OK) return st;
        for (const auto& kv : sets) {
            auto eq = kv.find('=');
            if (eq == std::string::npos) {
                std::fprintf(stderr, "error: config: --set expects key=value, got %s\n",
                             kv.c_str());
                return VPF_ERR_CONFIG;
            }
            st = vpf_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
            if (st != VPF_OK) return st;
        }
        auto maybe = [&](const char* key, const std::string& value) {
            if (st == VPF_OK && !value.empty()) st = vpf_config_set(cfg, key, value.c_str());
        };
        maybe("run.dir", run_dir);
        maybe("data.root", data_root);
        maybe("train.seed", seed);
        maybe("train.epochs", epochs);
        maybe("loss.beta", beta);
        maybe("eval.ns", ns);
        maybe("eval.checkpoint", checkpoint);
        maybe("eval.missing", missing);
        if (st == VPF_OK && force) st = vpf_config_set(cfg, "run.force", "1");
        return st;
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Variational probabilistic RGB-thermal segmentation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(vpf_version()));

    CommonOpts gen_o, train_o, eval_o, infer_o, ablate_o;
    std::string infer_rgb, infer_thermal, infer_out, ablate_axis;

    CLI::App* gen = app.add_subcommand("generate", "Generate the synthetic dataset");
    gen_o.attach(gen);
    CLI::App* train = app.add_subcommand("train", "Train a model");
    train_o.attach(train);
    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval_o.attach(eval);
    CLI::App* infer = app.add_subcommand("infer", "Segment one RGB/thermal pair");
    infer_o.attach(infer);
    infer->add_option("--rgb", infer_rgb, "RGB image path (infer.rgb)");
    infer->add_option("--thermal", infer_thermal, "thermal image path (infer.thermal)");
    infer->add_option("--out", infer_out, "output directory (infer.out)");
    CLI::App* ablate = app.add_subcommand("ablate", "Run an ablation sweep");
    ablate_o.attach(ablate);
    ablate->add_option("--axis", ablate_axis, "beta|ns|prior|loss|fusion")->required();

    CLI11_PARSE(app, argc, argv);

    ConfigGuard guard;
    vpf_status st = VPF_OK;
    if (gen->parsed()) {
        if ((st = gen_o.apply(guard.cfg)) == VPF_OK) st = vpf_run_generate(guard.cfg);
    } else if (train->parsed()) {
        if ((st = train_o.apply(guard.cfg)) == VPF_OK) st = vpf_run_train(guard.cfg);
    } else if (eval->parsed()) {
        if ((st = eval_o.apply(guard.cfg)) == VPF_OK) st = vpf_run_eval(guard.cfg);
    } else if (infer->parsed()) {
        st = infer_o.apply(guard.cfg);
        if (st == VPF_OK && !infer_rgb.empty())
            st = vpf_config_set(guard.cfg, "infer.rgb", infer_rgb.c_str());
        if (st == VPF_OK && !infer_thermal.empty())
            st = vpf_config_set(guard.cfg, "infer.thermal", infer_thermal.c_str());
        if (st == VPF_OK && !infer_out.empty())
            st = vpf_config_set(guard.cfg, "infer.out", infer_out.c_str());
        if (st == VPF_OK) st = vpf_run_infer(guard.cfg);
    } else if (ablate->parsed()) {
        if ((st = ablate_o.apply(guard.cfg)) == VPF_OK)
            st = vpf_run_ablate(guard.cfg, ablate_axis.c_str());
    }
    return finish(st);
}
