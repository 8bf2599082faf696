#include "vpfnet/vpfnet.h"

#include <cstring>
#include <string>

#include "vpfnet/checkpoint.hpp"
#include "vpfnet/engine.hpp"
#include "vpfnet/network.hpp"

using namespace vpfnet;

struct vpf_config {
    Config cfg;
};

struct vpf_model {
    VpfNet net;
};

namespace {

thread_local std::string g_last_error;

vpf_status fail(vpf_status code, const std::string& message) {
    g_last_error = message;
    return code;
}

template <typename Fn> vpf_status guarded(Fn&& fn) {
    try {
        fn();
        return VPF_OK;
    } catch (const engine::NumericError& e) {
        return fail(VPF_ERR_NUMERIC, e.what());
    } catch (const std::invalid_argument& e) {
        return fail(VPF_ERR_INVALID_ARGUMENT, e.what());
    } catch (const std::runtime_error& e) {
        return fail(VPF_ERR_IO, e.what());
    } catch (const std::exception& e) {
        return fail(VPF_ERR_INTERNAL, e.what());
    }
}

VpfNet model_from_checkpoint_file(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    Config saved;
    for (const auto& [k, v] : ckpt.config) saved.set(k, v);
    RunConfig rc = RunConfig::parse(saved);
    VpfNet net(rc.model_config(), rc.seed);
    auto params = net.params();
    auto buffers = net.buffers();
    apply_tensors(ckpt.tensors, params, buffers, /*allow_missing=*/true);
    return net;
}

} // namespace

extern "C" {

const char* vpf_version(void) { return "1.0.0"; }

const char* vpf_status_name(vpf_status status) {
    switch (status) {
    case VPF_OK: return "ok";
    case VPF_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case VPF_ERR_CONFIG: return "config";
    case VPF_ERR_IO: return "io";
    case VPF_ERR_NUMERIC: return "numeric";
    case VPF_ERR_INTERNAL: return "internal";
    }
    return "unknown";
}

const char* vpf_last_error(void) { return g_last_error.c_str(); }

vpf_config* vpf_config_create(void) { return new vpf_config(); }

void vpf_config_destroy(vpf_config* cfg) { delete cfg; }

vpf_status vpf_config_set(vpf_config* cfg, const char* key, const char* value) {
    if (!cfg || !key || !value)
        return fail(VPF_ERR_INVALID_ARGUMENT, "null argument to vpf_config_set");
    return guarded([&] { cfg->cfg.set(key, value); });
}

vpf_status vpf_config_load(vpf_config* cfg, const char* path) {
    if (!cfg || !path)
        return fail(VPF_ERR_INVALID_ARGUMENT, "null argument to vpf_config_load");
    return guarded([&] { cfg->cfg.load_file(path); });
}

vpf_status vpf_config_get(const vpf_config* cfg, const char* key, char* buf,
                          size_t buf_size) {
    if (!cfg || !key || !buf || buf_size == 0)
        return fail(VPF_ERR_INVALID_ARGUMENT, "null argument to vpf_config_get");
    if (!cfg->cfg.has(key)) return fail(VPF_ERR_CONFIG, std::string("no such key: ") + key);
    std::string v = cfg->cfg.get(key, "");
    std::strncpy(buf, v.c_str(), buf_size - 1);
    buf[buf_size - 1] = '\0';
    return VPF_OK;
}

vpf_status vpf_config_validate(const vpf_config* cfg) {
    if (!cfg) return fail(VPF_ERR_INVALID_ARGUMENT, "null config");
    try {
        RunConfig::parse(cfg->cfg);
        return VPF_OK;
    } catch (const std::exception& e) {
        return fail(VPF_ERR_CONFIG, e.what());
    }
}

vpf_status vpf_run_generate(const vpf_config* cfg) {
    if (!cfg) return fail(VPF_ERR_INVALID_ARGUMENT, "null config");
    return guarded([&] { engine::run_generate(cfg->cfg); });
}

vpf_status vpf_run_train(const vpf_config* cfg) {
    if (!cfg) return fail(VPF_ERR_INVALID_ARGUMENT, "null config");
    return guarded([&] { engine::run_train(cfg->cfg); });
}

vpf_status vpf_run_eval(const vpf_config* cfg) {
    if (!cfg) return fail(VPF_ERR_INVALID_ARGUMENT, "null config");
    return guarded([&] { engine::run_eval(cfg->cfg); });
}

vpf_status vpf_run_infer(const vpf_config* cfg) {
    if (!cfg) return fail(VPF_ERR_INVALID_ARGUMENT, "null config");
    return guarded([&] { engine::run_infer(cfg->cfg); });
}

vpf_status vpf_run_ablate(const vpf_config* cfg, const char* axis) {
    if (!cfg || !axis) return fail(VPF_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] { engine::run_ablate(cfg->cfg, axis); });
}

vpf_status vpf_model_load(const char* checkpoint_path, vpf_model** out) {
    if (!checkpoint_path || !out)
        return fail(VPF_ERR_INVALID_ARGUMENT, "null argument to vpf_model_load");
    *out = nullptr;
    return guarded([&] {
        auto* m = new vpf_model{model_from_checkpoint_file(checkpoint_path)};
        *out = m;
    });
}

void vpf_model_destroy(vpf_model* model) { delete model; }

vpf_status vpf_model_class_count(const vpf_model* model, int32_t* out) {
    if (!model || !out) return fail(VPF_ERR_INVALID_ARGUMENT, "null argument");
    *out = model->net.config().num_classes;
    return VPF_OK;
}

vpf_status vpf_model_infer(vpf_model* model, const double* rgb, const double* thermal,
                           int32_t height, int32_t width, int32_t n_samples,
                           uint64_t seed, int32_t* labels_out, double* confidence_out) {
    if (!model || !labels_out)
        return fail(VPF_ERR_INVALID_ARGUMENT, "null argument to vpf_model_infer");
    if (!rgb && !thermal)
        return fail(VPF_ERR_INVALID_ARGUMENT, "both modalities missing");
    if (height <= 0 || width <= 0)
        return fail(VPF_ERR_INVALID_ARGUMENT, "non-positive image size");
    return guarded([&] {
        auto h = static_cast<std::size_t>(height);
        auto w = static_cast<std::size_t>(width);
        Tensor rgb_t({3, h, w});
        Tensor th_t({1, h, w});
        if (rgb) std::copy_n(rgb, rgb_t.size(), rgb_t.data());
        if (thermal) std::copy_n(thermal, th_t.size(), th_t.data());
        SegmentationOutput seg;
        if (!rgb)
            seg = model->net.infer_missing_modality(nullptr, &th_t, MissingModality::Rgb,
                                                    n_samples, seed);
        else if (!thermal)
            seg = model->net.infer_missing_modality(&rgb_t, nullptr,
                                                    MissingModality::Thermal, n_samples,
                                                    seed);
        else
            seg = model->net.infer_averaged(rgb_t, th_t, n_samples, seed);
        std::copy_n(seg.labels.data(), seg.labels.size(), labels_out);
        if (confidence_out)
            std::copy_n(seg.confidence.data(), seg.confidence.size(), confidence_out);
    });
}

} // extern "C"
