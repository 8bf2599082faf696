/* C API for the vpfnet shared library.
 *
 * All functions return vpf_status; on failure, vpf_last_error() yields a
 * human-readable message for the calling thread. Handles are opaque and must
 * be released with their destroy function.
 */
#ifndef VPFNET_H
#define VPFNET_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define VPF_API
#else
#define VPF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vpf_status {
    VPF_OK = 0,
    VPF_ERR_INVALID_ARGUMENT = 1, /* bad key, bad value, contract violation */
    VPF_ERR_CONFIG = 2,           /* unparsable or unknown configuration */
    VPF_ERR_IO = 3,               /* missing/corrupt files, write failures */
    VPF_ERR_NUMERIC = 4,          /* non-finite loss or activations */
    VPF_ERR_INTERNAL = 5
} vpf_status;

typedef struct vpf_config vpf_config;
typedef struct vpf_model vpf_model;

VPF_API const char* vpf_version(void);
VPF_API const char* vpf_status_name(vpf_status status);
/* Message from the most recent failing call on this thread. */
VPF_API const char* vpf_last_error(void);

/* ---- configuration ---- */
VPF_API vpf_config* vpf_config_create(void);
VPF_API void vpf_config_destroy(vpf_config* cfg);
VPF_API vpf_status vpf_config_set(vpf_config* cfg, const char* key, const char* value);
/* Load key=value lines from a file; later vpf_config_set calls override. */
VPF_API vpf_status vpf_config_load(vpf_config* cfg, const char* path);
/* Copies the value into buf (NUL-terminated, truncating). Missing key -> error. */
VPF_API vpf_status vpf_config_get(const vpf_config* cfg, const char* key, char* buf,
                                  size_t buf_size);
/* Validates all keys/values without running anything. */
VPF_API vpf_status vpf_config_validate(const vpf_config* cfg);

/* ---- commands (mirror the CLI subcommands) ---- */
VPF_API vpf_status vpf_run_generate(const vpf_config* cfg);
VPF_API vpf_status vpf_run_train(const vpf_config* cfg);
VPF_API vpf_status vpf_run_eval(const vpf_config* cfg);
VPF_API vpf_status vpf_run_infer(const vpf_config* cfg);
VPF_API vpf_status vpf_run_ablate(const vpf_config* cfg, const char* axis);

/* ---- programmatic inference ---- */
VPF_API vpf_status vpf_model_load(const char* checkpoint_path, vpf_model** out);
VPF_API void vpf_model_destroy(vpf_model* model);
VPF_API vpf_status vpf_model_class_count(const vpf_model* model, int32_t* out);
/* rgb: 3*h*w doubles (CHW, [0,1]); thermal: h*w doubles; either may be NULL
 * to run the zero-filled missing-modality protocol (not both). labels_out:
 * h*w int32. confidence_out: classes*h*w doubles, may be NULL. */
VPF_API vpf_status vpf_model_infer(vpf_model* model, const double* rgb,
                                   const double* thermal, int32_t height,
                                   int32_t width, int32_t n_samples, uint64_t seed,
                                   int32_t* labels_out, double* confidence_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* VPFNET_H */
