#pragma once

#include <string>
#include <vector>

#include "vpfnet/config.hpp"
#include "vpfnet/metrics.hpp"
#include "vpfnet/synthetic.hpp"

namespace vpfnet::engine {

/// Thrown when training hits a non-finite loss; carries the diagnostic dump.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

SyntheticReport run_generate(const Config& cfg);

struct TrainResult {
    int epochs_done = 0;
    std::vector<double> epoch_total, epoch_wce, epoch_kl;
    double best_val_miou = 0.0;
    std::string last_checkpoint, best_checkpoint;
};

TrainResult run_train(const Config& cfg);

struct EvalResult {
    ConfusionMatrix::Summary overall, day, night;
    std::uint64_t day_pixels = 0, night_pixels = 0;
    std::string metrics_txt, metrics_csv;
};

EvalResult run_eval(const Config& cfg);

struct InferResult {
    std::string label_png, confidence_npy;
    std::vector<std::string> factor_pngs;
};

InferResult run_infer(const Config& cfg);

/// Runs the configured grid for one ablation axis
/// (beta | ns | prior | loss | fusion) and writes a CSV table; returns its path.
std::string run_ablate(const Config& cfg, const std::string& axis);

} // namespace vpfnet::engine
