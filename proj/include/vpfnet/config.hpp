#pragma once

#include <map>
#include <string>

#include "vpfnet/network.hpp"

namespace vpfnet {

/// Flat key=value configuration ('#' starts a comment). Keys mirror the CLI
/// flags; unknown keys are rejected at validation time.
class Config {
public:
    Config() = default;

    static Config from_file(const std::string& path);
    void load_file(const std::string& path);
    void write_file(const std::string& path) const;

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;
    std::string get(const std::string& key, const std::string& fallback) const;
    double get_num(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    const std::map<std::string, std::string>& entries() const { return kv_; }
    void merge(const Config& other); // other wins

private:
    std::map<std::string, std::string> kv_;
};

enum class PriorCondition { Both, Category, Illumination, None };

/// Validated, typed view of a Config; construction throws on out-of-range or
/// unknown keys.
struct RunConfig {
    // run
    std::string run_dir;
    bool force = false;

    // data
    std::string data_root;
    std::string data_layout = "canonical"; // canonical | mfnet | pst900
    int num_classes = 4;
    std::size_t resize_h = 0, resize_w = 0;
    bool include_flip_files = false;

    // generator
    std::size_t gen_height = 64, gen_width = 64;
    int gen_classes = 4;
    std::size_t gen_train = 600, gen_val = 50, gen_test = 100;
    std::uint64_t gen_seed = 7;

    // model
    std::string backbone = "tiny"; // tiny | resnet50
    std::vector<int> channels;     // optional override
    VffmConfig vffm;
    FusionMode fusion = FusionMode::Probabilistic;
    Skip0Position skip0 = Skip0Position::BeforeFinalUpsample;
    PriorCondition prior_condition = PriorCondition::Both;
    int illuminations = 2;

    // loss
    double beta = 0.5;
    bool class_weighted = true;
    double weight_k = 1.02;

    // train
    double lr = 5e-5;
    double weight_decay = 5e-4;
    int epochs = 300;
    int batch_size = 3;
    std::uint64_t seed = 1;
    bool augment_enabled = true;
    double crop_fraction = 0.9;
    int val_every = 1;
    bool resume = false;
    std::string init_from;

    // eval / infer
    std::string checkpoint;
    std::string eval_split = "test";
    int ns = 1;
    MissingModality missing = MissingModality::None;
    std::uint64_t eval_seed = 1234;
    bool exclude_background = false;
    std::string infer_rgb, infer_thermal, infer_out;
    bool dump_wmaps = true;

    static RunConfig parse(const Config& cfg);

    ModelConfig model_config() const;
    /// Effective (C, L) of the prior under the conditioning mode.
    std::pair<int, int> prior_shape() const;
};

} // namespace vpfnet
