#include "vpfnet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace vpfnet {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "run.dir", "run.force",
        "data.root", "data.layout", "data.classes", "data.resize_h", "data.resize_w",
        "data.include_flips",
        "gen.height", "gen.width", "gen.classes", "gen.train", "gen.val", "gen.test",
        "gen.seed",
        "model.backbone", "model.channels", "model.s", "model.r", "model.d",
        "model.fusion", "model.skip0", "model.prior_condition", "model.illuminations",
        "loss.beta", "loss.class_weighted", "loss.weight_k",
        "train.lr", "train.weight_decay", "train.epochs", "train.batch", "train.seed",
        "train.augment", "train.crop_fraction", "train.val_every", "train.resume",
        "train.init_from",
        "eval.checkpoint", "eval.split", "eval.ns", "eval.missing", "eval.seed",
        "metrics.exclude_background",
        "infer.rgb", "infer.thermal", "infer.out", "infer.dump_wmaps",
    };
    return keys;
}

} // namespace

Config Config::from_file(const std::string& path) {
    Config c;
    c.load_file(path);
    return c;
}

void Config::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected key=value");
        set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
}

void Config::write_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config file: " + path);
    for (const auto& [k, v] : kv_) out << k << "=" << v << "\n";
}

void Config::set(const std::string& key, const std::string& value) {
    if (key.empty()) throw std::invalid_argument("empty config key");
    kv_[key] = value;
}

bool Config::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string Config::get(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

double Config::get_num(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        std::size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw std::invalid_argument("config key " + key + " is not a number: " + it->second);
    }
}

int Config::get_int(const std::string& key, int fallback) const {
    double v = get_num(key, static_cast<double>(fallback));
    int i = static_cast<int>(v);
    if (static_cast<double>(i) != v)
        throw std::invalid_argument("config key " + key + " is not an integer");
    return i;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        return std::stoull(it->second);
    } catch (...) {
        throw std::invalid_argument("config key " + key + " is not an unsigned integer");
    }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw std::invalid_argument("config key " + key + " is not a boolean: " + v);
}

void Config::merge(const Config& other) {
    for (const auto& [k, v] : other.kv_) kv_[k] = v;
}

RunConfig RunConfig::parse(const Config& cfg) {
    for (const auto& [k, v] : cfg.entries())
        if (!known_keys().count(k))
            throw std::invalid_argument("unknown config key: " + k);

    RunConfig rc;
    rc.run_dir = cfg.get("run.dir", "");
    rc.force = cfg.get_bool("run.force", false);

    rc.data_root = cfg.get("data.root", "");
    rc.data_layout = cfg.get("data.layout", "canonical");
    if (rc.data_layout != "canonical" && rc.data_layout != "mfnet" &&
        rc.data_layout != "pst900")
        throw std::invalid_argument("data.layout must be canonical|mfnet|pst900");
    rc.num_classes = cfg.get_int("data.classes", 4);
    if (rc.num_classes < 2 || rc.num_classes > 255)
        throw std::invalid_argument("data.classes must be in [2,255]");
    rc.resize_h = static_cast<std::size_t>(cfg.get_int("data.resize_h", 0));
    rc.resize_w = static_cast<std::size_t>(cfg.get_int("data.resize_w", 0));
    rc.include_flip_files = cfg.get_bool("data.include_flips", false);

    rc.gen_height = static_cast<std::size_t>(cfg.get_int("gen.height", 64));
    rc.gen_width = static_cast<std::size_t>(cfg.get_int("gen.width", 64));
    rc.gen_classes = cfg.get_int("gen.classes", 4);
    rc.gen_train = static_cast<std::size_t>(cfg.get_int("gen.train", 600));
    rc.gen_val = static_cast<std::size_t>(cfg.get_int("gen.val", 50));
    rc.gen_test = static_cast<std::size_t>(cfg.get_int("gen.test", 100));
    rc.gen_seed = cfg.get_u64("gen.seed", 7);

    rc.backbone = cfg.get("model.backbone", "tiny");
    if (rc.backbone != "tiny" && rc.backbone != "resnet50")
        throw std::invalid_argument("model.backbone must be tiny|resnet50");
    std::string ch = cfg.get("model.channels", "");
    if (!ch.empty()) {
        std::stringstream ss(ch);
        std::string tok;
        while (std::getline(ss, tok, ',')) rc.channels.push_back(std::stoi(tok));
        if (rc.channels.size() != 5)
            throw std::invalid_argument("model.channels needs exactly 5 entries");
    }
    rc.vffm.s = cfg.get_int("model.s", 7);
    rc.vffm.r = cfg.get_int("model.r", 16);
    rc.vffm.d = cfg.get_int("model.d", 8);
    if (rc.vffm.s < 1 || rc.vffm.s % 2 == 0)
        throw std::invalid_argument("model.s must be odd and positive");
    if (rc.vffm.r < 1) throw std::invalid_argument("model.r must be positive");
    if (rc.vffm.d < 1) throw std::invalid_argument("model.d must be positive");

    std::string fusion = cfg.get("model.fusion", "probabilistic");
    if (fusion == "probabilistic") rc.fusion = FusionMode::Probabilistic;
    else if (fusion == "attention") rc.fusion = FusionMode::Attention;
    else if (fusion == "addition") rc.fusion = FusionMode::Addition;
    else throw std::invalid_argument("model.fusion must be probabilistic|attention|addition");

    std::string skip0 = cfg.get("model.skip0", "before_final");
    if (skip0 == "before_final") rc.skip0 = Skip0Position::BeforeFinalUpsample;
    else if (skip0 == "after_final") rc.skip0 = Skip0Position::AfterFinalUpsample;
    else throw std::invalid_argument("model.skip0 must be before_final|after_final");

    std::string pc = cfg.get("model.prior_condition", "both");
    if (pc == "both") rc.prior_condition = PriorCondition::Both;
    else if (pc == "category") rc.prior_condition = PriorCondition::Category;
    else if (pc == "illumination") rc.prior_condition = PriorCondition::Illumination;
    else if (pc == "none") rc.prior_condition = PriorCondition::None;
    else throw std::invalid_argument(
        "model.prior_condition must be both|category|illumination|none");
    rc.illuminations = cfg.get_int("model.illuminations", 2);
    if (rc.illuminations < 1)
        throw std::invalid_argument("model.illuminations must be positive");

    rc.beta = cfg.get_num("loss.beta", 0.5);
    if (rc.beta < 0.0) throw std::invalid_argument("loss.beta must be >= 0");
    rc.class_weighted = cfg.get_bool("loss.class_weighted", true);
    rc.weight_k = cfg.get_num("loss.weight_k", 1.02);
    if (rc.weight_k <= 1.0)
        throw std::invalid_argument("loss.weight_k must be > 1");

    rc.lr = cfg.get_num("train.lr", 5e-5);
    rc.weight_decay = cfg.get_num("train.weight_decay", 5e-4);
    rc.epochs = cfg.get_int("train.epochs", 300);
    rc.batch_size = cfg.get_int("train.batch", 3);
    rc.seed = cfg.get_u64("train.seed", 1);
    rc.augment_enabled = cfg.get_bool("train.augment", true);
    rc.crop_fraction = cfg.get_num("train.crop_fraction", 0.9);
    rc.val_every = cfg.get_int("train.val_every", 1);
    rc.resume = cfg.get_bool("train.resume", false);
    rc.init_from = cfg.get("train.init_from", "");
    if (rc.lr <= 0.0) throw std::invalid_argument("train.lr must be positive");
    if (rc.weight_decay < 0.0)
        throw std::invalid_argument("train.weight_decay must be >= 0");
    if (rc.epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
    if (rc.batch_size < 1) throw std::invalid_argument("train.batch must be >= 1");
    if (rc.crop_fraction <= 0.0 || rc.crop_fraction > 1.0)
        throw std::invalid_argument("train.crop_fraction must be in (0,1]");
    if (rc.val_every < 1) throw std::invalid_argument("train.val_every must be >= 1");

    rc.checkpoint = cfg.get("eval.checkpoint", "");
    rc.eval_split = cfg.get("eval.split", "test");
    rc.ns = cfg.get_int("eval.ns", 1);
    if (rc.ns < 1) throw std::invalid_argument("eval.ns must be >= 1");
    std::string missing = cfg.get("eval.missing", "none");
    if (missing == "none") rc.missing = MissingModality::None;
    else if (missing == "rgb") rc.missing = MissingModality::Rgb;
    else if (missing == "thermal") rc.missing = MissingModality::Thermal;
    else throw std::invalid_argument("eval.missing must be none|rgb|thermal");
    rc.eval_seed = cfg.get_u64("eval.seed", 1234);
    rc.exclude_background = cfg.get_bool("metrics.exclude_background", false);

    rc.infer_rgb = cfg.get("infer.rgb", "");
    rc.infer_thermal = cfg.get("infer.thermal", "");
    rc.infer_out = cfg.get("infer.out", "");
    rc.dump_wmaps = cfg.get_bool("infer.dump_wmaps", true);
    return rc;
}

std::pair<int, int> RunConfig::prior_shape() const {
    switch (prior_condition) {
    case PriorCondition::Both: return {num_classes, illuminations};
    case PriorCondition::Category: return {num_classes, 1};
    case PriorCondition::Illumination: return {1, illuminations};
    case PriorCondition::None: return {1, 1};
    }
    return {num_classes, illuminations};
}

ModelConfig RunConfig::model_config() const {
    ModelConfig mc;
    mc.backbone = backbone == "resnet50" ? BackboneConfig::resnet50_shaped()
                                         : BackboneConfig::tiny();
    if (!channels.empty()) mc.backbone.channels = channels;
    mc.vffm = vffm;
    mc.num_classes = num_classes;
    auto [pc, pl] = prior_shape();
    mc.prior_categories = pc;
    mc.prior_illuminations = pl;
    mc.fusion = fusion;
    mc.skip0 = skip0;
    return mc;
}

} // namespace vpfnet
