#include "vpfnet/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "vpfnet/image.hpp"
#include "vpfnet/resize.hpp"
#include "vpfnet/rng.hpp"

namespace fs = std::filesystem;

namespace vpfnet {

namespace {

std::vector<std::string> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n' ||
                                 line.back() == ' '))
            line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    return ids;
}

std::map<std::string, int> read_illumination(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open illumination manifest: " + path);
    std::map<std::string, int> m;
    std::string id, tag;
    while (in >> id >> tag) {
        if (tag == "day") m[id] = 0;
        else if (tag == "night") m[id] = 1;
        else throw std::runtime_error("bad illumination tag for " + id + ": " + tag);
    }
    return m;
}

std::vector<std::string> list_png_ids(const std::string& dir) {
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
    std::sort(ids.begin(), ids.end());
    return ids;
}

} // namespace

Dataset::Dataset(DatasetSpec spec) : spec_(std::move(spec)) {
    if (spec_.layout == "canonical") load_canonical();
    else if (spec_.layout == "mfnet") load_mfnet();
    else if (spec_.layout == "pst900") load_pst900();
    else throw std::invalid_argument("unknown dataset layout: " + spec_.layout);
}

void Dataset::load_canonical() {
    train_ = read_manifest(spec_.root + "/train.txt");
    val_ = read_manifest(spec_.root + "/val.txt");
    test_ = read_manifest(spec_.root + "/test.txt");
    illumination_ = read_illumination(spec_.root + "/illumination.txt");
}

void Dataset::load_mfnet() {
    auto filter = [&](std::vector<std::string> ids) {
        if (spec_.include_flip_files) return ids;
        std::vector<std::string> out;
        for (auto& id : ids)
            if (id.find("flip") == std::string::npos) out.push_back(id);
        return out;
    };
    train_ = filter(read_manifest(spec_.root + "/train.txt"));
    val_ = filter(read_manifest(spec_.root + "/val.txt"));
    test_ = filter(read_manifest(spec_.root + "/test.txt"));
    if (fs::exists(spec_.root + "/illumination.txt"))
        illumination_ = read_illumination(spec_.root + "/illumination.txt");
    else {
        // MFNet ids end in D/N for daytime/nighttime captures.
        auto tag = [&](const std::vector<std::string>& ids) {
            for (const auto& id : ids) {
                char c = id.empty() ? '?' : id.back();
                // flipped copies keep the tag before the suffix
                auto pos = id.find("_flip");
                if (pos != std::string::npos && pos > 0) c = id[pos - 1];
                illumination_[id] = (c == 'N' || c == 'n') ? 1 : 0;
            }
        };
        tag(train_);
        tag(val_);
        tag(test_);
    }
}

void Dataset::load_pst900() {
    train_ = list_png_ids(spec_.root + "/train/rgb");
    test_ = list_png_ids(spec_.root + "/test/rgb");
    val_ = test_; // PST900 publishes train/test only
    for (const auto& id : train_) illumination_[id] = 1; // captured at nighttime
    for (const auto& id : test_) illumination_[id] = 1;
}

const std::vector<std::string>& Dataset::split(const std::string& name) const {
    if (name == "train") return train_;
    if (name == "val") return val_;
    if (name == "test") return test_;
    throw std::invalid_argument("unknown split: " + name);
}

SamplePair Dataset::finalize(SamplePair s) const {
    for (std::size_t i = 0; i < s.label.size(); ++i)
        if (s.label[i] < 0 || s.label[i] >= spec_.num_classes)
            throw std::runtime_error("label out of range in sample " + s.id);
    if (spec_.resize_h > 0 && spec_.resize_w > 0) {
        s.rgb = resize_bilinear(s.rgb, spec_.resize_h, spec_.resize_w);
        s.thermal = resize_bilinear(s.thermal, spec_.resize_h, spec_.resize_w);
        s.label = resize_nearest(s.label, spec_.resize_h, spec_.resize_w);
    }
    return s;
}

SamplePair Dataset::load(const std::string& id) const {
    SamplePair s;
    s.id = id;
    if (spec_.layout == "mfnet") {
        Image img = read_png(spec_.root + "/images/" + id + ".png");
        if (img.channels != 4)
            throw std::runtime_error("mfnet image is not 4-channel RGBT: " + id);
        s.rgb = Tensor({3, img.height, img.width});
        s.thermal = Tensor({1, img.height, img.width});
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width; ++x) {
                for (std::size_t c = 0; c < 3; ++c)
                    s.rgb.at3(c, y, x) = img.at(y, x, c) / 255.0;
                s.thermal.at3(0, y, x) = img.at(y, x, 3) / 255.0;
            }
        s.label = to_label_map(read_png(spec_.root + "/labels/" + id + ".png"));
    } else {
        std::string base = spec_.root;
        if (spec_.layout == "pst900") {
            bool in_train = std::find(train_.begin(), train_.end(), id) != train_.end();
            base += in_train ? "/train" : "/test";
        }
        Image rgb = read_png(base + "/rgb/" + id + ".png");
        if (rgb.channels != 3)
            throw std::runtime_error("rgb image is not 3-channel: " + id);
        Image th = read_png(base + "/thermal/" + id + ".png");
        if (th.channels != 1)
            throw std::runtime_error("thermal image is not single-channel: " + id);
        s.rgb = to_float_chw(rgb);
        s.thermal = to_float_chw(th);
        s.label = to_label_map(read_png(base + "/labels/" + id + ".png"));
    }
    auto it = illumination_.find(id);
    s.illumination = it == illumination_.end() ? 0 : it->second;
    return finalize(std::move(s));
}

std::vector<std::uint64_t>
Dataset::label_histogram(const std::vector<std::string>& ids) const {
    std::vector<std::uint64_t> hist(static_cast<std::size_t>(spec_.num_classes), 0);
    for (const auto& id : ids) {
        SamplePair s = load(id);
        for (std::size_t i = 0; i < s.label.size(); ++i)
            ++hist[static_cast<std::size_t>(s.label[i])];
    }
    return hist;
}

SamplePair augment(const SamplePair& sample, const AugmentConfig& cfg,
                   std::uint64_t seed) {
    Rng rng(seed);
    SamplePair out = sample;
    std::size_t h = sample.rgb.dim(1), w = sample.rgb.dim(2);

    if (rng.bernoulli(cfg.flip_prob)) {
        auto flip_chw = [&](const Tensor& t) {
            Tensor f(t.shape());
            for (std::size_t c = 0; c < t.dim(0); ++c)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x)
                        f.at3(c, y, x) = t.at3(c, y, w - 1 - x);
            return f;
        };
        out.rgb = flip_chw(out.rgb);
        out.thermal = flip_chw(out.thermal);
        IntTensor fl(out.label.shape());
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                fl.at2(y, x) = out.label.at2(y, w - 1 - x);
        out.label = fl;
    }

    if (cfg.crop_fraction < 1.0) {
        auto ch = static_cast<std::size_t>(
            std::max<double>(1.0, std::floor(cfg.crop_fraction * static_cast<double>(h))));
        auto cw = static_cast<std::size_t>(
            std::max<double>(1.0, std::floor(cfg.crop_fraction * static_cast<double>(w))));
        std::size_t oy = rng.index(h - ch + 1);
        std::size_t ox = rng.index(w - cw + 1);

        auto crop_chw = [&](const Tensor& t) {
            Tensor c({t.dim(0), ch, cw});
            for (std::size_t k = 0; k < t.dim(0); ++k)
                for (std::size_t y = 0; y < ch; ++y)
                    for (std::size_t x = 0; x < cw; ++x)
                        c.at3(k, y, x) = t.at3(k, oy + y, ox + x);
            return c;
        };
        out.rgb = resize_bilinear(crop_chw(out.rgb), h, w);
        out.thermal = resize_bilinear(crop_chw(out.thermal), h, w);
        IntTensor cl({ch, cw});
        for (std::size_t y = 0; y < ch; ++y)
            for (std::size_t x = 0; x < cw; ++x)
                cl.at2(y, x) = out.label.at2(oy + y, ox + x);
        out.label = resize_nearest(cl, h, w);
    }
    return out;
}

} // namespace vpfnet
