#pragma once

#include <map>
#include <string>
#include <vector>

#include "vpfnet/tensor.hpp"

namespace vpfnet {

/// One aligned RGB/thermal/label triple. Images are float CHW in [0,1];
/// rgb [3,H,W], thermal [1,H,W], label [H,W] ints in 0..C-1.
struct SamplePair {
    Tensor rgb;
    Tensor thermal;
    IntTensor label;
    int illumination = 0; // 0 = day, 1 = night
    std::string id;
};

struct DatasetSpec {
    std::string root;
    std::string layout = "canonical"; // canonical | mfnet | pst900
    int num_classes = 4;
    std::size_t resize_h = 0, resize_w = 0; // 0 keeps native resolution
    bool include_flip_files = false;        // MFNet ships *_flip augmented copies
};

/// Manifest-driven dataset. The canonical layout is
///   root/{rgb,thermal,labels}/<id>.png, root/{train,val,test}.txt,
///   root/illumination.txt ("<id> day|night" per line);
/// the mfnet and pst900 layouts are thin adapters over the published
/// directory structures.
class Dataset {
public:
    explicit Dataset(DatasetSpec spec);

    const DatasetSpec& spec() const { return spec_; }
    const std::vector<std::string>& split(const std::string& name) const;
    SamplePair load(const std::string& id) const;

    /// Pixel counts per class over the given ids.
    std::vector<std::uint64_t> label_histogram(const std::vector<std::string>& ids) const;

private:
    void load_canonical();
    void load_mfnet();
    void load_pst900();
    SamplePair finalize(SamplePair s) const;

    DatasetSpec spec_;
    std::vector<std::string> train_, val_, test_;
    std::map<std::string, int> illumination_;
};

struct AugmentConfig {
    double flip_prob = 0.5;
    double crop_fraction = 0.9; // 1.0 disables cropping
};

/// Seeded horizontal flip + random crop-and-resize, applied with the same
/// geometry to rgb, thermal and label (bilinear images, nearest labels).
SamplePair augment(const SamplePair& sample, const AugmentConfig& cfg,
                   std::uint64_t seed);

} // namespace vpfnet
