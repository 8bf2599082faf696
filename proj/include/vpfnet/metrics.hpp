#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vpfnet/tensor.hpp"

namespace vpfnet {

/// Per-pixel confusion counts; rows index ground truth, columns prediction.
class ConfusionMatrix {
public:
    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int classes)
        : classes_(classes),
          counts_(static_cast<std::size_t>(classes) * classes, 0) {}

    void accumulate(const IntTensor& pred, const IntTensor& gt);
    void merge(const ConfusionMatrix& other);

    int classes() const { return classes_; }
    std::uint64_t at(int gt, int pred) const {
        return counts_[static_cast<std::size_t>(gt) * classes_ + pred];
    }
    std::uint64_t total() const;

    struct Summary {
        std::vector<double> acc;      // per-class recall; 0 when undefined
        std::vector<double> iou;      // per-class IoU; 0 when undefined
        std::vector<bool> in_mean;    // class contributed to the means
        double macc = 0.0;
        double miou = 0.0;
    };

    /// Per-class Acc/IoU and their means. Classes absent from both ground
    /// truth and prediction are excluded from the means; exclude_background
    /// additionally drops class 0 from the means.
    Summary summarize(bool exclude_background = false) const;

    std::string to_csv() const;

private:
    int classes_ = 0;
    std::vector<std::uint64_t> counts_;
};

} // namespace vpfnet
