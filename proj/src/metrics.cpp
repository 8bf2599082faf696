#include "vpfnet/metrics.hpp"

#include <sstream>
#include <stdexcept>

namespace vpfnet {

void ConfusionMatrix::accumulate(const IntTensor& pred, const IntTensor& gt) {
    if (!pred.same_shape(gt))
        throw std::invalid_argument("ConfusionMatrix: prediction/label shape mismatch");
    for (std::size_t i = 0; i < pred.size(); ++i) {
        std::int32_t p = pred[i], g = gt[i];
        if (p < 0 || p >= classes_ || g < 0 || g >= classes_)
            throw std::invalid_argument("label out of range");
        ++counts_[static_cast<std::size_t>(g) * classes_ + p];
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.classes_ != classes_)
        throw std::invalid_argument("ConfusionMatrix: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

ConfusionMatrix::Summary ConfusionMatrix::summarize(bool exclude_background) const {
    Summary s;
    s.acc.assign(classes_, 0.0);
    s.iou.assign(classes_, 0.0);
    s.in_mean.assign(classes_, false);

    double acc_sum = 0.0, iou_sum = 0.0;
    int acc_n = 0, iou_n = 0;
    for (int c = 0; c < classes_; ++c) {
        std::uint64_t row = 0, col = 0;
        for (int j = 0; j < classes_; ++j) {
            row += at(c, j);
            col += at(j, c);
        }
        std::uint64_t diag = at(c, c);
        std::uint64_t uni = row + col - diag;
        bool present = uni > 0;
        if (row > 0) s.acc[c] = static_cast<double>(diag) / static_cast<double>(row);
        if (present) s.iou[c] = static_cast<double>(diag) / static_cast<double>(uni);
        bool counted = present && !(exclude_background && c == 0);
        s.in_mean[c] = counted;
        if (counted) {
            // Acc mean follows the IoU presence rule so both means cover the
            // same class set; absent classes report 0 but do not dilute.
            if (row > 0) {
                acc_sum += s.acc[c];
                ++acc_n;
            }
            iou_sum += s.iou[c];
            ++iou_n;
        }
    }
    s.macc = acc_n > 0 ? acc_sum / acc_n : 0.0;
    s.miou = iou_n > 0 ? iou_sum / iou_n : 0.0;
    return s;
}

std::string ConfusionMatrix::to_csv() const {
    std::ostringstream os;
    for (int g = 0; g < classes_; ++g) {
        for (int p = 0; p < classes_; ++p) {
            if (p) os << ',';
            os << at(g, p);
        }
        os << '\n';
    }
    return os.str();
}

} // namespace vpfnet
