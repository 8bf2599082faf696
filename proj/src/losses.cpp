#include "vpfnet/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace vpfnet {

std::vector<double> compute_class_weights(const std::vector<std::uint64_t>& histogram,
                                          double k) {
    if (histogram.empty())
        throw std::invalid_argument("compute_class_weights: empty histogram");
    std::uint64_t total = 0;
    for (auto c : histogram) total += c;
    if (total == 0)
        throw std::invalid_argument("compute_class_weights: all counts are zero");
    std::vector<double> w(histogram.size());
    for (std::size_t c = 0; c < histogram.size(); ++c) {
        double p = static_cast<double>(histogram[c]) / static_cast<double>(total);
        w[c] = 1.0 / std::log(k + p);
    }
    return w;
}

TotalLoss total_loss(const ag::Var& logits, const IntTensor& labels,
                     const std::vector<double>& class_weights,
                     const std::vector<LatentPosterior>& posteriors,
                     const std::vector<IntTensor>& level_categories,
                     const std::vector<int>& illumination, const GmmPrior& prior,
                     double beta) {
    if (posteriors.empty())
        throw std::invalid_argument("total_loss: no level posteriors supplied");
    if (posteriors.size() != level_categories.size())
        throw std::invalid_argument("total_loss: missing level posterior or category map");
    for (const auto& p : posteriors)
        if (!p.mean.defined() || !p.log_variance.defined())
            throw std::invalid_argument("total_loss: missing level posterior");

    TotalLoss out;
    out.breakdown.beta = beta;

    ag::Var wce = ag::weighted_cross_entropy(logits, labels, class_weights);
    out.breakdown.wce = wce.item();

    double inv_levels = 1.0 / static_cast<double>(posteriors.size());
    if (beta != 0.0) {
        ag::Var kl_sum;
        for (std::size_t lv = 0; lv < posteriors.size(); ++lv) {
            ag::Var kl = conditional_kl(posteriors[lv], level_categories[lv],
                                        illumination, prior);
            kl_sum = kl_sum.defined() ? ag::add(kl_sum, kl) : kl;
        }
        ag::Var kl_mean = ag::scale(kl_sum, inv_levels);
        out.breakdown.kl_mean = kl_mean.item();
        out.value = ag::add(wce, ag::scale(kl_mean, beta));
    } else {
        ag::NoGradGuard no_grad;
        double kl_acc = 0.0;
        for (std::size_t lv = 0; lv < posteriors.size(); ++lv)
            kl_acc += conditional_kl(posteriors[lv], level_categories[lv],
                                     illumination, prior)
                          .item();
        out.breakdown.kl_mean = kl_acc * inv_levels;
        out.value = wce;
    }
    out.breakdown.total = out.value.item();
    return out;
}

} // namespace vpfnet
