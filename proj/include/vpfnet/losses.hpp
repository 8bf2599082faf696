#pragma once

#include <cstdint>
#include <vector>

#include "vpfnet/prior.hpp"
#include "vpfnet/vffm.hpp"

namespace vpfnet {

/// ENet-style inverse-log-frequency weights: w_c = 1 / ln(k + count_c / total).
/// Zero-count classes get the p=0 weight 1/ln(k).
std::vector<double> compute_class_weights(const std::vector<std::uint64_t>& histogram,
                                          double k = 1.02);

struct LossBreakdown {
    double total = 0.0;
    double wce = 0.0;
    double kl_mean = 0.0;
    double beta = 0.0;
};

struct TotalLoss {
    ag::Var value; // graph root for backward()
    LossBreakdown breakdown;
};

/// Weighted cross-entropy plus beta-scaled mean conditional KL over all
/// fusion levels. Posteriors and category maps must be supplied per level and
/// spatially aligned. With beta == 0 the KL is still evaluated for logging
/// but kept out of the gradient graph.
TotalLoss total_loss(const ag::Var& logits, const IntTensor& labels,
                     const std::vector<double>& class_weights,
                     const std::vector<LatentPosterior>& posteriors,
                     const std::vector<IntTensor>& level_categories,
                     const std::vector<int>& illumination, const GmmPrior& prior,
                     double beta);

} // namespace vpfnet
