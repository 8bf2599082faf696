#pragma once

#include <vector>

#include "vpfnet/nn.hpp"
#include "vpfnet/vffm.hpp"

namespace vpfnet {

/// Learnable Gaussian-mixture prior over the latent grid: one diagonal
/// component per (category, illumination) pair, mixture weights fixed to
/// 1/(L*C). Variances are held as log-variances so gradient steps keep them
/// positive.
class GmmPrior {
public:
    GmmPrior() = default;
    GmmPrior(int categories, int illuminations, int latent_channels, Rng& rng);

    int categories() const { return categories_; }
    int illuminations() const { return illuminations_; }
    int latent_channels() const { return latent_channels_; }
    double mixture_weight() const {
        return 1.0 / (static_cast<double>(categories_) * illuminations_);
    }

    void params(const std::string& prefix, nn::ParamList& out);

    ag::Var mu;        // [C,L,d]
    ag::Var log_sigma; // [C,L,d]

private:
    int categories_ = 0, illuminations_ = 0, latent_channels_ = 0;
};

/// Nearest-neighbor label downsampling to the latent grid. Target must not
/// exceed the source resolution. Index map per resize.hpp.
IntTensor downsample_labels(const IntTensor& labels, std::size_t target_h,
                            std::size_t target_w);

/// Closed-form KL between the per-pixel posterior and the mixture component
/// selected by (category, illumination); mean over latent elements and batch.
ag::Var conditional_kl(const LatentPosterior& post, const IntTensor& category,
                       const std::vector<int>& illumination, const GmmPrior& prior);

/// Mean over elements of log sum_{c,l} gamma_{c,l} N(z; mu_{c,l,k}, Sigma_{c,l,k});
/// log-sum-exp stabilized. Monitoring metric only.
double prior_log_likelihood(const Tensor& z, const GmmPrior& prior);

} // namespace vpfnet
