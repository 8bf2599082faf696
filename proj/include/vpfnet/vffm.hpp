#pragma once

#include "vpfnet/nn.hpp"

namespace vpfnet {

/// How the latent grid is realized on a forward pass.
enum class LatentMode {
    Random,       // reparameterized draw from the posterior
    PosteriorMean // deterministic, uses the mean directly
};

struct VffmConfig {
    int s = 7;  // squeeze kernel size (odd)
    int r = 16; // squeeze ratio
    int d = 8;  // latent channels
    double leaky_slope = 0.2;
};

struct LatentPosterior {
    ag::Var mean;
    ag::Var log_variance;
};

/// Draw a latent sample. Random mode needs a generator; PosteriorMean returns
/// the mean itself (bit-exact).
ag::Var sample_latent(const LatentPosterior& post, LatentMode mode, Rng* rng);

/// Convex per-pixel blend of the two modality features under the fusion
/// factor map; alias for the autodiff op, kept as the module-level name.
inline ag::Var fuse(const ag::Var& fr, const ag::Var& ft, const ag::Var& factor) {
    return ag::fuse_convex(fr, ft, factor);
}

/// Variational feature fusion: squeezes the concatenated modality features,
/// predicts a Gaussian posterior over a latent grid, and turns latent samples
/// into a spatial fusion factor map.
class Vffm {
public:
    Vffm() = default;
    Vffm(int feature_channels, const VffmConfig& cfg, Rng& rng);

    /// sigma_L(BN(Conv_s(Cat(F_R, F_T)))), leaky slope from config.
    ag::Var intermediate(const ag::Var& fr, const ag::Var& ft, bool training);

    /// Two independent 1x1 heads on the intermediate feature.
    LatentPosterior posterior(const ag::Var& intermediate) const;

    /// sigmoid(Conv_1(z; 1)) -> [N,1,H,W], every entry in (0,1).
    ag::Var fusion_factor(const ag::Var& z) const;

    struct Output {
        ag::Var fused;
        LatentPosterior posterior;
        ag::Var factor;
    };

    Output forward(const ag::Var& fr, const ag::Var& ft, LatentMode mode, Rng* rng,
                   bool training);

    int feature_channels() const { return feature_channels_; }
    int intermediate_channels() const { return intermediate_channels_; }
    const VffmConfig& config() const { return cfg_; }

    void params(const std::string& prefix, nn::ParamList& out);
    void buffers(const std::string& prefix, nn::BufferList& out);

    nn::Conv2d squeeze_conv;
    nn::BatchNorm2d squeeze_bn;
    nn::Conv2d mean_head;
    nn::Conv2d logvar_head;
    nn::Conv2d factor_head;

private:
    VffmConfig cfg_;
    int feature_channels_ = 0;
    int intermediate_channels_ = 0;
};

} // namespace vpfnet
