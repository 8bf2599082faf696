#include "vpfnet/vffm.hpp"

#include <stdexcept>

namespace vpfnet {

ag::Var sample_latent(const LatentPosterior& post, LatentMode mode, Rng* rng) {
    if (mode == LatentMode::PosteriorMean) return post.mean;
    if (!rng) throw std::invalid_argument("sample_latent: random mode needs a generator");
    Tensor eps(post.mean.value().shape());
    rng->fill_normal(eps);
    return ag::reparameterize(post.mean, post.log_variance, eps);
}

Vffm::Vffm(int feature_channels, const VffmConfig& cfg, Rng& rng)
    : cfg_(cfg), feature_channels_(feature_channels) {
    if (cfg.s < 1 || cfg.s % 2 == 0)
        throw std::invalid_argument("Vffm: squeeze kernel must be odd and positive");
    if (cfg.r < 1 || cfg.d < 1)
        throw std::invalid_argument("Vffm: squeeze ratio and latent channels must be positive");
    int concat_channels = 2 * feature_channels;
    intermediate_channels_ = std::max(1, concat_channels / cfg.r);
    squeeze_conv = nn::Conv2d(concat_channels, intermediate_channels_, cfg.s, 1,
                              (cfg.s - 1) / 2, rng);
    squeeze_bn = nn::BatchNorm2d(intermediate_channels_);
    mean_head = nn::Conv2d(intermediate_channels_, cfg.d, 1, 1, 0, rng);
    logvar_head = nn::Conv2d(intermediate_channels_, cfg.d, 1, 1, 0, rng,
                             /*zero_bias=*/true);
    factor_head = nn::Conv2d(cfg.d, 1, 1, 1, 0, rng);
}

ag::Var Vffm::intermediate(const ag::Var& fr, const ag::Var& ft, bool training) {
    if (!fr.value().same_shape(ft.value()))
        throw std::invalid_argument("modality shape mismatch");
    if (!fr.value().all_finite() || !ft.value().all_finite())
        throw std::invalid_argument("non-finite modality feature");
    ag::Var cat = ag::concat_channels(fr, ft);
    ag::Var conv = squeeze_conv.forward(cat);
    ag::Var norm = squeeze_bn.forward(conv, training);
    return ag::leaky_relu(norm, cfg_.leaky_slope);
}

LatentPosterior Vffm::posterior(const ag::Var& ff) const {
    LatentPosterior post;
    post.mean = mean_head.forward(ff);
    post.log_variance = logvar_head.forward(ff);
    if (!post.mean.value().all_finite() || !post.log_variance.value().all_finite())
        throw std::runtime_error("non-finite posterior parameters");
    return post;
}

ag::Var Vffm::fusion_factor(const ag::Var& z) const {
    if (z.shape().size() != 4 || z.shape()[1] != static_cast<std::size_t>(cfg_.d))
        throw std::invalid_argument("fusion_factor: latent channel mismatch");
    return ag::sigmoid(factor_head.forward(z));
}

Vffm::Output Vffm::forward(const ag::Var& fr, const ag::Var& ft, LatentMode mode,
                           Rng* rng, bool training) {
    Output out;
    ag::Var ff = intermediate(fr, ft, training);
    out.posterior = posterior(ff);
    ag::Var z = sample_latent(out.posterior, mode, rng);
    out.factor = fusion_factor(z);
    out.fused = fuse(fr, ft, out.factor);
    return out;
}

void Vffm::params(const std::string& prefix, nn::ParamList& out) {
    squeeze_conv.params(prefix + ".squeeze", out);
    squeeze_bn.params(prefix + ".bn", out);
    mean_head.params(prefix + ".mean_head", out);
    logvar_head.params(prefix + ".logvar_head", out);
    factor_head.params(prefix + ".factor_head", out);
}

void Vffm::buffers(const std::string& prefix, nn::BufferList& out) {
    squeeze_bn.buffers(prefix + ".bn", out);
}

} // namespace vpfnet
