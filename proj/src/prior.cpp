#include "vpfnet/prior.hpp"

#include <cmath>
#include <stdexcept>

#include "vpfnet/resize.hpp"

namespace vpfnet {

GmmPrior::GmmPrior(int categories, int illuminations, int latent_channels, Rng& rng)
    : categories_(categories), illuminations_(illuminations),
      latent_channels_(latent_channels) {
    if (categories < 1 || illuminations < 1 || latent_channels < 1)
        throw std::invalid_argument("GmmPrior: all dimensions must be positive");
    Tensor m({static_cast<std::size_t>(categories),
              static_cast<std::size_t>(illuminations),
              static_cast<std::size_t>(latent_channels)});
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = 0.1 * rng.normal();
    mu = ag::Var(std::move(m), true);
    log_sigma = ag::Var(Tensor({static_cast<std::size_t>(categories),
                                static_cast<std::size_t>(illuminations),
                                static_cast<std::size_t>(latent_channels)},
                               0.0),
                        true);
}

void GmmPrior::params(const std::string& prefix, nn::ParamList& out) {
    out.push_back({prefix + ".mu", mu});
    out.push_back({prefix + ".log_sigma", log_sigma});
}

IntTensor downsample_labels(const IntTensor& labels, std::size_t target_h,
                            std::size_t target_w) {
    if (labels.rank() == 2) {
        if (target_h > labels.dim(0) || target_w > labels.dim(1))
            throw std::invalid_argument("downsample_labels: target exceeds source");
        return resize_nearest(labels, target_h, target_w);
    }
    if (labels.rank() == 3) {
        std::size_t n = labels.dim(0), h = labels.dim(1), w = labels.dim(2);
        if (target_h > h || target_w > w)
            throw std::invalid_argument("downsample_labels: target exceeds source");
        IntTensor out({n, target_h, target_w});
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < target_h; ++i) {
                std::size_t si = nearest_src_index(i, target_h, h);
                for (std::size_t j = 0; j < target_w; ++j)
                    out.at3(b, i, j) =
                        labels.at3(b, si, nearest_src_index(j, target_w, w));
            }
        return out;
    }
    throw std::invalid_argument("downsample_labels: rank-2 or rank-3 labels expected");
}

ag::Var conditional_kl(const LatentPosterior& post, const IntTensor& category,
                       const std::vector<int>& illumination, const GmmPrior& prior) {
    return ag::gmm_conditional_kl(post.mean, post.log_variance, prior.mu,
                                  prior.log_sigma, category, illumination);
}

double prior_log_likelihood(const Tensor& z, const GmmPrior& prior) {
    std::size_t n, d, hw;
    if (z.rank() == 3) {
        n = 1;
        d = z.dim(0);
        hw = z.dim(1) * z.dim(2);
    } else if (z.rank() == 4) {
        n = z.dim(0);
        d = z.dim(1);
        hw = z.dim(2) * z.dim(3);
    } else {
        throw std::invalid_argument("prior_log_likelihood: rank-3 or rank-4 sample expected");
    }
    if (d != static_cast<std::size_t>(prior.latent_channels()))
        throw std::invalid_argument("prior_log_likelihood: latent channel mismatch");

    std::size_t comps = static_cast<std::size_t>(prior.categories()) *
                        static_cast<std::size_t>(prior.illuminations());
    double log_gamma = std::log(prior.mixture_weight());
    constexpr double kHalfLog2Pi = 0.9189385332046727; // 0.5*log(2*pi)

    double total = 0.0;
    std::vector<double> logs(comps);
    for (std::size_t img = 0; img < n; ++img)
        for (std::size_t k = 0; k < d; ++k)
            for (std::size_t px = 0; px < hw; ++px) {
                double v = z[(img * d + k) * hw + px];
                double mx = -1e300;
                for (std::size_t c = 0; c < comps; ++c) {
                    double mp = prior.mu.value()[c * d + k];
                    double lsp = prior.log_sigma.value()[c * d + k];
                    double diff = v - mp;
                    logs[c] = log_gamma - kHalfLog2Pi - 0.5 * lsp -
                              0.5 * diff * diff * std::exp(-lsp);
                    mx = std::max(mx, logs[c]);
                }
                double acc = 0.0;
                for (std::size_t c = 0; c < comps; ++c) acc += std::exp(logs[c] - mx);
                total += mx + std::log(acc);
            }
    return total / static_cast<double>(n * d * hw);
}

} // namespace vpfnet
