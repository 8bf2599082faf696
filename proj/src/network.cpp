#include "vpfnet/network.hpp"

#include <stdexcept>

namespace vpfnet {

EncoderStage::EncoderStage(int in_ch, int out_ch, Rng& rng)
    : down_(in_ch, out_ch, 3, 2, 1, rng), bn1_(out_ch),
      res_(out_ch, out_ch, 3, 1, 1, rng), bn2_(out_ch) {}

ag::Var EncoderStage::forward(const ag::Var& x, bool training) {
    ag::Var y = ag::leaky_relu(bn1_.forward(down_.forward(x), training), 0.2);
    ag::Var r = bn2_.forward(res_.forward(y), training);
    return ag::leaky_relu(ag::add(y, r), 0.2);
}

void EncoderStage::params(const std::string& prefix, nn::ParamList& out) {
    down_.params(prefix + ".down", out);
    bn1_.params(prefix + ".bn1", out);
    res_.params(prefix + ".res", out);
    bn2_.params(prefix + ".bn2", out);
}

void EncoderStage::buffers(const std::string& prefix, nn::BufferList& out) {
    bn1_.buffers(prefix + ".bn1", out);
    bn2_.buffers(prefix + ".bn2", out);
}

Encoder::Encoder(const BackboneConfig& cfg, Rng& rng) {
    if (cfg.channels.size() != 5)
        throw std::invalid_argument("Encoder: backbone needs exactly 5 stages");
    int in_ch = 3;
    for (int ch : cfg.channels) {
        stages_.emplace_back(in_ch, ch, rng);
        in_ch = ch;
    }
}

std::vector<ag::Var> Encoder::forward(const ag::Var& img, bool training) {
    const auto& s = img.shape();
    if (s.size() != 4 || s[1] != 3)
        throw std::invalid_argument("Encoder: expects [N,3,H,W] input");
    if (s[2] % 32 != 0 || s[3] % 32 != 0)
        throw std::invalid_argument("input must be divisible by 32");
    std::vector<ag::Var> levels;
    ag::Var x = img;
    for (auto& stage : stages_) {
        x = stage.forward(x, training);
        levels.push_back(x);
    }
    return levels;
}

void Encoder::params(const std::string& prefix, nn::ParamList& out) {
    for (std::size_t i = 0; i < stages_.size(); ++i)
        stages_[i].params(prefix + ".stage" + std::to_string(i), out);
}

void Encoder::buffers(const std::string& prefix, nn::BufferList& out) {
    for (std::size_t i = 0; i < stages_.size(); ++i)
        stages_[i].buffers(prefix + ".stage" + std::to_string(i), out);
}

Decoder::Decoder(const std::vector<int>& stage_channels, int num_classes,
                 Skip0Position skip0, Rng& rng)
    : channels_(stage_channels), skip0_(skip0) {
    if (stage_channels.size() != 5)
        throw std::invalid_argument("Decoder: expects 5 pyramid levels");
    // Five 2x upsampling blocks: c4 -> c3 -> c2 -> c1 -> c0 -> c0.
    for (int i = 4; i >= 1; --i) {
        Block b;
        b.up = nn::ConvTranspose2d(stage_channels[i], stage_channels[i - 1], 2, rng);
        b.bn = nn::BatchNorm2d(stage_channels[i - 1]);
        blocks_.push_back(std::move(b));
    }
    Block last;
    last.up = nn::ConvTranspose2d(stage_channels[0], stage_channels[0], 2, rng);
    last.bn = nn::BatchNorm2d(stage_channels[0]);
    blocks_.push_back(std::move(last));
    if (skip0 == Skip0Position::AfterFinalUpsample) {
        skip0_up_.up = nn::ConvTranspose2d(stage_channels[0], stage_channels[0], 2, rng);
        skip0_up_.bn = nn::BatchNorm2d(stage_channels[0]);
    }
    classifier_ = nn::Conv2d(stage_channels[0], num_classes, 1, 1, 0, rng);
}

ag::Var Decoder::forward(const std::vector<ag::Var>& fused, bool training) {
    if (fused.size() != 5)
        throw std::invalid_argument("Decoder: expects 5 pyramid levels");
    for (int i = 0; i < 5; ++i)
        if (fused[i].shape()[1] != static_cast<std::size_t>(channels_[i]))
            throw std::invalid_argument("Decoder: channel mismatch at level " +
                                        std::to_string(i));

    ag::Var x = fused[4];
    for (int step = 0; step < 4; ++step) {
        Block& b = blocks_[step];
        x = ag::leaky_relu(b.bn.forward(b.up.forward(x), training), 0.2);
        int skip_level = 3 - step;
        if (skip_level == 0 && skip0_ == Skip0Position::AfterFinalUpsample)
            continue; // level-0 skip joins at full resolution instead
        x = ag::add(x, fused[skip_level]);
    }
    Block& last = blocks_[4];
    x = ag::leaky_relu(last.bn.forward(last.up.forward(x), training), 0.2);
    if (skip0_ == Skip0Position::AfterFinalUpsample) {
        ag::Var s0 = ag::leaky_relu(
            skip0_up_.bn.forward(skip0_up_.up.forward(fused[0]), training), 0.2);
        x = ag::add(x, s0);
    }
    return classifier_.forward(x);
}

void Decoder::params(const std::string& prefix, nn::ParamList& out) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        blocks_[i].up.params(prefix + ".up" + std::to_string(i), out);
        blocks_[i].bn.params(prefix + ".bn" + std::to_string(i), out);
    }
    if (skip0_ == Skip0Position::AfterFinalUpsample) {
        skip0_up_.up.params(prefix + ".skip0_up", out);
        skip0_up_.bn.params(prefix + ".skip0_bn", out);
    }
    classifier_.params(prefix + ".classifier", out);
}

void Decoder::buffers(const std::string& prefix, nn::BufferList& out) {
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i].bn.buffers(prefix + ".bn" + std::to_string(i), out);
    if (skip0_ == Skip0Position::AfterFinalUpsample)
        skip0_up_.bn.buffers(prefix + ".skip0_bn", out);
}

Tensor replicate_to_rgb(const Tensor& img) {
    if (img.rank() != 4)
        throw std::invalid_argument("replicate_to_rgb: rank-4 image expected");
    if (img.dim(1) == 3) return img;
    if (img.dim(1) != 1)
        throw std::invalid_argument("replicate_to_rgb: 1 or 3 channels expected");
    std::size_t n = img.dim(0), h = img.dim(2), w = img.dim(3), hw = h * w;
    Tensor out({n, 3, h, w});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < 3; ++c)
            std::copy_n(img.data() + b * hw, hw, out.data() + (b * 3 + c) * hw);
    return out;
}

IntTensor argmax_channels(const Tensor& confidence) {
    if (confidence.rank() != 3)
        throw std::invalid_argument("argmax_channels: [C,H,W] expected");
    std::size_t c = confidence.dim(0), h = confidence.dim(1), w = confidence.dim(2);
    std::size_t hw = h * w;
    IntTensor out({h, w});
    for (std::size_t px = 0; px < hw; ++px) {
        std::size_t best = 0;
        double bv = confidence[px];
        for (std::size_t ch = 1; ch < c; ++ch) {
            double v = confidence[ch * hw + px];
            if (v > bv) { // strict: ties keep the smaller class id
                bv = v;
                best = ch;
            }
        }
        out[px] = static_cast<std::int32_t>(best);
    }
    return out;
}

VpfNet::VpfNet(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    Rng rng(init_seed);
    enc_rgb_ = Encoder(cfg.backbone, rng);
    enc_thermal_ = Encoder(cfg.backbone, rng);
    for (int ch : cfg.backbone.channels) vffms_.emplace_back(ch, cfg.vffm, rng);
    decoder_ = Decoder(cfg.backbone.channels, cfg.num_classes, cfg.skip0, rng);
    prior_ = GmmPrior(cfg.prior_categories, cfg.prior_illuminations, cfg.vffm.d, rng);
}

StochasticForward VpfNet::forward(const Tensor& rgb, const Tensor& thermal,
                                  LatentMode mode, Rng* rng, bool training) {
    ag::Var rgb_in(replicate_to_rgb(rgb));
    ag::Var th_in(replicate_to_rgb(thermal));
    auto rgb_levels = enc_rgb_.forward(rgb_in, training);
    auto th_levels = enc_thermal_.forward(th_in, training);

    StochasticForward out;
    std::vector<ag::Var> fused(5);
    for (int i = 0; i < 5; ++i) {
        if (cfg_.fusion == FusionMode::Addition) {
            fused[i] = ag::add(rgb_levels[i], th_levels[i]);
            continue;
        }
        LatentMode level_mode =
            cfg_.fusion == FusionMode::Attention ? LatentMode::PosteriorMean : mode;
        auto v = vffms_[i].forward(rgb_levels[i], th_levels[i], level_mode, rng, training);
        fused[i] = v.fused;
        out.posteriors.push_back(v.posterior);
        out.factors.push_back(v.factor.value());
    }
    out.logits = decoder_.forward(fused, training);
    return out;
}

SegmentationOutput VpfNet::infer_averaged(const Tensor& rgb, const Tensor& thermal,
                                          int ns, std::uint64_t seed) {
    if (ns < 1) throw std::invalid_argument("infer_averaged: N_s must be >= 1");
    ag::NoGradGuard no_grad;
    Tensor rgb4 = rgb.rank() == 3
                      ? Tensor::from({1, rgb.dim(0), rgb.dim(1), rgb.dim(2)},
                                     std::vector<double>(rgb.data(), rgb.data() + rgb.size()))
                      : rgb;
    Tensor th4 = thermal.rank() == 3
                     ? Tensor::from({1, thermal.dim(0), thermal.dim(1), thermal.dim(2)},
                                    std::vector<double>(thermal.data(),
                                                        thermal.data() + thermal.size()))
                     : thermal;

    std::size_t h = rgb4.dim(2), w = rgb4.dim(3);
    std::size_t c = static_cast<std::size_t>(cfg_.num_classes);
    Tensor mean_conf({c, h, w});
    for (int pass = 0; pass < ns; ++pass) {
        Tensor conf;
        if (ns == 1) {
            auto f = forward(rgb4, th4, LatentMode::PosteriorMean, nullptr, false);
            conf = ag::softmax_channels(f.logits.value());
        } else {
            Rng pass_rng(mix_seed(seed, static_cast<std::uint64_t>(pass)));
            auto f = forward(rgb4, th4, LatentMode::Random, &pass_rng, false);
            conf = ag::softmax_channels(f.logits.value());
        }
        for (std::size_t i = 0; i < mean_conf.size(); ++i) mean_conf[i] += conf[i];
    }
    for (std::size_t i = 0; i < mean_conf.size(); ++i)
        mean_conf[i] /= static_cast<double>(ns);

    SegmentationOutput seg;
    seg.confidence = std::move(mean_conf);
    seg.labels = argmax_channels(seg.confidence);
    return seg;
}

SegmentationOutput VpfNet::infer_missing_modality(const Tensor* rgb, const Tensor* thermal,
                                                  MissingModality which, int ns,
                                                  std::uint64_t seed) {
    if (which == MissingModality::Rgb && !thermal)
        throw std::invalid_argument("infer_missing_modality: both modalities missing");
    if (which == MissingModality::Thermal && !rgb)
        throw std::invalid_argument("infer_missing_modality: both modalities missing");
    const Tensor* present = which == MissingModality::Rgb ? thermal : rgb;
    if (!present) throw std::invalid_argument("infer_missing_modality: no input");

    std::size_t h = present->rank() == 3 ? present->dim(1) : present->dim(2);
    std::size_t w = present->rank() == 3 ? present->dim(2) : present->dim(3);
    Tensor zeros_rgb({3, h, w});
    Tensor zeros_th({1, h, w});
    switch (which) {
    case MissingModality::Rgb:
        return infer_averaged(zeros_rgb, *thermal, ns, seed);
    case MissingModality::Thermal:
        return infer_averaged(*rgb, zeros_th, ns, seed);
    case MissingModality::None:
    default:
        if (!rgb || !thermal)
            throw std::invalid_argument("infer_missing_modality: missing input");
        return infer_averaged(*rgb, *thermal, ns, seed);
    }
}

nn::ParamList VpfNet::params() {
    nn::ParamList out;
    enc_rgb_.params("encoder_rgb", out);
    enc_thermal_.params("encoder_thermal", out);
    for (std::size_t i = 0; i < vffms_.size(); ++i)
        vffms_[i].params("vffm" + std::to_string(i), out);
    decoder_.params("decoder", out);
    prior_.params("prior", out);
    return out;
}

nn::BufferList VpfNet::buffers() {
    nn::BufferList out;
    enc_rgb_.buffers("encoder_rgb", out);
    enc_thermal_.buffers("encoder_thermal", out);
    for (std::size_t i = 0; i < vffms_.size(); ++i)
        vffms_[i].buffers("vffm" + std::to_string(i), out);
    decoder_.buffers("decoder", out);
    return out;
}

} // namespace vpfnet
