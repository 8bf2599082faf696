#pragma once

#include <array>
#include <vector>

#include "vpfnet/prior.hpp"
#include "vpfnet/vffm.hpp"

namespace vpfnet {

struct BackboneConfig {
    enum class Variant { Tiny, Resnet50Shaped };
    Variant variant = Variant::Tiny;
    std::vector<int> channels = {16, 32, 64, 128, 256}; // one per stage, 5 stages

    static BackboneConfig tiny() { return BackboneConfig{}; }
    static BackboneConfig resnet50_shaped() {
        return BackboneConfig{Variant::Resnet50Shaped, {64, 256, 512, 1024, 2048}};
    }
};

enum class FusionMode {
    Probabilistic, // latent draw per VFFM
    Attention,     // posterior mean, no sampling
    Addition       // elementwise F_R + F_T, VFFM bypassed
};

enum class Skip0Position { BeforeFinalUpsample, AfterFinalUpsample };

enum class MissingModality { None, Rgb, Thermal };

struct ModelConfig {
    BackboneConfig backbone;
    VffmConfig vffm;
    int num_classes = 4;
    int prior_categories = 4;
    int prior_illuminations = 2;
    FusionMode fusion = FusionMode::Probabilistic;
    Skip0Position skip0 = Skip0Position::BeforeFinalUpsample;
};

struct SegmentationOutput {
    Tensor confidence; // [C,H,W], per-pixel softmax distribution
    IntTensor labels;  // [H,W], argmax with ties to the smallest class id
};

/// One stage: stride-2 conv + BN + leaky, then a residual 3x3 conv block.
class EncoderStage {
public:
    EncoderStage() = default;
    EncoderStage(int in_ch, int out_ch, Rng& rng);
    ag::Var forward(const ag::Var& x, bool training);
    void params(const std::string& prefix, nn::ParamList& out);
    void buffers(const std::string& prefix, nn::BufferList& out);

private:
    nn::Conv2d down_;
    nn::BatchNorm2d bn1_;
    nn::Conv2d res_;
    nn::BatchNorm2d bn2_;
};

class Encoder {
public:
    Encoder() = default;
    Encoder(const BackboneConfig& cfg, Rng& rng);
    /// img [N,3,H,W], H and W divisible by 32 -> 5 feature maps at strides 2..32.
    std::vector<ag::Var> forward(const ag::Var& img, bool training);
    void params(const std::string& prefix, nn::ParamList& out);
    void buffers(const std::string& prefix, nn::BufferList& out);

private:
    std::vector<EncoderStage> stages_;
};

class Decoder {
public:
    Decoder() = default;
    Decoder(const std::vector<int>& stage_channels, int num_classes,
            Skip0Position skip0, Rng& rng);
    /// Fused pyramid (levels 0..4) -> logits [N,C,H,W] at full resolution.
    ag::Var forward(const std::vector<ag::Var>& fused, bool training);
    void params(const std::string& prefix, nn::ParamList& out);
    void buffers(const std::string& prefix, nn::BufferList& out);

private:
    struct Block {
        nn::ConvTranspose2d up;
        nn::BatchNorm2d bn;
    };
    std::vector<Block> blocks_; // 5 upsampling blocks
    Block skip0_up_;            // used by the AfterFinalUpsample variant
    nn::Conv2d classifier_;
    std::vector<int> channels_;
    Skip0Position skip0_ = Skip0Position::BeforeFinalUpsample;
};

struct StochasticForward {
    ag::Var logits;
    std::vector<LatentPosterior> posteriors; // one per level
    std::vector<Tensor> factors;             // W map values per level [N,1,h,w]
};

/// Two symmetric encoders, per-level variational fusion, skip-connected
/// decoder, shared GMM prior, N_s-sample averaged inference.
class VpfNet {
public:
    VpfNet() = default;
    VpfNet(const ModelConfig& cfg, std::uint64_t init_seed);

    /// Batched training/eval pass. rgb [N,3,H,W] (or [N,1,H,W], replicated);
    /// thermal likewise. One latent draw per level in Random mode.
    StochasticForward forward(const Tensor& rgb, const Tensor& thermal,
                              LatentMode mode, Rng* rng, bool training);

    /// Single-image inference. ns == 1 uses the posterior mean; ns > 1
    /// averages softmax confidence maps over ns seeded stochastic passes.
    SegmentationOutput infer_averaged(const Tensor& rgb, const Tensor& thermal,
                                      int ns, std::uint64_t seed);

    /// Missing-modality protocol: the absent input is replaced by zeros.
    SegmentationOutput infer_missing_modality(const Tensor* rgb, const Tensor* thermal,
                                              MissingModality which, int ns,
                                              std::uint64_t seed);

    nn::ParamList params();
    nn::BufferList buffers();
    GmmPrior& prior() { return prior_; }
    const GmmPrior& prior() const { return prior_; }
    const ModelConfig& config() const { return cfg_; }
    std::vector<Vffm>& vffms() { return vffms_; }

private:
    ModelConfig cfg_;
    Encoder enc_rgb_, enc_thermal_;
    std::vector<Vffm> vffms_;
    Decoder decoder_;
    GmmPrior prior_;
};

/// [N,1,H,W] -> [N,3,H,W]; 3-channel input passes through.
Tensor replicate_to_rgb(const Tensor& img);

/// Argmax over channels with ties broken toward the smallest class id.
IntTensor argmax_channels(const Tensor& confidence);

} // namespace vpfnet
