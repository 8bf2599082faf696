#pragma once

#include <string>
#include <vector>

#include "vpfnet/autodiff.hpp"
#include "vpfnet/rng.hpp"
#include "vpfnet/tensor.hpp"

namespace vpfnet::nn {

/// Named reference to a trainable tensor (optimizer / checkpoint handle).
struct ParamRef {
    std::string name;
    ag::Var var;
};

/// Named reference to a non-trainable state tensor (e.g. BN running stats).
struct BufferRef {
    std::string name;
    Tensor* tensor;
};

using ParamList = std::vector<ParamRef>;
using BufferList = std::vector<BufferRef>;

/// Fan-in scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    rng.fill_uniform(t, -limit, limit);
    return t;
}

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng,
           bool zero_bias = false)
        : stride_(stride), pad_(pad) {
        std::size_t fan_in = static_cast<std::size_t>(in_ch) * kernel * kernel;
        weight = ag::Var(uniform_init({static_cast<std::size_t>(out_ch),
                                       static_cast<std::size_t>(in_ch),
                                       static_cast<std::size_t>(kernel),
                                       static_cast<std::size_t>(kernel)},
                                      fan_in, rng),
                         true);
        Tensor b({static_cast<std::size_t>(out_ch)});
        if (!zero_bias) rng.fill_uniform(b, -1.0 / std::sqrt(static_cast<double>(fan_in)),
                                         1.0 / std::sqrt(static_cast<double>(fan_in)));
        bias = ag::Var(std::move(b), true);
    }

    ag::Var forward(const ag::Var& x) const { return ag::conv2d(x, weight, bias, stride_, pad_); }

    void params(const std::string& prefix, ParamList& out) {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }

    ag::Var weight, bias;
    int stride_ = 1, pad_ = 0;
};

class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(int in_ch, int out_ch, int kernel_stride, Rng& rng) : stride_(kernel_stride) {
        std::size_t fan_in = static_cast<std::size_t>(in_ch) * kernel_stride * kernel_stride;
        weight = ag::Var(uniform_init({static_cast<std::size_t>(in_ch),
                                       static_cast<std::size_t>(out_ch),
                                       static_cast<std::size_t>(kernel_stride),
                                       static_cast<std::size_t>(kernel_stride)},
                                      fan_in, rng),
                         true);
        Tensor b({static_cast<std::size_t>(out_ch)});
        rng.fill_uniform(b, -1.0 / std::sqrt(static_cast<double>(fan_in)),
                         1.0 / std::sqrt(static_cast<double>(fan_in)));
        bias = ag::Var(std::move(b), true);
    }

    ag::Var forward(const ag::Var& x) const { return ag::conv_transpose2d(x, weight, bias, stride_); }

    void params(const std::string& prefix, ParamList& out) {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }

    ag::Var weight, bias;
    int stride_ = 2;
};

class BatchNorm2d {
public:
    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5)
        : momentum_(momentum), eps_(eps) {
        gamma = ag::Var(Tensor({static_cast<std::size_t>(channels)}, 1.0), true);
        beta = ag::Var(Tensor({static_cast<std::size_t>(channels)}, 0.0), true);
        running_mean = Tensor({static_cast<std::size_t>(channels)}, 0.0);
        running_var = Tensor({static_cast<std::size_t>(channels)}, 1.0);
    }

    ag::Var forward(const ag::Var& x, bool training) {
        return ag::batch_norm2d(x, gamma, beta, running_mean, running_var, training,
                                momentum_, eps_);
    }

    void params(const std::string& prefix, ParamList& out) {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }

    void buffers(const std::string& prefix, BufferList& out) {
        out.push_back({prefix + ".running_mean", &running_mean});
        out.push_back({prefix + ".running_var", &running_var});
    }

    ag::Var gamma, beta;
    Tensor running_mean, running_var;
    double momentum_ = 0.1, eps_ = 1e-5;
};

/// AdamW: adaptive moments with decoupled weight decay. The optimizer plug
/// point for training; state is exposed so checkpoints can carry it.
class AdamW {
public:
    struct Settings {
        double lr = 5e-5;
        double weight_decay = 5e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    AdamW() = default;
    AdamW(ParamList params, Settings s) : params_(std::move(params)), s_(s) {
        for (auto& p : params_) {
            m_.emplace_back(p.var.value().shape());
            v_.emplace_back(p.var.value().shape());
        }
    }

    void step() {
        ++t_;
        double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i].var;
            if (!p.node_->has_grad()) continue;
            Tensor& g = p.grad();
            Tensor& val = p.value();
            for (std::size_t j = 0; j < val.size(); ++j) {
                m_[i][j] = s_.beta1 * m_[i][j] + (1.0 - s_.beta1) * g[j];
                v_[i][j] = s_.beta2 * v_[i][j] + (1.0 - s_.beta2) * g[j] * g[j];
                double mhat = m_[i][j] / bc1;
                double vhat = v_[i][j] / bc2;
                val[j] -= s_.lr * (mhat / (std::sqrt(vhat) + s_.eps) + s_.weight_decay * val[j]);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.var.zero_grad();
    }

    std::uint64_t step_count() const { return t_; }
    void set_step_count(std::uint64_t t) { t_ = t; }
    const ParamList& params() const { return params_; }
    Tensor& moment1(std::size_t i) { return m_[i]; }
    Tensor& moment2(std::size_t i) { return v_[i]; }

private:
    ParamList params_;
    Settings s_;
    std::vector<Tensor> m_, v_;
    std::uint64_t t_ = 0;
};

} // namespace vpfnet::nn
