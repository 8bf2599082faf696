#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "vpfnet/tensor.hpp"

namespace vpfnet::ag {

class Node;
using NodePtr = std::shared_ptr<Node>;

/// Graph node: a value plus (optionally) the recipe to push gradients to its
/// inputs. Parameters are long-lived leaf nodes; intermediate nodes live as
/// long as someone holds the Var returned by an op.
class Node {
public:
    Tensor value;
    Tensor grad; // lazily allocated on first accumulation
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;

    void accumulate(const Tensor& g);
    bool has_grad() const { return !grad.empty(); }
    Tensor& ensure_grad();
};

/// Value-semantics handle to a Node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad() { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void zero_grad();

    const std::vector<std::size_t>& shape() const { return node_->value.shape(); }
    std::size_t size() const { return node_->value.size(); }

    NodePtr node_; // exposed to op implementations

    double item() const; // scalar value (size-1 tensors)
};

/// Thread-local switch: when off, ops do not record the backward graph.
bool grad_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Reverse-mode sweep from a scalar root. Gradients accumulate into every
/// reachable node with requires_grad (parameters keep theirs until zeroed).
void backward(const Var& root);

// ---- elementwise / structural ops ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var sum(const Var& a);
Var mean(const Var& a);
Var leaky_relu(const Var& x, double negative_slope);
Var sigmoid(const Var& x);
Var concat_channels(const Var& a, const Var& b); // [N,Ca,H,W] + [N,Cb,H,W]

// ---- convolution ----
// x [N,Cin,H,W], w [Cout,Cin,kh,kw], b [Cout]; symmetric padding, square stride.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// x [N,Cin,H,W], w [Cin,Cout,k,k], b [Cout]; stride == kernel, no padding
// (exact integer upsampling, output spatial size = input * stride).
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride);

// ---- normalization ----
// Training mode normalizes with batch statistics over (N,H,W) per channel and
// updates the caller-owned running buffers; eval mode uses the buffers.
Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta,
                 Tensor& running_mean, Tensor& running_var,
                 bool training, double momentum = 0.1, double eps = 1e-5);

// ---- variational pieces ----
// mean + exp(0.5*clamp(logvar)) * eps, elementwise; logvar clamped to +-40
// before exponentiation.
Var reparameterize(const Var& mean, const Var& logvar, const Tensor& eps);

// w [N,1,H,W] in [0,1]; out = w*fr + (1-w)*ft with w broadcast over channels.
Var fuse_convex(const Var& fr, const Var& ft, const Var& w);

// Per-image weighted mean of -log softmax at the target class, normalized by
// the in-image weight sum, then averaged over the batch.
// logits [N,C,H,W], labels [N,H,W], class_weights size C.
Var weighted_cross_entropy(const Var& logits, const IntTensor& labels,
                           const std::vector<double>& class_weights);

// Closed-form KL between the diagonal-Gaussian posterior and the mixture
// component selected per pixel by (category, illumination); mean over latent
// elements per image, then over the batch.
// mean/logvar [N,d,h,w], prior_mu/prior_logsigma [C,L,d], category [N,h,w].
Var gmm_conditional_kl(const Var& mean, const Var& logvar,
                       const Var& prior_mu, const Var& prior_logsigma,
                       const IntTensor& category, const std::vector<int>& illumination);

// ---- plain-tensor helpers (no graph) ----
// Channel softmax of logits [C,H,W] or [N,C,H,W], written per pixel.
Tensor softmax_channels(const Tensor& logits);

} // namespace vpfnet::ag
