#include "vpfnet/autodiff.hpp"

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <thread>
#include <unordered_set>

extern "C" void openblas_set_num_threads(int num_threads);

namespace vpfnet::ag {

namespace {

thread_local bool g_grad_enabled = true;

// The GEMMs here are small; OpenBLAS thread fan-out loses outright, so BLAS
// is pinned to one thread and parallelism happens over fixed index ranges
// (batch images, long parameter loops). Fixed partitions keep every value's
// computation path identical regardless of scheduling, so results stay
// bit-deterministic.
int worker_count() {
    static int n = [] {
        openblas_set_num_threads(1);
        if (const char* env = std::getenv("VPFNET_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }();
    return n;
}

thread_local bool g_inside_pool_job = false;

/// Persistent worker pool executing [lo,hi) range slices. Falls back to the
/// calling thread when nested or contended.
class RangePool {
public:
    static RangePool& instance() {
        static RangePool pool(worker_count() - 1);
        return pool;
    }

    void run(std::size_t n, std::size_t max_slices,
             const std::function<void(std::size_t, std::size_t)>& fn) {
        std::size_t slices = std::min({max_slices, n, workers_.size() + 1});
        if (slices <= 1 || g_inside_pool_job || !submit_.try_lock()) {
            fn(0, n);
            return;
        }
        std::unique_lock submit_guard(submit_, std::adopt_lock);
        {
            std::lock_guard lock(m_);
            fn_ = &fn;
            ranges_.clear();
            std::size_t base = n / slices, extra = n % slices, start = 0;
            for (std::size_t s = 0; s < slices; ++s) {
                std::size_t count = base + (s < extra ? 1 : 0);
                ranges_.emplace_back(start, start + count);
                start += count;
            }
            next_range_ = 1; // range 0 runs on the calling thread
            pending_ = slices - 1;
            ++generation_;
        }
        cv_work_.notify_all();
        {
            g_inside_pool_job = true;
            fn(ranges_[0].first, ranges_[0].second);
            g_inside_pool_job = false;
        }
        std::unique_lock lock(m_);
        cv_done_.wait(lock, [&] { return pending_ == 0; });
        fn_ = nullptr;
    }

private:
    explicit RangePool(int workers) {
        for (int i = 0; i < workers; ++i)
            workers_.emplace_back([this] { worker_loop(); });
    }

    ~RangePool() {
        {
            std::lock_guard lock(m_);
            stop_ = true;
        }
        cv_work_.notify_all();
        for (auto& t : workers_) t.join();
    }

    void worker_loop() {
        g_inside_pool_job = true;
        std::uint64_t seen = 0;
        while (true) {
            std::unique_lock lock(m_);
            cv_work_.wait(lock, [&] { return stop_ || generation_ != seen; });
            if (stop_) return;
            seen = generation_;
            while (next_range_ < ranges_.size()) {
                std::size_t r = next_range_++;
                lock.unlock();
                (*fn_)(ranges_[r].first, ranges_[r].second);
                lock.lock();
                --pending_;
            }
            if (pending_ == 0) cv_done_.notify_one();
        }
    }

    std::vector<std::thread> workers_;
    std::mutex m_;
    std::mutex submit_;
    std::condition_variable cv_work_, cv_done_;
    const std::function<void(std::size_t, std::size_t)>* fn_ = nullptr;
    std::vector<std::pair<std::size_t, std::size_t>> ranges_;
    std::size_t next_range_ = 0;
    std::size_t pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

// fn(image) for each image; contiguous fixed blocks across the pool.
void for_each_image(int n, const std::function<void(int)>& fn) {
    RangePool::instance().run(
        static_cast<std::size_t>(n), static_cast<std::size_t>(worker_count()),
        [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) fn(static_cast<int>(i));
        });
}

// Reusable per-thread scratch; grows monotonically, never zero-refilled.
double* scratch(std::size_t idx, std::size_t count) {
    thread_local std::vector<double> bufs[2];
    auto& b = bufs[idx];
    if (b.size() < count) b.resize(count);
    return b.data();
}

// C[m,n] = alpha * op(A) * op(B) + beta * C, row-major.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
                ldb, beta, c, ldc);
}

// x [C,H,W] -> cols [C*kh*kw, Ho*Wo]
void im2col(const double* x, int c_in, int h, int w, int kh, int kw, int stride,
            int pad, int ho, int wo, double* cols) {
    for (int c = 0; c < c_in; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                double* row = cols + ((static_cast<std::size_t>(c) * kh + ky) * kw + kx) *
                                         (static_cast<std::size_t>(ho) * wo);
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) {
                        std::fill(row + static_cast<std::size_t>(oy) * wo,
                                  row + static_cast<std::size_t>(oy + 1) * wo, 0.0);
                        continue;
                    }
                    const double* src = x + (static_cast<std::size_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride + kx - pad;
                        row[static_cast<std::size_t>(oy) * wo + ox] =
                            (ix >= 0 && ix < w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

// cols [C*kh*kw, Ho*Wo] scatter-added back into x [C,H,W]
void col2im(const double* cols, int c_in, int h, int w, int kh, int kw,
            int stride, int pad, int ho, int wo, double* x) {
    for (int c = 0; c < c_in; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const double* row = cols + ((static_cast<std::size_t>(c) * kh + ky) * kw + kx) *
                                               (static_cast<std::size_t>(ho) * wo);
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    double* dst = x + (static_cast<std::size_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < w)
                            dst[ix] += row[static_cast<std::size_t>(oy) * wo + ox];
                    }
                }
            }
        }
    }
}

void check_finite(const Tensor& t, const char* what) {
    if (!t.all_finite())
        throw std::invalid_argument(std::string("non-finite values in ") + what);
}

Var make_result(Tensor value, std::vector<NodePtr> parents,
                std::function<void(Node&)> backward_fn) {
    Var out(std::move(value));
    bool rec = grad_enabled();
    if (rec) {
        bool any = false;
        for (const auto& p : parents)
            if (p && p->requires_grad) any = true;
        rec = any;
    }
    if (rec) {
        out.node_->requires_grad = true;
        out.node_->parents = std::move(parents);
        out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
}

} // namespace

void Node::accumulate(const Tensor& g) {
    if (grad.empty()) grad = Tensor(value.shape());
    if (!grad.same_shape(g))
        throw std::logic_error("gradient shape mismatch");
    double* d = grad.data();
    const double* s = g.data();
    for (std::size_t i = 0; i < grad.size(); ++i) d[i] += s[i];
}

Tensor& Node::ensure_grad() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
}

Var::Var(Tensor v, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(v);
    node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
    if (node_) node_->grad = Tensor();
}

double Var::item() const {
    if (!node_ || node_->value.size() != 1)
        throw std::logic_error("item() requires a size-1 tensor");
    return node_->value[0];
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Var& root) {
    if (!root.defined() || root.size() != 1)
        throw std::logic_error("backward() requires a defined scalar root");
    if (!root.node_->requires_grad) return;

    // Post-order over the requires_grad subgraph; reversed, every node is
    // processed after all of its consumers.
    std::vector<Node*> order;
    std::vector<std::pair<Node*, std::size_t>> stack;
    std::unordered_set<Node*> visited;
    stack.emplace_back(root.node_.get(), 0);
    visited.insert(root.node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p && p->requires_grad && visited.insert(p).second)
                stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node_->ensure_grad();
    root.node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise / structural
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value()))
        throw std::invalid_argument("add: shape mismatch");
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
    auto na = a.node_, nb = b.node_;
    return make_result(std::move(out), {na, nb}, [na, nb](Node& self) {
        if (na->requires_grad) na->accumulate(self.grad);
        if (nb->requires_grad) nb->accumulate(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value()))
        throw std::invalid_argument("sub: shape mismatch");
    Tensor out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    auto na = a.node_, nb = b.node_;
    return make_result(std::move(out), {na, nb}, [na, nb](Node& self) {
        if (na->requires_grad) na->accumulate(self.grad);
        if (nb->requires_grad) {
            Tensor neg(self.grad.shape());
            for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -self.grad[i];
            nb->accumulate(neg);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value()))
        throw std::invalid_argument("mul: shape mismatch");
    Tensor out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    auto na = a.node_, nb = b.node_;
    return make_result(std::move(out), {na, nb}, [na, nb](Node& self) {
        if (na->requires_grad) {
            Tensor g(self.grad.shape());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * nb->value[i];
            na->accumulate(g);
        }
        if (nb->requires_grad) {
            Tensor g(self.grad.shape());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * na->value[i];
            nb->accumulate(g);
        }
    });
}

Var scale(const Var& a, double c) {
    Tensor out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
    auto na = a.node_;
    return make_result(std::move(out), {na}, [na, c](Node& self) {
        Tensor g(self.grad.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * c;
        na->accumulate(g);
    });
}

Var add_scalar(const Var& a, double c) {
    Tensor out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + c;
    auto na = a.node_;
    return make_result(std::move(out), {na},
                       [na](Node& self) { na->accumulate(self.grad); });
}

Var sum(const Var& a) {
    Tensor out = Tensor::scalar(a.value().sum());
    auto na = a.node_;
    return make_result(std::move(out), {na}, [na](Node& self) {
        Tensor g(na->value.shape(), self.grad[0]);
        na->accumulate(g);
    });
}

Var mean(const Var& a) {
    double n = static_cast<double>(a.size());
    Tensor out = Tensor::scalar(a.value().sum() / n);
    auto na = a.node_;
    return make_result(std::move(out), {na}, [na, n](Node& self) {
        Tensor g(na->value.shape(), self.grad[0] / n);
        na->accumulate(g);
    });
}

Var leaky_relu(const Var& x, double negative_slope) {
    Tensor out(x.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = x.value()[i];
        out[i] = v >= 0.0 ? v : negative_slope * v;
    }
    auto nx = x.node_;
    return make_result(std::move(out), {nx}, [nx, negative_slope](Node& self) {
        Tensor g(self.grad.shape());
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] = self.grad[i] * (nx->value[i] >= 0.0 ? 1.0 : negative_slope);
        nx->accumulate(g);
    });
}

Var sigmoid(const Var& x) {
    Tensor out(x.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = 1.0 / (1.0 + std::exp(-x.value()[i]));
    Tensor cached = out;
    auto nx = x.node_;
    return make_result(std::move(out), {nx}, [nx, cached](Node& self) {
        Tensor g(self.grad.shape());
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] = self.grad[i] * cached[i] * (1.0 - cached[i]);
        nx->accumulate(g);
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] ||
        sa[3] != sb[3])
        throw std::invalid_argument("concat_channels: incompatible shapes");
    std::size_t n = sa[0], ca = sa[1], cb = sb[1], hw = sa[2] * sa[3];
    Tensor out({n, ca + cb, sa[2], sa[3]});
    for (std::size_t b_i = 0; b_i < n; ++b_i) {
        std::copy_n(a.value().data() + b_i * ca * hw, ca * hw,
                    out.data() + b_i * (ca + cb) * hw);
        std::copy_n(b.value().data() + b_i * cb * hw, cb * hw,
                    out.data() + b_i * (ca + cb) * hw + ca * hw);
    }
    auto na = a.node_, nb = b.node_;
    return make_result(std::move(out), {na, nb}, [na, nb, n, ca, cb, hw](Node& self) {
        if (na->requires_grad) {
            Tensor ga(na->value.shape());
            for (std::size_t b_i = 0; b_i < n; ++b_i)
                std::copy_n(self.grad.data() + b_i * (ca + cb) * hw, ca * hw,
                            ga.data() + b_i * ca * hw);
            na->accumulate(ga);
        }
        if (nb->requires_grad) {
            Tensor gb(nb->value.shape());
            for (std::size_t b_i = 0; b_i < n; ++b_i)
                std::copy_n(self.grad.data() + b_i * (ca + cb) * hw + ca * hw, cb * hw,
                            gb.data() + b_i * cb * hw);
            nb->accumulate(gb);
        }
    });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4)
        throw std::invalid_argument("conv2d: expects rank-4 input and weight");
    if (xs[1] != ws[1])
        throw std::invalid_argument("conv2d: input channel mismatch");
    int n = static_cast<int>(xs[0]), c_in = static_cast<int>(xs[1]);
    int h = static_cast<int>(xs[2]), wdt = static_cast<int>(xs[3]);
    int c_out = static_cast<int>(ws[0]);
    int kh = static_cast<int>(ws[2]), kw = static_cast<int>(ws[3]);
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (wdt + 2 * pad - kw) / stride + 1;
    if (ho < 1 || wo < 1)
        throw std::invalid_argument("conv2d: kernel larger than padded input");

    int k = c_in * kh * kw;
    int q = ho * wo;
    bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;
    Tensor out({static_cast<std::size_t>(n), static_cast<std::size_t>(c_out),
                static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
    for_each_image(n, [&](int img) {
        const double* xi = x.value().data() + static_cast<std::size_t>(img) * c_in * h * wdt;
        const double* cols = xi;
        if (!pointwise) {
            double* buf = scratch(0, static_cast<std::size_t>(k) * q);
            im2col(xi, c_in, h, wdt, kh, kw, stride, pad, ho, wo, buf);
            cols = buf;
        }
        double* y = out.data() + static_cast<std::size_t>(img) * c_out * q;
        gemm(false, false, c_out, q, k, 1.0, w.value().data(), k, cols, q, 0.0, y, q);
        if (b.defined())
            for (int c = 0; c < c_out; ++c) {
                double bias = b.value()[c];
                for (int p = 0; p < q; ++p) y[static_cast<std::size_t>(c) * q + p] += bias;
            }
    });

    auto nx = x.node_, nw = w.node_, nb = b.defined() ? b.node_ : nullptr;
    std::vector<NodePtr> parents = {nx, nw};
    if (nb) parents.push_back(nb);
    return make_result(
        std::move(out), std::move(parents),
        [nx, nw, nb, n, c_in, h, wdt, c_out, kh, kw, stride, pad, ho, wo, k, q,
         pointwise](Node& self) {
            Tensor dx = nx->requires_grad ? Tensor(nx->value.shape()) : Tensor();
            std::vector<Tensor> dw_part(
                nw->requires_grad ? static_cast<std::size_t>(n) : 0);
            Tensor db = (nb && nb->requires_grad) ? Tensor(nb->value.shape()) : Tensor();
            for_each_image(n, [&](int img) {
                const double* gy =
                    self.grad.data() + static_cast<std::size_t>(img) * c_out * q;
                if (nw->requires_grad) {
                    const double* xi =
                        nx->value.data() + static_cast<std::size_t>(img) * c_in * h * wdt;
                    const double* cols = xi;
                    if (!pointwise) {
                        double* buf = scratch(0, static_cast<std::size_t>(k) * q);
                        im2col(xi, c_in, h, wdt, kh, kw, stride, pad, ho, wo, buf);
                        cols = buf;
                    }
                    dw_part[static_cast<std::size_t>(img)] = Tensor(nw->value.shape());
                    gemm(false, true, c_out, k, q, 1.0, gy, q, cols, q, 0.0,
                         dw_part[static_cast<std::size_t>(img)].data(), k);
                }
                if (nx->requires_grad) {
                    double* dxi = dx.data() + static_cast<std::size_t>(img) * c_in * h * wdt;
                    if (pointwise) {
                        gemm(true, false, k, q, c_out, 1.0, nw->value.data(), k, gy, q,
                             0.0, dxi, q);
                    } else {
                        double* dcols = scratch(1, static_cast<std::size_t>(k) * q);
                        gemm(true, false, k, q, c_out, 1.0, nw->value.data(), k, gy, q,
                             0.0, dcols, q);
                        col2im(dcols, c_in, h, wdt, kh, kw, stride, pad, ho, wo, dxi);
                    }
                }
            });
            if (!db.empty())
                for (int img = 0; img < n; ++img) {
                    const double* gy =
                        self.grad.data() + static_cast<std::size_t>(img) * c_out * q;
                    for (int c = 0; c < c_out; ++c)
                        for (int p = 0; p < q; ++p)
                            db[c] += gy[static_cast<std::size_t>(c) * q + p];
                }
            if (nx->requires_grad) nx->accumulate(dx);
            if (nw->requires_grad) {
                Tensor dw(nw->value.shape());
                for (int img = 0; img < n; ++img)
                    for (std::size_t i = 0; i < dw.size(); ++i)
                        dw[i] += dw_part[static_cast<std::size_t>(img)][i];
                nw->accumulate(dw);
            }
            if (nb && nb->requires_grad) nb->accumulate(db);
        });
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4)
        throw std::invalid_argument("conv_transpose2d: expects rank-4 input and weight");
    if (xs[1] != ws[0])
        throw std::invalid_argument("conv_transpose2d: input channel mismatch");
    int kh = static_cast<int>(ws[2]), kw = static_cast<int>(ws[3]);
    if (kh != stride || kw != stride)
        throw std::invalid_argument("conv_transpose2d: kernel must equal stride");
    int n = static_cast<int>(xs[0]), c_in = static_cast<int>(xs[1]);
    int h = static_cast<int>(xs[2]), wdt = static_cast<int>(xs[3]);
    int c_out = static_cast<int>(ws[1]);
    int ho = h * stride, wo = wdt * stride;

    int k2 = c_out * kh * kw;
    int p = h * wdt;
    Tensor out({static_cast<std::size_t>(n), static_cast<std::size_t>(c_out),
                static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
    for_each_image(n, [&](int img) {
        // cols = W^T x; layout [Cout*kh*kw, H*W]
        double* cols = scratch(0, static_cast<std::size_t>(k2) * p);
        gemm(true, false, k2, p, c_in, 1.0, w.value().data(), k2,
             x.value().data() + static_cast<std::size_t>(img) * c_in * p, p, 0.0,
             cols, p);
        double* y = out.data() + static_cast<std::size_t>(img) * c_out * ho * wo;
        col2im(cols, c_out, ho, wo, kh, kw, stride, /*pad=*/0, h, wdt, y);
        if (b.defined())
            for (int c = 0; c < c_out; ++c) {
                double bias = b.value()[c];
                double* dst = y + static_cast<std::size_t>(c) * ho * wo;
                for (int i = 0; i < ho * wo; ++i) dst[i] += bias;
            }
    });

    auto nx = x.node_, nw = w.node_, nb = b.defined() ? b.node_ : nullptr;
    std::vector<NodePtr> parents = {nx, nw};
    if (nb) parents.push_back(nb);
    return make_result(
        std::move(out), std::move(parents),
        [nx, nw, nb, n, c_in, h, wdt, c_out, kh, kw, stride, ho, wo, k2,
         p](Node& self) {
            Tensor dx = nx->requires_grad ? Tensor(nx->value.shape()) : Tensor();
            std::vector<Tensor> dw_part(
                nw->requires_grad ? static_cast<std::size_t>(n) : 0);
            Tensor db = (nb && nb->requires_grad) ? Tensor(nb->value.shape()) : Tensor();
            for_each_image(n, [&](int img) {
                const double* gy =
                    self.grad.data() + static_cast<std::size_t>(img) * c_out * ho * wo;
                double* gcols = scratch(0, static_cast<std::size_t>(k2) * p);
                im2col(gy, c_out, ho, wo, kh, kw, stride, /*pad=*/0, h, wdt, gcols);
                if (nx->requires_grad)
                    gemm(false, false, c_in, p, k2, 1.0, nw->value.data(), k2, gcols, p,
                         0.0, dx.data() + static_cast<std::size_t>(img) * c_in * p, p);
                if (nw->requires_grad) {
                    dw_part[static_cast<std::size_t>(img)] = Tensor(nw->value.shape());
                    gemm(false, true, c_in, k2, p, 1.0,
                         nx->value.data() + static_cast<std::size_t>(img) * c_in * p, p,
                         gcols, p, 0.0, dw_part[static_cast<std::size_t>(img)].data(),
                         k2);
                }
            });
            if (!db.empty())
                for (int img = 0; img < n; ++img) {
                    const double* gy =
                        self.grad.data() + static_cast<std::size_t>(img) * c_out * ho * wo;
                    for (int c = 0; c < c_out; ++c)
                        for (int i = 0; i < ho * wo; ++i)
                            db[c] += gy[static_cast<std::size_t>(c) * ho * wo + i];
                }
            if (nx->requires_grad) nx->accumulate(dx);
            if (nw->requires_grad) {
                Tensor dw(nw->value.shape());
                for (int img = 0; img < n; ++img)
                    for (std::size_t i = 0; i < dw.size(); ++i)
                        dw[i] += dw_part[static_cast<std::size_t>(img)][i];
                nw->accumulate(dw);
            }
            if (nb && nb->requires_grad) nb->accumulate(db);
        });
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta,
                 Tensor& running_mean, Tensor& running_var, bool training,
                 double momentum, double eps) {
    const auto& xs = x.shape();
    if (xs.size() != 4) throw std::invalid_argument("batch_norm2d: expects rank-4 input");
    std::size_t n = xs[0], c = xs[1], hw = xs[2] * xs[3];
    if (gamma.size() != c || beta.size() != c || running_mean.size() != c ||
        running_var.size() != c)
        throw std::invalid_argument("batch_norm2d: channel parameter size mismatch");
    double m = static_cast<double>(n * hw);

    Tensor mean_c({c}), var_c({c});
    if (training) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (std::size_t img = 0; img < n; ++img) {
                const double* src = x.value().data() + (img * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) s += src[i];
            }
            mean_c[ch] = s / m;
            double v = 0.0;
            for (std::size_t img = 0; img < n; ++img) {
                const double* src = x.value().data() + (img * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    double d = src[i] - mean_c[ch];
                    v += d * d;
                }
            }
            var_c[ch] = v / m;
        }
        for (std::size_t ch = 0; ch < c; ++ch) {
            running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mean_c[ch];
            running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * var_c[ch];
        }
    } else {
        mean_c = running_mean;
        var_c = running_var;
    }

    Tensor inv_std({c});
    for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var_c[ch] + eps);

    Tensor xhat(x.value().shape());
    Tensor out(x.value().shape());
    for (std::size_t img = 0; img < n; ++img)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* src = x.value().data() + (img * c + ch) * hw;
            double* xh = xhat.data() + (img * c + ch) * hw;
            double* y = out.data() + (img * c + ch) * hw;
            double mu = mean_c[ch], is = inv_std[ch];
            double g = gamma.value()[ch], bt = beta.value()[ch];
            for (std::size_t i = 0; i < hw; ++i) {
                xh[i] = (src[i] - mu) * is;
                y[i] = g * xh[i] + bt;
            }
        }

    auto nx = x.node_, ng = gamma.node_, nb = beta.node_;
    return make_result(
        std::move(out), {nx, ng, nb},
        [nx, ng, nb, xhat, inv_std, n, c, hw, m, training](Node& self) {
            Tensor dgamma({c}), dbeta({c});
            for (std::size_t img = 0; img < n; ++img)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double* g = self.grad.data() + (img * c + ch) * hw;
                    const double* xh = xhat.data() + (img * c + ch) * hw;
                    double sg = 0.0, sgx = 0.0;
                    for (std::size_t i = 0; i < hw; ++i) {
                        sg += g[i];
                        sgx += g[i] * xh[i];
                    }
                    dbeta[ch] += sg;
                    dgamma[ch] += sgx;
                }
            if (nx->requires_grad) {
                Tensor dx(nx->value.shape());
                for (std::size_t img = 0; img < n; ++img)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const double* g = self.grad.data() + (img * c + ch) * hw;
                        const double* xh = xhat.data() + (img * c + ch) * hw;
                        double* d = dx.data() + (img * c + ch) * hw;
                        double gam = ng->value[ch], is = inv_std[ch];
                        if (training) {
                            double a = dbeta[ch] / m, bq = dgamma[ch] / m;
                            for (std::size_t i = 0; i < hw; ++i)
                                d[i] = gam * is * (g[i] - a - xh[i] * bq);
                        } else {
                            for (std::size_t i = 0; i < hw; ++i) d[i] = gam * is * g[i];
                        }
                    }
                nx->accumulate(dx);
            }
            if (ng->requires_grad) ng->accumulate(dgamma);
            if (nb->requires_grad) nb->accumulate(dbeta);
        });
}

// ---------------------------------------------------------------------------
// variational pieces
// ---------------------------------------------------------------------------

namespace {
constexpr double kLogVarClamp = 40.0;
}

Var reparameterize(const Var& mean, const Var& logvar, const Tensor& eps) {
    if (!mean.value().same_shape(logvar.value()) || !mean.value().same_shape(eps))
        throw std::invalid_argument("reparameterize: shape mismatch");
    Tensor out(mean.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double lv = std::clamp(logvar.value()[i], -kLogVarClamp, kLogVarClamp);
        out[i] = mean.value()[i] + std::exp(0.5 * lv) * eps[i];
    }
    auto nm = mean.node_, nl = logvar.node_;
    return make_result(std::move(out), {nm, nl}, [nm, nl, eps](Node& self) {
        if (nm->requires_grad) nm->accumulate(self.grad);
        if (nl->requires_grad) {
            Tensor g(self.grad.shape());
            for (std::size_t i = 0; i < g.size(); ++i) {
                double raw = nl->value[i];
                if (raw <= -kLogVarClamp || raw >= kLogVarClamp) {
                    g[i] = 0.0;
                } else {
                    g[i] = self.grad[i] * 0.5 * std::exp(0.5 * raw) * eps[i];
                }
            }
            nl->accumulate(g);
        }
    });
}

Var fuse_convex(const Var& fr, const Var& ft, const Var& w) {
    const auto& fs = fr.shape();
    const auto& ws = w.shape();
    if (!fr.value().same_shape(ft.value()))
        throw std::invalid_argument("modality shape mismatch");
    if (fs.size() != 4 || ws.size() != 4 || ws[0] != fs[0] || ws[1] != 1 ||
        ws[2] != fs[2] || ws[3] != fs[3])
        throw std::invalid_argument("fuse_convex: fusion factor shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i)
        if (!(w.value()[i] >= 0.0 && w.value()[i] <= 1.0))
            throw std::invalid_argument("invalid fusion factor");

    std::size_t n = fs[0], c = fs[1], hw = fs[2] * fs[3];
    Tensor out(fr.value().shape());
    for (std::size_t img = 0; img < n; ++img) {
        const double* wv = w.value().data() + img * hw;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* r = fr.value().data() + (img * c + ch) * hw;
            const double* t = ft.value().data() + (img * c + ch) * hw;
            double* y = out.data() + (img * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i)
                y[i] = wv[i] * r[i] + (1.0 - wv[i]) * t[i];
        }
    }

    auto nr = fr.node_, nt = ft.node_, nw = w.node_;
    return make_result(std::move(out), {nr, nt, nw}, [nr, nt, nw, n, c, hw](Node& self) {
        if (nr->requires_grad) {
            Tensor g(nr->value.shape());
            for (std::size_t img = 0; img < n; ++img) {
                const double* wv = nw->value.data() + img * hw;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double* gy = self.grad.data() + (img * c + ch) * hw;
                    double* d = g.data() + (img * c + ch) * hw;
                    for (std::size_t i = 0; i < hw; ++i) d[i] = gy[i] * wv[i];
                }
            }
            nr->accumulate(g);
        }
        if (nt->requires_grad) {
            Tensor g(nt->value.shape());
            for (std::size_t img = 0; img < n; ++img) {
                const double* wv = nw->value.data() + img * hw;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double* gy = self.grad.data() + (img * c + ch) * hw;
                    double* d = g.data() + (img * c + ch) * hw;
                    for (std::size_t i = 0; i < hw; ++i) d[i] = gy[i] * (1.0 - wv[i]);
                }
            }
            nt->accumulate(g);
        }
        if (nw->requires_grad) {
            Tensor g(nw->value.shape());
            for (std::size_t img = 0; img < n; ++img) {
                double* d = g.data() + img * hw;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double* gy = self.grad.data() + (img * c + ch) * hw;
                    const double* r = nr->value.data() + (img * c + ch) * hw;
                    const double* t = nt->value.data() + (img * c + ch) * hw;
                    for (std::size_t i = 0; i < hw; ++i) d[i] += gy[i] * (r[i] - t[i]);
                }
            }
            nw->accumulate(g);
        }
    });
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

Var weighted_cross_entropy(const Var& logits, const IntTensor& labels,
                           const std::vector<double>& class_weights) {
    const auto& ls = logits.shape();
    if (ls.size() != 4) throw std::invalid_argument("weighted_cross_entropy: rank-4 logits expected");
    std::size_t n = ls[0], c = ls[1], h = ls[2], w = ls[3];
    if (labels.rank() != 3 || labels.dim(0) != n || labels.dim(1) != h || labels.dim(2) != w)
        throw std::invalid_argument("weighted_cross_entropy: label shape mismatch");
    if (class_weights.size() != c)
        throw std::invalid_argument("weighted_cross_entropy: weight count mismatch");
    check_finite(logits.value(), "logits");

    std::size_t hw = h * w;
    Tensor probs(logits.value().shape());
    std::vector<double> wsum(n, 0.0);
    double loss = 0.0;
    std::vector<double> per_image(n, 0.0);
    for (std::size_t img = 0; img < n; ++img) {
        const double* l = logits.value().data() + img * c * hw;
        double* p = probs.data() + img * c * hw;
        double acc = 0.0;
        for (std::size_t px = 0; px < hw; ++px) {
            double mx = l[px];
            for (std::size_t ch = 1; ch < c; ++ch) mx = std::max(mx, l[ch * hw + px]);
            double z = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) z += std::exp(l[ch * hw + px] - mx);
            double lse = mx + std::log(z);
            for (std::size_t ch = 0; ch < c; ++ch)
                p[ch * hw + px] = std::exp(l[ch * hw + px] - lse);
            std::int32_t y = labels[img * hw + px];
            if (y < 0 || static_cast<std::size_t>(y) >= c)
                throw std::invalid_argument("label out of range");
            double wy = class_weights[static_cast<std::size_t>(y)];
            wsum[img] += wy;
            acc += wy * (lse - l[static_cast<std::size_t>(y) * hw + px]);
        }
        per_image[img] = acc / wsum[img];
        loss += per_image[img];
    }
    loss /= static_cast<double>(n);

    auto nl = logits.node_;
    return make_result(
        Tensor::scalar(loss), {nl},
        [nl, labels, class_weights, probs, wsum, n, c, hw](Node& self) {
            double g0 = self.grad[0];
            Tensor g(nl->value.shape());
            for (std::size_t img = 0; img < n; ++img) {
                const double* p = probs.data() + img * c * hw;
                double* d = g.data() + img * c * hw;
                double inv = g0 / (static_cast<double>(n) * wsum[img]);
                for (std::size_t px = 0; px < hw; ++px) {
                    std::int32_t y = labels[img * hw + px];
                    double wy = class_weights[static_cast<std::size_t>(y)];
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        double ind = (static_cast<std::size_t>(y) == ch) ? 1.0 : 0.0;
                        d[ch * hw + px] = inv * wy * (p[ch * hw + px] - ind);
                    }
                }
            }
            nl->accumulate(g);
        });
}

Var gmm_conditional_kl(const Var& mean, const Var& logvar, const Var& prior_mu,
                       const Var& prior_logsigma, const IntTensor& category,
                       const std::vector<int>& illumination) {
    const auto& ms = mean.shape();
    if (ms.size() != 4) throw std::invalid_argument("gmm_conditional_kl: rank-4 posterior expected");
    if (!mean.value().same_shape(logvar.value()))
        throw std::invalid_argument("gmm_conditional_kl: posterior shape mismatch");
    std::size_t n = ms[0], d = ms[1], h = ms[2], w = ms[3];
    if (category.rank() != 3 || category.dim(0) != n || category.dim(1) != h ||
        category.dim(2) != w)
        throw std::invalid_argument("gmm_conditional_kl: category map shape mismatch");
    if (illumination.size() != n)
        throw std::invalid_argument("gmm_conditional_kl: illumination count mismatch");
    const auto& ps = prior_mu.shape();
    if (ps.size() != 3 || !prior_mu.value().same_shape(prior_logsigma.value()) || ps[2] != d)
        throw std::invalid_argument("gmm_conditional_kl: prior shape mismatch");
    std::size_t cat_count = ps[0], illum_count = ps[1];

    std::size_t hw = h * w;
    double dd = static_cast<double>(d * hw);
    double total = 0.0;
    for (std::size_t img = 0; img < n; ++img) {
        int l = illumination[img];
        if (l < 0 || static_cast<std::size_t>(l) >= illum_count)
            throw std::invalid_argument("illumination out of range");
        double acc = 0.0;
        for (std::size_t px = 0; px < hw; ++px) {
            std::int32_t cat = category[img * hw + px];
            if (cat < 0 || static_cast<std::size_t>(cat) >= cat_count)
                throw std::invalid_argument("label out of range");
            std::size_t pr = (static_cast<std::size_t>(cat) * illum_count +
                              static_cast<std::size_t>(l)) * d;
            for (std::size_t k = 0; k < d; ++k) {
                double mq = mean.value()[(img * d + k) * hw + px];
                double lvq = logvar.value()[(img * d + k) * hw + px];
                double mp = prior_mu.value()[pr + k];
                double lsp = prior_logsigma.value()[pr + k];
                double diff = mp - mq;
                acc += 0.5 * (lsp - lvq + std::exp(lvq - lsp) +
                              diff * diff * std::exp(-lsp) - 1.0);
            }
        }
        total += acc / dd;
    }
    total /= static_cast<double>(n);

    auto nm = mean.node_, nl = logvar.node_, npm = prior_mu.node_, npl = prior_logsigma.node_;
    return make_result(
        Tensor::scalar(total), {nm, nl, npm, npl},
        [nm, nl, npm, npl, category, illumination, n, d, hw, dd,
         illum_count](Node& self) {
            double g0 = self.grad[0] / (static_cast<double>(n) * dd);
            Tensor gm = nm->requires_grad ? Tensor(nm->value.shape()) : Tensor();
            Tensor gl = nl->requires_grad ? Tensor(nl->value.shape()) : Tensor();
            Tensor gpm = npm->requires_grad ? Tensor(npm->value.shape()) : Tensor();
            Tensor gpl = npl->requires_grad ? Tensor(npl->value.shape()) : Tensor();
            for (std::size_t img = 0; img < n; ++img) {
                std::size_t l = static_cast<std::size_t>(illumination[img]);
                for (std::size_t px = 0; px < hw; ++px) {
                    std::size_t cat = static_cast<std::size_t>(category[img * hw + px]);
                    std::size_t pr = (cat * illum_count + l) * d;
                    for (std::size_t k = 0; k < d; ++k) {
                        std::size_t qi = (img * d + k) * hw + px;
                        double mq = nm->value[qi];
                        double lvq = nl->value[qi];
                        double mp = npm->value[pr + k];
                        double lsp = npl->value[pr + k];
                        double inl = std::exp(-lsp);
                        double vr = std::exp(lvq - lsp);
                        double diff = mp - mq;
                        if (!gm.empty()) gm[qi] += g0 * (mq - mp) * inl;
                        if (!gl.empty()) gl[qi] += g0 * 0.5 * (vr - 1.0);
                        if (!gpm.empty()) gpm[pr + k] += g0 * diff * inl;
                        if (!gpl.empty())
                            gpl[pr + k] += g0 * 0.5 * (1.0 - vr - diff * diff * inl);
                    }
                }
            }
            if (!gm.empty()) nm->accumulate(gm);
            if (!gl.empty()) nl->accumulate(gl);
            if (!gpm.empty()) npm->accumulate(gpm);
            if (!gpl.empty()) npl->accumulate(gpl);
        });
}

// ---------------------------------------------------------------------------
// plain-tensor helpers
// ---------------------------------------------------------------------------

Tensor softmax_channels(const Tensor& logits) {
    std::size_t n, c, hw;
    if (logits.rank() == 3) {
        n = 1;
        c = logits.dim(0);
        hw = logits.dim(1) * logits.dim(2);
    } else if (logits.rank() == 4) {
        n = logits.dim(0);
        c = logits.dim(1);
        hw = logits.dim(2) * logits.dim(3);
    } else {
        throw std::invalid_argument("softmax_channels: rank-3 or rank-4 expected");
    }
    Tensor out(logits.shape());
    for (std::size_t img = 0; img < n; ++img) {
        const double* l = logits.data() + img * c * hw;
        double* p = out.data() + img * c * hw;
        for (std::size_t px = 0; px < hw; ++px) {
            double mx = l[px];
            for (std::size_t ch = 1; ch < c; ++ch) mx = std::max(mx, l[ch * hw + px]);
            double z = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) z += std::exp(l[ch * hw + px] - mx);
            for (std::size_t ch = 0; ch < c; ++ch)
                p[ch * hw + px] = std::exp(l[ch * hw + px] - mx) / z;
        }
    }
    return out;
}

} // namespace vpfnet::ag
