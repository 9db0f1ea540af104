#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "abdnet/rng.hpp"
#include "abdnet/tensor.hpp"

namespace abd {

enum class Mode { Train, Eval };

template <typename T>
using NamedParams = std::vector<std::pair<std::string, TensorT<T>>>;

/// He-initialized weight sample: Normal(0, sqrt(2/fan_in)).
template <typename T>
TensorT<T> he_init(Shape shape, std::size_t fan_in, Rng& rng) {
    const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<T> data(shape_numel(shape));
    for (T& x : data) x = static_cast<T>(rng.normal(0.0, sigma));
    return TensorT<T>::from(std::move(shape), std::move(data));
}

// ---------------------------------------------------------------------------
// Linear (shared MLP: the same affine map applied to every row/point)
// ---------------------------------------------------------------------------

template <typename T>
struct LinearT {
    TensorT<T> weight;  // [out, in]
    TensorT<T> bias;    // [out]

    static LinearT init(std::size_t out, std::size_t in, Rng& rng) {
        if (out == 0 || in == 0) throw std::invalid_argument("linear: zero dimension");
        LinearT l;
        l.weight = he_init<T>({out, in}, in, rng).set_requires_grad(true);
        l.bias = TensorT<T>::zeros({out}).set_requires_grad(true);
        return l;
    }

    std::size_t in_features() const { return weight.dim(1); }
    std::size_t out_features() const { return weight.dim(0); }

    void collect_params(const std::string& prefix, NamedParams<T>& out) {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }
};

/// y = x W^T + b, applied row-wise; x is [R,in] or [B,N,in].
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const LinearT<T>& l) {
    if (x.shape().back() != l.in_features()) {
        throw std::invalid_argument("linear: input width " + shape_str(x.shape()) + " does not match weight " +
                                    shape_str(l.weight.shape()));
    }
    if (x.ndim() == 3) {
        const std::size_t b = x.dim(0), n = x.dim(1);
        TensorT<T> flat = reshape(x, {b * n, l.in_features()});
        return reshape(add(matmul_nt(flat, l.weight), l.bias), {b, n, l.out_features()});
    }
    return add(matmul_nt(x, l.weight), l.bias);
}

using Linear = LinearT<float>;

// ---------------------------------------------------------------------------
// Batch normalization over all non-channel axes (channels last)
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormT {
    TensorT<T> gamma;  // [C]
    TensorT<T> beta;   // [C]
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T eps = static_cast<T>(1e-5);
    T momentum = static_cast<T>(0.1);

    static BatchNormT init(std::size_t channels) {
        BatchNormT bn;
        bn.gamma = TensorT<T>::full({channels}, T(1)).set_requires_grad(true);
        bn.beta = TensorT<T>::zeros({channels}).set_requires_grad(true);
        bn.running_mean.assign(channels, T(0));
        bn.running_var.assign(channels, T(1));
        return bn;
    }

    std::size_t channels() const { return gamma.numel(); }

    void collect_params(const std::string& prefix, NamedParams<T>& out) {
        out.emplace_back(prefix + ".gamma", gamma);
        out.emplace_back(prefix + ".beta", beta);
    }
    void collect_buffers(const std::string& prefix, std::vector<std::pair<std::string, std::vector<T>*>>& out) {
        out.emplace_back(prefix + ".running_mean", &running_mean);
        out.emplace_back(prefix + ".running_var", &running_var);
    }
};

/// Train mode normalizes with batch statistics over every non-channel axis
/// and updates running stats (biased variance for normalization, unbiased
/// for the running buffer). Eval mode is the affine map from running stats.
template <typename T>
TensorT<T> batch_norm(const TensorT<T>& x, BatchNormT<T>& layer, Mode mode) {
    const std::size_t c = layer.channels();
    if (x.ndim() < 2 || x.shape().back() != c) {
        throw std::invalid_argument("batch_norm: input " + shape_str(x.shape()) + " does not end in " +
                                    std::to_string(c) + " channels");
    }
    const std::size_t rows = x.numel() / c;
    const T* px = x.values().data();
    auto nx = x.node();
    auto ng = layer.gamma.node();
    auto nb = layer.beta.node();
    const T* g = ng->values.data();
    const T* b = nb->values.data();

    if (mode == Mode::Train) {
        if (rows < 2) {
            throw std::invalid_argument("batch_norm: degenerate batch of " + std::to_string(rows) +
                                        " occurrence(s) in train mode");
        }
        // fixed-block tree reduction: deterministic for any thread count
        constexpr std::size_t kBlocks = 16;
        const std::size_t block_rows = (rows + kBlocks - 1) / kBlocks;
        auto mean = std::make_shared<std::vector<T>>(c, T(0));
        auto inv = std::make_shared<std::vector<T>>(c);
        std::vector<T> var(c, T(0));
        {
            std::vector<T> partial(kBlocks * c, T(0));
#pragma omp parallel for schedule(static)
            for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(kBlocks); ++bi) {
                const std::size_t lo = bi * block_rows, hi = std::min(rows, lo + block_rows);
                for (std::size_t r = lo; r < hi; ++r) {
                    for (std::size_t j = 0; j < c; ++j) partial[bi * c + j] += px[r * c + j];
                }
            }
            for (std::size_t bi = 0; bi < kBlocks; ++bi) {
                for (std::size_t j = 0; j < c; ++j) (*mean)[j] += partial[bi * c + j];
            }
            for (std::size_t j = 0; j < c; ++j) (*mean)[j] /= static_cast<T>(rows);
            std::fill(partial.begin(), partial.end(), T(0));
#pragma omp parallel for schedule(static)
            for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(kBlocks); ++bi) {
                const std::size_t lo = bi * block_rows, hi = std::min(rows, lo + block_rows);
                for (std::size_t r = lo; r < hi; ++r) {
                    for (std::size_t j = 0; j < c; ++j) {
                        const T d = px[r * c + j] - (*mean)[j];
                        partial[bi * c + j] += d * d;
                    }
                }
            }
            for (std::size_t bi = 0; bi < kBlocks; ++bi) {
                for (std::size_t j = 0; j < c; ++j) var[j] += partial[bi * c + j];
            }
            for (std::size_t j = 0; j < c; ++j) var[j] /= static_cast<T>(rows);
        }
        for (std::size_t j = 0; j < c; ++j) (*inv)[j] = T(1) / std::sqrt(var[j] + layer.eps);

        const T m = layer.momentum;
        const T unbias = static_cast<T>(rows) / static_cast<T>(rows - 1);
        for (std::size_t j = 0; j < c; ++j) {
            layer.running_mean[j] = (T(1) - m) * layer.running_mean[j] + m * (*mean)[j];
            layer.running_var[j] = (T(1) - m) * layer.running_var[j] + m * var[j] * unbias;
        }

        auto xhat = std::make_shared<detail::Buf<T>>(x.numel());
        detail::Buf<T> out(x.numel());
#pragma omp parallel for schedule(static) if (rows* c > 65536)
        for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
            for (std::size_t j = 0; j < c; ++j) {
                const std::size_t k = r * c + j;
                (*xhat)[k] = (px[k] - (*mean)[j]) * (*inv)[j];
                out[k] = g[j] * (*xhat)[k] + b[j];
            }
        }
        return detail::make_op<T>(
            "batch_norm", x.shape(), std::move(out), {nx, ng, nb},
            [nx, ng, nb, xhat, inv, rows, c](detail::Node<T>& self) {
                const T* go = self.grad.data();
                constexpr std::size_t kBlocks = 16;
                const std::size_t block_rows = (rows + kBlocks - 1) / kBlocks;
                std::vector<T> s1(c, T(0)), s2(c, T(0));
                {
                    std::vector<T> partial(kBlocks * 2 * c, T(0));
#pragma omp parallel for schedule(static)
                    for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(kBlocks); ++bi) {
                        const std::size_t lo = bi * block_rows, hi = std::min(rows, lo + block_rows);
                        T* p1 = partial.data() + bi * 2 * c;
                        T* p2 = p1 + c;
                        for (std::size_t r = lo; r < hi; ++r) {
                            for (std::size_t j = 0; j < c; ++j) {
                                p1[j] += go[r * c + j];
                                p2[j] += go[r * c + j] * (*xhat)[r * c + j];
                            }
                        }
                    }
                    for (std::size_t bi = 0; bi < kBlocks; ++bi) {
                        for (std::size_t j = 0; j < c; ++j) {
                            s1[j] += partial[bi * 2 * c + j];
                            s2[j] += partial[bi * 2 * c + c + j];
                        }
                    }
                }
                if (nb->requires_grad) {
                    nb->ensure_grad();
                    for (std::size_t j = 0; j < c; ++j) nb->grad[j] += s1[j];
                }
                if (ng->requires_grad) {
                    ng->ensure_grad();
                    for (std::size_t j = 0; j < c; ++j) ng->grad[j] += s2[j];
                }
                if (nx->requires_grad) {
                    nx->ensure_grad();
                    const T* gv = ng->values.data();
                    const T invr = T(1) / static_cast<T>(rows);
                    T* dx = nx->grad.data();
#pragma omp parallel for schedule(static) if (rows* c > 65536)
                    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
                        for (std::size_t j = 0; j < c; ++j) {
                            const std::size_t k = r * c + j;
                            dx[k] += gv[j] * (*inv)[j] * invr *
                                     (static_cast<T>(rows) * go[k] - s1[j] - (*xhat)[k] * s2[j]);
                        }
                    }
                }
            });
    }

    // eval: deterministic per-channel affine map
    auto rmean = std::make_shared<std::vector<T>>(layer.running_mean);
    auto rinv = std::make_shared<std::vector<T>>(c);
    for (std::size_t j = 0; j < c; ++j) (*rinv)[j] = T(1) / std::sqrt(layer.running_var[j] + layer.eps);
    detail::Buf<T> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) {
            const std::size_t k = r * c + j;
            out[k] = g[j] * (px[k] - (*rmean)[j]) * (*rinv)[j] + b[j];
        }
    }
    return detail::make_op<T>(
        "batch_norm_eval", x.shape(), std::move(out), {nx, ng, nb},
        [nx, ng, nb, rmean, rinv, rows, c](detail::Node<T>& self) {
            const T* go = self.grad.data();
            const T* px = nx->values.data();
            if (nb->requires_grad) {
                nb->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < c; ++j) nb->grad[j] += go[r * c + j];
                }
            }
            if (ng->requires_grad) {
                ng->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < c; ++j) {
                        ng->grad[j] += go[r * c + j] * (px[r * c + j] - (*rmean)[j]) * (*rinv)[j];
                    }
                }
            }
            if (nx->requires_grad) {
                nx->ensure_grad();
                const T* gv = ng->values.data();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < c; ++j) {
                        nx->grad[r * c + j] += go[r * c + j] * gv[j] * (*rinv)[j];
                    }
                }
            }
        });
}

using BatchNorm = BatchNormT<float>;

// ---------------------------------------------------------------------------
// Multi-head scaled dot-product attention
// ---------------------------------------------------------------------------

struct AttentionConfig {
    std::size_t d_model = 512;
    std::size_t heads = 4;

    std::size_t head_dim() const { return d_model / heads; }
    void validate() const {
        if (heads == 0 || d_model == 0 || d_model % heads != 0) {
            throw std::invalid_argument("attention config: d_model " + std::to_string(d_model) +
                                        " not divisible into " + std::to_string(heads) + " heads");
        }
    }
};

template <typename T>
struct MhaWeightsT {
    LinearT<T> wq, wk, wv, wo;

    static MhaWeightsT init(const AttentionConfig& cfg, Rng& rng) {
        cfg.validate();
        MhaWeightsT w;
        w.wq = LinearT<T>::init(cfg.d_model, cfg.d_model, rng);
        w.wk = LinearT<T>::init(cfg.d_model, cfg.d_model, rng);
        w.wv = LinearT<T>::init(cfg.d_model, cfg.d_model, rng);
        w.wo = LinearT<T>::init(cfg.d_model, cfg.d_model, rng);
        return w;
    }

    void collect_params(const std::string& prefix, NamedParams<T>& out) {
        wq.collect_params(prefix + ".wq", out);
        wk.collect_params(prefix + ".wk", out);
        wv.collect_params(prefix + ".wv", out);
        wo.collect_params(prefix + ".wo", out);
    }
};

/// Attention weights captured for visualization: row-major [heads, N, N]
/// (or [B, heads, N, N] flattened when batched).
template <typename T>
struct AttentionCapture {
    std::size_t batch = 0, heads = 0, n = 0;
    std::vector<T> weights;
};

/// softmax(Q K^T / sqrt(d_k)) V across `cfg.heads` sub-spaces, concatenated
/// and linearly projected. Input [N,d_model] or [B,N,d_model]; output has
/// the input shape. No masking: every point attends to every point.
template <typename T>
TensorT<T> multi_head_attention(const TensorT<T>& x, const MhaWeightsT<T>& w, const AttentionConfig& cfg,
                                AttentionCapture<T>* capture = nullptr) {
    cfg.validate();
    if (x.shape().back() != cfg.d_model) {
        throw std::invalid_argument("multi_head_attention: input " + shape_str(x.shape()) + " does not match d_model " +
                                    std::to_string(cfg.d_model));
    }
    const bool flat = x.ndim() == 2;
    if (!flat && x.ndim() != 3) {
        throw std::invalid_argument("multi_head_attention: input must be 2D or 3D, got " + shape_str(x.shape()));
    }
    const std::size_t bsz = flat ? 1 : x.dim(0);
    const std::size_t n = flat ? x.dim(0) : x.dim(1);
    const std::size_t h = cfg.heads;
    const std::size_t dk = cfg.head_dim();

    TensorT<T> x3 = flat ? reshape(x, {1, n, cfg.d_model}) : x;
    auto split_heads = [&](const TensorT<T>& t) {
        return reshape(transpose(reshape(t, {bsz, n, h, dk}), {0, 2, 1, 3}), {bsz * h, n, dk});
    };
    TensorT<T> q = split_heads(linear(x3, w.wq));
    TensorT<T> k = split_heads(linear(x3, w.wk));
    TensorT<T> v = split_heads(linear(x3, w.wv));

    TensorT<T> scores = scale(matmul_nt(q, k), static_cast<T>(1.0 / std::sqrt(double(dk))));
    TensorT<T> attn = softmax(scores, 2);
    if (capture) {
        capture->batch = bsz;
        capture->heads = h;
        capture->n = n;
        capture->weights.assign(attn.values().begin(), attn.values().end());
    }
    TensorT<T> ctx = reshape(transpose(reshape(matmul(attn, v), {bsz, h, n, dk}), {0, 2, 1, 3}), {bsz, n, cfg.d_model});
    TensorT<T> out = linear(ctx, w.wo);
    return flat ? reshape(out, {n, cfg.d_model}) : out;
}

// ---------------------------------------------------------------------------
// Position-wise feed-forward block
// ---------------------------------------------------------------------------

template <typename T>
struct FeedForwardT {
    LinearT<T> l1;       // d_model -> d_ff
    BatchNormT<T> bn1;   // after the first fully connected layer
    LinearT<T> l2;       // d_ff -> d_model

    static FeedForwardT init(std::size_t d_model, std::size_t d_ff, Rng& rng) {
        FeedForwardT f;
        f.l1 = LinearT<T>::init(d_ff, d_model, rng);
        f.bn1 = BatchNormT<T>::init(d_ff);
        f.l2 = LinearT<T>::init(d_model, d_ff, rng);
        return f;
    }

    void collect_params(const std::string& prefix, NamedParams<T>& out) {
        l1.collect_params(prefix + ".l1", out);
        bn1.collect_params(prefix + ".bn1", out);
        l2.collect_params(prefix + ".l2", out);
    }
    void collect_buffers(const std::string& prefix, std::vector<std::pair<std::string, std::vector<T>*>>& out) {
        bn1.collect_buffers(prefix + ".bn1", out);
    }
};

template <typename T>
TensorT<T> feed_forward(const TensorT<T>& x, FeedForwardT<T>& w, Mode mode) {
    return linear(relu(batch_norm(linear(x, w.l1), w.bn1, mode)), w.l2);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct AdamStateT {
    T beta1 = static_cast<T>(0.9);
    T beta2 = static_cast<T>(0.999);
    T eps = static_cast<T>(1e-8);
    T lr_base = static_cast<T>(0.001);
    T lr_decay = static_cast<T>(0.5);
    std::size_t decay_period = 20;  // epochs between halvings
    std::size_t step = 0;
    std::vector<std::vector<T>> m, v;

    T lr_for_epoch(std::size_t epoch) const {
        return lr_base * static_cast<T>(std::pow(static_cast<double>(lr_decay), double(epoch / decay_period)));
    }
};

/// One bias-corrected Adam update over an ordered parameter list. Parameter
/// order must be stable across steps; it keys the m/v slots.
template <typename T>
void adam_step(NamedParams<T>& params, AdamStateT<T>& state, T lr) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].second.numel(), T(0));
            state.v[i].assign(params[i].second.numel(), T(0));
        }
    }
    if (state.m.size() != params.size()) {
        throw std::invalid_argument("adam_step: parameter count changed under the optimizer");
    }
    state.step += 1;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta1), double(state.step)));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta2), double(state.step)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, p] = params[i];
        if (!p.has_grad()) throw std::runtime_error("adam_step: missing gradient for parameter '" + name + "'");
        auto g = p.grad();
        auto w = p.values_mut();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = state.beta1 * m[j] + (T(1) - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (T(1) - state.beta2) * g[j] * g[j];
            const T mhat = m[j] / bc1;
            const T vhat = v[j] / bc2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

template <typename T>
void zero_grads(NamedParams<T>& params) {
    for (auto& [name, p] : params) p.zero_grad();
}

}  // namespace abd
