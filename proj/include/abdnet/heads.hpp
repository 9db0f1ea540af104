#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "abdnet/nn.hpp"
#include "abdnet/pointcloud.hpp"

namespace abd {

// ---------------------------------------------------------------------------
// per-point decomposition head
// ---------------------------------------------------------------------------

struct DecompositionConfig {
    std::size_t in = 512;
    std::size_t h1 = 256;
    std::size_t h2 = 128;
};

template <typename T>
struct DecompositionHeadT {
    LinearT<T> l1;
    BatchNormT<T> bn1;
    LinearT<T> l2;
    BatchNormT<T> bn2;
    LinearT<T> l3;  // -> 4 shape logits

    static DecompositionHeadT init(const DecompositionConfig& cfg, Rng& rng) {
        DecompositionHeadT h;
        h.l1 = LinearT<T>::init(cfg.h1, cfg.in, rng);
        h.bn1 = BatchNormT<T>::init(cfg.h1);
        h.l2 = LinearT<T>::init(cfg.h2, cfg.h1, rng);
        h.bn2 = BatchNormT<T>::init(cfg.h2);
        h.l3 = LinearT<T>::init(kNumShapeLabels, cfg.h2, rng);
        return h;
    }

    void collect_params(const std::string& prefix, NamedParams<T>& out) {
        l1.collect_params(prefix + ".l1", out);
        bn1.collect_params(prefix + ".bn1", out);
        l2.collect_params(prefix + ".l2", out);
        bn2.collect_params(prefix + ".bn2", out);
        l3.collect_params(prefix + ".l3", out);
    }
    void collect_buffers(const std::string& prefix, std::vector<std::pair<std::string, std::vector<T>*>>& out) {
        bn1.collect_buffers(prefix + ".bn1", out);
        bn2.collect_buffers(prefix + ".bn2", out);
    }
};

template <typename T>
struct DecompositionOutput {
    TensorT<T> logits;  // [R, 4]
    TensorT<T> probs;   // [R, 4], rows sum to 1
};

template <typename T>
DecompositionOutput<T> decompose_forward(const TensorT<T>& features, DecompositionHeadT<T>& head, Mode mode) {
    if (features.ndim() != 2 || features.dim(1) != head.l1.in_features()) {
        throw std::invalid_argument("decompose_forward: features " + shape_str(features.shape()) +
                                    " do not match head input width " + std::to_string(head.l1.in_features()));
    }
    TensorT<T> x = relu(batch_norm(linear(features, head.l1), head.bn1, mode));
    x = relu(batch_norm(linear(x, head.l2), head.bn2, mode));
    TensorT<T> logits = linear(x, head.l3);
    return {logits, softmax(logits, 1)};
}

/// Predicted labels from class probabilities (or logits): argmax per row,
/// ties resolved toward the lower label id.
template <typename T>
std::vector<ShapeLabel> predict_labels(const TensorT<T>& probs) {
    if (probs.ndim() != 2 || probs.dim(1) != kNumShapeLabels) {
        throw std::invalid_argument("predict_labels: expected [N,4], got " + shape_str(probs.shape()));
    }
    const std::size_t n = probs.dim(0);
    std::vector<ShapeLabel> out(n);
    const T* p = probs.values().data();
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < kNumShapeLabels; ++j) {
            if (p[i * kNumShapeLabels + j] > p[i * kNumShapeLabels + best]) best = j;
        }
        out[i] = static_cast<ShapeLabel>(best + 1);
    }
    return out;
}

// ---------------------------------------------------------------------------
// cross entropy on logits (log-sum-exp)
// ---------------------------------------------------------------------------

/// Mean of -log p(target) over rows, computed from logits via log-sum-exp.
/// Targets are 0-based class indices.
template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const std::vector<int>& targets) {
    if (logits.ndim() != 2) {
        throw std::invalid_argument("cross_entropy: logits must be 2D, got " + shape_str(logits.shape()));
    }
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    if (targets.size() != n) {
        throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                    std::to_string(n) + " rows");
    }
    for (int t : targets) {
        if (t < 0 || static_cast<std::size_t>(t) >= c) {
            throw std::invalid_argument("cross_entropy: target " + std::to_string(t) + " outside [0," +
                                        std::to_string(c) + ")");
        }
    }
    const T* x = logits.values().data();
    auto probs = std::make_shared<detail::Buf<T>>(n * c);
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        T mx = x[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[i * c + j]);
        double sum = 0;
        for (std::size_t j = 0; j < c; ++j) {
            const double e = std::exp(double(x[i * c + j] - mx));
            (*probs)[i * c + j] = static_cast<T>(e);
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = static_cast<T>((*probs)[i * c + j] * inv);
        total += std::log(sum) + double(mx) - double(x[i * c + targets[i]]);
    }
    auto nl = logits.node();
    auto tgt = std::make_shared<std::vector<int>>(targets);
    detail::Buf<T> loss_buf(1);
    loss_buf[0] = static_cast<T>(total / double(n));
    return detail::make_op<T>("cross_entropy", {1}, std::move(loss_buf), {nl},
                              [nl, probs, tgt, n, c](detail::Node<T>& self) {
                                  if (!nl->requires_grad) return;
                                  nl->ensure_grad();
                                  const T g = self.grad[0] / static_cast<T>(n);
                                  for (std::size_t i = 0; i < n; ++i) {
                                      for (std::size_t j = 0; j < c; ++j) {
                                          T d = (*probs)[i * c + j];
                                          if (static_cast<std::size_t>((*tgt)[i]) == j) d -= T(1);
                                          nl->grad[i * c + j] += g * d;
                                      }
                                  }
                              });
}

/// Decomposition loss over 1-based shape labels.
template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const std::vector<ShapeLabel>& labels) {
    std::vector<int> targets(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int v = static_cast<int>(labels[i]);
        if (v < 1 || v > 4) throw std::invalid_argument("cross_entropy: label " + std::to_string(v) + " outside {1..4}");
        targets[i] = v - 1;
    }
    return cross_entropy(logits, targets);
}

// ---------------------------------------------------------------------------
// frozen-backbone object classifier
// ---------------------------------------------------------------------------

/// Four shared MLP stages, each re-fed the raw point coordinates (and
/// normals when used), then a global max-pool and a final linear map.
struct ClassifierConfig {
    std::size_t feat_in = 512;
    std::array<std::size_t, 4> widths = {256, 256, 128, 128};
    std::size_t n_classes = 40;
    bool use_normals = false;

    std::size_t coord_dim() const { return use_normals ? 6 : 3; }
};

template <typename T>
struct ClassifierHeadT {
    std::vector<LinearT<T>> stages;       // 4 shared MLPs
    std::vector<BatchNormT<T>> stage_bn;
    LinearT<T> final;

    static ClassifierHeadT init(const ClassifierConfig& cfg, Rng& rng) {
        if (cfg.n_classes < 2) throw std::invalid_argument("classifier config: need at least 2 classes");
        ClassifierHeadT h;
        std::size_t in = cfg.feat_in;
        for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
            h.stages.push_back(LinearT<T>::init(cfg.widths[s], in + cfg.coord_dim(), rng));
            h.stage_bn.push_back(BatchNormT<T>::init(cfg.widths[s]));
            in = cfg.widths[s];
        }
        h.final = LinearT<T>::init(cfg.n_classes, in, rng);
        return h;
    }

    void collect_params(const std::string& prefix, NamedParams<T>& out) {
        for (std::size_t s = 0; s < stages.size(); ++s) {
            stages[s].collect_params(prefix + ".stage" + std::to_string(s), out);
            stage_bn[s].collect_params(prefix + ".bn" + std::to_string(s), out);
        }
        final.collect_params(prefix + ".final", out);
    }
    void collect_buffers(const std::string& prefix, std::vector<std::pair<std::string, std::vector<T>*>>& out) {
        for (std::size_t s = 0; s < stage_bn.size(); ++s) {
            stage_bn[s].collect_buffers(prefix + ".bn" + std::to_string(s), out);
        }
    }
};

/// feats [B,N,F] (attention features from a frozen backbone) and coords
/// [B,N,3|6] -> class logits [B, n_classes]. Also accepts unbatched [N,...].
template <typename T>
TensorT<T> classify_forward(const TensorT<T>& feats, const TensorT<T>& coords, ClassifierHeadT<T>& head,
                            const ClassifierConfig& cfg, Mode mode) {
    TensorT<T> x = feats.ndim() == 2 ? reshape(feats, {1, feats.dim(0), feats.dim(1)}) : feats;
    TensorT<T> xyz = coords.ndim() == 2 ? reshape(coords, {1, coords.dim(0), coords.dim(1)}) : coords;
    if (x.ndim() != 3 || x.dim(2) != cfg.feat_in) {
        throw std::invalid_argument("classify_forward: features " + shape_str(feats.shape()) +
                                    " do not match feat_in=" + std::to_string(cfg.feat_in));
    }
    if (xyz.ndim() != 3 || xyz.dim(0) != x.dim(0) || xyz.dim(1) != x.dim(1) || xyz.dim(2) != cfg.coord_dim()) {
        throw std::invalid_argument("classify_forward: coords " + shape_str(coords.shape()) +
                                    " do not match features " + shape_str(feats.shape()));
    }
    for (std::size_t s = 0; s < head.stages.size(); ++s) {
        x = concat<T>({x, xyz}, 2);
        x = relu(batch_norm(linear(x, head.stages[s]), head.stage_bn[s], mode));
    }
    return linear(max(x, 1), head.final);
}

// ---------------------------------------------------------------------------
// parameter accounting
// ---------------------------------------------------------------------------

template <typename T>
std::size_t count_parameters(const NamedParams<T>& params) {
    std::size_t total = 0;
    for (const auto& [name, p] : params) total += p.numel();
    return total;
}

}  // namespace abd
