#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "abdnet/nn.hpp"

namespace abd {

/// Attention Feature Encoder stack: 3 encoders of 4-head attention over all
/// points in the reference configuration.
struct AfeConfig {
    std::size_t encoders = 3;
    std::size_t heads = 4;
    std::size_t d_model = 512;
    std::size_t d_ff = 1024;

    AttentionConfig attention() const { return {d_model, heads}; }
    void validate() const {
        if (encoders == 0 || d_ff == 0) throw std::invalid_argument("afe config: zero dimension");
        attention().validate();
    }
};

template <typename T>
struct AfeEncoderT {
    MhaWeightsT<T> mha;
    BatchNormT<T> bn_attn;
    FeedForwardT<T> ffn;
    BatchNormT<T> bn_ffn;
};

template <typename T>
struct AfeWeightsT {
    std::vector<AfeEncoderT<T>> enc;

    static AfeWeightsT init(const AfeConfig& cfg, Rng& rng) {
        cfg.validate();
        AfeWeightsT w;
        w.enc.resize(cfg.encoders);
        for (auto& e : w.enc) {
            e.mha = MhaWeightsT<T>::init(cfg.attention(), rng);
            e.bn_attn = BatchNormT<T>::init(cfg.d_model);
            e.ffn = FeedForwardT<T>::init(cfg.d_model, cfg.d_ff, rng);
            e.bn_ffn = BatchNormT<T>::init(cfg.d_model);
        }
        return w;
    }

    void collect_params(const std::string& prefix, NamedParams<T>& out) {
        for (std::size_t i = 0; i < enc.size(); ++i) {
            const std::string p = prefix + ".enc" + std::to_string(i);
            enc[i].mha.collect_params(p + ".mha", out);
            enc[i].bn_attn.collect_params(p + ".bn_attn", out);
            enc[i].ffn.collect_params(p + ".ffn", out);
            enc[i].bn_ffn.collect_params(p + ".bn_ffn", out);
        }
    }
    void collect_buffers(const std::string& prefix, std::vector<std::pair<std::string, std::vector<T>*>>& out) {
        for (std::size_t i = 0; i < enc.size(); ++i) {
            const std::string p = prefix + ".enc" + std::to_string(i);
            enc[i].bn_attn.collect_buffers(p + ".bn_attn", out);
            enc[i].ffn.collect_buffers(p + ".ffn", out);
            enc[i].bn_ffn.collect_buffers(p + ".bn_ffn", out);
        }
    }
};

/// One attention matrix captured for visualization. `encoder` and `head`
/// are 1-based; `weights` is the row-stochastic [n, n] matrix, row-major.
struct AttentionRecord {
    std::size_t encoder = 0;
    std::size_t head = 0;
    std::size_t n = 0;
    std::vector<float> weights;

    float at(std::size_t query, std::size_t point) const { return weights[query * n + point]; }
};

/// Applies the encoder stack to local features. Input is [B,N,d_model] (or
/// [N,d_model], treated as one cloud); each encoder computes
/// x <- BN(x + MHA(x)); x <- BN(x + FFN(x)). Recording attention is
/// supported for single clouds only and costs O(heads * N^2) per encoder.
template <typename T>
TensorT<T> afe_forward(const TensorT<T>& local, AfeWeightsT<T>& w, const AfeConfig& cfg, Mode mode,
                       bool record = false, std::vector<AttentionRecord>* records = nullptr) {
    cfg.validate();
    if (w.enc.size() != cfg.encoders) throw std::invalid_argument("afe_forward: weights/config encoder mismatch");
    if (local.shape().back() != cfg.d_model) {
        throw std::invalid_argument("afe_forward: input " + shape_str(local.shape()) + " does not end in d_model=" +
                                    std::to_string(cfg.d_model));
    }
    const bool flat = local.ndim() == 2;
    TensorT<T> x = flat ? reshape(local, {1, local.dim(0), cfg.d_model}) : local;
    if (record && x.dim(0) != 1) {
        throw std::invalid_argument("afe_forward: attention recording supports a single cloud, got batch " +
                                    std::to_string(x.dim(0)));
    }
    const std::size_t n = x.dim(1);
    for (std::size_t e = 0; e < cfg.encoders; ++e) {
        AttentionCapture<T> cap;
        TensorT<T> a = multi_head_attention(x, w.enc[e].mha, cfg.attention(), record ? &cap : nullptr);
        x = batch_norm(add(x, a), w.enc[e].bn_attn, mode);
        TensorT<T> f = feed_forward(x, w.enc[e].ffn, mode);
        x = batch_norm(add(x, f), w.enc[e].bn_ffn, mode);
        if (record && records) {
            for (std::size_t h = 0; h < cfg.heads; ++h) {
                AttentionRecord rec;
                rec.encoder = e + 1;
                rec.head = h + 1;
                rec.n = n;
                rec.weights.resize(n * n);
                const T* src = cap.weights.data() + h * n * n;
                for (std::size_t i = 0; i < n * n; ++i) rec.weights[i] = static_cast<float>(src[i]);
                records->push_back(std::move(rec));
            }
        }
    }
    return flat ? reshape(x, {n, cfg.d_model}) : x;
}

/// Top-weighted points of one query row, per head of the chosen (1-based)
/// encoder. Descending weight, ties toward the lower point index.
inline std::vector<std::vector<std::pair<std::size_t, float>>> top_attention(
    const std::vector<AttentionRecord>& records, std::size_t query_idx, std::size_t encoder = 3,
    std::size_t top = 100) {
    std::vector<std::vector<std::pair<std::size_t, float>>> out;
    for (const auto& rec : records) {
        if (rec.encoder != encoder) continue;
        if (query_idx >= rec.n) {
            throw std::invalid_argument("top_attention: query index " + std::to_string(query_idx) +
                                        " out of range for " + std::to_string(rec.n) + " points");
        }
        if (top > rec.n) {
            throw std::invalid_argument("top_attention: top=" + std::to_string(top) + " exceeds " +
                                        std::to_string(rec.n) + " points");
        }
        std::vector<std::pair<std::size_t, float>> row(rec.n);
        for (std::size_t j = 0; j < rec.n; ++j) row[j] = {j, rec.at(query_idx, j)};
        std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) {
            return a.second > b.second || (a.second == b.second && a.first < b.first);
        });
        row.resize(top);
        out.push_back(std::move(row));
    }
    if (out.empty()) {
        throw std::invalid_argument("top_attention: no records for encoder " + std::to_string(encoder));
    }
    return out;
}

}  // namespace abd
