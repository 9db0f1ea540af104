#pragma once

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "abdnet/afe.hpp"
#include "abdnet/heads.hpp"
#include "abdnet/lpe.hpp"

namespace abd {

/// Full decomposer architecture: LPE -> AFE stack -> per-point head.
struct DecomposerConfig {
    LpeConfig lpe;
    AfeConfig afe;
    DecompositionConfig head;

    /// Paper-scale reference: C=64, K=32, C'=512, 3 encoders, h=4.
    static DecomposerConfig reference(bool use_normals = false) {
        DecomposerConfig c;
        c.lpe = {64, 32, 128, 512, use_normals};
        c.afe = {3, 4, 512, 1024};
        c.head = {512, 256, 128};
        return c;
    }

    /// Small configuration sized for CPU training on synthetic data.
    static DecomposerConfig desk(bool use_normals = false) {
        DecomposerConfig c;
        c.lpe = {32, 16, 64, 128, use_normals};
        c.afe = {2, 4, 128, 256};
        c.head = {128, 64, 32};
        return c;
    }

    bool use_normals() const { return lpe.use_normals; }
    std::size_t k() const { return lpe.k; }

    void validate() const {
        lpe.validate();
        afe.validate();
        if (lpe.out_feat != afe.d_model || afe.d_model != head.in) {
            throw std::invalid_argument("decomposer config: LPE out " + std::to_string(lpe.out_feat) +
                                        ", AFE d_model " + std::to_string(afe.d_model) + " and head in " +
                                        std::to_string(head.in) + " must agree");
        }
    }

    std::map<std::string, std::string> to_map() const {
        return {{"lpe.point_feat", std::to_string(lpe.point_feat)},
                {"lpe.k", std::to_string(lpe.k)},
                {"lpe.hidden", std::to_string(lpe.hidden)},
                {"lpe.out_feat", std::to_string(lpe.out_feat)},
                {"lpe.use_normals", lpe.use_normals ? "1" : "0"},
                {"afe.encoders", std::to_string(afe.encoders)},
                {"afe.heads", std::to_string(afe.heads)},
                {"afe.d_model", std::to_string(afe.d_model)},
                {"afe.d_ff", std::to_string(afe.d_ff)},
                {"head.h1", std::to_string(head.h1)},
                {"head.h2", std::to_string(head.h2)}};
    }

    static DecomposerConfig from_map(const std::map<std::string, std::string>& m) {
        auto get = [&](const char* key) -> std::size_t {
            auto it = m.find(key);
            if (it == m.end()) throw std::invalid_argument(std::string("decomposer config: missing key ") + key);
            return static_cast<std::size_t>(std::stoull(it->second));
        };
        DecomposerConfig c;
        c.lpe = {get("lpe.point_feat"), get("lpe.k"), get("lpe.hidden"), get("lpe.out_feat"),
                 get("lpe.use_normals") != 0};
        c.afe = {get("afe.encoders"), get("afe.heads"), get("afe.d_model"), get("afe.d_ff")};
        c.head = {c.afe.d_model, get("head.h1"), get("head.h2")};
        c.validate();
        return c;
    }
};

/// A batch of same-size clouds flattened to one tensor. Neighbor indices are
/// globalized (cloud b's point i becomes row b*N+i) so every per-point op
/// runs as one flat pass while neighborhoods stay within their cloud.
template <typename T>
struct BatchT {
    TensorT<T> points;   // [B*N, 3]
    TensorT<T> normals;  // [B*N, 3] when used, else default-constructed
    NeighborhoodIndex nbr;
    std::size_t batch_size = 0;
    std::size_t points_per_cloud = 0;
    std::vector<ShapeLabel> labels;  // flattened, empty when unlabeled
    std::vector<int> categories;     // per cloud, -1 when absent

    std::size_t rows() const { return batch_size * points_per_cloud; }

    TensorT<T> coords3d(bool with_normals) const {
        TensorT<T> c = with_normals ? concat<T>({points, normals}, 1) : points;
        return reshape(c, {batch_size, points_per_cloud, with_normals ? std::size_t(6) : std::size_t(3)});
    }
};

template <typename T>
BatchT<T> make_batch(std::span<const PointCloud> clouds, std::size_t k, bool use_normals) {
    if (clouds.empty()) throw std::invalid_argument("make_batch: no clouds");
    const std::size_t n = clouds[0].size();
    BatchT<T> b;
    b.batch_size = clouds.size();
    b.points_per_cloud = n;
    b.nbr.k = k;
    b.nbr.indices = IndexMatrix(b.rows(), k);
    b.nbr.offsets.resize(b.rows() * k * 3);
    std::vector<T> pts(b.rows() * 3);
    std::vector<T> nrm(use_normals ? b.rows() * 3 : 0);
    bool labeled = true;
    for (std::size_t ci = 0; ci < clouds.size(); ++ci) {
        const PointCloud& c = clouds[ci];
        if (c.size() != n) {
            throw std::invalid_argument("make_batch: cloud " + std::to_string(ci) + " has " +
                                        std::to_string(c.size()) + " points, expected " + std::to_string(n));
        }
        if (use_normals && !c.has_normals()) {
            throw std::invalid_argument("make_batch: cloud " + std::to_string(ci) + " lacks normals");
        }
        const NeighborhoodIndex local = build_neighborhoods(c, k);
        const std::int32_t base = static_cast<std::int32_t>(ci * n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                b.nbr.indices(ci * n + i, j) = local.indices(i, j) + base;
            }
        }
        std::copy(local.offsets.begin(), local.offsets.end(), b.nbr.offsets.begin() + ci * n * k * 3);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t d = 0; d < 3; ++d) pts[(ci * n + i) * 3 + d] = static_cast<T>(c.points[i][d]);
            if (use_normals) {
                for (std::size_t d = 0; d < 3; ++d) nrm[(ci * n + i) * 3 + d] = static_cast<T>(c.normals[i][d]);
            }
        }
        labeled = labeled && c.has_labels();
        b.categories.push_back(c.category);
    }
    b.points = TensorT<T>::from({b.rows(), 3}, std::move(pts));
    if (use_normals) b.normals = TensorT<T>::from({b.rows(), 3}, std::move(nrm));
    if (labeled) {
        b.labels.reserve(b.rows());
        for (const auto& c : clouds) b.labels.insert(b.labels.end(), c.labels.begin(), c.labels.end());
    }
    return b;
}

template <typename T>
struct DecomposerOutputT {
    TensorT<T> logits;    // [B*N, 4]
    TensorT<T> probs;     // [B*N, 4]
    TensorT<T> features;  // [B, N, d_model] attention features
    std::vector<AttentionRecord> records;
};

template <typename T>
struct DecomposerModelT {
    DecomposerConfig cfg;
    LpeWeightsT<T> lpe;
    AfeWeightsT<T> afe;
    DecompositionHeadT<T> head;

    static DecomposerModelT init(const DecomposerConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Rng rng(mix_seed(seed, 0x1157));
        DecomposerModelT m;
        m.cfg = cfg;
        m.lpe = LpeWeightsT<T>::init(cfg.lpe, rng);
        m.afe = AfeWeightsT<T>::init(cfg.afe, rng);
        m.head = DecompositionHeadT<T>::init(cfg.head, rng);
        return m;
    }

    NamedParams<T> named_params() {
        NamedParams<T> out;
        lpe.collect_params("lpe", out);
        afe.collect_params("afe", out);
        head.collect_params("head", out);
        return out;
    }

    std::vector<std::pair<std::string, std::vector<T>*>> named_buffers() {
        std::vector<std::pair<std::string, std::vector<T>*>> out;
        lpe.collect_buffers("lpe", out);
        afe.collect_buffers("afe", out);
        head.collect_buffers("head", out);
        return out;
    }

    void set_trainable(bool trainable) {
        for (auto& [name, p] : named_params()) p.set_requires_grad(trainable);
    }

    DecomposerOutputT<T> forward(const BatchT<T>& batch, Mode mode, bool record = false) {
        DecomposerOutputT<T> out;
        TensorT<T> local = lpe_forward(batch.points, batch.normals, batch.nbr, lpe, cfg.lpe, mode);
        TensorT<T> x3 = reshape(local, {batch.batch_size, batch.points_per_cloud, cfg.afe.d_model});
        out.features = afe_forward(x3, afe, cfg.afe, mode, record, &out.records);
        auto dec = decompose_forward(reshape(out.features, {batch.rows(), cfg.afe.d_model}), head, mode);
        out.logits = dec.logits;
        out.probs = dec.probs;
        return out;
    }
};

template <typename T>
struct ClassifierModelT {
    ClassifierConfig cfg;
    ClassifierHeadT<T> head;

    static ClassifierModelT init(const ClassifierConfig& cfg, std::uint64_t seed) {
        Rng rng(mix_seed(seed, 0xc1a5));
        ClassifierModelT m;
        m.cfg = cfg;
        m.head = ClassifierHeadT<T>::init(cfg, rng);
        return m;
    }

    NamedParams<T> named_params() {
        NamedParams<T> out;
        head.collect_params("classifier", out);
        return out;
    }
    std::vector<std::pair<std::string, std::vector<T>*>> named_buffers() {
        std::vector<std::pair<std::string, std::vector<T>*>> out;
        head.collect_buffers("classifier", out);
        return out;
    }

    TensorT<T> forward(const TensorT<T>& feats, const TensorT<T>& coords, Mode mode) {
        return classify_forward(feats, coords, head, cfg, mode);
    }

    std::map<std::string, std::string> config_map() const {
        return {{"classifier.feat_in", std::to_string(cfg.feat_in)},
                {"classifier.w0", std::to_string(cfg.widths[0])},
                {"classifier.w1", std::to_string(cfg.widths[1])},
                {"classifier.w2", std::to_string(cfg.widths[2])},
                {"classifier.w3", std::to_string(cfg.widths[3])},
                {"classifier.n_classes", std::to_string(cfg.n_classes)},
                {"classifier.use_normals", cfg.use_normals ? "1" : "0"}};
    }

    static ClassifierConfig config_from_map(const std::map<std::string, std::string>& m) {
        auto get = [&](const char* key) -> std::size_t {
            auto it = m.find(key);
            if (it == m.end()) throw std::invalid_argument(std::string("classifier config: missing key ") + key);
            return static_cast<std::size_t>(std::stoull(it->second));
        };
        ClassifierConfig c;
        c.feat_in = get("classifier.feat_in");
        c.widths = {get("classifier.w0"), get("classifier.w1"), get("classifier.w2"), get("classifier.w3")};
        c.n_classes = get("classifier.n_classes");
        c.use_normals = get("classifier.use_normals") != 0;
        return c;
    }
};

using DecomposerModel = DecomposerModelT<float>;
using ClassifierModel = ClassifierModelT<float>;

}  // namespace abd
