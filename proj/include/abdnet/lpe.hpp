#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "abdnet/neighborhood.hpp"
#include "abdnet/nn.hpp"

namespace abd {

/// Local Proximity Encapsulator dimensions. The reference configuration is
/// C=64 point features, K=32 neighbors, C'=512 output features.
struct LpeConfig {
    std::size_t point_feat = 64;   // C
    std::size_t k = 32;            // K
    std::size_t hidden = 128;      // width of the first neighbor MLP
    std::size_t out_feat = 512;    // C'
    bool use_normals = false;

    std::size_t lift_in() const { return use_normals ? 6 : 3; }
    std::size_t concat_width() const { return point_feat + 3 + (use_normals ? 3 : 0); }
    void validate() const {
        if (point_feat == 0 || k == 0 || hidden == 0 || out_feat == 0) {
            throw std::invalid_argument("lpe config: zero dimension");
        }
    }
};

template <typename T>
struct LpeWeightsT {
    LinearT<T> lift;         // 3(|6) -> C
    BatchNormT<T> bn_lift;
    LinearT<T> n1;           // C+3(+3) -> hidden
    BatchNormT<T> bn1;
    LinearT<T> n2;           // hidden -> C'
    BatchNormT<T> bn2;

    static LpeWeightsT init(const LpeConfig& cfg, Rng& rng) {
        cfg.validate();
        LpeWeightsT w;
        w.lift = LinearT<T>::init(cfg.point_feat, cfg.lift_in(), rng);
        w.bn_lift = BatchNormT<T>::init(cfg.point_feat);
        w.n1 = LinearT<T>::init(cfg.hidden, cfg.concat_width(), rng);
        w.bn1 = BatchNormT<T>::init(cfg.hidden);
        w.n2 = LinearT<T>::init(cfg.out_feat, cfg.hidden, rng);
        w.bn2 = BatchNormT<T>::init(cfg.out_feat);
        return w;
    }

    void collect_params(const std::string& prefix, NamedParams<T>& out) {
        lift.collect_params(prefix + ".lift", out);
        bn_lift.collect_params(prefix + ".bn_lift", out);
        n1.collect_params(prefix + ".n1", out);
        bn1.collect_params(prefix + ".bn1", out);
        n2.collect_params(prefix + ".n2", out);
        bn2.collect_params(prefix + ".bn2", out);
    }
    void collect_buffers(const std::string& prefix, std::vector<std::pair<std::string, std::vector<T>*>>& out) {
        bn_lift.collect_buffers(prefix + ".bn_lift", out);
        bn1.collect_buffers(prefix + ".bn1", out);
        bn2.collect_buffers(prefix + ".bn2", out);
    }
};

namespace detail {

/// Reorders every neighbor list to ascending point index, moving the offset
/// (and any gathered side data) along. A canonical order makes the forward
/// pass bit-identical under any permutation of the input neighbor lists.
inline void canonicalize_neighbors(const NeighborhoodIndex& nbr, IndexMatrix& idx_out,
                                   std::vector<float>& offsets_out) {
    const std::size_t rows = nbr.indices.rows, k = nbr.indices.cols;
    idx_out = IndexMatrix(rows, k);
    offsets_out.resize(rows * k * 3);
    std::vector<std::size_t> order(k);
    for (std::size_t i = 0; i < rows; ++i) {
        std::iota(order.begin(), order.end(), std::size_t(0));
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return nbr.indices(i, a) < nbr.indices(i, b); });
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t src = order[j];
            idx_out(i, j) = nbr.indices(i, src);
            for (std::size_t c = 0; c < 3; ++c) {
                offsets_out[(i * k + j) * 3 + c] = nbr.offsets[(i * k + src) * 3 + c];
            }
        }
    }
}

}  // namespace detail

/// Per-point local descriptor: lift every point to C features, gather the
/// lifted features of its k neighbors, append the localized offsets (and
/// neighbor normals when used), run the shared neighbor MLPs and average
/// over the neighborhood. Rows of `points` may span several clouds as long
/// as `nbr` indices stay within each cloud.
template <typename T>
TensorT<T> lpe_forward(const TensorT<T>& points, const TensorT<T>& normals, const NeighborhoodIndex& nbr,
                       LpeWeightsT<T>& w, const LpeConfig& cfg, Mode mode) {
    cfg.validate();
    if (points.ndim() != 2 || points.dim(1) != 3) {
        throw std::invalid_argument("lpe_forward: points must be [N,3], got " + shape_str(points.shape()));
    }
    const std::size_t rows = points.dim(0);
    if (nbr.indices.rows != rows) {
        throw std::invalid_argument("lpe_forward: neighborhood built for " + std::to_string(nbr.indices.rows) +
                                    " points, input has " + std::to_string(rows));
    }
    if (nbr.k != cfg.k) {
        throw std::invalid_argument("lpe_forward: neighborhood k=" + std::to_string(nbr.k) +
                                    " does not match config k=" + std::to_string(cfg.k));
    }
    if (cfg.use_normals && (!normals.defined() || normals.shape() != Shape{rows, 3})) {
        throw std::invalid_argument("lpe_forward: normals required by config but missing or misshaped");
    }

    IndexMatrix idx;
    std::vector<float> offs;
    detail::canonicalize_neighbors(nbr, idx, offs);
    TensorT<T> offsets = TensorT<T>::from({rows, cfg.k, 3}, std::vector<T>(offs.begin(), offs.end()));

    TensorT<T> lift_in = cfg.use_normals ? concat<T>({points, normals}, 1) : points;
    TensorT<T> feat = relu(batch_norm(linear(lift_in, w.lift), w.bn_lift, mode));

    std::vector<TensorT<T>> parts{gather_rows(feat, idx), offsets};
    if (cfg.use_normals) parts.push_back(gather_rows(normals, idx));
    TensorT<T> cat = concat(parts, 2);

    TensorT<T> flat = reshape(cat, {rows * cfg.k, cfg.concat_width()});
    TensorT<T> h1 = relu(batch_norm(linear(flat, w.n1), w.bn1, mode));
    TensorT<T> h2 = relu(batch_norm(linear(h1, w.n2), w.bn2, mode));
    return mean(reshape(h2, {rows, cfg.k, cfg.out_feat}), 1);
}

}  // namespace abd
