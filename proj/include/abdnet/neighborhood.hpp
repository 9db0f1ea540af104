#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "abdnet/pointcloud.hpp"
#include "abdnet/tensor.hpp"

namespace abd {

namespace detail {

inline double dist2(const std::array<float, 3>& a, const std::array<float, 3>& b) {
    const double dx = double(a[0]) - b[0], dy = double(a[1]) - b[1], dz = double(a[2]) - b[2];
    return dx * dx + dy * dy + dz * dz;
}

// candidate ordering: ascending distance, ties to the lower index
struct KnnEntry {
    double d2;
    std::int32_t idx;
    bool operator<(const KnnEntry& o) const { return d2 < o.d2 || (d2 == o.d2 && idx < o.idx); }
};

}  // namespace detail

/// Exact k-nearest-neighbor index over a fixed point set. Median splits on
/// the widest axis; leaves hold small index ranges.
class KdTree {
public:
    explicit KdTree(const std::vector<std::array<float, 3>>& points, std::size_t leaf_size = 16)
        : points_(points), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
        if (points_.empty()) throw std::invalid_argument("kd-tree: empty point set");
        order_.resize(points_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::int32_t>(i);
        nodes_.reserve(2 * points_.size() / leaf_size_ + 8);
        build(0, points_.size());
    }

    std::size_t size() const { return points_.size(); }

    /// Indices of the k nearest points to `query`, ascending by distance,
    /// ties broken toward the lower index. `exclude` skips one point index.
    std::vector<std::int32_t> knn(const std::array<float, 3>& query, std::size_t k,
                                  std::int32_t exclude = -1) const {
        const std::size_t available = points_.size() - (exclude >= 0 ? 1 : 0);
        if (k == 0 || k > available) {
            throw std::invalid_argument("knn: k=" + std::to_string(k) + " with " + std::to_string(available) +
                                        " candidate point(s)");
        }
        std::vector<detail::KnnEntry> heap;  // max-heap on candidate ordering
        heap.reserve(k + 1);
        search(0, query, k, exclude, heap);
        std::sort_heap(heap.begin(), heap.end());
        std::vector<std::int32_t> out(heap.size());
        for (std::size_t i = 0; i < heap.size(); ++i) out[i] = heap[i].idx;
        return out;
    }

private:
    struct Node {
        float split = 0;
        std::int32_t axis = -1;  // -1 marks a leaf
        std::int32_t left = -1, right = -1;
        std::int32_t begin = 0, end = 0;
    };

    std::int32_t build(std::size_t begin, std::size_t end) {
        const std::int32_t id = static_cast<std::int32_t>(nodes_.size());
        nodes_.emplace_back();
        if (end - begin <= leaf_size_) {
            nodes_[id].begin = static_cast<std::int32_t>(begin);
            nodes_[id].end = static_cast<std::int32_t>(end);
            return id;
        }
        std::array<float, 3> lo = points_[order_[begin]], hi = lo;
        for (std::size_t i = begin + 1; i < end; ++i) {
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::min(lo[a], points_[order_[i]][a]);
                hi[a] = std::max(hi[a], points_[order_[i]][a]);
            }
        }
        int axis = 0;
        for (int a = 1; a < 3; ++a) {
            if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
        }
        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](std::int32_t a, std::int32_t b) {
                             const float ca = points_[a][axis], cb = points_[b][axis];
                             return ca < cb || (ca == cb && a < b);
                         });
        const float split = points_[order_[mid]][axis];
        const std::int32_t left = build(begin, mid);
        const std::int32_t right = build(mid, end);
        nodes_[id].axis = axis;
        nodes_[id].split = split;
        nodes_[id].left = left;
        nodes_[id].right = right;
        return id;
    }

    void search(std::int32_t ni, const std::array<float, 3>& q, std::size_t k, std::int32_t exclude,
                std::vector<detail::KnnEntry>& heap) const {
        const Node& node = nodes_[ni];
        if (node.axis < 0) {
            for (std::int32_t i = node.begin; i < node.end; ++i) {
                const std::int32_t idx = order_[i];
                if (idx == exclude) continue;
                detail::KnnEntry e{detail::dist2(q, points_[idx]), idx};
                if (heap.size() < k) {
                    heap.push_back(e);
                    std::push_heap(heap.begin(), heap.end());
                } else if (e < heap.front()) {
                    std::pop_heap(heap.begin(), heap.end());
                    heap.back() = e;
                    std::push_heap(heap.begin(), heap.end());
                }
            }
            return;
        }
        const double delta = double(q[node.axis]) - node.split;
        const std::int32_t near = delta < 0 ? node.left : node.right;
        const std::int32_t far = delta < 0 ? node.right : node.left;
        search(near, q, k, exclude, heap);
        // a tie at the plane can still hold a lower-index candidate, so only
        // prune when strictly farther
        if (heap.size() < k || delta * delta <= heap.front().d2) search(far, q, k, exclude, heap);
    }

    const std::vector<std::array<float, 3>>& points_;
    std::size_t leaf_size_;
    std::vector<std::int32_t> order_;
    std::vector<Node> nodes_;
};

/// O(N^2) reference with identical ordering rules; the oracle the kd-tree is
/// tested against.
inline std::vector<std::int32_t> brute_force_knn(const std::vector<std::array<float, 3>>& points,
                                                 const std::array<float, 3>& query, std::size_t k,
                                                 std::int32_t exclude = -1) {
    const std::size_t available = points.size() - (exclude >= 0 ? 1 : 0);
    if (k == 0 || k > available) {
        throw std::invalid_argument("knn: k=" + std::to_string(k) + " with " + std::to_string(available) +
                                    " candidate point(s)");
    }
    std::vector<detail::KnnEntry> all;
    all.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (static_cast<std::int32_t>(i) == exclude) continue;
        all.push_back({detail::dist2(query, points[i]), static_cast<std::int32_t>(i)});
    }
    std::partial_sort(all.begin(), all.begin() + k, all.end());
    std::vector<std::int32_t> out(k);
    for (std::size_t i = 0; i < k; ++i) out[i] = all[i].idx;
    return out;
}

/// Per-point neighbor lists with offsets localized to each center,
/// offsets[i][j] = p[idx[i][j]] - p[i]. Every point is its own first
/// neighbor (distance zero, offset zero).
struct NeighborhoodIndex {
    IndexMatrix indices;        // [N, K]
    std::vector<float> offsets; // [N, K, 3] row-major
    std::size_t k = 0;

    float offset(std::size_t i, std::size_t j, std::size_t c) const {
        return offsets[(i * k + j) * 3 + c];
    }
};

inline NeighborhoodIndex build_neighborhoods(const PointCloud& cloud, std::size_t k) {
    const std::size_t n = cloud.size();
    if (k == 0 || k > n) {
        throw std::invalid_argument("build_neighborhoods: k=" + std::to_string(k) + " with " + std::to_string(n) +
                                    " points");
    }
    KdTree tree(cloud.points);
    NeighborhoodIndex nbr;
    nbr.k = k;
    nbr.indices = IndexMatrix(n, k);
    nbr.offsets.resize(n * k * 3);
    for (std::size_t i = 0; i < n; ++i) {
        const auto ids = tree.knn(cloud.points[i], k);
        for (std::size_t j = 0; j < k; ++j) {
            nbr.indices(i, j) = ids[j];
            for (std::size_t c = 0; c < 3; ++c) {
                nbr.offsets[(i * k + j) * 3 + c] = cloud.points[ids[j]][c] - cloud.points[i][c];
            }
        }
    }
    return nbr;
}

/// Neighborhood size as a function of cloud density: anchored to the grid
/// {1024:32, 2048:64, 4096:96, 8096:128}, proportional below 1024, linear
/// between anchors, clamped to [8, 128].
inline std::size_t k_for_density(std::size_t n_points) {
    static constexpr std::pair<double, double> anchors[] = {{1024, 32}, {2048, 64}, {4096, 96}, {8096, 128}};
    double k;
    const double n = static_cast<double>(n_points);
    if (n <= anchors[0].first) {
        k = anchors[0].second * n / anchors[0].first;
    } else if (n >= anchors[3].first) {
        k = anchors[3].second;
    } else {
        k = anchors[3].second;
        for (int i = 0; i < 3; ++i) {
            if (n <= anchors[i + 1].first) {
                const double t = (n - anchors[i].first) / (anchors[i + 1].first - anchors[i].first);
                k = anchors[i].second + t * (anchors[i + 1].second - anchors[i].second);
                break;
            }
        }
    }
    const double clamped = std::min(128.0, std::max(8.0, std::round(k)));
    return static_cast<std::size_t>(clamped);
}

}  // namespace abd
