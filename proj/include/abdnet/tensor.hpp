#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace abd {

#ifdef __GLIBC__
// Activation buffers run to tens of MB and are reallocated every forward
// pass. Past glibc's mmap threshold each one costs a fresh kernel-zeroed
// mapping, which dominates the step time, so keep them on the reusable heap.
inline const bool kHeapTuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
}();
#endif

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense integer matrix used for gather indices and neighbor lists.
struct IndexMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int32_t> data;

    IndexMatrix() = default;
    IndexMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}

    std::int32_t& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    std::int32_t operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

namespace detail {

/// Allocator that skips value-initialization of trivial types; op outputs
/// are fully overwritten, so the implicit zero fill of std::vector would be
/// pure memory traffic.
template <typename T>
struct UninitAlloc : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = UninitAlloc<U>;
    };
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        if constexpr (sizeof...(Args) == 0) {
            ::new (static_cast<void*>(p)) U;
        } else {
            ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
        }
    }
};

template <typename T>
using Buf = std::vector<T, UninitAlloc<T>>;

template <typename T>
Buf<T> to_buf(const std::vector<T>& v) {
    Buf<T> b(v.size());
    std::copy(v.begin(), v.end(), b.begin());
    return b;
}

template <typename T>
struct Node {
    Shape shape;
    Buf<T> values;
    bool requires_grad = false;
    Buf<T> grad;  // empty until first backward touches this node
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward;
    const char* op = "leaf";

    std::size_t numel() const { return values.size(); }
    bool is_leaf() const { return !backward; }
    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), T(0));
    }
};

template <typename T>
inline void check_finite(const Buf<T>& v, const char* op) {
#ifndef NDEBUG
    for (const T x : v) {
        if (!std::isfinite(static_cast<double>(x))) {
            throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
        }
    }
#else
    (void)v;
    (void)op;
#endif
}

}  // namespace detail

/// Thread-local switch: while false, ops produce constants that carry no tape.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Dense row-major tensor participating in a reverse-mode autodiff tape.
/// The tape is define-by-run: each op allocates a fresh node referencing its
/// inputs, and backward() walks the resulting DAG once in reverse
/// topological order. Tensors are handles; copies share the node.
template <typename T>
class TensorT {
public:
    using Scalar = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    TensorT() = default;
    explicit TensorT(NodePtr n) : node_(std::move(n)) {}

    static TensorT zeros(Shape shape) { return full(std::move(shape), T(0)); }

    static TensorT full(Shape shape, T value) {
        auto n = std::make_shared<detail::Node<T>>();
        n->values.assign(shape_numel(shape), value);
        n->shape = std::move(shape);
        return TensorT(std::move(n));
    }

    static TensorT from(Shape shape, const std::vector<T>& values) {
        if (shape_numel(shape) != values.size()) {
            throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match buffer of length " +
                                        std::to_string(values.size()));
        }
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = std::move(shape);
        n->values = detail::to_buf(values);
        return TensorT(std::move(n));
    }

    static TensorT scalar(T value) { return from({1}, {value}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->values.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape[i]; }

    std::span<const T> values() const { return node_->values; }
    /// Mutable access to leaf storage (initializers, optimizers). Mutating a
    /// non-leaf invalidates nothing but makes no sense; callers hold leaves.
    std::span<T> values_mut() { return node_->values; }

    T item() const {
        if (numel() != 1) throw std::invalid_argument("item: tensor has " + std::to_string(numel()) + " elements");
        return node_->values[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    TensorT& set_requires_grad(bool b) {
        node_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return node_->grad.size() == node_->values.size(); }
    std::span<const T> grad() const {
        if (!has_grad()) throw std::runtime_error("grad: no gradient populated for this tensor");
        return node_->grad;
    }
    std::span<T> grad_mut() {
        if (!has_grad()) throw std::runtime_error("grad: no gradient populated for this tensor");
        return node_->grad;
    }
    void zero_grad() {
        if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across
    /// calls; intermediate gradients are scratch and reset per sweep.
    void backward() const {
        if (numel() != 1) {
            throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(node_->shape));
        }
        // iterative DFS post-order over grad-requiring nodes
        std::vector<detail::Node<T>*> order;
        std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
        std::unordered_set<detail::Node<T>*> visited;
        if (!node_->requires_grad && node_->is_leaf()) return;
        stack.push_back({node_.get(), 0});
        visited.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, cursor] = stack.back();
            if (cursor < n->parents.size()) {
                detail::Node<T>* p = n->parents[cursor++].get();
                if (p->requires_grad && !visited.count(p)) {
                    visited.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        for (detail::Node<T>* n : order) {
            // re-zero only on repeated sweeps; ensure_grad zeroes fresh buffers
            if (!n->is_leaf() && !n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), T(0));
        }
        node_->ensure_grad();
        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backward) (*it)->backward(**it);
        }
    }

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

template <typename T>
inline void backward(const TensorT<T>& loss) {
    loss.backward();
}

namespace detail {

/// Central op constructor: wires parents and the backward closure, or strips
/// the tape entirely when gradients are off or no input needs them.
template <typename T>
TensorT<T> make_op(const char* name, Shape shape, Buf<T> values,
                   std::vector<std::shared_ptr<Node<T>>> parents, std::function<void(Node<T>&)> bwd) {
    check_finite(values, name);
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->op = name;
    bool track = grad_mode();
    if (track) {
        track = false;
        for (const auto& p : parents) {
            if (p->requires_grad) {
                track = true;
                break;
            }
        }
    }
    if (track) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward = std::move(bwd);
    }
    return TensorT<T>(std::move(n));
}

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

[[noreturn]] inline void binary_shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

inline void check_axis(const char* op, const Shape& s, std::size_t axis) {
    if (axis >= s.size()) {
        throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                                    shape_str(s));
    }
    if (s[axis] == 0) {
        throw std::invalid_argument(std::string(op) + ": empty axis " + std::to_string(axis) + " in shape " +
                                    shape_str(s));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

/// Matrix product. Supports [M,P]x[P,Q], batched [B,M,P]x[B,P,Q], and
/// [B,M,P]x[P,Q] with the right operand broadcast across the batch.
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    std::size_t batch = 0;  // 0 marks the plain 2D case
    bool b_broadcast = false;
    if (sa.size() == 2 && sb.size() == 2) {
        if (sa[1] != sb[0]) detail::binary_shape_error("matmul", sa, sb);
    } else if (sa.size() == 3 && sb.size() == 3) {
        if (sa[0] != sb[0] || sa[2] != sb[1]) detail::binary_shape_error("matmul", sa, sb);
        batch = sa[0];
    } else if (sa.size() == 3 && sb.size() == 2) {
        if (sa[2] != sb[0]) detail::binary_shape_error("matmul", sa, sb);
        batch = sa[0];
        b_broadcast = true;
    } else {
        detail::binary_shape_error("matmul", sa, sb);
    }
    const std::size_t m = sa[sa.size() - 2];
    const std::size_t p = sa[sa.size() - 1];
    const std::size_t q = sb[sb.size() - 1];

    Shape out_shape = batch ? Shape{batch, m, q} : Shape{m, q};
    detail::Buf<T> out(shape_numel(out_shape));
    const T* pa = a.values().data();
    const T* pb = b.values().data();
    if (batch == 0) {
        detail::EMap<T>(out.data(), m, q).noalias() = detail::ECMap<T>(pa, m, p) * detail::ECMap<T>(pb, p, q);
    } else if (b_broadcast) {
        detail::EMap<T>(out.data(), batch * m, q).noalias() =
            detail::ECMap<T>(pa, batch * m, p) * detail::ECMap<T>(pb, p, q);
    } else {
        for (std::size_t i = 0; i < batch; ++i) {
            detail::EMap<T>(out.data() + i * m * q, m, q).noalias() =
                detail::ECMap<T>(pa + i * m * p, m, p) * detail::ECMap<T>(pb + i * p * q, p, q);
        }
    }

    auto na = a.node();
    auto nb = b.node();
    return detail::make_op<T>(
        "matmul", std::move(out_shape), std::move(out), {na, nb},
        [na, nb, batch, b_broadcast, m, p, q](detail::Node<T>& self) {
            const T* g = self.grad.data();
            const T* av = na->values.data();
            const T* bv = nb->values.data();
            if (na->requires_grad) {
                na->ensure_grad();
                T* da = na->grad.data();
                if (batch == 0) {
                    detail::EMap<T>(da, m, p).noalias() +=
                        detail::ECMap<T>(g, m, q) * detail::ECMap<T>(bv, p, q).transpose();
                } else if (b_broadcast) {
                    detail::EMap<T>(da, batch * m, p).noalias() +=
                        detail::ECMap<T>(g, batch * m, q) * detail::ECMap<T>(bv, p, q).transpose();
                } else {
                    for (std::size_t i = 0; i < batch; ++i) {
                        detail::EMap<T>(da + i * m * p, m, p).noalias() +=
                            detail::ECMap<T>(g + i * m * q, m, q) * detail::ECMap<T>(bv + i * p * q, p, q).transpose();
                    }
                }
            }
            if (nb->requires_grad) {
                nb->ensure_grad();
                T* db = nb->grad.data();
                if (batch == 0) {
                    detail::EMap<T>(db, p, q).noalias() +=
                        detail::ECMap<T>(av, m, p).transpose() * detail::ECMap<T>(g, m, q);
                } else if (b_broadcast) {
                    detail::EMap<T>(db, p, q).noalias() +=
                        detail::ECMap<T>(av, batch * m, p).transpose() * detail::ECMap<T>(g, batch * m, q);
                } else {
                    for (std::size_t i = 0; i < batch; ++i) {
                        detail::EMap<T>(db + i * p * q, p, q).noalias() +=
                            detail::ECMap<T>(av + i * m * p, m, p).transpose() * detail::ECMap<T>(g + i * m * q, m, q);
                    }
                }
            }
        });
}

/// a @ b^T over the last two axes without materializing the transpose:
/// [M,P]x[Q,P] -> [M,Q] or batched [B,M,P]x[B,Q,P] -> [B,M,Q].
template <typename T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    std::size_t batch = 0;
    if (sa.size() == 2 && sb.size() == 2) {
        if (sa[1] != sb[1]) detail::binary_shape_error("matmul_nt", sa, sb);
    } else if (sa.size() == 3 && sb.size() == 3) {
        if (sa[0] != sb[0] || sa[2] != sb[2]) detail::binary_shape_error("matmul_nt", sa, sb);
        batch = sa[0];
    } else {
        detail::binary_shape_error("matmul_nt", sa, sb);
    }
    const std::size_t m = sa[sa.size() - 2];
    const std::size_t p = sa[sa.size() - 1];
    const std::size_t q = sb[sb.size() - 2];
    Shape out_shape = batch ? Shape{batch, m, q} : Shape{m, q};
    detail::Buf<T> out(shape_numel(out_shape));
    const std::size_t nb = std::max<std::size_t>(batch, 1);
    for (std::size_t i = 0; i < nb; ++i) {
        detail::EMap<T>(out.data() + i * m * q, m, q).noalias() =
            detail::ECMap<T>(a.values().data() + i * m * p, m, p) *
            detail::ECMap<T>(b.values().data() + i * q * p, q, p).transpose();
    }
    auto na = a.node();
    auto nbn = b.node();
    return detail::make_op<T>(
        "matmul_nt", std::move(out_shape), std::move(out), {na, nbn},
        [na, nbn, nb, m, p, q](detail::Node<T>& self) {
            const T* g = self.grad.data();
            if (na->requires_grad) {
                na->ensure_grad();
                for (std::size_t i = 0; i < nb; ++i) {
                    // dA += dC * B
                    detail::EMap<T>(na->grad.data() + i * m * p, m, p).noalias() +=
                        detail::ECMap<T>(g + i * m * q, m, q) *
                        detail::ECMap<T>(nbn->values.data() + i * q * p, q, p);
                }
            }
            if (nbn->requires_grad) {
                nbn->ensure_grad();
                for (std::size_t i = 0; i < nb; ++i) {
                    // dB += dC^T * A
                    detail::EMap<T>(nbn->grad.data() + i * q * p, q, p).noalias() +=
                        detail::ECMap<T>(g + i * m * q, m, q).transpose() *
                        detail::ECMap<T>(na->values.data() + i * m * p, m, p);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// elementwise ops (broadcast: equal shapes, scalar, or trailing suffix)
// ---------------------------------------------------------------------------

namespace detail {

enum class BroadcastKind { Equal, ScalarB, SuffixB };

template <typename T>
BroadcastKind classify_broadcast(const char* op, const Shape& a, const Shape& b) {
    if (a == b) return BroadcastKind::Equal;
    if (shape_numel(b) == 1) return BroadcastKind::ScalarB;
    if (b.size() < a.size() && std::equal(b.begin(), b.end(), a.end() - b.size())) return BroadcastKind::SuffixB;
    binary_shape_error(op, a, b);
}

// reduce a full-size gradient onto a suffix-broadcast operand
template <typename T>
void reduce_to_suffix(const std::vector<T>& g, std::size_t repeat, std::size_t block, std::vector<T>& out) {
    for (std::size_t r = 0; r < repeat; ++r) {
        const T* src = g.data() + r * block;
        for (std::size_t i = 0; i < block; ++i) out[i] += src[i];
    }
}

}  // namespace detail

/// Elementwise combine with broadcast of the *smaller* operand (second slot)
/// over the leading axes. Add/mul accept either order. The equal-shape path
/// runs a tight loop; broadcast paths iterate (repeat x block).
template <typename T, typename Fwd, typename Bwd>
TensorT<T> binary_elementwise(const char* name, const TensorT<T>& a, const TensorT<T>& b, Fwd fwd, Bwd bwd) {
    auto kind = detail::classify_broadcast<T>(name, a.shape(), b.shape());
    const std::size_t n = a.numel();
    const std::size_t block = (kind == detail::BroadcastKind::Equal) ? n : b.numel();
    detail::Buf<T> out(n);
    const T* pa = a.values().data();
    const T* pb = b.values().data();
    const std::ptrdiff_t sn = static_cast<std::ptrdiff_t>(n);
    if (kind == detail::BroadcastKind::Equal) {
#pragma omp parallel for schedule(static) if (sn > 65536)
        for (std::ptrdiff_t i = 0; i < sn; ++i) out[i] = fwd(pa[i], pb[i]);
    } else if (kind == detail::BroadcastKind::ScalarB) {
        const T s = pb[0];
#pragma omp parallel for schedule(static) if (sn > 65536)
        for (std::ptrdiff_t i = 0; i < sn; ++i) out[i] = fwd(pa[i], s);
    } else {
#pragma omp parallel for schedule(static) if (sn > 65536)
        for (std::ptrdiff_t r = 0; r < sn / static_cast<std::ptrdiff_t>(block); ++r) {
            for (std::size_t i = 0; i < block; ++i) out[r * block + i] = fwd(pa[r * block + i], pb[i]);
        }
    }
    auto na = a.node();
    auto nb = b.node();
    return detail::make_op<T>(
        name, a.shape(), std::move(out), {na, nb}, [na, nb, kind, block, bwd](detail::Node<T>& self) {
            const std::size_t n = self.values.size();
            const T* g = self.grad.data();
            const T* av = na->values.data();
            const T* bv = nb->values.data();
            auto b_at = [&](std::size_t i) -> T {
                if (kind == detail::BroadcastKind::Equal) return bv[i];
                if (kind == detail::BroadcastKind::ScalarB) return bv[0];
                return bv[i % block];
            };
            if (na->requires_grad) {
                na->ensure_grad();
                T* d = na->grad.data();
                const std::ptrdiff_t sn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (sn > 65536)
                for (std::ptrdiff_t i = 0; i < sn; ++i) {
                    d[i] += g[i] * bwd(av[i], b_at(i)).first;
                }
            }
            if (nb->requires_grad) {
                nb->ensure_grad();
                if (kind == detail::BroadcastKind::Equal) {
                    for (std::size_t i = 0; i < n; ++i) nb->grad[i] += g[i] * bwd(av[i], bv[i]).second;
                } else if (kind == detail::BroadcastKind::ScalarB) {
                    for (std::size_t i = 0; i < n; ++i) nb->grad[0] += g[i] * bwd(av[i], bv[0]).second;
                } else {
                    for (std::size_t i = 0; i < n; ++i) {
                        nb->grad[i % block] += g[i] * bwd(av[i], bv[i % block]).second;
                    }
                }
            }
        });
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    if (b.numel() > a.numel()) return add(b, a);
    return binary_elementwise(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return std::pair<T, T>(T(1), T(1)); });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_elementwise(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return std::pair<T, T>(T(1), T(-1)); });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    if (b.numel() > a.numel()) return mul(b, a);
    return binary_elementwise(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T x, T y) { return std::pair<T, T>(y, x); });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    detail::Buf<T> out(a.values().begin(), a.values().end());
    for (T& x : out) x *= s;
    auto na = a.node();
    return detail::make_op<T>("scale", a.shape(), std::move(out), {na}, [na, s](detail::Node<T>& self) {
        if (!na->requires_grad) return;
        na->ensure_grad();
        for (std::size_t i = 0; i < self.values.size(); ++i) na->grad[i] += self.grad[i] * s;
    });
}

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(a.numel());
    detail::Buf<T> out(a.numel());
    const T* pa = a.values().data();
#pragma omp parallel for schedule(static) if (n > 65536)
    for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = pa[i] > T(0) ? pa[i] : T(0);
    auto na = a.node();
    // subgradient at exactly 0 is 0
    return detail::make_op<T>("relu", a.shape(), std::move(out), {na}, [na, n](detail::Node<T>& self) {
        if (!na->requires_grad) return;
        na->ensure_grad();
        const T* g = self.grad.data();
        const T* v = na->values.data();
        T* d = na->grad.data();
#pragma omp parallel for schedule(static) if (n > 65536)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            if (v[i] > T(0)) d[i] += g[i];
        }
    });
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

/// Numerically stabilized softmax along `axis` (max subtraction per slice).
template <typename T>
TensorT<T> softmax(const TensorT<T>& a, std::size_t axis) {
    detail::check_axis("softmax", a.shape(), axis);
    const Shape& s = a.shape();
    const std::size_t n = s[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];

    detail::Buf<T> out(a.numel());
    const T* pa = a.values().data();
    if (inner == 1) {
        // contiguous lines: vectorized max-subtract/exp/normalize
        using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
        const std::ptrdiff_t so = static_cast<std::ptrdiff_t>(outer);
#pragma omp parallel for schedule(static) if (so* n > 65536)
        for (std::ptrdiff_t o = 0; o < so; ++o) {
            Eigen::Map<const Arr> in_line(pa + o * n, n);
            Eigen::Map<Arr> out_line(out.data() + o * n, n);
            out_line = (in_line - in_line.maxCoeff()).exp();
            out_line /= out_line.sum();
        }
    } else {
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * n * inner + in;
                T mx = pa[base];
                for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, pa[base + j * inner]);
                T sum = T(0);
                for (std::size_t j = 0; j < n; ++j) {
                    T e = std::exp(pa[base + j * inner] - mx);
                    out[base + j * inner] = e;
                    sum += e;
                }
                for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= sum;
            }
        }
    }
    auto na = a.node();
    return detail::make_op<T>(
        "softmax", a.shape(), std::move(out), {na}, [na, outer, inner, n](detail::Node<T>& self) {
            if (!na->requires_grad) return;
            na->ensure_grad();
            const T* y = self.values.data();
            const T* g = self.grad.data();
            if (inner == 1) {
                using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
                const std::ptrdiff_t so = static_cast<std::ptrdiff_t>(outer);
#pragma omp parallel for schedule(static) if (so* n > 65536)
                for (std::ptrdiff_t o = 0; o < so; ++o) {
                    Eigen::Map<const Arr> yl(y + o * n, n);
                    Eigen::Map<const Arr> gl(g + o * n, n);
                    Eigen::Map<Arr> dl(na->grad.data() + o * n, n);
                    const T dot = (yl * gl).sum();
                    dl += yl * (gl - dot);
                }
                return;
            }
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * n * inner + in;
                    T dot = T(0);
                    for (std::size_t j = 0; j < n; ++j) {
                        dot += g[base + j * inner] * y[base + j * inner];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        const std::size_t k = base + j * inner;
                        na->grad[k] += y[k] * (g[k] - dot);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

namespace detail {

inline Shape reduced_shape(const Shape& s, std::size_t axis) {
    Shape out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != axis) out.push_back(s[i]);
    }
    if (out.empty()) out.push_back(1);
    return out;
}

}  // namespace detail

template <typename T>
TensorT<T> sum(const TensorT<T>& a, std::size_t axis) {
    detail::check_axis("sum", a.shape(), axis);
    const Shape& s = a.shape();
    const std::size_t n = s[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    detail::Buf<T> out(outer * inner, T(0));
    const T* pa = a.values().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t in = 0; in < inner; ++in) {
                out[o * inner + in] += pa[(o * n + j) * inner + in];
            }
        }
    }
    auto na = a.node();
    return detail::make_op<T>("sum", detail::reduced_shape(s, axis), std::move(out), {na},
                              [na, outer, inner, n](detail::Node<T>& self) {
                                  if (!na->requires_grad) return;
                                  na->ensure_grad();
                                  const T* g = self.grad.data();
                                  for (std::size_t o = 0; o < outer; ++o) {
                                      for (std::size_t j = 0; j < n; ++j) {
                                          for (std::size_t in = 0; in < inner; ++in) {
                                              na->grad[(o * n + j) * inner + in] += g[o * inner + in];
                                          }
                                      }
                                  }
                              });
}

/// Sum of all elements to a scalar.
template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
    T total = T(0);
    for (T x : a.values()) total += x;
    auto na = a.node();
    detail::Buf<T> one(1);
    one[0] = total;
    return detail::make_op<T>("sum_all", {1}, std::move(one), {na}, [na](detail::Node<T>& self) {
        if (!na->requires_grad) return;
        na->ensure_grad();
        const T g = self.grad[0];
        for (T& d : na->grad) d += g;
    });
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a, std::size_t axis) {
    detail::check_axis("mean", a.shape(), axis);
    const T inv = T(1) / static_cast<T>(a.shape()[axis]);
    return scale(sum(a, axis), inv);
}

/// Max along an axis; gradient is routed to the first maximal element.
template <typename T>
TensorT<T> max(const TensorT<T>& a, std::size_t axis) {
    detail::check_axis("max", a.shape(), axis);
    const Shape& s = a.shape();
    const std::size_t n = s[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    detail::Buf<T> out(outer * inner);
    auto argmax = std::make_shared<std::vector<std::size_t>>(outer * inner);
    const T* pa = a.values().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            std::size_t best = o * n * inner + in;
            for (std::size_t j = 1; j < n; ++j) {
                const std::size_t k = (o * n + j) * inner + in;
                if (pa[k] > pa[best]) best = k;
            }
            out[o * inner + in] = pa[best];
            (*argmax)[o * inner + in] = best;
        }
    }
    auto na = a.node();
    return detail::make_op<T>("max", detail::reduced_shape(s, axis), std::move(out), {na},
                              [na, argmax](detail::Node<T>& self) {
                                  if (!na->requires_grad) return;
                                  na->ensure_grad();
                                  for (std::size_t i = 0; i < self.values.size(); ++i) {
                                      na->grad[(*argmax)[i]] += self.grad[i];
                                  }
                              });
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    detail::check_axis("concat", s0, axis);
    Shape out_shape = s0;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size()) detail::binary_shape_error("concat", s0, s);
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != s0[i]) detail::binary_shape_error("concat", s0, s);
        }
        out_shape[axis] += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
    const std::size_t total_axis = out_shape[axis];

    detail::Buf<T> out(shape_numel(out_shape));
    std::vector<std::size_t> axis_sizes;
    std::vector<std::shared_ptr<detail::Node<T>>> nodes;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t na = p.shape()[axis];
        const T* src = p.values().data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy(src + o * na * inner, src + (o + 1) * na * inner,
                      out.data() + (o * total_axis + offset) * inner);
        }
        offset += na;
        axis_sizes.push_back(na);
        nodes.push_back(p.node());
    }
    return detail::make_op<T>(
        "concat", std::move(out_shape), std::move(out), nodes,
        [nodes, axis_sizes, outer, inner, total_axis](detail::Node<T>& self) {
            const T* g = self.grad.data();
            std::size_t offset = 0;
            for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                const std::size_t na = axis_sizes[pi];
                if (nodes[pi]->requires_grad) {
                    nodes[pi]->ensure_grad();
                    T* dst = nodes[pi]->grad.data();
                    for (std::size_t o = 0; o < outer; ++o) {
                        const T* src = g + (o * total_axis + offset) * inner;
                        T* d = dst + o * na * inner;
                        for (std::size_t i = 0; i < na * inner; ++i) d[i] += src[i];
                    }
                }
                offset += na;
            }
        });
}

/// out[m,k,:] = x[idx(m,k),:]; backward scatter-adds into the source rows.
template <typename T>
TensorT<T> gather_rows(const TensorT<T>& x, const IndexMatrix& idx) {
    if (x.ndim() != 2) throw std::invalid_argument("gather_rows: source must be 2D, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), d = x.dim(1);
    for (std::size_t r = 0; r < idx.rows; ++r) {
        for (std::size_t c = 0; c < idx.cols; ++c) {
            const std::int32_t v = idx(r, c);
            if (v < 0 || static_cast<std::size_t>(v) >= n) {
                throw std::out_of_range("gather_rows: index " + std::to_string(v) + " out of range [0," +
                                        std::to_string(n) + ") at row " + std::to_string(r) + ", col " +
                                        std::to_string(c));
            }
        }
    }
    detail::Buf<T> out(idx.rows * idx.cols * d);
    const T* src = x.values().data();
    const std::ptrdiff_t nr = static_cast<std::ptrdiff_t>(idx.rows);
#pragma omp parallel for schedule(static) if (nr* idx.cols* d > 65536)
    for (std::ptrdiff_t r = 0; r < nr; ++r) {
        for (std::size_t c = 0; c < idx.cols; ++c) {
            std::copy(src + idx(r, c) * d, src + (idx(r, c) + 1) * d, out.data() + (r * idx.cols + c) * d);
        }
    }
    auto nx = x.node();
    auto indices = std::make_shared<IndexMatrix>(idx);
    return detail::make_op<T>("gather_rows", {idx.rows, idx.cols, d}, std::move(out), {nx},
                              [nx, indices, d](detail::Node<T>& self) {
                                  if (!nx->requires_grad) return;
                                  nx->ensure_grad();
                                  const T* g = self.grad.data();
                                  for (std::size_t r = 0; r < indices->rows; ++r) {
                                      for (std::size_t c = 0; c < indices->cols; ++c) {
                                          T* dst = nx->grad.data() + (*indices)(r, c) * d;
                                          const T* src = g + (r * indices->cols + c) * d;
                                          for (std::size_t i = 0; i < d; ++i) dst[i] += src[i];
                                      }
                                  }
                              });
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    detail::Buf<T> out(a.values().begin(), a.values().end());
    auto na = a.node();
    return detail::make_op<T>("reshape", std::move(shape), std::move(out), {na}, [na](detail::Node<T>& self) {
        if (!na->requires_grad) return;
        na->ensure_grad();
        for (std::size_t i = 0; i < self.values.size(); ++i) na->grad[i] += self.grad[i];
    });
}

namespace detail {

// dst[multi_index permuted] = src[multi_index]; trailing axes the
// permutation leaves in place are moved as contiguous blocks
template <typename T>
void permute_copy(const T* src, const Shape& in_shape, const std::vector<std::size_t>& perm, T* dst) {
    const std::size_t nd = in_shape.size();
    Shape out_shape(nd);
    for (std::size_t i = 0; i < nd; ++i) out_shape[i] = in_shape[perm[i]];
    std::vector<std::size_t> in_strides(nd, 1), out_strides(nd, 1);
    for (std::size_t i = nd - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * in_shape[i];
    for (std::size_t i = nd - 1; i > 0; --i) out_strides[i - 1] = out_strides[i] * out_shape[i];
    std::vector<std::size_t> inv(nd);
    for (std::size_t i = 0; i < nd; ++i) inv[perm[i]] = i;

    std::size_t fixed = 0;  // length of the identity suffix
    while (fixed < nd && perm[nd - 1 - fixed] == nd - 1 - fixed) ++fixed;
    std::size_t block = 1;
    for (std::size_t i = nd - fixed; i < nd; ++i) block *= in_shape[i];
    const std::size_t loop_nd = nd - fixed;

    std::vector<std::size_t> idx(loop_nd, 0);
    const std::size_t total = shape_numel(in_shape);
    for (std::size_t flat = 0; flat < total; flat += block) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < loop_nd; ++i) off += idx[i] * out_strides[inv[i]];
        if (block == 1) {
            dst[off] = src[flat];
        } else {
            std::copy(src + flat, src + flat + block, dst + off);
        }
        for (std::size_t i = loop_nd; i-- > 0;) {
            if (++idx[i] < in_shape[i]) break;
            idx[i] = 0;
        }
    }
}

}  // namespace detail

/// General axis permutation (a copy, not a view).
template <typename T>
TensorT<T> transpose(const TensorT<T>& a, const std::vector<std::size_t>& perm) {
    const Shape& s = a.shape();
    if (perm.size() != s.size()) {
        throw std::invalid_argument("transpose: permutation size " + std::to_string(perm.size()) +
                                    " does not match shape " + shape_str(s));
    }
    std::vector<bool> seen(s.size(), false);
    for (std::size_t p : perm) {
        if (p >= s.size() || seen[p]) throw std::invalid_argument("transpose: invalid permutation");
        seen[p] = true;
    }
    Shape out_shape(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out_shape[i] = s[perm[i]];
    detail::Buf<T> out(a.numel());
    detail::permute_copy(a.values().data(), s, perm, out.data());
    auto na = a.node();
    auto in_shape = std::make_shared<Shape>(s);
    auto p = std::make_shared<std::vector<std::size_t>>(perm);
    return detail::make_op<T>("transpose", std::move(out_shape), std::move(out), {na},
                              [na, in_shape, p](detail::Node<T>& self) {
                                  if (!na->requires_grad) return;
                                  na->ensure_grad();
                                  // scatter gradient back through the inverse permutation
                                  std::vector<std::size_t> inv(p->size());
                                  for (std::size_t i = 0; i < p->size(); ++i) inv[(*p)[i]] = i;
                                  detail::Buf<T> tmp(self.values.size());
                                  detail::permute_copy(self.grad.data(), self.shape, inv, tmp.data());
                                  for (std::size_t i = 0; i < tmp.size(); ++i) na->grad[i] += tmp[i];
                              });
}

template <typename T>
TensorT<T> transpose(const TensorT<T>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("transpose: default overload expects 2D, got " + shape_str(a.shape()));
    return transpose(a, {1, 0});
}

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace abd
