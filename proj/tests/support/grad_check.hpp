#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "abdnet/nn.hpp"
#include "abdnet/tensor.hpp"

namespace abd::test {

template <typename T>
struct GradCheckResult {
    double worst = 0;  // max over elements of |fd-ad| / (atol + rtol*max(|fd|,|ad|)); pass iff <= 1
    std::string worst_at;
    bool ok() const { return worst <= 1.0; }
};

/// Central finite differences on every element of every leaf, compared with
/// the reverse-mode gradient of the scalar produced by `make_loss`. The
/// builder must rebuild the graph from the leaves' current values.
template <typename T, typename LossFn>
GradCheckResult<T> check_gradients(std::vector<TensorT<T>> leaves, LossFn make_loss, T h, T rtol, T atol) {
    for (auto& l : leaves) l.set_requires_grad(true);
    auto loss = make_loss();
    for (auto& l : leaves) {
        if (l.has_grad()) l.zero_grad();
    }
    loss.backward();

    std::vector<std::vector<T>> ad;
    for (auto& l : leaves) {
        if (l.has_grad()) {
            ad.emplace_back(l.grad().begin(), l.grad().end());
        } else {
            ad.emplace_back(l.numel(), T(0));  // leaf unused by the loss
        }
    }

    GradCheckResult<T> res;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto v = leaves[li].values_mut();
        for (std::size_t i = 0; i < v.size(); ++i) {
            const T orig = v[i];
            double lp, lm;
            {
                NoGradGuard ng;
                v[i] = orig + h;
                lp = static_cast<double>(make_loss().item());
                v[i] = orig - h;
                lm = static_cast<double>(make_loss().item());
                v[i] = orig;
            }
            const double fd = (lp - lm) / (2.0 * double(h));
            const double a = static_cast<double>(ad[li][i]);
            const double denom = double(atol) + double(rtol) * std::max(std::abs(fd), std::abs(a));
            const double score = std::abs(fd - a) / denom;
            if (score > res.worst) {
                res.worst = score;
                res.worst_at = "leaf " + std::to_string(li) + "[" + std::to_string(i) + "]: fd=" +
                               std::to_string(fd) + " ad=" + std::to_string(a);
            }
        }
    }
    return res;
}

/// Fills a tensor with uniform values in [-1, 1].
template <typename T>
TensorT<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return TensorT<T>::from(std::move(shape), std::move(v));
}

}  // namespace abd::test
