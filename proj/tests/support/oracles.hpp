#pragma once

// Scalar loop-nest reimplementations in double precision. These stay
// independent of the tensor/Eigen path on purpose; the implementation is
// tested against them.

#include <cmath>
#include <vector>

#include "abdnet/afe.hpp"
#include "abdnet/lpe.hpp"
#include "abdnet/model.hpp"

namespace abd::test {

using Mat = std::vector<std::vector<double>>;

template <typename T>
Mat to_mat(const TensorT<T>& t, std::size_t rows, std::size_t cols) {
    Mat m(rows, std::vector<double>(cols));
    const T* v = t.values().data();
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) m[i][j] = double(v[i * cols + j]);
    }
    return m;
}

template <typename T>
Mat weight_mat(const LinearT<T>& l) {
    return to_mat(l.weight, l.out_features(), l.in_features());
}

template <typename T>
std::vector<double> bias_vec(const LinearT<T>& l) {
    std::vector<double> b(l.out_features());
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = double(l.bias.values()[i]);
    return b;
}

inline Mat naive_linear(const Mat& x, const Mat& w, const std::vector<double>& b) {
    Mat y(x.size(), std::vector<double>(w.size(), 0));
    for (std::size_t r = 0; r < x.size(); ++r) {
        for (std::size_t o = 0; o < w.size(); ++o) {
            double acc = b[o];
            for (std::size_t i = 0; i < x[r].size(); ++i) acc += x[r][i] * w[o][i];
            y[r][o] = acc;
        }
    }
    return y;
}

inline void naive_relu(Mat& x) {
    for (auto& row : x) {
        for (auto& v : row) v = v > 0 ? v : 0;
    }
}

/// Train-mode batch normalization over all rows (biased variance).
template <typename T>
Mat naive_bn_train(const Mat& x, const BatchNormT<T>& bn) {
    const std::size_t rows = x.size(), c = x[0].size();
    Mat y(rows, std::vector<double>(c));
    for (std::size_t j = 0; j < c; ++j) {
        double mean = 0;
        for (std::size_t r = 0; r < rows; ++r) mean += x[r][j];
        mean /= double(rows);
        double var = 0;
        for (std::size_t r = 0; r < rows; ++r) var += (x[r][j] - mean) * (x[r][j] - mean);
        var /= double(rows);
        const double inv = 1.0 / std::sqrt(var + double(bn.eps));
        for (std::size_t r = 0; r < rows; ++r) {
            y[r][j] = double(bn.gamma.values()[j]) * (x[r][j] - mean) * inv + double(bn.beta.values()[j]);
        }
    }
    return y;
}

template <typename T>
Mat naive_bn_eval(const Mat& x, const BatchNormT<T>& bn) {
    const std::size_t rows = x.size(), c = x[0].size();
    Mat y(rows, std::vector<double>(c));
    for (std::size_t j = 0; j < c; ++j) {
        const double inv = 1.0 / std::sqrt(double(bn.running_var[j]) + double(bn.eps));
        for (std::size_t r = 0; r < rows; ++r) {
            y[r][j] = double(bn.gamma.values()[j]) * (x[r][j] - double(bn.running_mean[j])) * inv +
                      double(bn.beta.values()[j]);
        }
    }
    return y;
}

inline void naive_softmax_rows(Mat& x) {
    for (auto& row : x) {
        double mx = row[0];
        for (double v : row) mx = std::max(mx, v);
        double sum = 0;
        for (auto& v : row) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (auto& v : row) v /= sum;
    }
}

/// Multi-head scaled dot-product attention, one cloud, plain loops.
/// Returns [N][d_model]; optionally fills attn[h][i][j].
template <typename T>
Mat naive_mha(const Mat& x, const MhaWeightsT<T>& w, std::size_t heads,
              std::vector<Mat>* attn_out = nullptr) {
    const std::size_t n = x.size(), d = x[0].size(), dk = d / heads;
    const Mat q = naive_linear(x, weight_mat(w.wq), bias_vec(w.wq));
    const Mat k = naive_linear(x, weight_mat(w.wk), bias_vec(w.wk));
    const Mat v = naive_linear(x, weight_mat(w.wv), bias_vec(w.wv));
    Mat ctx(n, std::vector<double>(d, 0));
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dk;
        Mat scores(n, std::vector<double>(n, 0));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0;
                for (std::size_t c = 0; c < dk; ++c) acc += q[i][off + c] * k[j][off + c];
                scores[i][j] = acc / std::sqrt(double(dk));
            }
        }
        naive_softmax_rows(scores);
        if (attn_out) attn_out->push_back(scores);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < dk; ++c) {
                double acc = 0;
                for (std::size_t j = 0; j < n; ++j) acc += scores[i][j] * v[j][off + c];
                ctx[i][off + c] = acc;
            }
        }
    }
    return naive_linear(ctx, weight_mat(w.wo), bias_vec(w.wo));
}

/// Full LPE forward in plain loops (train or eval batch norm).
template <typename T>
Mat naive_lpe(const Mat& points, const Mat& normals, const NeighborhoodIndex& nbr, LpeWeightsT<T>& w,
              const LpeConfig& cfg, bool train) {
    const std::size_t rows = points.size(), k = cfg.k;
    Mat lift_in = points;
    if (cfg.use_normals) {
        for (std::size_t i = 0; i < rows; ++i) {
            lift_in[i].insert(lift_in[i].end(), normals[i].begin(), normals[i].end());
        }
    }
    Mat f = naive_linear(lift_in, weight_mat(w.lift), bias_vec(w.lift));
    f = train ? naive_bn_train(f, w.bn_lift) : naive_bn_eval(f, w.bn_lift);
    naive_relu(f);

    Mat cat(rows * k);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            std::vector<double>& row = cat[i * k + j];
            const std::size_t nj = static_cast<std::size_t>(nbr.indices(i, j));
            row = f[nj];
            for (std::size_t c = 0; c < 3; ++c) row.push_back(double(nbr.offset(i, j, c)));
            if (cfg.use_normals) {
                for (std::size_t c = 0; c < 3; ++c) row.push_back(normals[nj][c]);
            }
        }
    }
    Mat h1 = naive_linear(cat, weight_mat(w.n1), bias_vec(w.n1));
    h1 = train ? naive_bn_train(h1, w.bn1) : naive_bn_eval(h1, w.bn1);
    naive_relu(h1);
    Mat h2 = naive_linear(h1, weight_mat(w.n2), bias_vec(w.n2));
    h2 = train ? naive_bn_train(h2, w.bn2) : naive_bn_eval(h2, w.bn2);
    naive_relu(h2);

    Mat out(rows, std::vector<double>(cfg.out_feat, 0));
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t c = 0; c < cfg.out_feat; ++c) out[i][c] += h2[i * k + j][c];
        }
        for (std::size_t c = 0; c < cfg.out_feat; ++c) out[i][c] /= double(k);
    }
    return out;
}

template <typename T>
double max_abs_diff(const TensorT<T>& t, const Mat& m) {
    const std::size_t cols = m[0].size();
    double worst = 0;
    const T* v = t.values().data();
    for (std::size_t i = 0; i < m.size(); ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            worst = std::max(worst, std::abs(double(v[i * cols + j]) - m[i][j]));
        }
    }
    return worst;
}

}  // namespace abd::test
