#include <catch2/catch_amalgamated.hpp>

#include "abdnet/nn.hpp"
#include "support/grad_check.hpp"
#include "support/oracles.hpp"

using namespace abd;
using abd::test::check_gradients;
using abd::test::random_tensor;
using Catch::Approx;

TEST_CASE("shared MLP (linear)") {
    SECTION("identity weights pass input through") {
        LinearT<float> l;
        l.weight = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
        l.bias = Tensor::zeros({3});
        auto x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
        auto y = linear(x, l);
        for (std::size_t i = 0; i < 6; ++i) REQUIRE(y.values()[i] == x.values()[i]);
    }

    SECTION("permuting rows permutes outputs identically") {
        Rng rng(21);
        auto l = LinearT<float>::init(4, 3, rng);
        auto x = random_tensor<float>({5, 3}, rng);
        auto y = linear(x, l);
        std::vector<float> perm_x(15);
        const std::size_t perm[5] = {3, 0, 4, 1, 2};
        for (std::size_t i = 0; i < 5; ++i) {
            for (std::size_t j = 0; j < 3; ++j) perm_x[i * 3 + j] = x.values()[perm[i] * 3 + j];
        }
        auto yp = linear(Tensor::from({5, 3}, std::move(perm_x)), l);
        for (std::size_t i = 0; i < 5; ++i) {
            for (std::size_t j = 0; j < 4; ++j) REQUIRE(yp.values()[i * 4 + j] == y.values()[perm[i] * 4 + j]);
        }
    }

    SECTION("gradient check N=5 in=3 out=4") {
        Rng rng(22);
        auto l = LinearT<double>::init(4, 3, rng);
        auto x = random_tensor<double>({5, 3}, rng);
        auto w = random_tensor<double>({5, 4}, rng);
        auto res = check_gradients<double>(
            {x, l.weight, l.bias}, [&] { return sum(mul(linear(x, l), w)); }, 1e-3, 1e-3, 1e-6);
        INFO(res.worst_at);
        REQUIRE(res.ok());
    }
}

TEST_CASE("batch normalization") {
    SECTION("train mode normalizes each channel") {
        Rng rng(23);
        auto bn = BatchNormT<float>::init(3);
        auto x = random_tensor<float>({64, 3}, rng, -3, 5);
        auto y = batch_norm(x, bn, Mode::Train);
        for (std::size_t c = 0; c < 3; ++c) {
            double mean = 0, var = 0;
            for (std::size_t r = 0; r < 64; ++r) mean += y.values()[r * 3 + c];
            mean /= 64;
            for (std::size_t r = 0; r < 64; ++r) {
                const double d = y.values()[r * 3 + c] - mean;
                var += d * d;
            }
            var /= 64;
            REQUIRE(mean == Approx(0.0).margin(1e-4));
            REQUIRE(var == Approx(1.0).margin(1e-3));
        }
    }

    SECTION("constant channel collapses to beta") {
        auto bn = BatchNormT<float>::init(2);
        bn.beta = Tensor::from({2}, {0.5f, -1.0f}).set_requires_grad(true);
        auto x = Tensor::from({4, 2}, {7, 3, 7, 3, 7, 3, 7, 3});
        auto y = batch_norm(x, bn, Mode::Train);
        for (std::size_t r = 0; r < 4; ++r) {
            REQUIRE(y.values()[r * 2 + 0] == Approx(0.5));
            REQUIRE(y.values()[r * 2 + 1] == Approx(-1.0));
        }
    }

    SECTION("eval after a fixed train stream matches running-stat recomputation") {
        Rng rng(24);
        auto bn = BatchNormT<float>::init(2);
        // hand-rolled running stats alongside the layer
        std::vector<double> rm(2, 0), rv(2, 1);
        for (int step = 0; step < 5; ++step) {
            auto x = random_tensor<float>({8, 2}, rng, -2, 2);
            batch_norm(x, bn, Mode::Train);
            for (std::size_t c = 0; c < 2; ++c) {
                double mean = 0, var = 0;
                for (std::size_t r = 0; r < 8; ++r) mean += x.values()[r * 2 + c];
                mean /= 8;
                for (std::size_t r = 0; r < 8; ++r) {
                    const double d = x.values()[r * 2 + c] - mean;
                    var += d * d;
                }
                var /= 8;
                rm[c] = 0.9 * rm[c] + 0.1 * mean;
                rv[c] = 0.9 * rv[c] + 0.1 * var * 8.0 / 7.0;
            }
        }
        auto probe = Tensor::from({2, 2}, {0.3f, -0.4f, 1.0f, 2.0f});
        auto y = batch_norm(probe, bn, Mode::Eval);
        for (std::size_t r = 0; r < 2; ++r) {
            for (std::size_t c = 0; c < 2; ++c) {
                const double expect = (probe.values()[r * 2 + c] - rm[c]) / std::sqrt(rv[c] + 1e-5);
                REQUIRE(y.values()[r * 2 + c] == Approx(expect).margin(1e-4));
            }
        }
    }

    SECTION("degenerate batch of one row is rejected in train mode") {
        auto bn = BatchNormT<float>::init(3);
        REQUIRE_THROWS_WITH(batch_norm(Tensor::zeros({1, 3}), bn, Mode::Train),
                            Catch::Matchers::ContainsSubstring("degenerate"));
    }

    SECTION("train-mode gradient vs finite differences") {
        Rng rng(25);
        auto bn = BatchNormT<double>::init(3);
        bn.gamma = random_tensor<double>({3}, rng, 0.5, 1.5).set_requires_grad(true);
        bn.beta = random_tensor<double>({3}, rng).set_requires_grad(true);
        auto x = random_tensor<double>({6, 3}, rng);
        auto w = random_tensor<double>({6, 3}, rng);
        auto res = check_gradients<double>(
            {x, bn.gamma, bn.beta}, [&] { return sum(mul(batch_norm(x, bn, Mode::Train), w)); }, 1e-4, 1e-3, 1e-6);
        INFO(res.worst_at);
        REQUIRE(res.ok());
    }

    SECTION("eval mode is a per-channel affine map with exact gradient") {
        Rng rng(26);
        auto bn = BatchNormT<double>::init(2);
        bn.running_mean = {0.3, -0.2};
        bn.running_var = {1.7, 0.4};
        auto x = random_tensor<double>({5, 2}, rng);
        auto w = random_tensor<double>({5, 2}, rng);
        auto res = check_gradients<double>(
            {x, bn.gamma, bn.beta}, [&] { return sum(mul(batch_norm(x, bn, Mode::Eval), w)); }, 1e-4, 1e-3, 1e-6);
        INFO(res.worst_at);
        REQUIRE(res.ok());
    }
}

TEST_CASE("multi-head attention") {
    AttentionConfig cfg{4, 2};

    SECTION("single point: attention is [[1]] and output is the projected value") {
        Rng rng(27);
        auto w = MhaWeightsT<float>::init(cfg, rng);
        auto x = random_tensor<float>({1, 4}, rng);
        AttentionCapture<float> cap;
        auto out = multi_head_attention(x, w, cfg, &cap);
        REQUIRE(cap.weights.size() == 2);  // h=2 heads, 1x1 each
        REQUIRE(cap.weights[0] == Approx(1.0));
        REQUIRE(cap.weights[1] == Approx(1.0));
        auto expected = linear(linear(x, w.wv), w.wo);
        for (std::size_t i = 0; i < 4; ++i) REQUIRE(out.values()[i] == Approx(expected.values()[i]).margin(1e-6));
    }

    SECTION("identical rows give uniform attention") {
        Rng rng(28);
        auto w = MhaWeightsT<float>::init(cfg, rng);
        std::vector<float> data(5 * 4);
        for (std::size_t i = 0; i < 5; ++i) {
            for (std::size_t j = 0; j < 4; ++j) data[i * 4 + j] = static_cast<float>(0.3 * (j + 1));
        }
        AttentionCapture<float> cap;
        multi_head_attention(Tensor::from({5, 4}, std::move(data)), w, cfg, &cap);
        for (float v : cap.weights) REQUIRE(v == Approx(1.0 / 5).margin(1e-6));
    }

    SECTION("matches the scalar loop-nest oracle at N=3, d=4, h=2") {
        Rng rng(29);
        auto w = MhaWeightsT<float>::init(cfg, rng);
        auto x = random_tensor<float>({3, 4}, rng);
        auto out = multi_head_attention(x, w, cfg);
        auto oracle = abd::test::naive_mha(abd::test::to_mat(x, 3, 4), w, 2);
        REQUIRE(abd::test::max_abs_diff(out, oracle) < 1e-5);
    }

    SECTION("permutation equivariance, attention transforms as P A P^T") {
        Rng rng(30);
        auto w = MhaWeightsT<float>::init(cfg, rng);
        auto x = random_tensor<float>({6, 4}, rng);
        AttentionCapture<float> cap, capp;
        auto y = multi_head_attention(x, w, cfg, &cap);
        const std::size_t perm[6] = {2, 0, 5, 1, 4, 3};
        std::vector<float> px(24);
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t j = 0; j < 4; ++j) px[i * 4 + j] = x.values()[perm[i] * 4 + j];
        }
        auto yp = multi_head_attention(Tensor::from({6, 4}, std::move(px)), w, cfg, &capp);
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t j = 0; j < 4; ++j) {
                REQUIRE(yp.values()[i * 4 + j] == Approx(y.values()[perm[i] * 4 + j]).margin(1e-5));
            }
        }
        for (std::size_t h = 0; h < 2; ++h) {
            for (std::size_t i = 0; i < 6; ++i) {
                for (std::size_t j = 0; j < 6; ++j) {
                    REQUIRE(capp.weights[(h * 6 + i) * 6 + j] ==
                            Approx(cap.weights[(h * 6 + perm[i]) * 6 + perm[j]]).margin(1e-5));
                }
            }
        }
    }

    SECTION("attention rows sum to one") {
        Rng rng(31);
        auto w = MhaWeightsT<float>::init(cfg, rng);
        auto x = random_tensor<float>({7, 4}, rng, -2, 2);
        AttentionCapture<float> cap;
        multi_head_attention(x, w, cfg, &cap);
        for (std::size_t h = 0; h < 2; ++h) {
            for (std::size_t i = 0; i < 7; ++i) {
                double row = 0;
                for (std::size_t j = 0; j < 7; ++j) row += cap.weights[(h * 7 + i) * 7 + j];
                REQUIRE(row == Approx(1.0).margin(1e-5));
            }
        }
    }

    SECTION("gradient through attention") {
        Rng rng(32);
        AttentionConfig dcfg{4, 2};
        auto w = MhaWeightsT<double>::init(dcfg, rng);
        auto x = random_tensor<double>({3, 4}, rng);
        auto t = random_tensor<double>({3, 4}, rng);
        std::vector<TensorT<double>> leaves{x, w.wq.weight, w.wk.weight, w.wv.weight, w.wo.weight, w.wq.bias};
        auto res = check_gradients<double>(
            leaves, [&] { return sum(mul(multi_head_attention(x, w, dcfg), t)); }, 1e-4, 1e-3, 1e-6);
        INFO(res.worst_at);
        REQUIRE(res.ok());
    }
}

TEST_CASE("feed-forward block") {
    SECTION("zero weights give zero output") {
        FeedForwardT<float> f;
        f.l1.weight = Tensor::zeros({8, 4});
        f.l1.bias = Tensor::zeros({8});
        f.bn1 = BatchNormT<float>::init(8);
        f.l2.weight = Tensor::zeros({4, 8});
        f.l2.bias = Tensor::zeros({4});
        Rng rng(33);
        auto x = random_tensor<float>({5, 4}, rng);
        auto y = feed_forward(x, f, Mode::Train);
        for (auto v : y.values()) REQUIRE(v == 0.0f);
    }

    SECTION("rows are processed independently (eval mode)") {
        Rng rng(34);
        auto f = FeedForwardT<float>::init(4, 8, rng);
        auto x = random_tensor<float>({6, 4}, rng);
        auto y = feed_forward(x, f, Mode::Eval);
        // a permuted copy maps to permuted outputs, bit-identically per row
        const std::size_t perm[6] = {5, 3, 1, 0, 4, 2};
        std::vector<float> px(24);
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t j = 0; j < 4; ++j) px[i * 4 + j] = x.values()[perm[i] * 4 + j];
        }
        auto yp = feed_forward(Tensor::from({6, 4}, std::move(px)), f, Mode::Eval);
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t j = 0; j < 4; ++j) {
                REQUIRE(yp.values()[i * 4 + j] == Approx(y.values()[perm[i] * 4 + j]).margin(1e-6));
            }
        }
    }

    SECTION("gradient check at d_model=4, d_ff=8") {
        Rng rng(35);
        auto f = FeedForwardT<double>::init(4, 8, rng);
        auto x = random_tensor<double>({5, 4}, rng);
        auto w = random_tensor<double>({5, 4}, rng);
        std::vector<TensorT<double>> leaves{x, f.l1.weight, f.l1.bias, f.bn1.gamma, f.bn1.beta, f.l2.weight, f.l2.bias};
        auto res = check_gradients<double>(
            leaves, [&] { return sum(mul(feed_forward(x, f, Mode::Train), w)); }, 1e-4, 1e-3, 1e-6);
        INFO(res.worst_at);
        REQUIRE(res.ok());
    }
}

TEST_CASE("he initialization") {
    SECTION("sample variance tracks 2/fan_in") {
        Rng rng(36);
        auto w = he_init<float>({100, 100}, 50, rng);
        double mean = 0, var = 0;
        for (auto v : w.values()) mean += v;
        mean /= w.numel();
        for (auto v : w.values()) var += (v - mean) * (v - mean);
        var /= w.numel();
        REQUIRE(var == Approx(2.0 / 50).epsilon(0.1));
    }

    SECTION("fixed seed reproduces the tensor") {
        Rng a(37), b(37);
        auto w1 = he_init<float>({4, 4}, 4, a);
        auto w2 = he_init<float>({4, 4}, 4, b);
        for (std::size_t i = 0; i < 16; ++i) REQUIRE(w1.values()[i] == w2.values()[i]);
    }

    SECTION("bias initialization is exactly zero") {
        Rng rng(38);
        auto l = LinearT<float>::init(7, 3, rng);
        for (auto v : l.bias.values()) REQUIRE(v == 0.0f);
    }
}

TEST_CASE("adam") {
    SECTION("first step with constant gradient is -lr * sign(g), bias-corrected") {
        auto p = Tensor::from({4}, {1, 2, 3, 4}).set_requires_grad(true);
        // populate grads with a constant
        sum(scale(p, 0.7f)).backward();
        NamedParams<float> params{{"p", p}};
        AdamStateT<float> st;
        st.lr_base = 0.01f;
        adam_step(params, st, 0.01f);
        for (std::size_t i = 0; i < 4; ++i) {
            const float moved = p.values()[i] - float(i + 1);
            REQUIRE(moved == Approx(-0.01).margin(1e-6));
        }
    }

    SECTION("zero gradient leaves the parameter unchanged") {
        auto p = Tensor::from({3}, {1, 2, 3}).set_requires_grad(true);
        sum(scale(p, 0.0f)).backward();
        NamedParams<float> params{{"p", p}};
        AdamStateT<float> st;
        adam_step(params, st, 0.01f);
        REQUIRE(p.values()[0] == 1.0f);
        REQUIRE(p.values()[1] == 2.0f);
        REQUIRE(p.values()[2] == 3.0f);
    }

    SECTION("learning rate after two decay periods is a quarter of the base") {
        AdamStateT<float> st;
        st.lr_base = 0.001f;
        st.decay_period = 20;
        REQUIRE(st.lr_for_epoch(0) == Approx(0.001));
        REQUIRE(st.lr_for_epoch(19) == Approx(0.001));
        REQUIRE(st.lr_for_epoch(20) == Approx(0.0005));
        REQUIRE(st.lr_for_epoch(40) == Approx(0.00025));
    }

    SECTION("missing gradient names the parameter") {
        auto p = Tensor::from({2}, {1, 2}).set_requires_grad(true);
        NamedParams<float> params{{"lpe.lift.weight", p}};
        AdamStateT<float> st;
        REQUIRE_THROWS_WITH(adam_step(params, st, 0.01f),
                            Catch::Matchers::ContainsSubstring("lpe.lift.weight"));
    }
}
