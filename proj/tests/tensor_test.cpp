#include <catch2/catch_amalgamated.hpp>

#include "abdnet/tensor.hpp"
#include "support/grad_check.hpp"

using namespace abd;
using abd::test::check_gradients;
using abd::test::random_tensor;
using Catch::Approx;

TEST_CASE("matmul products") {
    auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    auto b = Tensor::from({2, 2}, {3, 4, 5, 6});
    auto c = matmul(eye, b);
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(c.values()[i] == b.values()[i]);

    auto row = Tensor::from({1, 2}, {1, 2});
    auto col = Tensor::from({2, 1}, {3, 4});
    REQUIRE(matmul(row, col).item() == Approx(11.0));

    SECTION("batched against per-slice products") {
        Rng rng(5);
        auto a3 = random_tensor<float>({3, 2, 4}, rng);
        auto b3 = random_tensor<float>({3, 4, 5}, rng);
        auto c3 = matmul(a3, b3);
        for (std::size_t s = 0; s < 3; ++s) {
            auto as = Tensor::from({2, 4}, {a3.values().begin() + s * 8, a3.values().begin() + (s + 1) * 8});
            auto bs = Tensor::from({4, 5}, {b3.values().begin() + s * 20, b3.values().begin() + (s + 1) * 20});
            auto cs = matmul(as, bs);
            for (std::size_t i = 0; i < 10; ++i) {
                REQUIRE(c3.values()[s * 10 + i] == Approx(cs.values()[i]).margin(1e-6));
            }
        }
    }

    SECTION("shape mismatch names both shapes") {
        auto a = Tensor::zeros({2, 3});
        auto bb = Tensor::zeros({2, 3});
        REQUIRE_THROWS_WITH(matmul(a, bb), Catch::Matchers::ContainsSubstring("[2,3]") &&
                                               Catch::Matchers::ContainsSubstring("matmul"));
    }
}

TEST_CASE("matmul gradients match finite differences") {
    SECTION("64-bit check mode, rel err 1e-3 at step 1e-3") {
        Rng rng(11);
        auto a = random_tensor<double>({4, 5}, rng);
        auto b = random_tensor<double>({5, 3}, rng);
        auto w = random_tensor<double>({4, 3}, rng);
        auto res = check_gradients<double>(
            {a, b}, [&] { return sum(mul(matmul(a, b), w)); }, 1e-3, 1e-3, 1e-6);
        INFO(res.worst_at);
        REQUIRE(res.ok());
    }
    SECTION("32-bit production mode, rel err 1e-2") {
        Rng rng(12);
        auto a = random_tensor<float>({4, 5}, rng);
        auto b = random_tensor<float>({5, 3}, rng);
        auto w = random_tensor<float>({4, 3}, rng);
        auto res = check_gradients<float>(
            {a, b}, [&] { return sum(mul(matmul(a, b), w)); }, 1e-2f, 1e-2f, 1e-4f);
        INFO(res.worst_at);
        REQUIRE(res.ok());
    }
    SECTION("broadcast right operand accumulates over the batch") {
        Rng rng(13);
        auto a = random_tensor<double>({2, 3, 4}, rng);
        auto b = random_tensor<double>({4, 2}, rng);
        auto w = random_tensor<double>({2, 3, 2}, rng);
        auto res = check_gradients<double>(
            {a, b}, [&] { return sum(mul(matmul(a, b), w)); }, 1e-3, 1e-3, 1e-6);
        INFO(res.worst_at);
        REQUIRE(res.ok());
    }
}

TEST_CASE("softmax") {
    auto u = softmax(Tensor::from({3}, {0, 0, 0}), 0);
    for (auto v : u.values()) REQUIRE(v == Approx(1.0 / 3));

    SECTION("max subtraction keeps huge logits finite") {
        auto s = softmax(Tensor::from({2}, {1000, 0}), 0);
        REQUIRE(s.values()[0] == Approx(1.0));
        REQUIRE(s.values()[1] == Approx(0.0).margin(1e-6));
    }

    SECTION("rows are probability distributions") {
        Rng rng(7);
        auto x = random_tensor<float>({6, 9}, rng, -5, 5);
        auto s = softmax(x, 1);
        for (std::size_t r = 0; r < 6; ++r) {
            double total = 0;
            for (std::size_t c = 0; c < 9; ++c) {
                const float v = s.values()[r * 9 + c];
                REQUIRE(v >= 0.0f);
                REQUIRE(v <= 1.0f);
                total += v;
            }
            REQUIRE(total == Approx(1.0).margin(1e-5));
        }
    }

    SECTION("gradient vs finite differences") {
        Rng rng(8);
        auto x = random_tensor<double>({3, 7}, rng);
        auto w = random_tensor<double>({3, 7}, rng);
        auto res = check_gradients<double>(
            {x}, [&] { return sum(mul(softmax(x, 1), w)); }, 1e-3, 1e-3, 1e-6);
        INFO(res.worst_at);
        REQUIRE(res.ok());
    }
}

TEST_CASE("elementwise suite") {
    auto r = relu(Tensor::from({3}, {-1, 0, 2}));
    REQUIRE(r.values()[0] == 0);
    REQUIRE(r.values()[1] == 0);
    REQUIRE(r.values()[2] == 2);

    auto s = add(Tensor::from({2}, {1, 2}), Tensor::from({2}, {3, 4}));
    REQUIRE(s.values()[0] == 4);
    REQUIRE(s.values()[1] == 6);

    SECTION("relu subgradient at zero is zero") {
        auto x = Tensor::from({3}, {-1, 0, 2}).set_requires_grad(true);
        sum(relu(x)).backward();
        REQUIRE(x.grad()[0] == 0);
        REQUIRE(x.grad()[1] == 0);
        REQUIRE(x.grad()[2] == 1);
    }

    SECTION("mul gradient on a random 6-vector") {
        Rng rng(9);
        auto a = random_tensor<double>({6}, rng);
        auto b = random_tensor<double>({6}, rng);
        auto res = check_gradients<double>(
            {a, b}, [&] { return sum(mul(a, b)); }, 1e-3, 1e-3, 1e-6);
        INFO(res.worst_at);
        REQUIRE(res.ok());
    }

    SECTION("suffix broadcast (bias add) reduces over leading rows") {
        Rng rng(10);
        auto x = random_tensor<double>({4, 3}, rng);
        auto b = random_tensor<double>({3}, rng);
        auto w = random_tensor<double>({4, 3}, rng);
        auto res = check_gradients<double>(
            {x, b}, [&] { return sum(mul(add(x, b), w)); }, 1e-3, 1e-3, 1e-6);
        INFO(res.worst_at);
        REQUIRE(res.ok());
    }

    SECTION("shape mismatch is rejected") {
        REQUIRE_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2, 2})), std::invalid_argument);
    }
}

TEST_CASE("reductions") {
    auto m = mean(Tensor::from({1, 2}, {2, 4}), 1);
    REQUIRE(m.shape() == Shape{1});
    REQUIRE(m.item() == Approx(3.0));

    SECTION("max ties route gradient to the first maximal index") {
        auto x = Tensor::from({3}, {1, 5, 5}).set_requires_grad(true);
        auto mx = max(x, 0);
        REQUIRE(mx.item() == 5);
        mx.backward();
        REQUIRE(x.grad()[0] == 0);
        REQUIRE(x.grad()[1] == 1);
        REQUIRE(x.grad()[2] == 0);
    }

    SECTION("mean gradient on random 4x8") {
        Rng rng(14);
        auto x = random_tensor<double>({4, 8}, rng);
        auto w = random_tensor<double>({4}, rng);
        auto res = check_gradients<double>(
            {x}, [&] { return sum(mul(mean(x, 1), w)); }, 1e-3, 1e-3, 1e-6);
        INFO(res.worst_at);
        REQUIRE(res.ok());
    }

    SECTION("empty axis is an error") {
        REQUIRE_THROWS_AS(mean(Tensor::zeros({3, 0}), 1), std::invalid_argument);
        REQUIRE_THROWS_AS(max(Tensor::zeros({3}), 2), std::invalid_argument);
    }
}

TEST_CASE("structural suite") {
    SECTION("identity gather returns the original rows") {
        auto x = Tensor::from({4, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
        IndexMatrix idx(4, 1);
        for (int i = 0; i < 4; ++i) idx(i, 0) = i;
        auto g = gather_rows(x, idx);
        REQUIRE(g.shape() == Shape{4, 1, 2});
        for (std::size_t i = 0; i < 8; ++i) REQUIRE(g.values()[i] == x.values()[i]);
    }

    SECTION("concat along the feature axis") {
        Rng rng(15);
        auto a = random_tensor<float>({5, 3}, rng);
        auto b = random_tensor<float>({5, 64}, rng);
        auto c = concat<float>({a, b}, 1);
        REQUIRE(c.shape() == Shape{5, 67});
        REQUIRE(c.values()[0] == a.values()[0]);
        REQUIRE(c.values()[3] == b.values()[0]);
    }

    SECTION("gather with repeated indices scatter-adds, vs loop oracle") {
        Rng rng(16);
        auto x = random_tensor<double>({3, 2}, rng).set_requires_grad(true);
        IndexMatrix idx(2, 3);
        const int choice[2][3] = {{0, 0, 2}, {1, 0, 1}};
        for (int r = 0; r < 2; ++r) {
            for (int c = 0; c < 3; ++c) idx(r, c) = choice[r][c];
        }
        auto w = random_tensor<double>({2, 3, 2}, rng);
        sum(mul(gather_rows(x, idx), w)).backward();
        // oracle: accumulate per-use grads with plain loops
        std::vector<double> expect(6, 0);
        for (int r = 0; r < 2; ++r) {
            for (int c = 0; c < 3; ++c) {
                for (int d = 0; d < 2; ++d) expect[choice[r][c] * 2 + d] += w.values()[(r * 3 + c) * 2 + d];
            }
        }
        for (std::size_t i = 0; i < 6; ++i) REQUIRE(x.grad()[i] == Approx(expect[i]).margin(1e-12));
    }

    SECTION("out-of-range index names the offending value") {
        auto x = Tensor::zeros({3, 2});
        IndexMatrix idx(1, 1);
        idx(0, 0) = 7;
        REQUIRE_THROWS_WITH(gather_rows(x, idx), Catch::Matchers::ContainsSubstring("7"));
    }

    SECTION("reshape and transpose are bijective data movements") {
        Rng rng(17);
        auto x = random_tensor<float>({2, 3, 4}, rng);
        auto back = reshape(reshape(x, {4, 6}), {2, 3, 4});
        for (std::size_t i = 0; i < x.numel(); ++i) REQUIRE(back.values()[i] == x.values()[i]);
        auto t = transpose(transpose(x, {2, 0, 1}), {1, 2, 0});
        for (std::size_t i = 0; i < x.numel(); ++i) REQUIRE(t.values()[i] == x.values()[i]);
    }

    SECTION("transpose gradient") {
        Rng rng(18);
        auto x = random_tensor<double>({2, 3, 4}, rng);
        auto w = random_tensor<double>({4, 2, 3}, rng);
        auto res = check_gradients<double>(
            {x}, [&] { return sum(mul(transpose(x, {2, 0, 1}), w)); }, 1e-3, 1e-3, 1e-6);
        INFO(res.worst_at);
        REQUIRE(res.ok());
    }
}

TEST_CASE("backward semantics") {
    SECTION("sum gives all-ones") {
        auto x = Tensor::from({4}, {1, 2, 3, 4}).set_requires_grad(true);
        sum(x).backward();
        for (auto g : x.grad()) REQUIRE(g == 1.0f);
    }

    SECTION("sum of squares gives 2x") {
        auto x = Tensor::from({3}, {1, -2, 3}).set_requires_grad(true);
        sum(mul(x, x)).backward();
        REQUIRE(x.grad()[0] == Approx(2));
        REQUIRE(x.grad()[1] == Approx(-4));
        REQUIRE(x.grad()[2] == Approx(6));
    }

    SECTION("a tensor consumed twice accumulates both contributions") {
        auto x = Tensor::from({3}, {1, 1, 1}).set_requires_grad(true);
        add(sum(x), sum(scale(x, 2.0f))).backward();
        for (auto g : x.grad()) REQUIRE(g == Approx(3.0));
    }

    SECTION("repeated backward calls accumulate into leaves") {
        auto x = Tensor::from({2}, {1, 2}).set_requires_grad(true);
        auto loss = sum(x);
        loss.backward();
        loss.backward();
        for (auto g : x.grad()) REQUIRE(g == Approx(2.0));
    }

    SECTION("non-scalar loss is rejected") {
        auto x = Tensor::from({2}, {1, 2}).set_requires_grad(true);
        REQUIRE_THROWS_AS(relu(x).backward(), std::invalid_argument);
    }

    SECTION("no tape under NoGradGuard") {
        auto x = Tensor::from({2}, {1, 2}).set_requires_grad(true);
        NoGradGuard ng;
        auto y = sum(x);
        REQUIRE_FALSE(y.requires_grad());
    }
}
