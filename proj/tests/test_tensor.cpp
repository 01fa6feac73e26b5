#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "msq/tensor.hpp"

using namespace msq;

namespace {

TensorPtr randt(std::vector<int> shape, SeededRng& rng, double stddev = 1.0,
                bool requires_grad = false) {
    return Tensor::randn(std::move(shape), rng, stddev, requires_grad);
}

double checked(const std::function<TensorPtr(const TensorPtr&)>& f, const TensorPtr& x) {
    return grad_check(f, x, 1e-5);
}

}  // namespace

TEST_CASE("layer_norm normalizes rows") {
    SECTION("constant row maps to zeros") {
        auto x = Tensor::from_data({1, 4}, {5, 5, 5, 5});
        auto g = Tensor::full({4}, 1.0);
        auto b = Tensor::full({4}, 0.0);
        auto y = layer_norm(x, g, b, 1e-5);
        for (double v : y->data) REQUIRE(std::abs(v) < 1e-12);
    }
    SECTION("two-point row standardizes to -1, 1") {
        auto x = Tensor::from_data({1, 2}, {1, 3});
        auto g = Tensor::full({2}, 1.0);
        auto b = Tensor::full({2}, 0.0);
        auto y = layer_norm(x, g, b, 1e-12);
        REQUIRE(y->data[0] == Catch::Approx(-1.0).margin(1e-6));
        REQUIRE(y->data[1] == Catch::Approx(1.0).margin(1e-6));
    }
    SECTION("random 4x8 rows have zero mean and unit variance") {
        SeededRng rng(10);
        auto x = randt({4, 8}, rng, 5.0);
        auto g = Tensor::full({8}, 1.0);
        auto b = Tensor::full({8}, 0.0);
        auto y = layer_norm(x, g, b, 1e-5);
        for (int i = 0; i < 4; ++i) {
            double mu = 0.0;
            for (int j = 0; j < 8; ++j) mu += y->data[i * 8 + j];
            mu /= 8;
            double var = 0.0;
            for (int j = 0; j < 8; ++j) var += (y->data[i * 8 + j] - mu) * (y->data[i * 8 + j] - mu);
            var /= 8;
            REQUIRE(std::abs(mu) < 1e-12);
            REQUIRE(std::abs(var - 1.0) < 1e-6);
        }
    }
    SECTION("gain width mismatch throws") {
        auto x = Tensor::from_data({1, 4}, {1, 2, 3, 4});
        auto g = Tensor::full({3}, 1.0);
        auto b = Tensor::full({4}, 0.0);
        REQUIRE_THROWS_AS(layer_norm(x, g, b, 1e-5), DimensionError);
    }
}

TEST_CASE("softmax rows") {
    SECTION("uniform logits") {
        auto y = softmax_rows(Tensor::from_data({1, 3}, {0, 0, 0}));
        for (double v : y->data) REQUIRE(v == Catch::Approx(1.0 / 3).margin(1e-15));
    }
    SECTION("stable under large logits") {
        auto y = softmax_rows(Tensor::from_data({1, 2}, {1000, 0}));
        REQUIRE(std::abs(y->data[0] - 1.0) < 1e-12);
        REQUIRE(std::abs(y->data[1]) < 1e-12);
    }
    SECTION("log-integer logits give 1/6, 2/6, 3/6") {
        auto y = softmax_rows(
            Tensor::from_data({1, 3}, {std::log(1.0), std::log(2.0), std::log(3.0)}));
        REQUIRE(y->data[0] == Catch::Approx(1.0 / 6).margin(1e-12));
        REQUIRE(y->data[1] == Catch::Approx(2.0 / 6).margin(1e-12));
        REQUIRE(y->data[2] == Catch::Approx(3.0 / 6).margin(1e-12));
    }
    SECTION("rows sum to one") {
        SeededRng rng(4);
        auto y = softmax_rows(randt({5, 7}, rng, 3.0));
        for (int i = 0; i < 5; ++i) {
            double s = 0.0;
            for (int j = 0; j < 7; ++j) {
                REQUIRE(y->data[i * 7 + j] >= 0.0);
                s += y->data[i * 7 + j];
            }
            REQUIRE(std::abs(s - 1.0) < 1e-12);
        }
    }
    SECTION("empty row is a dimension error") {
        REQUIRE_THROWS_AS(softmax_rows(Tensor::create({2, 0})), DimensionError);
    }
}

TEST_CASE("mse") {
    SECTION("identical inputs give zero") {
        auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
        REQUIRE(mse(a, a)->item() == 0.0);
    }
    SECTION("closed form (9+16)/2") {
        auto a = Tensor::from_data({2}, {0, 0});
        auto b = Tensor::from_data({2}, {3, 4});
        REQUIRE(mse(a, b)->item() == Catch::Approx(12.5).margin(1e-15));
        REQUIRE(mse(b, a)->item() == Catch::Approx(12.5).margin(1e-15));
    }
    SECTION("gradient equals 2(a-b)/N") {
        SeededRng rng(9);
        auto a = randt({2, 3}, rng, 1.0, true);
        auto b = randt({2, 3}, rng, 1.0);
        auto loss = mse(a, b);
        backward(loss);
        for (size_t i = 0; i < a->data.size(); ++i)
            REQUIRE(a->grad[i] == Catch::Approx(2.0 * (a->data[i] - b->data[i]) / 6.0).margin(1e-15));
        auto b2 = detach(b);
        REQUIRE(checked([&](const TensorPtr& x) { return mse(x, b2); }, a) < 1e-6);
    }
    SECTION("shape mismatch throws") {
        REQUIRE_THROWS_AS(mse(Tensor::create({2, 2}), Tensor::create({4})), DimensionError);
    }
}

TEST_CASE("grad_check reference cases") {
    SECTION("quadratic") {
        auto x = Tensor::from_data({1}, {3.0}, true);
        double err = grad_check([](const TensorPtr& t) { return mul(t, t); }, x, 1e-5);
        REQUIRE(err < 1e-8);
        REQUIRE(x->grad[0] == Catch::Approx(6.0).margin(1e-12));
    }
    SECTION("mse of layer_norm") {
        SeededRng rng(21);
        auto x = randt({2, 4}, rng, 1.0, true);
        auto g = Tensor::full({4}, 1.0);
        auto b = Tensor::full({4}, 0.0);
        auto target = randt({2, 4}, rng, 1.0);
        double err = grad_check(
            [&](const TensorPtr& t) { return mse(layer_norm(t, g, b, 1e-5), target); }, x, 1e-5);
        REQUIRE(err < 1e-4);
    }
    SECTION("constant function has zero error") {
        auto x = Tensor::from_data({3}, {1, 2, 3}, true);
        auto c = Tensor::scalar(5.0);
        double err = grad_check([&](const TensorPtr&) { return c; }, x, 1e-5);
        REQUIRE(err == 0.0);
    }
    SECTION("eps out of range is a config error") {
        auto x = Tensor::scalar(1.0);
        REQUIRE_THROWS_AS(grad_check([](const TensorPtr& t) { return t; }, x, 1e-2), ConfigError);
    }
}

TEST_CASE("all primitives pass the gradient check on small random inputs") {
    SeededRng rng(1234);
    const double tol = 1e-4;

    auto B = randt({4, 5}, rng);
    auto T45 = randt({3, 5}, rng);
    auto x34 = randt({3, 4}, rng, 1.0, true);
    REQUIRE(checked([&](const TensorPtr& x) { return mse(matmul(x, B), T45); }, x34) < tol);

    auto c34 = randt({3, 4}, rng);
    auto t34 = randt({3, 4}, rng);
    REQUIRE(checked([&](const TensorPtr& x) { return mse(add(x, c34), t34); }, x34) < tol);
    REQUIRE(checked([&](const TensorPtr& x) { return mse(mul(x, c34), t34); }, x34) < tol);
    REQUIRE(checked([&](const TensorPtr& x) { return mse(scale(x, -1.7), t34); }, x34) < tol);

    auto bias4 = randt({4}, rng, 1.0, true);
    REQUIRE(checked([&](const TensorPtr& x) { return mse(add_row_bias(x, bias4), t34); }, x34) <
            tol);
    REQUIRE(checked([&](const TensorPtr& b) { return mse(add_row_bias(c34, b), t34); }, bias4) <
            tol);

    auto t64 = randt({6, 4}, rng);
    REQUIRE(checked([&](const TensorPtr& x) { return mse(concat_rows({x, c34}), t64); }, x34) <
            tol);
    auto t38 = randt({3, 8}, rng);
    REQUIRE(checked([&](const TensorPtr& x) { return mse(concat_cols({x, c34}), t38); }, x34) <
            tol);

    auto t14 = randt({1, 4}, rng);
    REQUIRE(checked([&](const TensorPtr& x) { return mse(slice_rows(x, 1, 2), t14); }, x34) < tol);
    auto t32 = randt({3, 2}, rng);
    REQUIRE(checked([&](const TensorPtr& x) { return mse(slice_cols(x, 1, 3), t32); }, x34) < tol);

    auto t43 = randt({4, 3}, rng);
    REQUIRE(checked([&](const TensorPtr& x) { return mse(transpose(x), t43); }, x34) < tol);

    REQUIRE(checked([&](const TensorPtr& x) { return mse(softmax_rows(x), t34); }, x34) < tol);
    REQUIRE(checked([&](const TensorPtr& x) { return mse(gelu(x), t34); }, x34) < tol);

    auto gain = randt({4}, rng, 0.5, true);
    auto bb = randt({4}, rng, 0.5, true);
    REQUIRE(checked([&](const TensorPtr& x) { return mse(layer_norm(x, gain, bb, 1e-5), t34); },
                    x34) < tol);
    REQUIRE(checked([&](const TensorPtr& g) { return mse(layer_norm(c34, g, bb, 1e-5), t34); },
                    gain) < tol);
    REQUIRE(checked([&](const TensorPtr& b) { return mse(layer_norm(c34, gain, b, 1e-5), t34); },
                    bb) < tol);

    std::vector<int> ids{2, 0, 2, 1};
    auto table = randt({3, 4}, rng, 1.0, true);
    auto t44 = randt({4, 4}, rng);
    REQUIRE(checked([&](const TensorPtr& t) { return mse(embedding_lookup(t, ids), t44); },
                    table) < tol);

    auto t62 = randt({6, 2}, rng);
    REQUIRE(checked([&](const TensorPtr& x) { return mse(reshape(x, {6, 2}), t62); }, x34) < tol);

    auto cost = randt({3, 2}, rng);
    auto sint = randt({3, 2}, rng);
    REQUIRE(checked([&](const TensorPtr& x) { return mse(rotate_pairs(x, cost, sint), t34); },
                    x34) < tol);

    std::vector<int> gidx{0, 5, 5, 11, 3};
    auto t15 = randt({1, 5}, rng);
    REQUIRE(checked([&](const TensorPtr& x) { return mse(gather_elements(x, gidx), t15); }, x34) <
            tol);

    REQUIRE(checked([&](const TensorPtr& x) { return mse(x, t34); }, x34) < tol);
    REQUIRE(checked([&](const TensorPtr& x) { return mse(t34, x); }, x34) < tol);
}

TEST_CASE("backward leaves non-participating leaves at exactly zero") {
    SeededRng rng(7);
    auto a = randt({2, 2}, rng, 1.0, true);
    auto b = randt({2, 2}, rng, 1.0, true);
    auto bystander = randt({2, 2}, rng, 1.0, true);
    auto other_branch = mul(bystander, bystander);  // separate graph, never reduced
    auto loss = mse(a, b);
    backward(loss);
    REQUIRE_FALSE(bystander->has_grad());
    for (size_t i = 0; i < bystander->data.size(); ++i) REQUIRE(bystander->grad_at(i) == 0.0);
    REQUIRE(a->has_grad());
    (void)other_branch;
}

TEST_CASE("detach cuts gradient flow") {
    SeededRng rng(8);
    auto a = randt({2, 2}, rng, 1.0, true);
    auto loss = mse(detach(a), Tensor::full({2, 2}, 0.5));
    backward(loss);
    REQUIRE_FALSE(a->has_grad());
}

TEST_CASE("NoGrad suppresses graph recording") {
    SeededRng rng(12);
    auto a = randt({2, 2}, rng, 1.0, true);
    NoGrad ng;
    auto y = mul(a, a);
    REQUIRE_FALSE(y->requires_grad);
    REQUIRE(y->parents.empty());
}

TEST_CASE("computation is bit-deterministic given the seed") {
    auto run = [](uint64_t seed) {
        SeededRng rng(seed);
        auto a = randt({8, 8}, rng, 1.0, true);
        auto b = randt({8, 8}, rng, 1.0);
        auto g = Tensor::full({8}, 1.0);
        auto z = Tensor::full({8}, 0.0);
        auto y = mse(softmax_rows(matmul(layer_norm(a, g, z, 1e-5), b)), Tensor::full({8, 8}, 0.1));
        backward(y);
        return std::make_pair(y->item(), a->grad);
    };
    auto [v1, g1] = run(77);
    auto [v2, g2] = run(77);
    REQUIRE(std::memcmp(&v1, &v2, sizeof(double)) == 0);
    REQUIRE(g1.size() == g2.size());
    REQUIRE(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("concat then complementary slices reconstructs inputs exactly") {
    SeededRng rng(31);
    for (int round = 0; round < 10; ++round) {
        const int n = 3 + static_cast<int>(rng.below(4));
        std::vector<TensorPtr> parts;
        std::vector<int> sizes;
        for (int p = 0; p < 3; ++p) {
            int m = 1 + static_cast<int>(rng.below(5));
            sizes.push_back(m);
            parts.push_back(randt({m, n}, rng));
        }
        auto whole = concat_rows(parts);
        int off = 0;
        for (int p = 0; p < 3; ++p) {
            auto back = slice_rows(whole, off, off + sizes[p]);
            REQUIRE(back->data == parts[p]->data);
            off += sizes[p];
        }
    }
}

TEST_CASE("matmul rejects incompatible shapes") {
    REQUIRE_THROWS_AS(matmul(Tensor::create({2, 3}), Tensor::create({2, 3})), DimensionError);
}

TEST_CASE("backward requires a scalar root") {
    SeededRng rng(5);
    auto a = randt({2, 2}, rng, 1.0, true);
    auto y = mul(a, a);
    REQUIRE_THROWS_AS(backward(y), DimensionError);
}
