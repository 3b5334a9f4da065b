#include <doctest.h>

#include <cmath>
#include <cstring>

#include "gage/adam.hpp"
#include "gage/ops.hpp"
#include "gage/rng.hpp"
#include "gradcheck.hpp"

using namespace gage;
using gagetest::max_grad_error;
using gagetest::random_tensor;
using gagetest::weighted_sum;

namespace {
using D = TensPtr<double>;
using F = TensorPtr;
}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
    auto x = Tensor::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto w = Tensor::from({1, 1, 1, 1}, {1});
    auto b = Tensor::from({1}, {0});
    auto y = conv2d(x, w, b, 1, 0);
    CHECK(y->dims == std::vector<int>{1, 1, 3, 3});
    for (size_t i = 0; i < 9; ++i) CHECK(y->data[i] == doctest::Approx(x->data[i]));
}

TEST_CASE("conv2d hand example and zero input") {
    auto x = Tensor::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto w = Tensor::from({1, 1, 2, 2}, {1, 0, 0, 1});
    auto y = conv2d(x, w, TensorPtr{}, 1, 0);
    CHECK(y->dims == std::vector<int>{1, 1, 2, 2});
    CHECK(y->data[0] == 6);
    CHECK(y->data[1] == 8);
    CHECK(y->data[2] == 12);
    CHECK(y->data[3] == 14);

    auto z = Tensor::zeros({2, 3, 5, 5});
    auto wz = Tensor::from({2, 3, 3, 3}, std::vector<float>(2 * 3 * 9, 0.7f));
    auto yz = conv2d(z, wz, Tensor::zeros({2}), 1, 1);
    for (float v : yz->data) CHECK(v == 0.0f);
}

TEST_CASE("conv2d matches a direct nested-loop oracle on random shapes") {
    SplitMix64 rng(11);
    for (int trial = 0; trial < 6; ++trial) {
        const int N = rng.uniform_int(1, 2), C = rng.uniform_int(1, 3);
        const int H = rng.uniform_int(3, 7), W = rng.uniform_int(3, 7);
        const int K = rng.uniform_int(1, 3), kh = rng.uniform_int(1, 3);
        const int stride = rng.uniform_int(1, 2), pad = rng.uniform_int(0, 1);
        if (kh > H + 2 * pad || kh > W + 2 * pad) continue;
        auto x = Tensor::zeros({N, C, H, W});
        auto w = Tensor::zeros({K, C, kh, kh});
        auto b = Tensor::zeros({K});
        for (auto& v : x->data) v = float(rng.uniform(-1, 1));
        for (auto& v : w->data) v = float(rng.uniform(-1, 1));
        for (auto& v : b->data) v = float(rng.uniform(-1, 1));
        auto y = conv2d(x, w, b, stride, pad);
        const int Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kh) / stride + 1;
        REQUIRE(y->dims == std::vector<int>{N, K, Ho, Wo});
        for (int n = 0; n < N; ++n)
            for (int k = 0; k < K; ++k)
                for (int oy = 0; oy < Ho; ++oy)
                    for (int ox = 0; ox < Wo; ++ox) {
                        double acc = b->data[size_t(k)];
                        for (int c = 0; c < C; ++c)
                            for (int i = 0; i < kh; ++i)
                                for (int j = 0; j < kh; ++j) {
                                    const int yy = oy * stride - pad + i;
                                    const int xx = ox * stride - pad + j;
                                    if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                                    acc += double(x->data[size_t(((n * C + c) * H + yy) * W + xx)]) *
                                           double(w->data[size_t(((k * C + c) * kh + i) * kh + j)]);
                                }
                        CHECK(double(y->data[size_t(((n * K + k) * Ho + oy) * Wo + ox)]) ==
                              doctest::Approx(acc).epsilon(1e-4));
                    }
    }
}

TEST_CASE("conv2d is linear in its input for zero bias") {
    SplitMix64 rng(5);
    auto x = Tensor::zeros({1, 2, 6, 6});
    auto y = Tensor::zeros({1, 2, 6, 6});
    auto w = Tensor::zeros({3, 2, 3, 3});
    for (auto& v : x->data) v = float(rng.uniform(-1, 1));
    for (auto& v : y->data) v = float(rng.uniform(-1, 1));
    for (auto& v : w->data) v = float(rng.uniform(-1, 1));
    const float a = 1.7f, b = -0.6f;
    auto axby = add(scale(x, a), scale(y, b));
    auto lhs = conv2d(axby, w, TensorPtr{}, 1, 1);
    auto rhs = add(scale(conv2d(x, w, TensorPtr{}, 1, 1), a),
                   scale(conv2d(y, w, TensorPtr{}, 1, 1), b));
    for (size_t i = 0; i < lhs->data.size(); ++i)
        CHECK(lhs->data[i] == doctest::Approx(rhs->data[i]).epsilon(1e-5));
}

TEST_CASE("conv2d rejects mismatched shapes with axis context") {
    auto x = Tensor::zeros({1, 2, 4, 4});
    auto w = Tensor::zeros({1, 3, 3, 3});
    CHECK_THROWS_AS(conv2d(x, w, TensorPtr{}, 1, 0), ShapeError);
    auto w2 = Tensor::zeros({1, 2, 7, 7});
    CHECK_THROWS_AS(conv2d(x, w2, TensorPtr{}, 1, 0), ShapeError);
}

TEST_CASE("max_pool2d examples and oracle") {
    auto x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    auto y = max_pool2d(x, 2, 2);
    CHECK(y->dims == std::vector<int>{1, 1, 1, 1});
    CHECK(y->data[0] == 4);

    auto c = Tensor::full({1, 1, 4, 4}, 2.5f);
    auto yc = max_pool2d(c, 2, 2);
    for (float v : yc->data) CHECK(v == 2.5f);

    SplitMix64 rng(3);
    auto r = Tensor::zeros({1, 1, 4, 4});
    for (auto& v : r->data) v = float(rng.uniform(-2, 2));
    auto yr = max_pool2d(r, 2, 2);
    for (int oy = 0; oy < 2; ++oy)
        for (int ox = 0; ox < 2; ++ox) {
            float best = -1e30f;
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    best = std::max(best, r->data[size_t((oy * 2 + i) * 4 + ox * 2 + j)]);
            CHECK(yr->data[size_t(oy * 2 + ox)] == best);
        }

    CHECK_THROWS_AS(max_pool2d(x, 3, 1), ShapeError);
}

TEST_CASE("max_pool2d ties route gradient to the first row-major index") {
    auto x = Tensor::from({1, 1, 2, 2}, {7, 7, 7, 7}, true);
    auto y = max_pool2d(x, 2, 2);
    auto loss = sum_all(y);
    backward(loss);
    CHECK(x->grad[0] == 1.0f);
    CHECK(x->grad[1] == 0.0f);
    CHECK(x->grad[2] == 0.0f);
    CHECK(x->grad[3] == 0.0f);
}

TEST_CASE("global_avg_pool examples") {
    auto c = Tensor::full({2, 3, 4, 4}, 1.25f);
    auto yc = global_avg_pool(c);
    CHECK(yc->dims == std::vector<int>{2, 3});
    for (float v : yc->data) CHECK(v == doctest::Approx(1.25f));

    auto x = Tensor::from({1, 1, 2, 2}, {1, 3, 5, 7});
    CHECK(global_avg_pool(x)->data[0] == doctest::Approx(4.0f));

    SplitMix64 rng(9);
    auto r = Tensor::zeros({1, 2, 3, 5});
    for (auto& v : r->data) v = float(rng.uniform(-1, 1));
    auto yr = global_avg_pool(r);
    for (int ch = 0; ch < 2; ++ch) {
        double s = 0;
        for (int i = 0; i < 15; ++i) s += double(r->data[size_t(ch * 15 + i)]);
        CHECK(double(yr->data[size_t(ch)]) == doctest::Approx(s / 15.0).epsilon(1e-6));
    }
}

TEST_CASE("batch_norm2d closed-form cases") {
    auto gamma = Tensor::full({1}, 1.0f, true);
    auto beta = Tensor::zeros({1}, true);
    auto rm = Tensor::zeros({1});
    auto rv = Tensor::full({1}, 1.0f);

    SUBCASE("constant batch maps to zero") {
        auto x = Tensor::full({2, 1, 2, 2}, 3.25f);
        auto y = batch_norm2d(x, gamma, beta, rm, rv, true);
        for (float v : y->data) CHECK(std::abs(v) < 1e-3f);
    }
    SUBCASE("two-value batch maps to +-1 as eps vanishes") {
        auto x = Tensor::from({2, 1, 1, 1}, {0, 2});
        auto y = batch_norm2d(x, gamma, beta, rm, rv, true, 1e-12f, 0.1f);
        CHECK(y->data[0] == doctest::Approx(-1.0).epsilon(1e-5));
        CHECK(y->data[1] == doctest::Approx(1.0).epsilon(1e-5));
    }
    SUBCASE("zero gamma outputs beta everywhere") {
        auto g0 = Tensor::zeros({1}, true);
        auto b7 = Tensor::full({1}, 7.0f, true);
        auto x = Tensor::from({2, 1, 1, 2}, {0.3f, -2.0f, 5.0f, 1.0f});
        auto y = batch_norm2d(x, g0, b7, rm, rv, true);
        for (float v : y->data) CHECK(v == doctest::Approx(7.0f));
    }
    SUBCASE("train-mode batch of one is an error") {
        auto x = Tensor::zeros({1, 1, 2, 2});
        CHECK_THROWS_AS(batch_norm2d(x, gamma, beta, rm, rv, true), NumericError);
        CHECK_NOTHROW(batch_norm2d(x, gamma, beta, rm, rv, false));
    }
    SUBCASE("per-channel length mismatch is named") {
        auto x = Tensor::zeros({2, 3, 2, 2});
        CHECK_THROWS_AS(batch_norm2d(x, gamma, beta, rm, rv, true), ShapeError);
    }
}

TEST_CASE("linear examples and oracle") {
    auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    auto b0 = Tensor::zeros({2});
    auto x = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
    auto y = linear(x, eye, b0);
    for (size_t i = 0; i < 6; ++i) CHECK(y->data[i] == x->data[i]);

    auto w0 = Tensor::zeros({2, 2});
    auto b = Tensor::from({2}, {3, -1});
    auto yb = linear(x, w0, b);
    for (int n = 0; n < 3; ++n) {
        CHECK(yb->data[size_t(n * 2)] == 3.0f);
        CHECK(yb->data[size_t(n * 2 + 1)] == -1.0f);
    }

    SplitMix64 rng(21);
    auto xr = Tensor::zeros({2, 3});
    auto wr = Tensor::zeros({4, 3});
    auto br = Tensor::zeros({4});
    for (auto& v : xr->data) v = float(rng.uniform(-1, 1));
    for (auto& v : wr->data) v = float(rng.uniform(-1, 1));
    for (auto& v : br->data) v = float(rng.uniform(-1, 1));
    auto yr = linear(xr, wr, br);
    for (int n = 0; n < 2; ++n)
        for (int m = 0; m < 4; ++m) {
            double acc = br->data[size_t(m)];
            for (int d = 0; d < 3; ++d)
                acc += double(xr->data[size_t(n * 3 + d)]) * double(wr->data[size_t(m * 3 + d)]);
            CHECK(double(yr->data[size_t(n * 4 + m)]) == doctest::Approx(acc).epsilon(1e-5));
        }

    CHECK_THROWS_AS(linear(xr, Tensor::zeros({4, 5}), br), ShapeError);
}

TEST_CASE("relu examples and subgradient at zero") {
    auto x = Tensor::from({3}, {-1, 0, 2}, true);
    auto y = relu(x);
    CHECK(y->data[0] == 0);
    CHECK(y->data[1] == 0);
    CHECK(y->data[2] == 2);
    backward(sum_all(y));
    CHECK(x->grad[0] == 0);
    CHECK(x->grad[1] == 0);  // subgradient choice at exactly 0
    CHECK(x->grad[2] == 1);

    auto pos = Tensor::from({4}, {0.5f, 1, 2, 3});
    auto ypos = relu(pos);
    for (size_t i = 0; i < 4; ++i) CHECK(ypos->data[i] == pos->data[i]);
}

TEST_CASE("mse_loss examples") {
    auto a = Tensor::from({3}, {1, 2, 3});
    CHECK(mse_loss(a, a)->data[0] == 0.0f);

    auto p = Tensor::from({2}, {2, 1});
    auto t = Tensor::from({2}, {1, 2});
    CHECK(mse_loss(p, t)->data[0] == doctest::Approx(1.0f));

    SplitMix64 rng(33);
    auto pr = Tensor::zeros({8});
    auto tr = Tensor::zeros({8});
    for (auto& v : pr->data) v = float(rng.uniform(-2, 2));
    for (auto& v : tr->data) v = float(rng.uniform(-2, 2));
    double acc = 0;
    for (size_t i = 0; i < 8; ++i) {
        const double d = double(pr->data[i]) - double(tr->data[i]);
        acc += d * d;
    }
    CHECK(double(mse_loss(pr, tr)->data[0]) == doctest::Approx(acc / 8.0).epsilon(1e-6));
}

TEST_CASE("backward: sum of squares gives 2x and rejects non-scalar roots") {
    auto x = Tens<double>::from({4}, {0.5, -1.5, 2.0, 3.0}, true);
    auto loss = sum_all(mul(x, x));
    backward(loss);
    for (size_t i = 0; i < 4; ++i) CHECK(x->grad[i] == doctest::Approx(2.0 * x->data[i]));

    auto vec = Tens<double>::from({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(backward(add(vec, vec)), ShapeError);
}

TEST_CASE("backward accumulates additively across fan-out") {
    auto x = Tens<double>::from({3}, {1.0, 2.0, 3.0}, true);
    // z = sum(x*x) + sum(2x): dz/dx = 2x + 2
    auto z = add(sum_all(mul(x, x)), sum_all(scale(x, 2.0)));
    backward(z);
    for (size_t i = 0; i < 3; ++i)
        CHECK(x->grad[i] == doctest::Approx(2.0 * x->data[i] + 2.0));
}

TEST_CASE("gradient check: every op against central finite differences") {
    SplitMix64 rng(101);
    const double tol = 1e-4;

    SUBCASE("conv2d") {
        for (int t = 0; t < 5; ++t) {
            auto x = random_tensor({2, 2, 5, 5}, rng);
            auto w = random_tensor({3, 2, 3, 3}, rng);
            auto b = random_tensor({3}, rng);
            auto loss = [&] { return weighted_sum(conv2d(x, w, b, t % 2 + 1, 1), rng); };
            SplitMix64 wrng(500 + uint64_t(t));
            auto fixed = [&] {
                SplitMix64 r2 = wrng;
                return weighted_sum(conv2d(x, w, b, t % 2 + 1, 1), r2);
            };
            CHECK(max_grad_error({x, w, b}, fixed) < tol);
        }
    }
    SUBCASE("max_pool2d") {
        for (int t = 0; t < 5; ++t) {
            auto x = random_tensor({1, 2, 6, 6}, rng);
            SplitMix64 wrng(600 + uint64_t(t));
            auto fixed = [&] {
                SplitMix64 r2 = wrng;
                return weighted_sum(max_pool2d(x, 2, 2), r2);
            };
            CHECK(max_grad_error({x}, fixed) < tol);
        }
    }
    SUBCASE("global_avg_pool") {
        auto x = random_tensor({2, 3, 4, 4}, rng);
        SplitMix64 wrng(700);
        auto fixed = [&] {
            SplitMix64 r2 = wrng;
            return weighted_sum(global_avg_pool(x), r2);
        };
        CHECK(max_grad_error({x}, fixed) < tol);
    }
    SUBCASE("batch_norm2d train and eval") {
        for (bool training : {true, false}) {
            auto x = random_tensor({3, 2, 3, 3}, rng);
            auto gamma = random_tensor({2}, rng, 0.5, 1.5);
            auto beta = random_tensor({2}, rng);
            auto rm = random_tensor({2}, rng, -0.2, 0.2, false);
            auto rv = random_tensor({2}, rng, 0.8, 1.2, false);
            SplitMix64 wrng(800 + (training ? 1 : 0));
            auto fixed = [&] {
                SplitMix64 r2 = wrng;
                auto rm_copy = gage::Tens<double>::zeros(rm->dims);
                rm_copy->data = rm->data;
                auto rv_copy = gage::Tens<double>::zeros(rv->dims);
                rv_copy->data = rv->data;
                return weighted_sum(
                    batch_norm2d(x, gamma, beta, rm_copy, rv_copy, training, 1e-5, 0.1), r2);
            };
            CHECK(max_grad_error({x, gamma, beta}, fixed) < tol);
        }
    }
    SUBCASE("linear") {
        auto x = random_tensor({3, 4}, rng);
        auto w = random_tensor({2, 4}, rng);
        auto b = random_tensor({2}, rng);
        SplitMix64 wrng(900);
        auto fixed = [&] {
            SplitMix64 r2 = wrng;
            return weighted_sum(linear(x, w, b), r2);
        };
        CHECK(max_grad_error({x, w, b}, fixed) < tol);
    }
    SUBCASE("relu away from the kink") {
        auto x = random_tensor({20}, rng);
        for (auto& v : x->data)
            if (std::abs(v) < 0.05) v = 0.1;  // finite differences straddle the kink otherwise
        SplitMix64 wrng(1000);
        auto fixed = [&] {
            SplitMix64 r2 = wrng;
            return weighted_sum(relu(x), r2);
        };
        CHECK(max_grad_error({x}, fixed) < tol);
    }
    SUBCASE("mse_loss") {
        auto p = random_tensor({6}, rng);
        auto t = random_tensor({6}, rng);
        auto fixed = [&] { return mse_loss(p, t); };
        CHECK(max_grad_error({p, t}, fixed) < tol);
    }
    SUBCASE("composite conv-relu-pool-linear-mse chain") {
        auto x = random_tensor({2, 1, 6, 6}, rng);
        auto w = random_tensor({2, 1, 3, 3}, rng);
        auto b = random_tensor({2}, rng);
        auto wl = random_tensor({1, 2 * 9}, rng);
        auto bl = random_tensor({1}, rng);
        auto target = random_tensor({2}, rng, -1, 1, false);
        auto fixed = [&] {
            auto h = max_pool2d(relu(conv2d(x, w, b, 1, 1)), 2, 2);
            auto flat = reshape(h, {2, 2 * 9});
            auto y = reshape(linear(flat, wl, bl), {2});
            return mse_loss(y, target);
        };
        CHECK(max_grad_error({x, w, b, wl, bl}, fixed) < tol);
    }
}

TEST_CASE("forward determinism is bit-exact within a build") {
    SplitMix64 rng(77);
    auto x = Tensor::zeros({2, 3, 12, 12});
    auto w = Tensor::zeros({4, 3, 3, 3});
    for (auto& v : x->data) v = float(rng.uniform(-1, 1));
    for (auto& v : w->data) v = float(rng.uniform(-1, 1));
    auto y1 = conv2d(x, w, TensorPtr{}, 1, 1);
    auto y2 = conv2d(x, w, TensorPtr{}, 1, 1);
    CHECK(std::memcmp(y1->data.data(), y2->data.data(), y1->data.size() * sizeof(float)) == 0);
}

TEST_CASE("adam_step behaviour") {
    SUBCASE("zero gradient leaves parameters unchanged while moments decay") {
        auto p = Tensor::from({2}, {1.0f, -2.0f});
        AdamState<float> st;
        st.m = {0.4f, 0.4f};
        st.v = {0.2f, 0.2f};
        const std::vector<float> zero_grad{0.0f, 0.0f};
        adam_step(*p, std::span<const float>(zero_grad), st, 1, AdamConfig{0.0, 0.9, 0.999, 1e-8});
        CHECK(p->data[0] == 1.0f);
        CHECK(p->data[1] == -2.0f);
        CHECK(st.m[0] == doctest::Approx(0.36f));
        CHECK(st.v[0] == doctest::Approx(0.1998f));
    }
    SUBCASE("single scalar step matches the hand formula") {
        auto p = Tensor::from({1}, {1.0f});
        AdamState<float> st;
        const double g = 0.5, lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const std::vector<float> grad{float(g)};
        adam_step(*p, std::span<const float>(grad), st, 1, AdamConfig{lr, b1, b2, eps});
        const double m = (1 - b1) * g, v = (1 - b2) * g * g;
        const double mhat = m / (1 - b1), vhat = v / (1 - b2);
        const double expect = 1.0 - lr * mhat / (std::sqrt(vhat) + eps);
        CHECK(double(p->data[0]) == doctest::Approx(expect).epsilon(1e-6));
    }
    SUBCASE("two equal gradients move monotonically against the gradient") {
        auto p = Tensor::from({1}, {0.0f});
        AdamState<float> st;
        const std::vector<float> grad{1.0f};
        adam_step(*p, std::span<const float>(grad), st, 1, {});
        const float after1 = p->data[0];
        adam_step(*p, std::span<const float>(grad), st, 2, {});
        CHECK(after1 < 0.0f);
        CHECK(p->data[0] < after1);
    }
}
