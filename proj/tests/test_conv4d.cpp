#include <cstdint>
#include <random>

#include "doctest.h"
#include "support/finite_diff.hpp"
#include "t4d/conv4d.hpp"

using namespace t4d;
using t4d::testing::fill_uniform;
using t4d::testing::finite_diff_grad;
using t4d::testing::max_abs_diff;
using t4d::testing::max_rel_err;

namespace {

template <typename T>
Conv4dParams<T> random_params(const Conv4dSpec& spec, std::uint64_t seed) {
    Conv4dParams<T> p;
    p.weight = Tensor<T>(Shape{spec.out_channels, spec.in_channels, spec.kernel[0], spec.kernel[1], spec.kernel[2],
                               spec.kernel[3]});
    p.bias = Tensor<T>(Shape{spec.out_channels});
    fill_uniform(p.weight, seed, T(-0.5), T(0.5));
    fill_uniform(p.bias, seed + 1, T(-0.5), T(0.5));
    return p;
}

}  // namespace

TEST_CASE("scalar kernel scales input") {
    Conv4dSpec spec;
    spec.in_channels = 1;
    spec.out_channels = 1;
    Conv4dParams<float> p;
    p.weight = Tensor<float>{Shape{1, 1, 1, 1, 1, 1}, {2.0f}};
    p.bias = Tensor<float>{Shape{1}, {0.0f}};
    auto in = full<float>(Shape{1, 1, 2, 2, 2, 2}, 1.0f);
    auto out = conv4d_forward(spec, p, in);
    CHECK(out.shape == in.shape);
    for (auto v : out.data) CHECK(v == 2.0f);
}

TEST_CASE("bias only") {
    Conv4dSpec spec;
    spec.in_channels = 2;
    spec.out_channels = 3;
    spec.kernel = {2, 2, 2, 2};
    Conv4dParams<float> p;
    p.weight = zeros<float>(Shape{3, 2, 2, 2, 2, 2});
    p.bias = Tensor<float>{Shape{3}, {1.5f, -2.0f, 0.25f}};
    Tensor<float> in(Shape{1, 2, 3, 3, 3, 3});
    fill_uniform(in, 3u);
    auto out = conv4d_forward(spec, p, in);
    for (std::size_t co = 0; co < 3; ++co) {
        const std::size_t block = out.data.size() / 3;
        for (std::size_t i = 0; i < block; ++i) CHECK(out[co * block + i] == p.bias[co]);
    }
}

TEST_CASE("identity kernel reproduces input") {
    Conv4dSpec spec;
    Conv4dParams<float> p;
    p.weight = Tensor<float>{Shape{1, 1, 1, 1, 1, 1}, {1.0f}};
    p.bias = Tensor<float>{Shape{1}, {0.0f}};
    Tensor<float> in(Shape{2, 1, 3, 4, 2, 3});
    fill_uniform(in, 5u);
    auto out = conv4d_reference(spec, p, in);
    CHECK(out.data == in.data);
}

TEST_CASE("all-ones 2x2x2x2 kernel counts 16*Cin") {
    for (std::size_t cin : {1u, 3u}) {
        Conv4dSpec spec;
        spec.in_channels = cin;
        spec.out_channels = 1;
        spec.kernel = {2, 2, 2, 2};
        Conv4dParams<float> p;
        p.weight = full<float>(Shape{1, cin, 2, 2, 2, 2}, 1.0f);
        p.bias = zeros<float>(Shape{1});
        auto in = full<float>(Shape{1, cin, 3, 3, 3, 3}, 1.0f);
        auto out = conv4d_reference(spec, p, in);
        for (auto v : out.data) CHECK(v == 16.0f * static_cast<float>(cin));
        auto out2 = conv4d_decomposed(spec, p, in);
        for (auto v : out2.data) CHECK(v == 16.0f * static_cast<float>(cin));
    }
}

TEST_CASE("seeded geometry matches reference") {
    Conv4dSpec spec;
    spec.in_channels = 2;
    spec.out_channels = 3;
    spec.kernel = {3, 3, 3, 3};
    spec.stride = {1, 1, 1, 1};
    spec.padding = {1, 1, 1, 1};
    auto p = random_params<float>(spec, 17u);
    Tensor<float> in(Shape{1, 2, 4, 5, 5, 5});
    fill_uniform(in, 18u);
    auto ref = conv4d_reference(spec, p, in);
    auto opt = conv4d_decomposed(spec, p, in);
    CHECK(ref.shape == opt.shape);
    CHECK(max_abs_diff(ref, opt) < 1e-5f);
}

TEST_CASE("temporal stride matches reference") {
    Conv4dSpec spec;
    spec.in_channels = 2;
    spec.out_channels = 2;
    spec.kernel = {3, 2, 2, 2};
    spec.stride = {2, 1, 2, 1};
    spec.padding = {1, 0, 1, 0};
    auto p = random_params<float>(spec, 31u);
    Tensor<float> in(Shape{2, 2, 5, 4, 4, 4});
    fill_uniform(in, 32u);
    CHECK(max_abs_diff(conv4d_reference(spec, p, in), conv4d_decomposed(spec, p, in)) < 1e-5f);
}

TEST_CASE("kT=1 equals per-frame 3D convolution") {
    Conv4dSpec spec;
    spec.in_channels = 2;
    spec.out_channels = 3;
    spec.kernel = {1, 3, 3, 3};
    spec.padding = {0, 1, 1, 1};
    auto p = random_params<float>(spec, 41u);
    Tensor<float> in(Shape{1, 2, 4, 5, 4, 5});
    fill_uniform(in, 42u);
    auto out = conv4d_forward(spec, p, in);

    // Apply the same kernel to each frame in isolation.
    const std::size_t frame = 5 * 4 * 5;
    for (std::size_t t = 0; t < 4; ++t) {
        Tensor<float> one(Shape{1, 2, 1, 5, 4, 5});
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t i = 0; i < frame; ++i) one[c * frame + i] = in[(c * 4 + t) * frame + i];
        auto fo = conv4d_forward(spec, p, one);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < frame; ++i)
                CHECK(out[(c * 4 + t) * frame + i] == doctest::Approx(fo[c * frame + i]).epsilon(1e-6));
    }
}

TEST_CASE("randomized oracle equivalence sweep") {
    std::mt19937_64 rng(9001);
    for (int trial = 0; trial < 25; ++trial) {
        Conv4dSpec spec;
        spec.in_channels = 1 + rng() % 3;
        spec.out_channels = 1 + rng() % 3;
        std::vector<std::size_t> in_dims{1 + rng() % 2, spec.in_channels};
        for (int a = 0; a < 4; ++a) {
            spec.kernel[static_cast<std::size_t>(a)] = 1 + rng() % 3;
            spec.stride[static_cast<std::size_t>(a)] = 1 + rng() % 2;
            spec.padding[static_cast<std::size_t>(a)] = rng() % 2;
            const std::size_t min_ext = std::max<std::int64_t>(
                1, static_cast<std::int64_t>(spec.kernel[static_cast<std::size_t>(a)]) -
                       2 * static_cast<std::int64_t>(spec.padding[static_cast<std::size_t>(a)]));
            in_dims.push_back(min_ext + rng() % (7 - std::min<std::size_t>(min_ext, 6)));
        }
        auto p = random_params<float>(spec, rng());
        Tensor<float> in{Shape(in_dims)};
        fill_uniform(in, rng());
        auto ref = conv4d_reference(spec, p, in);
        auto opt = conv4d_decomposed(spec, p, in);
        REQUIRE(ref.shape == opt.shape);
        CHECK(max_abs_diff(ref, opt) < 1e-5f);
    }
}

TEST_CASE("linearity in the input for zero bias") {
    Conv4dSpec spec;
    spec.in_channels = 2;
    spec.out_channels = 2;
    spec.kernel = {2, 3, 3, 3};
    spec.padding = {1, 1, 1, 1};
    auto p = random_params<float>(spec, 55u);
    p.bias.fill(0.0f);
    Tensor<float> x(Shape{1, 2, 3, 4, 4, 4}), y(x.shape);
    fill_uniform(x, 56u);
    fill_uniform(y, 57u);
    const float a = 0.7f, b = -1.3f;
    auto lhs = conv4d_forward(spec, p, add(scale(x, a), scale(y, b)));
    auto rhs = add(scale(conv4d_forward(spec, p, x), a), scale(conv4d_forward(spec, p, y), b));
    CHECK(max_rel_err(lhs, rhs, 1.0f) < 1e-5f);
}

TEST_CASE("interior translation equivariance is exact") {
    Conv4dSpec spec;
    spec.in_channels = 1;
    spec.out_channels = 1;
    spec.kernel = {3, 3, 3, 3};
    auto p = random_params<float>(spec, 66u);
    // Support confined to the interior, one voxel clear of every boundary.
    Tensor<float> in(Shape{1, 1, 7, 7, 7, 7});
    std::mt19937_64 rng(67);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    for (std::size_t t = 2; t < 5; ++t)
        for (std::size_t x = 2; x < 5; ++x)
            for (std::size_t y = 2; y < 5; ++y)
                for (std::size_t z = 2; z < 5; ++z) in.at({0, 0, t, x, y, z}) = dist(rng);

    auto base = conv4d_forward(spec, p, in);
    for (std::size_t axis = 0; axis < 4; ++axis) {
        Tensor<float> shifted(in.shape);
        for (std::size_t t = 0; t < 7; ++t)
            for (std::size_t x = 0; x < 7; ++x)
                for (std::size_t y = 0; y < 7; ++y)
                    for (std::size_t z = 0; z < 7; ++z) {
                        std::size_t idx[4] = {t, x, y, z};
                        if (idx[axis] == 0) continue;
                        idx[axis] -= 1;
                        shifted.at({0, 0, t, x, y, z}) = in.at({0, 0, idx[0], idx[1], idx[2], idx[3]});
                    }
        auto out = conv4d_forward(spec, p, shifted);
        // Output extent is 5; compare out[.. i+1 ..] with base[.. i ..].
        for (std::size_t t = 0; t < 5; ++t)
            for (std::size_t x = 0; x < 5; ++x)
                for (std::size_t y = 0; y < 5; ++y)
                    for (std::size_t z = 0; z < 5; ++z) {
                        std::size_t idx[4] = {t, x, y, z};
                        if (idx[axis] + 1 >= 5) continue;
                        std::size_t up[4] = {t, x, y, z};
                        up[axis] += 1;
                        CHECK(out.at({0, 0, up[0], up[1], up[2], up[3]}) ==
                              base.at({0, 0, idx[0], idx[1], idx[2], idx[3]}));
                    }
    }
}

TEST_CASE("backward zero cotangent gives zero gradients") {
    Conv4dSpec spec;
    spec.in_channels = 2;
    spec.out_channels = 2;
    spec.kernel = {2, 2, 2, 2};
    auto p = random_params<float>(spec, 71u);
    Tensor<float> in(Shape{1, 2, 3, 3, 3, 3});
    fill_uniform(in, 72u);
    auto out_shape = conv4d_output_shape(spec, in.shape);
    auto g = conv4d_backward(spec, p, in, zeros<float>(out_shape));
    for (auto v : g.input.data) CHECK(v == 0.0f);
    for (auto v : g.weight.data) CHECK(v == 0.0f);
    for (auto v : g.bias.data) CHECK(v == 0.0f);
}

TEST_CASE("backward scalar kernel closed form") {
    Conv4dSpec spec;
    Conv4dParams<float> p;
    p.weight = Tensor<float>{Shape{1, 1, 1, 1, 1, 1}, {1.7f}};
    p.bias = Tensor<float>{Shape{1}, {0.3f}};
    Tensor<float> in(Shape{1, 1, 2, 3, 2, 2});
    fill_uniform(in, 81u);
    Tensor<float> cot(in.shape);
    fill_uniform(cot, 82u);
    auto g = conv4d_backward(spec, p, in, cot);
    float wsum = 0.0f, bsum = 0.0f;
    for (std::size_t i = 0; i < in.data.size(); ++i) {
        CHECK(g.input[i] == doctest::Approx(1.7f * cot[i]));
        wsum += in[i] * cot[i];
        bsum += cot[i];
    }
    CHECK(g.weight[0] == doctest::Approx(wsum).epsilon(1e-4));
    CHECK(g.bias[0] == doctest::Approx(bsum).epsilon(1e-4));
}

template <typename T>
static void conv_grad_check(T tol, T eps) {
    Conv4dSpec spec;
    spec.in_channels = 2;
    spec.out_channels = 2;
    spec.kernel = {2, 2, 2, 2};
    spec.stride = {1, 2, 1, 1};
    spec.padding = {1, 0, 1, 0};
    auto p = random_params<T>(spec, 91u);
    Tensor<T> x(Shape{1, 2, 3, 4, 3, 3});
    fill_uniform(x, 92u);
    auto out_shape = conv4d_output_shape(spec, x.shape);
    Tensor<T> cot(out_shape);
    fill_uniform(cot, 93u);

    auto loss = [&]() {
        auto o = conv4d_forward(spec, p, x);
        T s = T(0);
        for (std::size_t i = 0; i < o.data.size(); ++i) s += o[i] * cot[i];
        return s;
    };
    auto g = conv4d_backward(spec, p, x, cot);
    CHECK(max_rel_err(g.input, finite_diff_grad<T>(x, loss, eps)) < tol);
    CHECK(max_rel_err(g.weight, finite_diff_grad<T>(p.weight, loss, eps)) < tol);
    CHECK(max_rel_err(g.bias, finite_diff_grad<T>(p.bias, loss, eps)) < tol);
}

// The loss is linear in each perturbed coordinate, so a large step has no
// truncation error and damps float evaluation noise.
TEST_CASE("backward matches finite differences (float)") { conv_grad_check<float>(1e-3f, 5e-2f); }
TEST_CASE("backward matches finite differences (double)") { conv_grad_check<double>(1e-6, 1e-5); }

TEST_CASE("geometry and shape errors") {
    Conv4dSpec spec;
    spec.in_channels = 2;
    spec.out_channels = 1;
    spec.kernel = {3, 3, 3, 3};
    auto p = random_params<float>(spec, 101u);
    CHECK_THROWS_AS(conv4d_forward(spec, p, Tensor<float>(Shape{1, 1, 4, 4, 4, 4})), ShapeError);
    CHECK_THROWS_AS(conv4d_forward(spec, p, Tensor<float>(Shape{1, 2, 2, 4, 4, 4})), GeometryError);
    Tensor<float> in(Shape{1, 2, 4, 4, 4, 4});
    CHECK_THROWS_AS(conv4d_backward(spec, p, in, zeros<float>(Shape{1, 1, 1, 1, 1, 2})), ShapeError);
    Conv4dParams<float> bad = p;
    bad.bias = zeros<float>(Shape{4});
    CHECK_THROWS_AS(conv4d_forward(spec, bad, in), ShapeError);
}

// ---- pooling ----

namespace {

// Independent nested-loop pooling oracle.
template <typename T>
Tensor<T> pool_oracle(PoolKind kind, std::array<std::size_t, 4> w, std::array<std::size_t, 4> s,
                      const Tensor<T>& in) {
    const auto& d = in.shape.dims;
    std::vector<std::size_t> od{d[0], d[1]};
    for (int a = 0; a < 4; ++a) od.push_back((d[2 + static_cast<std::size_t>(a)] - w[static_cast<std::size_t>(a)]) /
                                                 s[static_cast<std::size_t>(a)] +
                                             1);
    Tensor<T> out{Shape(od)};
    for (std::size_t n = 0; n < d[0]; ++n)
        for (std::size_t c = 0; c < d[1]; ++c)
            for (std::size_t to = 0; to < od[2]; ++to)
                for (std::size_t xo = 0; xo < od[3]; ++xo)
                    for (std::size_t yo = 0; yo < od[4]; ++yo)
                        for (std::size_t zo = 0; zo < od[5]; ++zo) {
                            T best = std::numeric_limits<T>::lowest();
                            T sum = T(0);
                            for (std::size_t a0 = 0; a0 < w[0]; ++a0)
                                for (std::size_t a1 = 0; a1 < w[1]; ++a1)
                                    for (std::size_t a2 = 0; a2 < w[2]; ++a2)
                                        for (std::size_t a3 = 0; a3 < w[3]; ++a3) {
                                            T v = in.at({n, c, to * s[0] + a0, xo * s[1] + a1, yo * s[2] + a2,
                                                         zo * s[3] + a3});
                                            sum += v;
                                            best = std::max(best, v);
                                        }
                            out.at({n, c, to, xo, yo, zo}) =
                                kind == PoolKind::max ? best
                                                      : sum / static_cast<T>(w[0] * w[1] * w[2] * w[3]);
                        }
    return out;
}

}  // namespace

TEST_CASE("avg pool of constant is constant") {
    auto in = full<float>(Shape{1, 2, 4, 4, 4, 4}, 3.25f);
    auto out = pool4d_forward(PoolKind::avg, {2, 2, 2, 2}, {2, 2, 2, 2}, in);
    CHECK(out.shape == Shape({1, 2, 2, 2, 2, 2}));
    for (auto v : out.data) CHECK(v == doctest::Approx(3.25f));
}

TEST_CASE("max pool with full window is global max") {
    Tensor<float> in(Shape{1, 2, 3, 3, 3, 3});
    fill_uniform(in, 111u);
    auto out = pool4d_forward(PoolKind::max, {3, 3, 3, 3}, {1, 1, 1, 1}, in);
    CHECK(out.shape == Shape({1, 2, 1, 1, 1, 1}));
    const std::size_t block = in.data.size() / 2;
    for (std::size_t c = 0; c < 2; ++c) {
        float m = std::numeric_limits<float>::lowest();
        for (std::size_t i = 0; i < block; ++i) m = std::max(m, in[c * block + i]);
        CHECK(out[c] == m);
    }
}

TEST_CASE("pooling matches oracle on seeded case") {
    Tensor<float> in(Shape{2, 3, 5, 4, 5, 4});
    fill_uniform(in, 121u);
    std::array<std::size_t, 4> w{2, 2, 3, 2}, s{2, 1, 2, 2};
    for (auto kind : {PoolKind::max, PoolKind::avg}) {
        auto got = pool4d_forward(kind, w, s, in);
        auto want = pool_oracle(kind, w, s, in);
        REQUIRE(got.shape == want.shape);
        CHECK(max_abs_diff(got, want) < 1e-6f);
    }
}

TEST_CASE("max pool ties route to lowest linear index") {
    auto in = full<float>(Shape{1, 1, 2, 2, 1, 1}, 1.0f);
    auto go = full<float>(Shape{1, 1, 1, 1, 1, 1}, 1.0f);
    auto gin = pool4d_backward(PoolKind::max, {2, 2, 1, 1}, {1, 1, 1, 1}, in, go);
    CHECK(gin[0] == 1.0f);
    for (std::size_t i = 1; i < 4; ++i) CHECK(gin[i] == 0.0f);
}

template <typename T>
static void pool_grad_check(PoolKind kind, T tol, T eps) {
    Tensor<T> x(Shape{1, 2, 3, 3, 2, 3});
    // Distinct values keep the max differentiable at every entry.
    for (std::size_t i = 0; i < x.data.size(); ++i)
        x[i] = static_cast<T>((static_cast<double>((i * 37) % 101) - 50.0) / 25.0);
    std::array<std::size_t, 4> w{2, 2, 2, 2}, s{1, 1, 1, 1};
    auto out_shape = pool4d_forward(kind, w, s, x).shape;
    Tensor<T> cot(out_shape);
    fill_uniform(cot, 131u);
    auto loss = [&]() {
        auto o = pool4d_forward(kind, w, s, x);
        T acc = T(0);
        for (std::size_t i = 0; i < o.data.size(); ++i) acc += o[i] * cot[i];
        return acc;
    };
    auto g = pool4d_backward(kind, w, s, x, cot);
    CHECK(max_rel_err(g, finite_diff_grad<T>(x, loss, eps)) < tol);
}

TEST_CASE("pool backward matches finite differences") {
    pool_grad_check<float>(PoolKind::avg, 1e-3f, 1e-2f);
    pool_grad_check<float>(PoolKind::max, 1e-3f, 1e-3f);
    pool_grad_check<double>(PoolKind::avg, 1e-6, 1e-5);
    pool_grad_check<double>(PoolKind::max, 1e-6, 1e-5);
}

TEST_CASE("pool geometry errors") {
    Tensor<float> in(Shape{1, 1, 2, 2, 2, 2});
    CHECK_THROWS_AS(pool4d_forward(PoolKind::max, {3, 2, 2, 2}, {1, 1, 1, 1}, in), GeometryError);
}

TEST_CASE("global average pool") {
    auto c = full<float>(Shape{2, 3, 2, 2, 2, 2}, 1.25f);
    auto out = global_avg_pool(c);
    CHECK(out.shape == Shape({2, 3}));
    for (auto v : out.data) CHECK(v == doctest::Approx(1.25f));

    auto sparse = zeros<float>(Shape{1, 1, 2, 2, 2, 2});
    sparse[5] = 8.0f;
    CHECK(global_avg_pool(sparse)[0] == doctest::Approx(8.0f / 16.0f));
}

TEST_CASE("global average pool backward matches finite differences") {
    Tensor<double> x(Shape{1, 2, 2, 3, 2, 2});
    fill_uniform(x, 141u);
    Tensor<double> cot(Shape{1, 2});
    fill_uniform(cot, 142u);
    auto loss = [&]() {
        auto o = global_avg_pool(x);
        double acc = 0;
        for (std::size_t i = 0; i < o.data.size(); ++i) acc += o[i] * cot[i];
        return acc;
    };
    auto g = global_avg_pool_backward(x.shape, cot);
    CHECK(max_rel_err(g, finite_diff_grad<double>(x, loss, 1e-5)) < 1e-6);
}
