#include <cmath>
#include <vector>

#include "doctest.h"
#include "support/finite_diff.hpp"
#include "t4d/models.hpp"
#include "t4d/saliency.hpp"

using namespace t4d;

namespace {

ModelConfig tiny_config(std::array<std::size_t, 4> geometry) {
    ModelConfig cfg;
    cfg.stage_depths = {1, 1, 1, 1};
    cfg.stem_channels = 2;
    cfg.stage_channels = {2, 4, 4, 8};
    cfg.final_channels = 8;
    cfg.lstm_hidden = 4;
    cfg.input_geometry = geometry;
    return cfg;
}

}  // namespace

TEST_CASE("cam_map matches a hand-executed two-site Grad-CAM++ oracle") {
    // Linear toy: Y = 0.6*A1 - 0.2*A2, so G is the constant weight vector.
    Tensor<double> act(Shape{1, 1, 1, 1, 1, 2}, {0.8, 0.5});
    Tensor<double> grad(Shape{1, 1, 1, 1, 1, 2}, {0.6, -0.2});

    const double g1 = 0.6, g2 = -0.2, a1 = 0.8, a2 = 0.5;
    const double sum_ag3 = a1 * g1 * g1 * g1 + a2 * g2 * g2 * g2;
    const double alpha1 = g1 * g1 / (2 * g1 * g1 + sum_ag3);
    // site 2 contributes nothing: relu(G) = 0 there
    const double u = alpha1 * g1;
    const double raw1 = u * a1, raw2 = u * a2;
    const double want1 = raw1 / raw1, want2 = raw2 / raw1;

    const auto map = cam_map(act, grad, CamMethod::gradcampp);
    CHECK(map.shape == Shape({1, 1, 1, 2}));
    CHECK(std::abs(map.ptr()[0] - want1) < 1e-6);
    CHECK(std::abs(map.ptr()[1] - want2) < 1e-6);
}

TEST_CASE("cam_map hand-oracle with two channels") {
    Tensor<double> act(Shape{1, 2, 1, 1, 1, 2}, {0.8, 0.5, 0.3, 0.9});
    Tensor<double> grad(Shape{1, 2, 1, 1, 1, 2}, {0.6, -0.2, 0.1, 0.4});

    double raw[2] = {0, 0};
    for (int c = 0; c < 2; ++c) {
        const double* a = act.ptr() + c * 2;
        const double* g = grad.ptr() + c * 2;
        const double sum_ag3 = a[0] * g[0] * g[0] * g[0] + a[1] * g[1] * g[1] * g[1];
        double u = 0;
        for (int p = 0; p < 2; ++p) {
            const double denom = 2 * g[p] * g[p] + sum_ag3;
            if (denom != 0.0 && g[p] > 0) u += (g[p] * g[p] / denom) * g[p];
        }
        for (int p = 0; p < 2; ++p) raw[p] += u * a[p];
    }
    const double mx = std::max(std::max(raw[0], raw[1]), 0.0);

    const auto map = cam_map(act, grad, CamMethod::gradcampp);
    CHECK(std::abs(map.ptr()[0] - std::max(raw[0], 0.0) / mx) < 1e-6);
    CHECK(std::abs(map.ptr()[1] - std::max(raw[1], 0.0) / mx) < 1e-6);
}

TEST_CASE("cam_map plain Grad-CAM weights are gradient means") {
    Tensor<double> act(Shape{1, 1, 1, 1, 1, 3}, {1.0, 2.0, 4.0});
    Tensor<double> grad(Shape{1, 1, 1, 1, 1, 3}, {0.3, 0.6, 0.3});
    const double u = (0.3 + 0.6 + 0.3) / 3.0;
    const auto map = cam_map(act, grad, CamMethod::gradcam);
    CHECK(map.ptr()[0] == doctest::Approx(u * 1.0 / (u * 4.0)));
    CHECK(map.ptr()[1] == doctest::Approx(u * 2.0 / (u * 4.0)));
    CHECK(map.ptr()[2] == doctest::Approx(1.0));
}

TEST_CASE("cam_map edge cases") {
    SUBCASE("zero gradient gives an all-zero map") {
        Tensor<double> act(Shape{1, 2, 1, 1, 2, 2});
        t4d::testing::fill_uniform(act, 5);
        Tensor<double> grad = zeros<double>(act.shape);
        for (auto method : {CamMethod::gradcam, CamMethod::gradcampp}) {
            const auto map = cam_map(act, grad, method);
            for (std::size_t i = 0; i < map.shape.count(); ++i) CHECK(map.ptr()[i] == 0.0);
        }
    }
    SUBCASE("single positive site normalizes to one") {
        Tensor<double> act(Shape{1, 1, 1, 1, 1, 1}, {0.7});
        Tensor<double> grad(Shape{1, 1, 1, 1, 1, 1}, {2.5});
        const auto map = cam_map(act, grad, CamMethod::gradcampp);
        CHECK(map.ptr()[0] == doctest::Approx(1.0));
    }
    SUBCASE("logit scaling leaves the normalized map unchanged") {
        // Exact for plain Grad-CAM (u scales linearly) and for single-channel
        // Grad-CAM++ (any positive channel weight cancels in normalization).
        Tensor<double> act(Shape{1, 1, 1, 2, 2, 2});
        Tensor<double> grad(Shape{1, 1, 1, 2, 2, 2});
        t4d::testing::fill_uniform(act, 21);
        t4d::testing::fill_uniform(grad, 22);
        Tensor<double> scaled = grad;
        for (std::size_t i = 0; i < scaled.shape.count(); ++i) scaled.ptr()[i] *= 3.5;
        for (auto method : {CamMethod::gradcam, CamMethod::gradcampp}) {
            const auto base = cam_map(act, grad, method);
            const auto after = cam_map(act, scaled, method);
            for (std::size_t i = 0; i < base.shape.count(); ++i)
                CHECK(std::abs(base.ptr()[i] - after.ptr()[i]) < 1e-5);
        }
    }
}

TEST_CASE("upsample_linear_4d interpolates with aligned corners") {
    SUBCASE("same extents copy through") {
        Tensor<double> src(Shape{2, 2, 2, 2});
        t4d::testing::fill_uniform(src, 9);
        const auto out = upsample_linear_4d(src, {2, 2, 2, 2});
        for (std::size_t i = 0; i < src.shape.count(); ++i) CHECK(out.ptr()[i] == src.ptr()[i]);
    }
    SUBCASE("one axis linear ramp") {
        Tensor<double> src(Shape{1, 1, 1, 2}, {0.0, 1.0});
        const auto out = upsample_linear_4d(src, {1, 1, 1, 5});
        const double want[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
        for (int i = 0; i < 5; ++i) CHECK(out.ptr()[i] == doctest::Approx(want[i]));
    }
    SUBCASE("grid-aligned coordinates reproduce the source") {
        Tensor<double> src(Shape{2, 3, 2, 2});
        t4d::testing::fill_uniform(src, 10);
        const auto out = upsample_linear_4d(src, {3, 5, 3, 3});
        for (std::size_t t = 0; t < 2; ++t)
            for (std::size_t x = 0; x < 3; ++x)
                for (std::size_t y = 0; y < 2; ++y)
                    for (std::size_t z = 0; z < 2; ++z) {
                        const double got = out.at({t * 2, x * 2, y * 2, z * 2});
                        CHECK(std::abs(got - src.at({t, x, y, z})) < 1e-5);
                    }
    }
    SUBCASE("downsampling endpoints also align") {
        Tensor<double> src(Shape{1, 1, 1, 5});
        t4d::testing::fill_uniform(src, 11);
        const auto out = upsample_linear_4d(src, {1, 1, 1, 3});
        CHECK(out.ptr()[0] == doctest::Approx(src.ptr()[0]));
        CHECK(out.ptr()[2] == doctest::Approx(src.ptr()[4]));
    }
    SUBCASE("rank is validated") {
        CHECK_THROWS_AS(upsample_linear_4d(Tensor<double>(Shape{2, 2}), {1, 1, 1, 1}), ShapeError);
    }
}

TEST_CASE("gradcampp_4d produces normalized maps on a live model") {
    auto model = make_model<float>(ModelKind::a4d, tiny_config({9, 9, 9, 9}), 71);
    Tensor<float> x(Shape{1, 1, 9, 9, 9, 9});
    t4d::testing::fill_uniform(x, 72);

    const auto res = gradcampp_4d(*model, x, 1, "stage0_block0");
    CHECK(res.target_class == 1);
    CHECK(res.map4d.shape == Shape({5, 5, 5, 5}));
    CHECK(res.upsampled.shape == Shape({9, 9, 9, 9}));
    CHECK(res.temporal_signal.shape == Shape({9}));

    float mx = 0;
    for (std::size_t i = 0; i < res.map4d.shape.count(); ++i) {
        CHECK(res.map4d.ptr()[i] >= 0.0f);
        mx = std::max(mx, res.map4d.ptr()[i]);
    }
    CHECK((mx == doctest::Approx(1.0f) || mx == 0.0f));
    for (std::size_t i = 0; i < res.upsampled.shape.count(); ++i) REQUIRE(res.upsampled.ptr()[i] >= 0.0f);

    SUBCASE("upsampled map reproduces map4d at grid-aligned coordinates") {
        for (std::size_t t = 0; t < 5; ++t)
            for (std::size_t xx = 0; xx < 5; ++xx)
                for (std::size_t y = 0; y < 5; ++y)
                    for (std::size_t z = 0; z < 5; ++z) {
                        const float got = res.upsampled.at({t * 2, xx * 2, y * 2, z * 2});
                        REQUIRE(std::abs(got - res.map4d.at({t, xx, y, z})) < 1e-5f);
                    }
    }
    SUBCASE("temporal signal is the spatial mean of each upsampled frame") {
        for (std::size_t t = 0; t < 9; ++t) {
            double mean = 0;
            for (std::size_t p = 0; p < 729; ++p) mean += res.upsampled.ptr()[t * 729 + p];
            mean /= 729.0;
            CHECK(res.temporal_signal.ptr()[t] == doctest::Approx(mean).epsilon(1e-5));
        }
    }
    SUBCASE("taps are cleared after the call") {
        for (auto* l : model->conv_layers()) CHECK(!l->tapped);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(gradcampp_4d(*model, x, 7, "stage0_block0"), RangeError);
        CHECK_THROWS_AS(gradcampp_4d(*model, x, 0, "no_such_layer"), ConfigError);
    }
    SUBCASE("default layer selector names the last stage-3 conv") {
        CHECK(default_saliency_layer(tiny_config({9, 9, 9, 9})) == "stage3_block0");
        const auto deep = gradcampp_4d(*model, x, 0, default_saliency_layer(model->config()));
        CHECK(deep.upsampled.shape == Shape({9, 9, 9, 9}));
    }
}

TEST_CASE("expand taps capture the post-GELU activation") {
    auto model = make_model<float>(ModelKind::a4d, tiny_config({8, 6, 6, 6}), 44);
    Tensor<float> x(Shape{1, 1, 8, 6, 6, 6});
    t4d::testing::fill_uniform(x, 45);

    const auto res = gradcampp_4d(*model, x, 0, "stage1_block0_expand");
    Conv4dLayer<float>* tap = model->find_conv("stage1_block0_expand");

    // GELU's range is [about -0.1700, inf); a raw conv output would have an
    // unbounded negative tail.
    REQUIRE(tap->tap_out.shape.count() > 0);
    CHECK(tap->tap_out.shape[1] == 4 * tiny_config({8, 6, 6, 6}).stage_channels[1]);
    for (float v : tap->tap_out.data) CHECK(v >= -0.171f);
    CHECK(tap->tap_grad.shape == tap->tap_out.shape);

    float mx = 0;
    for (std::size_t i = 0; i < res.map4d.shape.count(); ++i) {
        CHECK(res.map4d.ptr()[i] >= 0.0f);
        mx = std::max(mx, res.map4d.ptr()[i]);
    }
    CHECK((mx == doctest::Approx(1.0f) || mx == 0.0f));
    CHECK(res.upsampled.shape == Shape({8, 6, 6, 6}));
}

TEST_CASE("roi signals reduce the saliency and input over masks") {
    auto model = make_model<float>(ModelKind::a4d, tiny_config({8, 6, 6, 6}), 14);
    Tensor<float> x(Shape{1, 1, 8, 6, 6, 6});
    t4d::testing::fill_uniform(x, 15);
    const auto res = gradcampp_4d(*model, x, 0, "stage0_block0");

    SUBCASE("full mask reproduces the temporal signal and frame means") {
        const auto full_mask = full<float>(Shape{6, 6, 6}, 1.0f);
        const auto sig = temporal_saliency_with_roi(res, full_mask, x);
        for (std::size_t t = 0; t < 8; ++t) {
            CHECK(sig.roi_saliency.ptr()[t] == doctest::Approx(res.temporal_signal.ptr()[t]).epsilon(1e-5));
            double mean = 0;
            for (std::size_t p = 0; p < 216; ++p) mean += x.ptr()[t * 216 + p];
            CHECK(sig.roi_bold.ptr()[t] == doctest::Approx(mean / 216.0).epsilon(1e-5));
        }
    }
    SUBCASE("single-voxel mask extracts that voxel's series") {
        Tensor<float> mask = zeros<float>(Shape{6, 6, 6});
        mask.at({2, 3, 4}) = 1.0f;
        const auto sig = temporal_saliency_with_roi(res, mask, x);
        for (std::size_t t = 0; t < 8; ++t) {
            CHECK(sig.roi_bold.ptr()[t] == x.at({0, 0, t, 2, 3, 4}));
            CHECK(sig.roi_saliency.ptr()[t] == res.upsampled.at({t, 2, 3, 4}));
        }
    }
    SUBCASE("disjoint masks combine by voxel-count weights") {
        Tensor<float> ma = zeros<float>(Shape{6, 6, 6}), mb = zeros<float>(Shape{6, 6, 6}),
                      both = zeros<float>(Shape{6, 6, 6});
        for (std::size_t i = 0; i < 3; ++i) {
            ma.at({0, 0, i}) = 1.0f;
            both.at({0, 0, i}) = 1.0f;
        }
        for (std::size_t i = 0; i < 5; ++i) {
            mb.at({5, 5, i}) = 1.0f;
            both.at({5, 5, i}) = 1.0f;
        }
        const auto sa = temporal_saliency_with_roi(res, ma, x);
        const auto sb = temporal_saliency_with_roi(res, mb, x);
        const auto su = temporal_saliency_with_roi(res, both, x);
        for (std::size_t t = 0; t < 8; ++t) {
            const double want = (3.0 * sa.roi_bold.ptr()[t] + 5.0 * sb.roi_bold.ptr()[t]) / 8.0;
            CHECK(su.roi_bold.ptr()[t] == doctest::Approx(want).epsilon(1e-5));
            const double wsal = (3.0 * sa.roi_saliency.ptr()[t] + 5.0 * sb.roi_saliency.ptr()[t]) / 8.0;
            CHECK(su.roi_saliency.ptr()[t] == doctest::Approx(wsal).epsilon(1e-5));
        }
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(temporal_saliency_with_roi(res, zeros<float>(Shape{6, 6, 6}), x), RangeError);
        CHECK_THROWS_AS(temporal_saliency_with_roi(res, zeros<float>(Shape{5, 6, 6}), x), ShapeError);
    }
}

TEST_CASE("kernel profiles are tagged by shape") {
    CHECK(classify_profile(Tensor<double>(Shape{3}, {-1.0, 0.0, 1.0})) == KernelTag::derivative_like);
    CHECK(classify_profile(Tensor<double>(Shape{3}, {1.0 / 3, 1.0 / 3, 1.0 / 3})) == KernelTag::averaging_like);
    CHECK(classify_profile(Tensor<double>(Shape{3}, {-0.2, -0.4, -0.1})) == KernelTag::averaging_like);
    CHECK(classify_profile(Tensor<double>(Shape{3}, {1e-9, -2e-9, 5e-10})) == KernelTag::other);
    CHECK(classify_profile(Tensor<double>(Shape{3}, {0.5, -0.5, 0.4})) == KernelTag::other);
    CHECK(classify_profile(Tensor<double>(Shape{3}, {0.3, -0.31, 0.02})) == KernelTag::derivative_like);
}

TEST_CASE("first-layer kernel extraction is deterministic and bounded") {
    auto model = make_model<float>(ModelKind::a4d, tiny_config({8, 6, 6, 6}), 31);
    const auto views = extract_first_layer_kernels(*model, {0, 1}, 3, 99);
    REQUIRE(views.size() == 6);
    const auto& w = model->conv_layers().front()->params.weight;
    for (const auto& v : views) {
        CHECK(v.channel < 2);
        CHECK(v.offset[0] < w.shape[3]);
        CHECK(v.offset[1] < w.shape[4]);
        CHECK(v.offset[2] < w.shape[5]);
        REQUIRE(v.profile.shape == Shape({w.shape[2]}));
        for (std::size_t dt = 0; dt < w.shape[2]; ++dt)
            CHECK(v.profile.ptr()[dt] == w.at({v.channel, 0, dt, v.offset[0], v.offset[1], v.offset[2]}));
    }
    const auto again = extract_first_layer_kernels(*model, {0, 1}, 3, 99);
    for (std::size_t i = 0; i < views.size(); ++i) {
        CHECK(again[i].channel == views[i].channel);
        CHECK(again[i].offset == views[i].offset);
        CHECK(again[i].tag == views[i].tag);
    }
    CHECK_THROWS_AS(extract_first_layer_kernels(*model, {9}, 1, 1), RangeError);
}
