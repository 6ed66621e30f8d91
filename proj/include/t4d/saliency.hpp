#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "t4d/common.hpp"
#include "t4d/models.hpp"
#include "t4d/tensor.hpp"

namespace t4d {

enum class CamMethod { gradcam, gradcampp };

template <typename T>
struct SaliencyResult {
    Tensor<T> map4d;            // (Ta,Xa,Ya,Za) at the tapped layer's resolution
    Tensor<T> upsampled;        // (T,X,Y,Z) at input resolution, max-normalized
    Tensor<T> temporal_signal;  // (T) spatial mean of upsampled per timepoint
    std::size_t target_class = 0;
};

inline std::string default_saliency_layer(const ModelConfig& cfg) {
    return "stage3_block" + std::to_string(cfg.stage_depths[3] - 1);
}

// ---- separable align-corners linear upsampling ----

namespace detail {

template <typename T>
Tensor<T> resize_axis_linear(const Tensor<T>& src, std::size_t axis, std::size_t dst_extent) {
    const std::size_t rank = src.shape.rank();
    if (axis >= rank) throw RangeError("resize: axis out of range");
    const std::size_t s = src.shape[axis];
    if (s == dst_extent) return src;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= src.shape[i];
    for (std::size_t i = axis + 1; i < rank; ++i) inner *= src.shape[i];

    auto dims = src.shape.dims;
    dims[axis] = dst_extent;
    Tensor<T> dst{Shape(dims)};
    for (std::size_t o = 0; o < outer; ++o) {
        const T* sp = src.ptr() + o * s * inner;
        T* dp = dst.ptr() + o * dst_extent * inner;
        for (std::size_t i = 0; i < dst_extent; ++i) {
            double pos = 0;
            if (dst_extent > 1 && s > 1)
                pos = static_cast<double>(i) * static_cast<double>(s - 1) / static_cast<double>(dst_extent - 1);
            const std::size_t i0 = std::min(s - 1, static_cast<std::size_t>(pos));
            const std::size_t i1 = std::min(s - 1, i0 + 1);
            const double w = pos - static_cast<double>(i0);
            const T* a = sp + i0 * inner;
            const T* b = sp + i1 * inner;
            T* out = dp + i * inner;
            for (std::size_t j = 0; j < inner; ++j)
                out[j] = static_cast<T>((1.0 - w) * static_cast<double>(a[j]) + w * static_cast<double>(b[j]));
        }
    }
    return dst;
}

}  // namespace detail

template <typename T>
Tensor<T> upsample_linear_4d(const Tensor<T>& src, const std::array<std::size_t, 4>& dst_dims) {
    if (src.shape.rank() != 4) throw ShapeError("upsample: expected a rank-4 map, got " + src.shape.str());
    Tensor<T> out = src;
    for (std::size_t axis = 0; axis < 4; ++axis) out = detail::resize_axis_linear(out, axis, dst_dims[axis]);
    return out;
}

// ---- Grad-CAM++ ----

// Channel-weighted activation map for a single-sample activation/gradient
// pair (1,K,Ta,Xa,Ya,Za): relu of the weighted channel sum, max-normalized.
template <typename T>
Tensor<T> cam_map(const Tensor<T>& act, const Tensor<T>& grad, CamMethod method) {
    check_same_shape(act, grad, "cam_map");
    if (act.shape.rank() != 6 || act.shape[0] != 1)
        throw ShapeError("cam_map: expected a (1,K,Ta,Xa,Ya,Za) activation, got " + act.shape.str());
    const std::size_t channels = act.shape[1];
    const std::size_t positions = act.shape[2] * act.shape[3] * act.shape[4] * act.shape[5];

    std::vector<double> map(positions, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
        const T* a = act.ptr() + c * positions;
        const T* g = grad.ptr() + c * positions;
        double u = 0;
        if (method == CamMethod::gradcam) {
            for (std::size_t p = 0; p < positions; ++p) u += g[p];
            u /= static_cast<double>(positions);
        } else {
            // alpha = G^2 / (2 G^2 + sum A G^3); the sum runs over the
            // channel's positions and the zero-denominator case yields 0.
            double sum_ag3 = 0;
            for (std::size_t p = 0; p < positions; ++p) {
                const double gv = g[p];
                sum_ag3 += static_cast<double>(a[p]) * gv * gv * gv;
            }
            for (std::size_t p = 0; p < positions; ++p) {
                const double gv = g[p];
                const double denom = 2.0 * gv * gv + sum_ag3;
                if (denom == 0.0 || gv <= 0.0) continue;  // relu(G) kills gv <= 0
                u += (gv * gv / denom) * gv;
            }
        }
        for (std::size_t p = 0; p < positions; ++p) map[p] += u * static_cast<double>(a[p]);
    }

    double mx = 0;
    for (double& v : map) {
        v = std::max(0.0, v);
        mx = std::max(mx, v);
    }
    if (mx > 0)
        for (double& v : map) v /= mx;

    Tensor<T> out(Shape{act.shape[2], act.shape[3], act.shape[4], act.shape[5]});
    for (std::size_t p = 0; p < positions; ++p) out.ptr()[p] = static_cast<T>(map[p]);
    return out;
}

template <typename T>
SaliencyResult<T> gradcampp_4d(Model<T>& model, const Tensor<T>& x, std::size_t target_class,
                               const std::string& layer, CamMethod method = CamMethod::gradcampp) {
    if (x.shape.rank() != 6 || x.shape[0] != 1)
        throw ShapeError("saliency: expected a single-sample (1,C,T,X,Y,Z) input, got " + x.shape.str());
    model.set_tap(layer);
    const auto logits = model.forward(x, true);
    const std::size_t k = logits.shape[1];
    if (target_class >= k) {
        for (auto* l : model.conv_layers()) l->tapped = false;
        throw RangeError("saliency: target class " + std::to_string(target_class) + " out of range");
    }
    Tensor<T> grad_logits = zeros<T>(logits.shape);
    grad_logits.ptr()[target_class] = T(1);
    model.zero_grad();
    model.backward(grad_logits);

    Conv4dLayer<T>* tap = model.find_conv(layer);
    SaliencyResult<T> res;
    res.target_class = target_class;
    res.map4d = cam_map(tap->tap_out, tap->tap_grad, method);
    for (auto* l : model.conv_layers()) l->tapped = false;
    res.upsampled = upsample_linear_4d(res.map4d, {x.shape[2], x.shape[3], x.shape[4], x.shape[5]});
    // Interpolation attenuates the peak whenever the output lattice misses
    // the source maximum, so the upsampled map is max-normalized again.
    T up_max = 0;
    for (const T v : res.upsampled.data) up_max = std::max(up_max, v);
    if (up_max > 0)
        for (T& v : res.upsampled.data) v /= up_max;
    res.temporal_signal = Tensor<T>(Shape{x.shape[2]});
    const std::size_t spatial = x.shape[3] * x.shape[4] * x.shape[5];
    for (std::size_t t = 0; t < x.shape[2]; ++t) {
        double m = 0;
        const T* fr = res.upsampled.ptr() + t * spatial;
        for (std::size_t p = 0; p < spatial; ++p) m += fr[p];
        res.temporal_signal.ptr()[t] = static_cast<T>(m / static_cast<double>(spatial));
    }
    return res;
}

// ---- ROI signals ----

template <typename T>
struct RoiSignals {
    Tensor<T> roi_bold;      // (T)
    Tensor<T> roi_saliency;  // (T)
};

template <typename T>
RoiSignals<T> temporal_saliency_with_roi(const SaliencyResult<T>& result, const Tensor<T>& roi_mask,
                                         const Tensor<T>& x) {
    if (x.shape.rank() != 6 || x.shape[0] != 1 || x.shape[1] != 1)
        throw ShapeError("roi: expected a single-sample (1,1,T,X,Y,Z) input");
    if (roi_mask.shape.rank() != 3 || roi_mask.shape[0] != x.shape[3] || roi_mask.shape[1] != x.shape[4] ||
        roi_mask.shape[2] != x.shape[5])
        throw ShapeError("roi: mask geometry does not match the input volume");
    const std::size_t t = x.shape[2], spatial = roi_mask.shape.count();
    std::size_t count = 0;
    for (std::size_t p = 0; p < spatial; ++p)
        if (roi_mask.ptr()[p] > T(0.5)) ++count;
    if (count == 0) throw RangeError("roi: empty mask");

    RoiSignals<T> out;
    out.roi_bold = Tensor<T>(Shape{t});
    out.roi_saliency = Tensor<T>(Shape{t});
    for (std::size_t ti = 0; ti < t; ++ti) {
        double bold = 0, sal = 0;
        const T* xfr = x.ptr() + ti * spatial;
        const T* sfr = result.upsampled.ptr() + ti * spatial;
        for (std::size_t p = 0; p < spatial; ++p)
            if (roi_mask.ptr()[p] > T(0.5)) {
                bold += xfr[p];
                sal += sfr[p];
            }
        out.roi_bold.ptr()[ti] = static_cast<T>(bold / static_cast<double>(count));
        out.roi_saliency.ptr()[ti] = static_cast<T>(sal / static_cast<double>(count));
    }
    return out;
}

// ---- first-layer kernel extraction ----

enum class KernelTag { derivative_like, averaging_like, other };

inline const char* kernel_tag_name(KernelTag t) {
    switch (t) {
        case KernelTag::derivative_like: return "derivative";
        case KernelTag::averaging_like: return "averaging";
        default: return "other";
    }
}

template <typename T>
struct KernelView {
    std::size_t channel = 0;
    std::array<std::size_t, 3> offset{};  // (dx,dy,dz) within the spatial kernel
    Tensor<T> profile;                    // (kT)
    KernelTag tag = KernelTag::other;
};

// Tag thresholds: profiles with total magnitude below 1e-6 are "other";
// derivative-like needs a sign change and |sum| <= 0.1 * sum|w|;
// averaging-like needs every tap on one side of zero.
template <typename T>
KernelTag classify_profile(const Tensor<T>& profile) {
    double sum = 0, mag = 0, mn = 0, mx = 0;
    for (std::size_t i = 0; i < profile.shape.count(); ++i) {
        const double w = profile.ptr()[i];
        sum += w;
        mag += std::abs(w);
        mn = std::min(mn, w);
        mx = std::max(mx, w);
    }
    if (mag < 1e-6) return KernelTag::other;
    if (std::abs(sum) <= 0.1 * mag && mn < 0 && mx > 0) return KernelTag::derivative_like;
    if (mn >= 0 || mx <= 0) return KernelTag::averaging_like;
    return KernelTag::other;
}

template <typename T>
std::vector<KernelView<T>> extract_first_layer_kernels(Model<T>& model, const std::vector<std::size_t>& channels,
                                                       std::size_t offsets_per_channel, std::uint64_t seed) {
    Conv4dLayer<T>* first = model.conv_layers().front();
    const Tensor<T>& w = first->params.weight;  // (Cout,Cin,kT,kX,kY,kZ)
    const std::size_t cout = w.shape[0], kt = w.shape[2], kx = w.shape[3], ky = w.shape[4], kz = w.shape[5];
    std::mt19937_64 rng(seed);
    std::vector<KernelView<T>> views;
    for (std::size_t c : channels) {
        if (c >= cout) throw RangeError("kernels: channel " + std::to_string(c) + " out of range");
        for (std::size_t o = 0; o < offsets_per_channel; ++o) {
            KernelView<T> view;
            view.channel = c;
            view.offset = {rng() % kx, rng() % ky, rng() % kz};
            view.profile = Tensor<T>(Shape{kt});
            for (std::size_t dt = 0; dt < kt; ++dt)
                view.profile.ptr()[dt] =
                    w.at({c, 0, dt, view.offset[0], view.offset[1], view.offset[2]});
            view.tag = classify_profile(view.profile);
            views.push_back(std::move(view));
        }
    }
    return views;
}

}  // namespace t4d
