#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <limits>
#include <utility>
#include <vector>

#include "t4d/common.hpp"
#include "t4d/gemm.hpp"
#include "t4d/tensor.hpp"

namespace t4d {

// Kernel geometry of one Conv4D layer. Convolution is cross-correlation (no
// kernel flip); padding is zero-fill and symmetric per axis. Axis order for
// kernel/stride/padding tuples is (T, X, Y, Z).
struct Conv4dSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::array<std::size_t, 4> kernel{1, 1, 1, 1};
    std::array<std::size_t, 4> stride{1, 1, 1, 1};
    std::array<std::size_t, 4> padding{0, 0, 0, 0};
};

template <typename T>
struct Conv4dParams {
    Tensor<T> weight;  // (out_channels, in_channels, kT, kX, kY, kZ)
    Tensor<T> bias;    // (out_channels)
};

template <typename T>
struct Conv4dGrads {
    Tensor<T> input;
    Tensor<T> weight;
    Tensor<T> bias;
};

inline void conv4d_validate_spec(const Conv4dSpec& spec) {
    if (spec.in_channels == 0 || spec.out_channels == 0)
        throw ShapeError("conv4d: channel counts must be positive");
    for (int a = 0; a < 4; ++a) {
        if (spec.kernel[a] == 0 || spec.stride[a] == 0)
            throw ShapeError("conv4d: kernel and stride extents must be positive");
    }
}

// floor((in + 2p - k)/s) + 1 per axis; throws GeometryError when any output
// extent would be < 1.
inline Shape conv4d_output_shape(const Conv4dSpec& spec, const Shape& in) {
    conv4d_validate_spec(spec);
    if (in.rank() != 6) throw ShapeError("conv4d: input must be rank 6 (N,C,T,X,Y,Z), got " + in.str());
    if (in[1] != spec.in_channels)
        throw ShapeError("conv4d: input has " + std::to_string(in[1]) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
    std::vector<std::size_t> out{in[0], spec.out_channels, 0, 0, 0, 0};
    static const char* axis_names[4] = {"T", "X", "Y", "Z"};
    for (int a = 0; a < 4; ++a) {
        const std::int64_t e = static_cast<std::int64_t>(in[2 + static_cast<std::size_t>(a)]) +
                               2 * static_cast<std::int64_t>(spec.padding[static_cast<std::size_t>(a)]) -
                               static_cast<std::int64_t>(spec.kernel[static_cast<std::size_t>(a)]);
        if (e < 0)
            throw GeometryError(std::string("conv4d: non-positive output extent on axis ") + axis_names[a] +
                                " for input " + in.str());
        out[2 + static_cast<std::size_t>(a)] =
            static_cast<std::size_t>(e / static_cast<std::int64_t>(spec.stride[static_cast<std::size_t>(a)])) + 1;
    }
    return Shape(out);
}

template <typename T>
inline void conv4d_validate_params(const Conv4dSpec& spec, const Conv4dParams<T>& p) {
    const Shape want_w{spec.out_channels, spec.in_channels, spec.kernel[0], spec.kernel[1], spec.kernel[2],
                       spec.kernel[3]};
    if (p.weight.shape != want_w)
        throw ShapeError("conv4d: weight shape " + p.weight.shape.str() + ", expected " + want_w.str());
    if (p.bias.shape != Shape{spec.out_channels})
        throw ShapeError("conv4d: bias shape " + p.bias.shape.str() + ", expected [" +
                         std::to_string(spec.out_channels) + "]");
}

namespace detail {

// Per-frame 3D geometry shared by the decomposition paths.
struct Frame3d {
    std::int64_t X, Y, Z;     // input spatial extents
    std::int64_t Xo, Yo, Zo;  // output spatial extents
    std::int64_t kx, ky, kz;
    std::int64_t sx, sy, sz;
    std::int64_t px, py, pz;
    std::int64_t cin;

    std::int64_t cols() const { return Xo * Yo * Zo; }
    std::int64_t rows() const { return cin * kx * ky * kz; }
    bool pointwise() const {
        return kx == 1 && ky == 1 && kz == 1 && sx == 1 && sy == 1 && sz == 1 && px == 0 && py == 0 && pz == 0;
    }
};

// Gathers one padded frame into a (rows x cols) patch matrix: row r indexes
// (ci,dx,dy,dz), column m indexes the output position (xo,yo,zo).
template <typename T>
void im2col_3d(T* dst, const T* frame, std::int64_t chan_stride, const Frame3d& g) {
    const std::int64_t M = g.cols();
    T* drow = dst;
    for (std::int64_t ci = 0; ci < g.cin; ++ci) {
        const T* src_c = frame + ci * chan_stride;
        for (std::int64_t dx = 0; dx < g.kx; ++dx)
            for (std::int64_t dy = 0; dy < g.ky; ++dy)
                for (std::int64_t dz = 0; dz < g.kz; ++dz, drow += M) {
                    for (std::int64_t xo = 0; xo < g.Xo; ++xo) {
                        const std::int64_t x = xo * g.sx + dx - g.px;
                        for (std::int64_t yo = 0; yo < g.Yo; ++yo) {
                            const std::int64_t y = yo * g.sy + dy - g.py;
                            T* dptr = drow + (xo * g.Yo + yo) * g.Zo;
                            if (x < 0 || x >= g.X || y < 0 || y >= g.Y) {
                                std::memset(dptr, 0, static_cast<std::size_t>(g.Zo) * sizeof(T));
                                continue;
                            }
                            const T* srow = src_c + (x * g.Y + y) * g.Z;
                            if (g.sz == 1) {
                                const std::int64_t z0 = dz - g.pz;
                                const std::int64_t lo = std::max<std::int64_t>(0, -z0);
                                const std::int64_t hi = std::min<std::int64_t>(g.Zo, g.Z - z0);
                                for (std::int64_t zo = 0; zo < std::min(lo, g.Zo); ++zo) dptr[zo] = T(0);
                                for (std::int64_t zo = lo; zo < hi; ++zo) dptr[zo] = srow[zo + z0];
                                for (std::int64_t zo = std::max(hi, lo); zo < g.Zo; ++zo) dptr[zo] = T(0);
                            } else {
                                for (std::int64_t zo = 0; zo < g.Zo; ++zo) {
                                    const std::int64_t z = zo * g.sz + dz - g.pz;
                                    dptr[zo] = (z >= 0 && z < g.Z) ? srow[z] : T(0);
                                }
                            }
                        }
                    }
                }
    }
}

// Scatter-add of a (rows x cols) patch-gradient matrix back into one frame.
template <typename T>
void col2im_add_3d(T* frame, std::int64_t chan_stride, const T* src, const Frame3d& g) {
    const std::int64_t M = g.cols();
    const T* srow_p = src;
    for (std::int64_t ci = 0; ci < g.cin; ++ci) {
        T* dst_c = frame + ci * chan_stride;
        for (std::int64_t dx = 0; dx < g.kx; ++dx)
            for (std::int64_t dy = 0; dy < g.ky; ++dy)
                for (std::int64_t dz = 0; dz < g.kz; ++dz, srow_p += M) {
                    for (std::int64_t xo = 0; xo < g.Xo; ++xo) {
                        const std::int64_t x = xo * g.sx + dx - g.px;
                        if (x < 0 || x >= g.X) continue;
                        for (std::int64_t yo = 0; yo < g.Yo; ++yo) {
                            const std::int64_t y = yo * g.sy + dy - g.py;
                            if (y < 0 || y >= g.Y) continue;
                            const T* sptr = srow_p + (xo * g.Yo + yo) * g.Zo;
                            T* drow = dst_c + (x * g.Y + y) * g.Z;
                            for (std::int64_t zo = 0; zo < g.Zo; ++zo) {
                                const std::int64_t z = zo * g.sz + dz - g.pz;
                                if (z >= 0 && z < g.Z) drow[z] += sptr[zo];
                            }
                        }
                    }
                }
    }
}

// Weight slab for one temporal offset dt, packed (Cout x K) contiguous.
template <typename T>
std::vector<std::vector<T>> pack_weight_slices(const Conv4dSpec& spec, const Tensor<T>& weight) {
    const std::int64_t cout = static_cast<std::int64_t>(spec.out_channels);
    const std::int64_t cin = static_cast<std::int64_t>(spec.in_channels);
    const std::int64_t kt = static_cast<std::int64_t>(spec.kernel[0]);
    const std::int64_t kxyz = static_cast<std::int64_t>(spec.kernel[1] * spec.kernel[2] * spec.kernel[3]);
    const std::int64_t K = cin * kxyz;
    std::vector<std::vector<T>> slices(static_cast<std::size_t>(kt));
    for (std::int64_t dt = 0; dt < kt; ++dt) {
        auto& s = slices[static_cast<std::size_t>(dt)];
        s.resize(static_cast<std::size_t>(cout * K));
        for (std::int64_t co = 0; co < cout; ++co)
            for (std::int64_t ci = 0; ci < cin; ++ci)
                std::memcpy(s.data() + co * K + ci * kxyz,
                            weight.ptr() + ((co * cin + ci) * kt + dt) * kxyz,
                            static_cast<std::size_t>(kxyz) * sizeof(T));
    }
    return slices;
}

inline Frame3d make_frame_geom(const Conv4dSpec& spec, const Shape& in, const Shape& out) {
    Frame3d g;
    g.X = static_cast<std::int64_t>(in[3]);
    g.Y = static_cast<std::int64_t>(in[4]);
    g.Z = static_cast<std::int64_t>(in[5]);
    g.Xo = static_cast<std::int64_t>(out[3]);
    g.Yo = static_cast<std::int64_t>(out[4]);
    g.Zo = static_cast<std::int64_t>(out[5]);
    g.kx = static_cast<std::int64_t>(spec.kernel[1]);
    g.ky = static_cast<std::int64_t>(spec.kernel[2]);
    g.kz = static_cast<std::int64_t>(spec.kernel[3]);
    g.sx = static_cast<std::int64_t>(spec.stride[1]);
    g.sy = static_cast<std::int64_t>(spec.stride[2]);
    g.sz = static_cast<std::int64_t>(spec.stride[3]);
    g.px = static_cast<std::int64_t>(spec.padding[1]);
    g.py = static_cast<std::int64_t>(spec.padding[2]);
    g.pz = static_cast<std::int64_t>(spec.padding[3]);
    g.cin = static_cast<std::int64_t>(spec.in_channels);
    return g;
}

}  // namespace detail

// Plain nested-loop implementation, the testing oracle. No lowering, no
// decomposition; accumulation order per output element is (ci,dt,dx,dy,dz).
template <typename T>
Tensor<T> conv4d_reference(const Conv4dSpec& spec, const Conv4dParams<T>& params, const Tensor<T>& input) {
    conv4d_validate_params(spec, params);
    const Shape out_shape = conv4d_output_shape(spec, input.shape);
    Tensor<T> out(out_shape);

    const std::int64_t N = static_cast<std::int64_t>(input.shape[0]);
    const std::int64_t Cin = static_cast<std::int64_t>(spec.in_channels);
    const std::int64_t Cout = static_cast<std::int64_t>(spec.out_channels);
    const std::int64_t Ti = static_cast<std::int64_t>(input.shape[2]);
    const std::int64_t X = static_cast<std::int64_t>(input.shape[3]);
    const std::int64_t Y = static_cast<std::int64_t>(input.shape[4]);
    const std::int64_t Z = static_cast<std::int64_t>(input.shape[5]);
    const std::int64_t To = static_cast<std::int64_t>(out_shape[2]);
    const std::int64_t Xo = static_cast<std::int64_t>(out_shape[3]);
    const std::int64_t Yo = static_cast<std::int64_t>(out_shape[4]);
    const std::int64_t Zo = static_cast<std::int64_t>(out_shape[5]);
    const std::int64_t kt = static_cast<std::int64_t>(spec.kernel[0]);
    const std::int64_t kx = static_cast<std::int64_t>(spec.kernel[1]);
    const std::int64_t ky = static_cast<std::int64_t>(spec.kernel[2]);
    const std::int64_t kz = static_cast<std::int64_t>(spec.kernel[3]);
    const std::int64_t st = static_cast<std::int64_t>(spec.stride[0]);
    const std::int64_t sx = static_cast<std::int64_t>(spec.stride[1]);
    const std::int64_t sy = static_cast<std::int64_t>(spec.stride[2]);
    const std::int64_t sz = static_cast<std::int64_t>(spec.stride[3]);
    const std::int64_t pt = static_cast<std::int64_t>(spec.padding[0]);
    const std::int64_t px = static_cast<std::int64_t>(spec.padding[1]);
    const std::int64_t py = static_cast<std::int64_t>(spec.padding[2]);
    const std::int64_t pz = static_cast<std::int64_t>(spec.padding[3]);

    const T* in_p = input.ptr();
    const T* w_p = params.weight.ptr();
    T* out_p = out.ptr();

    parallel_for(N * Cout, [&](std::int64_t nc) {
        const std::int64_t n = nc / Cout;
        const std::int64_t co = nc % Cout;
        for (std::int64_t to = 0; to < To; ++to)
            for (std::int64_t xo = 0; xo < Xo; ++xo)
                for (std::int64_t yo = 0; yo < Yo; ++yo)
                    for (std::int64_t zo = 0; zo < Zo; ++zo) {
                        T acc = params.bias[static_cast<std::size_t>(co)];
                        for (std::int64_t ci = 0; ci < Cin; ++ci)
                            for (std::int64_t dt = 0; dt < kt; ++dt) {
                                const std::int64_t t = to * st + dt - pt;
                                if (t < 0 || t >= Ti) continue;
                                for (std::int64_t dx = 0; dx < kx; ++dx) {
                                    const std::int64_t x = xo * sx + dx - px;
                                    if (x < 0 || x >= X) continue;
                                    for (std::int64_t dy = 0; dy < ky; ++dy) {
                                        const std::int64_t y = yo * sy + dy - py;
                                        if (y < 0 || y >= Y) continue;
                                        for (std::int64_t dz = 0; dz < kz; ++dz) {
                                            const std::int64_t z = zo * sz + dz - pz;
                                            if (z < 0 || z >= Z) continue;
                                            const T w =
                                                w_p[((((co * Cin + ci) * kt + dt) * kx + dx) * ky + dy) * kz + dz];
                                            const T v = in_p[((((n * Cin + ci) * Ti + t) * X + x) * Y + y) * Z + z];
                                            acc += w * v;
                                        }
                                    }
                                }
                            }
                        out_p[((((n * Cout + co) * To + to) * Xo + xo) * Yo + yo) * Zo + zo] = acc;
                    }
    });
    return out;
}

// Optimized path: the 4D convolution as a sum over temporal kernel offsets of
// 3D convolutions, each lowered to a patch gather plus blocked matmul.
template <typename T>
Tensor<T> conv4d_decomposed(const Conv4dSpec& spec, const Conv4dParams<T>& params, const Tensor<T>& input) {
    conv4d_validate_params(spec, params);
    const Shape out_shape = conv4d_output_shape(spec, input.shape);
    Tensor<T> out(out_shape);

    const std::int64_t N = static_cast<std::int64_t>(input.shape[0]);
    const std::int64_t Cin = static_cast<std::int64_t>(spec.in_channels);
    const std::int64_t Cout = static_cast<std::int64_t>(spec.out_channels);
    const std::int64_t Ti = static_cast<std::int64_t>(input.shape[2]);
    const std::int64_t To = static_cast<std::int64_t>(out_shape[2]);
    const std::int64_t kt = static_cast<std::int64_t>(spec.kernel[0]);
    const std::int64_t st = static_cast<std::int64_t>(spec.stride[0]);
    const std::int64_t pt = static_cast<std::int64_t>(spec.padding[0]);

    const detail::Frame3d g = detail::make_frame_geom(spec, input.shape, out_shape);
    const std::int64_t M = g.cols();
    const std::int64_t K = g.rows();
    const std::int64_t frame_in = g.X * g.Y * g.Z;
    const std::int64_t in_chan_stride = Ti * frame_in;
    const bool pw = g.pointwise();

    // Which input frames feed which output steps.
    std::vector<char> frame_used(static_cast<std::size_t>(Ti), 0);
    for (std::int64_t to = 0; to < To; ++to)
        for (std::int64_t dt = 0; dt < kt; ++dt) {
            const std::int64_t ti = to * st + dt - pt;
            if (ti >= 0 && ti < Ti) frame_used[static_cast<std::size_t>(ti)] = 1;
        }

    const auto w_slices = detail::pack_weight_slices(spec, params.weight);

    // Bias-fill the output, then accumulate GEMM contributions on top.
    T* out_p = out.ptr();
    parallel_for(N * Cout, [&](std::int64_t nc) {
        const std::int64_t co = nc % Cout;
        T* dst = out_p + nc * To * M;
        const T b = params.bias[static_cast<std::size_t>(co)];
        for (std::int64_t i = 0; i < To * M; ++i) dst[i] = b;
    });

    std::vector<T> patches;
    if (!pw) patches.resize(static_cast<std::size_t>(Ti * K * M));

    for (std::int64_t n = 0; n < N; ++n) {
        const T* in_n = input.ptr() + n * Cin * in_chan_stride;
        if (!pw) {
            parallel_for(Ti, [&](std::int64_t ti) {
                if (!frame_used[static_cast<std::size_t>(ti)]) return;
                detail::im2col_3d(patches.data() + ti * K * M, in_n + ti * frame_in, in_chan_stride, g);
            });
        }
        parallel_for(To, [&](std::int64_t to) {
            T* out_block = out_p + (n * Cout * To + to) * M;
            for (std::int64_t dt = 0; dt < kt; ++dt) {
                const std::int64_t ti = to * st + dt - pt;
                if (ti < 0 || ti >= Ti) continue;
                const T* b = pw ? in_n + ti * frame_in : patches.data() + ti * K * M;
                const std::int64_t ldb = pw ? in_chan_stride : M;
                gemm_acc(out_block, To * M, w_slices[static_cast<std::size_t>(dt)].data(), K, b, ldb, Cout, K, M);
            }
        });
    }
    return out;
}

// Public forward entry point.
template <typename T>
Tensor<T> conv4d_forward(const Conv4dSpec& spec, const Conv4dParams<T>& params, const Tensor<T>& input) {
    return conv4d_decomposed(spec, params, input);
}

// Exact vector-Jacobian products of conv4d_forward.
template <typename T>
Conv4dGrads<T> conv4d_backward(const Conv4dSpec& spec, const Conv4dParams<T>& params, const Tensor<T>& input,
                               const Tensor<T>& grad_out) {
    conv4d_validate_params(spec, params);
    const Shape out_shape = conv4d_output_shape(spec, input.shape);
    if (grad_out.shape != out_shape)
        throw ShapeError("conv4d_backward: grad shape " + grad_out.shape.str() + ", expected " + out_shape.str());

    const std::int64_t N = static_cast<std::int64_t>(input.shape[0]);
    const std::int64_t Cin = static_cast<std::int64_t>(spec.in_channels);
    const std::int64_t Cout = static_cast<std::int64_t>(spec.out_channels);
    const std::int64_t Ti = static_cast<std::int64_t>(input.shape[2]);
    const std::int64_t To = static_cast<std::int64_t>(out_shape[2]);
    const std::int64_t kt = static_cast<std::int64_t>(spec.kernel[0]);
    const std::int64_t st = static_cast<std::int64_t>(spec.stride[0]);
    const std::int64_t pt = static_cast<std::int64_t>(spec.padding[0]);

    const detail::Frame3d g = detail::make_frame_geom(spec, input.shape, out_shape);
    const std::int64_t M = g.cols();
    const std::int64_t K = g.rows();
    const std::int64_t frame_in = g.X * g.Y * g.Z;
    const std::int64_t in_chan_stride = Ti * frame_in;
    const bool pw = g.pointwise();

    Conv4dGrads<T> grads;
    grads.input = zeros<T>(input.shape);
    grads.weight = zeros<T>(params.weight.shape);
    grads.bias = zeros<T>(params.bias.shape);

    const T* go_p = grad_out.ptr();
    parallel_for(Cout, [&](std::int64_t co) {
        T acc = T(0);
        for (std::int64_t n = 0; n < N; ++n) {
            const T* src = go_p + (n * Cout + co) * To * M;
            for (std::int64_t i = 0; i < To * M; ++i) acc += src[i];
        }
        grads.bias[static_cast<std::size_t>(co)] = acc;
    });

    // Transposed weight slabs (K x Cout) for the input gradient.
    const auto w_slices = detail::pack_weight_slices(spec, params.weight);
    std::vector<std::vector<T>> wt_slices(static_cast<std::size_t>(kt));
    for (std::int64_t dt = 0; dt < kt; ++dt) {
        wt_slices[static_cast<std::size_t>(dt)].resize(static_cast<std::size_t>(K * Cout));
        transpose_block(wt_slices[static_cast<std::size_t>(dt)].data(), w_slices[static_cast<std::size_t>(dt)].data(),
                        K, Cout, K);
    }

    // (to, dt) contributors per input frame, in fixed order for reproducibility.
    std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>> feeders(static_cast<std::size_t>(Ti));
    for (std::int64_t to = 0; to < To; ++to)
        for (std::int64_t dt = 0; dt < kt; ++dt) {
            const std::int64_t ti = to * st + dt - pt;
            if (ti >= 0 && ti < Ti) feeders[static_cast<std::size_t>(ti)].emplace_back(to, dt);
        }

    // Accumulate weight gradient into packed (Cout x K) slabs, scatter at the end.
    std::vector<std::vector<T>> gw_slices(static_cast<std::size_t>(kt));
    for (auto& s : gw_slices) s.assign(static_cast<std::size_t>(Cout * K), T(0));

    std::vector<T> patches_t(static_cast<std::size_t>(Ti * K * M));  // (M x K) per frame

    const std::int64_t co_block = 8;
    const std::int64_t n_co_blocks = (Cout + co_block - 1) / co_block;

    for (std::int64_t n = 0; n < N; ++n) {
        const T* in_n = input.ptr() + n * Cin * in_chan_stride;
        T* gin_n = grads.input.ptr() + n * Cin * in_chan_stride;
        const T* go_n = go_p + n * Cout * To * M;

        if (!pw) {
            // One gather + transpose per used frame; scratch is per-worker but the
            // result layout is identical for any thread count.
            parallel_for(Ti, [&](std::int64_t ti) {
                if (feeders[static_cast<std::size_t>(ti)].empty()) return;
                std::vector<T> local(static_cast<std::size_t>(K * M));
                detail::im2col_3d(local.data(), in_n + ti * frame_in, in_chan_stride, g);
                transpose_block(patches_t.data() + ti * K * M, local.data(), M, K, M);
            });
        } else {
            parallel_for(Ti, [&](std::int64_t ti) {
                if (feeders[static_cast<std::size_t>(ti)].empty()) return;
                transpose_block(patches_t.data() + ti * K * M, in_n + ti * frame_in, in_chan_stride, Cin, M);
            });
        }

        // grad_input: each task owns one input frame.
        parallel_for(Ti, [&](std::int64_t ti) {
            const auto& fs = feeders[static_cast<std::size_t>(ti)];
            if (fs.empty()) return;
            if (pw) {
                for (const auto& [to, dt] : fs)
                    gemm_acc(gin_n + ti * frame_in, in_chan_stride, wt_slices[static_cast<std::size_t>(dt)].data(),
                             Cout, go_n + to * M, To * M, Cin, Cout, M);
            } else {
                std::vector<T> gp(static_cast<std::size_t>(K * M), T(0));
                for (const auto& [to, dt] : fs)
                    gemm_acc(gp.data(), M, wt_slices[static_cast<std::size_t>(dt)].data(), Cout, go_n + to * M, To * M,
                             K, Cout, M);
                detail::col2im_add_3d(gin_n + ti * frame_in, in_chan_stride, gp.data(), g);
            }
        });

        // grad_weight: each task owns a block of output-channel rows.
        parallel_for(n_co_blocks, [&](std::int64_t blk) {
            const std::int64_t c0 = blk * co_block;
            const std::int64_t c1 = std::min(c0 + co_block, Cout);
            for (std::int64_t dt = 0; dt < kt; ++dt) {
                T* gw = gw_slices[static_cast<std::size_t>(dt)].data() + c0 * K;
                for (std::int64_t to = 0; to < To; ++to) {
                    const std::int64_t ti = to * st + dt - pt;
                    if (ti < 0 || ti >= Ti) continue;
                    gemm_acc(gw, K, go_n + c0 * To * M + to * M, To * M, patches_t.data() + ti * K * M, K, c1 - c0, M,
                             K);
                }
            }
        });
    }

    // Scatter packed slabs back into the (Cout,Cin,kT,kX,kY,kZ) layout.
    const std::int64_t kxyz = g.kx * g.ky * g.kz;
    for (std::int64_t dt = 0; dt < kt; ++dt) {
        const auto& s = gw_slices[static_cast<std::size_t>(dt)];
        for (std::int64_t co = 0; co < Cout; ++co)
            for (std::int64_t ci = 0; ci < Cin; ++ci)
                std::memcpy(grads.weight.ptr() + ((co * Cin + ci) * kt + dt) * kxyz, s.data() + co * K + ci * kxyz,
                            static_cast<std::size_t>(kxyz) * sizeof(T));
    }
    return grads;
}

enum class PoolKind { max, avg };

inline Shape pool4d_output_shape(const std::array<std::size_t, 4>& window, const std::array<std::size_t, 4>& stride,
                                 const Shape& in) {
    if (in.rank() != 6) throw ShapeError("pool4d: input must be rank 6, got " + in.str());
    std::vector<std::size_t> out{in[0], in[1], 0, 0, 0, 0};
    for (int a = 0; a < 4; ++a) {
        const std::size_t w = window[static_cast<std::size_t>(a)];
        const std::size_t s = stride[static_cast<std::size_t>(a)];
        if (w == 0 || s == 0) throw ShapeError("pool4d: window and stride extents must be positive");
        const std::size_t e = in[2 + static_cast<std::size_t>(a)];
        if (w > e) throw GeometryError("pool4d: empty output, window " + std::to_string(w) + " exceeds extent " +
                                       std::to_string(e));
        out[2 + static_cast<std::size_t>(a)] = (e - w) / s + 1;
    }
    return Shape(out);
}

template <typename T>
Tensor<T> pool4d_forward(PoolKind kind, const std::array<std::size_t, 4>& window,
                         const std::array<std::size_t, 4>& stride, const Tensor<T>& input) {
    const Shape out_shape = pool4d_output_shape(window, stride, input.shape);
    Tensor<T> out(out_shape);

    const std::int64_t NC = static_cast<std::int64_t>(input.shape[0] * input.shape[1]);
    const std::int64_t Ti = static_cast<std::int64_t>(input.shape[2]);
    const std::int64_t X = static_cast<std::int64_t>(input.shape[3]);
    const std::int64_t Y = static_cast<std::int64_t>(input.shape[4]);
    const std::int64_t Z = static_cast<std::int64_t>(input.shape[5]);
    const std::int64_t To = static_cast<std::int64_t>(out_shape[2]);
    const std::int64_t Xo = static_cast<std::int64_t>(out_shape[3]);
    const std::int64_t Yo = static_cast<std::int64_t>(out_shape[4]);
    const std::int64_t Zo = static_cast<std::int64_t>(out_shape[5]);
    const std::int64_t in_block = Ti * X * Y * Z;
    const std::int64_t out_block = To * Xo * Yo * Zo;
    const T inv_win = T(1) / static_cast<T>(window[0] * window[1] * window[2] * window[3]);

    parallel_for(NC, [&](std::int64_t nc) {
        const T* src = input.ptr() + nc * in_block;
        T* dst = out.ptr() + nc * out_block;
        std::int64_t o = 0;
        for (std::int64_t to = 0; to < To; ++to)
            for (std::int64_t xo = 0; xo < Xo; ++xo)
                for (std::int64_t yo = 0; yo < Yo; ++yo)
                    for (std::int64_t zo = 0; zo < Zo; ++zo, ++o) {
                        T best = std::numeric_limits<T>::lowest();
                        T sum = T(0);
                        for (std::size_t dt = 0; dt < window[0]; ++dt)
                            for (std::size_t dx = 0; dx < window[1]; ++dx)
                                for (std::size_t dy = 0; dy < window[2]; ++dy)
                                    for (std::size_t dz = 0; dz < window[3]; ++dz) {
                                        const std::int64_t t = to * static_cast<std::int64_t>(stride[0]) +
                                                               static_cast<std::int64_t>(dt);
                                        const std::int64_t x = xo * static_cast<std::int64_t>(stride[1]) +
                                                               static_cast<std::int64_t>(dx);
                                        const std::int64_t y = yo * static_cast<std::int64_t>(stride[2]) +
                                                               static_cast<std::int64_t>(dy);
                                        const std::int64_t z = zo * static_cast<std::int64_t>(stride[3]) +
                                                               static_cast<std::int64_t>(dz);
                                        const T v = src[((t * X + x) * Y + y) * Z + z];
                                        sum += v;
                                        if (v > best) best = v;
                                    }
                        dst[o] = (kind == PoolKind::max) ? best : sum * inv_win;
                    }
    });
    return out;
}

// Ties in max pooling route the gradient to the lowest linear input index,
// which is the first maximum in scan order.
template <typename T>
Tensor<T> pool4d_backward(PoolKind kind, const std::array<std::size_t, 4>& window,
                          const std::array<std::size_t, 4>& stride, const Tensor<T>& input,
                          const Tensor<T>& grad_out) {
    const Shape out_shape = pool4d_output_shape(window, stride, input.shape);
    if (grad_out.shape != out_shape)
        throw ShapeError("pool4d_backward: grad shape " + grad_out.shape.str() + ", expected " + out_shape.str());
    Tensor<T> gin(input.shape);

    const std::int64_t NC = static_cast<std::int64_t>(input.shape[0] * input.shape[1]);
    const std::int64_t X = static_cast<std::int64_t>(input.shape[3]);
    const std::int64_t Y = static_cast<std::int64_t>(input.shape[4]);
    const std::int64_t Z = static_cast<std::int64_t>(input.shape[5]);
    const std::int64_t To = static_cast<std::int64_t>(out_shape[2]);
    const std::int64_t Xo = static_cast<std::int64_t>(out_shape[3]);
    const std::int64_t Yo = static_cast<std::int64_t>(out_shape[4]);
    const std::int64_t Zo = static_cast<std::int64_t>(out_shape[5]);
    const std::int64_t in_block = static_cast<std::int64_t>(input.shape[2]) * X * Y * Z;
    const std::int64_t out_block = To * Xo * Yo * Zo;
    const T inv_win = T(1) / static_cast<T>(window[0] * window[1] * window[2] * window[3]);

    parallel_for(NC, [&](std::int64_t nc) {
        const T* src = input.ptr() + nc * in_block;
        const T* go = grad_out.ptr() + nc * out_block;
        T* gi = gin.ptr() + nc * in_block;
        std::int64_t o = 0;
        for (std::int64_t to = 0; to < To; ++to)
            for (std::int64_t xo = 0; xo < Xo; ++xo)
                for (std::int64_t yo = 0; yo < Yo; ++yo)
                    for (std::int64_t zo = 0; zo < Zo; ++zo, ++o) {
                        T best = std::numeric_limits<T>::lowest();
                        std::int64_t best_idx = -1;
                        for (std::size_t dt = 0; dt < window[0]; ++dt)
                            for (std::size_t dx = 0; dx < window[1]; ++dx)
                                for (std::size_t dy = 0; dy < window[2]; ++dy)
                                    for (std::size_t dz = 0; dz < window[3]; ++dz) {
                                        const std::int64_t t = to * static_cast<std::int64_t>(stride[0]) +
                                                               static_cast<std::int64_t>(dt);
                                        const std::int64_t x = xo * static_cast<std::int64_t>(stride[1]) +
                                                               static_cast<std::int64_t>(dx);
                                        const std::int64_t y = yo * static_cast<std::int64_t>(stride[2]) +
                                                               static_cast<std::int64_t>(dy);
                                        const std::int64_t z = zo * static_cast<std::int64_t>(stride[3]) +
                                                               static_cast<std::int64_t>(dz);
                                        const std::int64_t idx = ((t * X + x) * Y + y) * Z + z;
                                        if (kind == PoolKind::avg) {
                                            gi[idx] += go[o] * inv_win;
                                        } else if (src[idx] > best) {
                                            best = src[idx];
                                            best_idx = idx;
                                        }
                                    }
                        if (kind == PoolKind::max) gi[best_idx] += go[o];
                    }
    });
    return gin;
}

// Mean over (T,X,Y,Z) per (n,c): (N,C,T,X,Y,Z) -> (N,C).
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
    if (input.shape.rank() != 6) throw ShapeError("global_avg_pool: input must be rank 6, got " + input.shape.str());
    const std::int64_t NC = static_cast<std::int64_t>(input.shape[0] * input.shape[1]);
    const std::int64_t block =
        static_cast<std::int64_t>(input.shape[2] * input.shape[3] * input.shape[4] * input.shape[5]);
    Tensor<T> out{Shape{input.shape[0], input.shape[1]}};
    const T inv = T(1) / static_cast<T>(block);
    parallel_for(NC, [&](std::int64_t nc) {
        const T* src = input.ptr() + nc * block;
        T acc = T(0);
        for (std::int64_t i = 0; i < block; ++i) acc += src[i];
        out[static_cast<std::size_t>(nc)] = acc * inv;
    });
    return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& in_shape, const Tensor<T>& grad_out) {
    if (grad_out.shape != Shape{in_shape[0], in_shape[1]})
        throw ShapeError("global_avg_pool_backward: grad shape " + grad_out.shape.str());
    const std::int64_t NC = static_cast<std::int64_t>(in_shape[0] * in_shape[1]);
    const std::int64_t block = static_cast<std::int64_t>(in_shape[2] * in_shape[3] * in_shape[4] * in_shape[5]);
    Tensor<T> gin(in_shape);
    const T inv = T(1) / static_cast<T>(block);
    parallel_for(NC, [&](std::int64_t nc) {
        T* dst = gin.ptr() + nc * block;
        const T v = grad_out[static_cast<std::size_t>(nc)] * inv;
        for (std::int64_t i = 0; i < block; ++i) dst[i] = v;
    });
    return gin;
}

}  // namespace t4d
