#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <tuple>
#include <vector>

#include "t4d/common.hpp"
#include "t4d/gemm.hpp"
#include "t4d/tensor.hpp"

namespace t4d {

template <typename T>
struct LinearParams {
    Tensor<T> weight;  // (out, in)
    Tensor<T> bias;    // (out)
};

// Gate order throughout: input i, forget f, cell g, output o.
template <typename T>
struct LstmParams {
    Tensor<T> w_input;   // (4h, in)
    Tensor<T> w_hidden;  // (4h, h)
    Tensor<T> bias;      // (4h)
};

// ---- layer normalization over one axis ----

namespace detail {

struct AxisSplit {
    std::int64_t outer, extent, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
    if (axis >= s.rank()) throw RangeError("layernorm: axis out of range for " + s.str());
    AxisSplit a{1, static_cast<std::int64_t>(s[axis]), 1};
    for (std::size_t i = 0; i < axis; ++i) a.outer *= static_cast<std::int64_t>(s[i]);
    for (std::size_t i = axis + 1; i < s.rank(); ++i) a.inner *= static_cast<std::int64_t>(s[i]);
    return a;
}

}  // namespace detail

// Normalizes over the given axis per remaining position: (x-mu)/sqrt(var+eps)
// * gamma + beta, with population variance.
template <typename T>
Tensor<T> layernorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, std::size_t axis,
                            T eps = T(1e-5)) {
    const auto a = detail::split_axis(x.shape, axis);
    if (gamma.shape != Shape{static_cast<std::size_t>(a.extent)} || beta.shape != gamma.shape)
        throw ShapeError("layernorm: gamma/beta must have length " + std::to_string(a.extent));
    Tensor<T> y(x.shape);
    const T inv_c = T(1) / static_cast<T>(a.extent);
    parallel_for(a.outer, [&](std::int64_t o) {
        const T* xs = x.ptr() + o * a.extent * a.inner;
        T* ys = y.ptr() + o * a.extent * a.inner;
        for (std::int64_t i = 0; i < a.inner; ++i) {
            T mu = T(0);
            for (std::int64_t c = 0; c < a.extent; ++c) mu += xs[c * a.inner + i];
            mu *= inv_c;
            T var = T(0);
            for (std::int64_t c = 0; c < a.extent; ++c) {
                const T d = xs[c * a.inner + i] - mu;
                var += d * d;
            }
            var *= inv_c;
            const T inv_std = T(1) / std::sqrt(var + eps);
            for (std::int64_t c = 0; c < a.extent; ++c)
                ys[c * a.inner + i] =
                    (xs[c * a.inner + i] - mu) * inv_std * gamma[static_cast<std::size_t>(c)] +
                    beta[static_cast<std::size_t>(c)];
        }
    });
    return y;
}

template <typename T>
struct LayernormGrads {
    Tensor<T> input, gamma, beta;
};

template <typename T>
LayernormGrads<T> layernorm_backward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                                     std::size_t axis, const Tensor<T>& grad_out, T eps = T(1e-5)) {
    (void)beta;
    const auto a = detail::split_axis(x.shape, axis);
    check_same_shape(x, grad_out, "layernorm_backward");
    LayernormGrads<T> g{Tensor<T>(x.shape), zeros<T>(gamma.shape), zeros<T>(gamma.shape)};
    const T inv_c = T(1) / static_cast<T>(a.extent);

    // Parameter gradients need a reduction over all positions; accumulate them
    // serially per channel after the parallel input-gradient pass.
    parallel_for(a.outer, [&](std::int64_t o) {
        const T* xs = x.ptr() + o * a.extent * a.inner;
        const T* gs = grad_out.ptr() + o * a.extent * a.inner;
        T* gx = g.input.ptr() + o * a.extent * a.inner;
        for (std::int64_t i = 0; i < a.inner; ++i) {
            T mu = T(0);
            for (std::int64_t c = 0; c < a.extent; ++c) mu += xs[c * a.inner + i];
            mu *= inv_c;
            T var = T(0);
            for (std::int64_t c = 0; c < a.extent; ++c) {
                const T d = xs[c * a.inner + i] - mu;
                var += d * d;
            }
            var *= inv_c;
            const T inv_std = T(1) / std::sqrt(var + eps);
            // dxhat_c = go_c * gamma_c; dx = inv_std*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
            T mean_dxh = T(0), mean_dxh_xh = T(0);
            for (std::int64_t c = 0; c < a.extent; ++c) {
                const T xh = (xs[c * a.inner + i] - mu) * inv_std;
                const T dxh = gs[c * a.inner + i] * gamma[static_cast<std::size_t>(c)];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh;
            }
            mean_dxh *= inv_c;
            mean_dxh_xh *= inv_c;
            for (std::int64_t c = 0; c < a.extent; ++c) {
                const T xh = (xs[c * a.inner + i] - mu) * inv_std;
                const T dxh = gs[c * a.inner + i] * gamma[static_cast<std::size_t>(c)];
                gx[c * a.inner + i] = inv_std * (dxh - mean_dxh - xh * mean_dxh_xh);
            }
        }
    });

    for (std::int64_t o = 0; o < a.outer; ++o) {
        const T* xs = x.ptr() + o * a.extent * a.inner;
        const T* gs = grad_out.ptr() + o * a.extent * a.inner;
        for (std::int64_t i = 0; i < a.inner; ++i) {
            T mu = T(0);
            for (std::int64_t c = 0; c < a.extent; ++c) mu += xs[c * a.inner + i];
            mu *= inv_c;
            T var = T(0);
            for (std::int64_t c = 0; c < a.extent; ++c) {
                const T d = xs[c * a.inner + i] - mu;
                var += d * d;
            }
            var *= inv_c;
            const T inv_std = T(1) / std::sqrt(var + eps);
            for (std::int64_t c = 0; c < a.extent; ++c) {
                const T xh = (xs[c * a.inner + i] - mu) * inv_std;
                g.gamma[static_cast<std::size_t>(c)] += gs[c * a.inner + i] * xh;
                g.beta[static_cast<std::size_t>(c)] += gs[c * a.inner + i];
            }
        }
    }
    return g;
}

// ---- GELU (tanh approximation) ----

template <typename T>
inline T gelu_scalar(T x) {
    const T k = T(0.7978845608028654);  // sqrt(2/pi)
    const T u = k * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
inline T gelu_grad_scalar(T x) {
    const T k = T(0.7978845608028654);
    const T u = k * (x + T(0.044715) * x * x * x);
    const T th = std::tanh(u);
    const T sech2 = T(1) - th * th;
    return T(0.5) * (T(1) + th) + T(0.5) * x * sech2 * k * (T(1) + T(3) * T(0.044715) * x * x);
}

template <typename T>
Tensor<T> gelu_forward(const Tensor<T>& x) {
    Tensor<T> y(x.shape);
    parallel_for(static_cast<std::int64_t>(x.data.size()), [&](std::int64_t i) {
        y[static_cast<std::size_t>(i)] = gelu_scalar(x[static_cast<std::size_t>(i)]);
    });
    return y;
}

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
    check_same_shape(x, grad_out, "gelu_backward");
    Tensor<T> g(x.shape);
    parallel_for(static_cast<std::int64_t>(x.data.size()), [&](std::int64_t i) {
        g[static_cast<std::size_t>(i)] =
            grad_out[static_cast<std::size_t>(i)] * gelu_grad_scalar(x[static_cast<std::size_t>(i)]);
    });
    return g;
}

// ---- linear ----

template <typename T>
Tensor<T> linear_forward(const LinearParams<T>& p, const Tensor<T>& x) {
    if (x.shape.rank() != 2) throw ShapeError("linear: input must be rank 2, got " + x.shape.str());
    const std::int64_t N = static_cast<std::int64_t>(x.shape[0]);
    const std::int64_t in = static_cast<std::int64_t>(x.shape[1]);
    const std::int64_t out = static_cast<std::int64_t>(p.weight.shape[0]);
    if (p.weight.shape.rank() != 2 || static_cast<std::int64_t>(p.weight.shape[1]) != in)
        throw ShapeError("linear: weight " + p.weight.shape.str() + " does not accept input " + x.shape.str());
    if (p.bias.shape != Shape{static_cast<std::size_t>(out)}) throw ShapeError("linear: bias shape mismatch");

    Tensor<T> y{Shape{static_cast<std::size_t>(N), static_cast<std::size_t>(out)}};
    parallel_for(N, [&](std::int64_t n) {
        for (std::int64_t j = 0; j < out; ++j) y.ptr()[n * out + j] = p.bias[static_cast<std::size_t>(j)];
    });
    // y += x * W^T
    std::vector<T> wt(static_cast<std::size_t>(in * out));
    transpose_block(wt.data(), p.weight.ptr(), in, out, in);
    gemm_acc(y.ptr(), out, x.ptr(), in, wt.data(), out, N, in, out);
    return y;
}

template <typename T>
struct LinearGrads {
    Tensor<T> input, weight, bias;
};

template <typename T>
LinearGrads<T> linear_backward(const LinearParams<T>& p, const Tensor<T>& x, const Tensor<T>& grad_out) {
    const std::int64_t N = static_cast<std::int64_t>(x.shape[0]);
    const std::int64_t in = static_cast<std::int64_t>(x.shape[1]);
    const std::int64_t out = static_cast<std::int64_t>(p.weight.shape[0]);
    if (grad_out.shape != Shape{static_cast<std::size_t>(N), static_cast<std::size_t>(out)})
        throw ShapeError("linear_backward: grad shape " + grad_out.shape.str());

    LinearGrads<T> g{zeros<T>(x.shape), zeros<T>(p.weight.shape), zeros<T>(p.bias.shape)};
    // gx = grad_out * W
    gemm_acc(g.input.ptr(), in, grad_out.ptr(), out, p.weight.ptr(), in, N, out, in);
    // gW = grad_out^T * x
    std::vector<T> got(static_cast<std::size_t>(N * out));
    transpose_block(got.data(), grad_out.ptr(), out, N, out);
    gemm_acc(g.weight.ptr(), in, got.data(), N, x.ptr(), in, out, N, in);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t j = 0; j < out; ++j) g.bias[static_cast<std::size_t>(j)] += grad_out.ptr()[n * out + j];
    return g;
}

// ---- softmax ----

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    if (x.shape.rank() != 2) throw ShapeError("softmax: input must be rank 2, got " + x.shape.str());
    const std::int64_t N = static_cast<std::int64_t>(x.shape[0]);
    const std::int64_t K = static_cast<std::int64_t>(x.shape[1]);
    Tensor<T> y(x.shape);
    parallel_for(N, [&](std::int64_t n) {
        const T* row = x.ptr() + n * K;
        T* dst = y.ptr() + n * K;
        T mx = row[0];
        for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        T denom = T(0);
        for (std::int64_t k = 0; k < K; ++k) {
            dst[k] = std::exp(row[k] - mx);
            denom += dst[k];
        }
        for (std::int64_t k = 0; k < K; ++k) dst[k] /= denom;
    });
    return y;
}

// ---- LSTM ----

template <typename T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// Per-step activations retained for backpropagation through time.
template <typename T>
struct LstmCache {
    std::vector<std::vector<T>> gate_i, gate_f, gate_g, gate_o, cell, hidden;
};

template <typename T>
inline void lstm_validate(const LstmParams<T>& p, std::size_t in_dim) {
    if (p.w_input.shape.rank() != 2 || p.w_hidden.shape.rank() != 2 || p.bias.shape.rank() != 1)
        throw ShapeError("lstm: parameter ranks invalid");
    const std::size_t four_h = p.w_input.shape[0];
    if (four_h % 4 != 0) throw ShapeError("lstm: gate dimension not divisible by 4");
    const std::size_t h = four_h / 4;
    if (p.w_hidden.shape != Shape{four_h, h} || p.bias.shape != Shape{four_h})
        throw ShapeError("lstm: inconsistent parameter shapes");
    if (p.w_input.shape[1] != in_dim)
        throw ShapeError("lstm: input dim " + std::to_string(in_dim) + ", weights expect " +
                         std::to_string(p.w_input.shape[1]));
}

// One step on a single sample: x_t (in), h_prev/c_prev (h) -> (h_t, c_t).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> lstm_step(const LstmParams<T>& p, const Tensor<T>& x_t, const Tensor<T>& h_prev,
                                          const Tensor<T>& c_prev) {
    lstm_validate(p, x_t.shape.count());
    const std::size_t h = p.w_hidden.shape[1];
    if (h_prev.shape.count() != h || c_prev.shape.count() != h) throw ShapeError("lstm_step: state dim mismatch");
    const std::size_t in = x_t.shape.count();

    Tensor<T> h_t{Shape{h}}, c_t{Shape{h}};
    for (std::size_t j = 0; j < h; ++j) {
        T pre[4];
        for (int gidx = 0; gidx < 4; ++gidx) {
            const std::size_t row = static_cast<std::size_t>(gidx) * h + j;
            T acc = p.bias[row];
            const T* wx = p.w_input.ptr() + row * in;
            for (std::size_t k = 0; k < in; ++k) acc += wx[k] * x_t[k];
            const T* wh = p.w_hidden.ptr() + row * h;
            for (std::size_t k = 0; k < h; ++k) acc += wh[k] * h_prev[k];
            pre[gidx] = acc;
        }
        const T gi = sigmoid(pre[0]), gf = sigmoid(pre[1]), gg = std::tanh(pre[2]), go = sigmoid(pre[3]);
        c_t[j] = gf * c_prev[j] + gi * gg;
        h_t[j] = go * std::tanh(c_t[j]);
    }
    return {h_t, c_t};
}

// Runs the whole sequence S (T, F) from zero initial state; returns the final
// hidden state. Pass a cache to enable the backward call.
template <typename T>
Tensor<T> lstm_sequence_forward(const LstmParams<T>& p, const Tensor<T>& s, LstmCache<T>* cache = nullptr) {
    if (s.shape.rank() != 2) throw ShapeError("lstm_sequence: S must be rank 2 (T, F), got " + s.shape.str());
    lstm_validate(p, s.shape[1]);
    const std::size_t steps = s.shape[0];
    const std::size_t in = s.shape[1];
    const std::size_t h = p.w_hidden.shape[1];

    std::vector<T> h_prev(h, T(0)), c_prev(h, T(0));
    if (cache) *cache = LstmCache<T>{};
    for (std::size_t t = 0; t < steps; ++t) {
        std::vector<T> gi(h), gf(h), gg(h), go(h), c_t(h), h_t(h);
        const T* x = s.ptr() + t * in;
        for (std::size_t j = 0; j < h; ++j) {
            T pre[4];
            for (int gidx = 0; gidx < 4; ++gidx) {
                const std::size_t row = static_cast<std::size_t>(gidx) * h + j;
                T acc = p.bias[row];
                const T* wx = p.w_input.ptr() + row * in;
                for (std::size_t k = 0; k < in; ++k) acc += wx[k] * x[k];
                const T* wh = p.w_hidden.ptr() + row * h;
                for (std::size_t k = 0; k < h; ++k) acc += wh[k] * h_prev[k];
                pre[gidx] = acc;
            }
            gi[j] = sigmoid(pre[0]);
            gf[j] = sigmoid(pre[1]);
            gg[j] = std::tanh(pre[2]);
            go[j] = sigmoid(pre[3]);
            c_t[j] = gf[j] * c_prev[j] + gi[j] * gg[j];
            h_t[j] = go[j] * std::tanh(c_t[j]);
        }
        if (cache) {
            cache->gate_i.push_back(gi);
            cache->gate_f.push_back(gf);
            cache->gate_g.push_back(gg);
            cache->gate_o.push_back(go);
            cache->cell.push_back(c_t);
            cache->hidden.push_back(h_t);
        }
        h_prev = std::move(h_t);
        c_prev = std::move(c_t);
    }
    Tensor<T> out{Shape{h}};
    for (std::size_t j = 0; j < h; ++j) out[j] = h_prev[j];
    return out;
}

template <typename T>
struct LstmGrads {
    Tensor<T> input;  // (T, F)
    Tensor<T> w_input, w_hidden, bias;
};

// Full backpropagation through time for the final-hidden readout.
template <typename T>
LstmGrads<T> lstm_sequence_backward(const LstmParams<T>& p, const Tensor<T>& s, const LstmCache<T>& cache,
                                    const Tensor<T>& grad_h_last) {
    const std::size_t steps = s.shape[0];
    const std::size_t in = s.shape[1];
    const std::size_t h = p.w_hidden.shape[1];
    if (grad_h_last.shape.count() != h) throw ShapeError("lstm_sequence_backward: grad dim mismatch");
    if (cache.hidden.size() != steps) throw ShapeError("lstm_sequence_backward: cache does not match sequence");

    LstmGrads<T> g{zeros<T>(s.shape), zeros<T>(p.w_input.shape), zeros<T>(p.w_hidden.shape), zeros<T>(p.bias.shape)};
    std::vector<T> dh(grad_h_last.ptr(), grad_h_last.ptr() + h);
    std::vector<T> dc(h, T(0));
    std::vector<T> dpre(4 * h);

    for (std::size_t t = steps; t-- > 0;) {
        const auto& gi = cache.gate_i[t];
        const auto& gf = cache.gate_f[t];
        const auto& gg = cache.gate_g[t];
        const auto& go = cache.gate_o[t];
        const auto& ct = cache.cell[t];
        const std::vector<T>* c_prev = (t > 0) ? &cache.cell[t - 1] : nullptr;
        const std::vector<T>* h_prev = (t > 0) ? &cache.hidden[t - 1] : nullptr;

        for (std::size_t j = 0; j < h; ++j) {
            const T tc = std::tanh(ct[j]);
            const T d_o = dh[j] * tc;
            const T d_c = dh[j] * go[j] * (T(1) - tc * tc) + dc[j];
            const T cp = c_prev ? (*c_prev)[j] : T(0);
            const T d_i = d_c * gg[j];
            const T d_f = d_c * cp;
            const T d_g = d_c * gi[j];
            dpre[0 * h + j] = d_i * gi[j] * (T(1) - gi[j]);
            dpre[1 * h + j] = d_f * gf[j] * (T(1) - gf[j]);
            dpre[2 * h + j] = d_g * (T(1) - gg[j] * gg[j]);
            dpre[3 * h + j] = d_o * go[j] * (T(1) - go[j]);
            dc[j] = d_c * gf[j];
        }

        const T* x = s.ptr() + t * in;
        T* gx = g.input.ptr() + t * in;
        for (std::size_t r = 0; r < 4 * h; ++r) {
            const T d = dpre[r];
            if (d == T(0)) continue;
            T* gwx = g.w_input.ptr() + r * in;
            for (std::size_t k = 0; k < in; ++k) gwx[k] += d * x[k];
            if (h_prev) {
                T* gwh = g.w_hidden.ptr() + r * h;
                for (std::size_t k = 0; k < h; ++k) gwh[k] += d * (*h_prev)[k];
            }
            g.bias[r] += d;
        }
        for (std::size_t k = 0; k < in; ++k) {
            T acc = T(0);
            for (std::size_t r = 0; r < 4 * h; ++r) acc += p.w_input.ptr()[r * in + k] * dpre[r];
            gx[k] = acc;
        }
        for (std::size_t j = 0; j < h; ++j) {
            T acc = T(0);
            for (std::size_t r = 0; r < 4 * h; ++r) acc += p.w_hidden.ptr()[r * h + j] * dpre[r];
            dh[j] = acc;  // gradient into h_{t-1}
        }
    }
    return g;
}

// ---- initialization ----

// Uniform in [-sqrt(1/fan_in), +sqrt(1/fan_in)], biases zero, deterministic per seed.
template <typename T>
Tensor<T> init_uniform(const Shape& shape, std::size_t fan_in, std::uint64_t seed) {
    if (fan_in == 0) throw ShapeError("init_uniform: fan_in must be positive");
    Tensor<T> t(shape);
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
LinearParams<T> init_linear(std::size_t in, std::size_t out, std::uint64_t seed) {
    LinearParams<T> p;
    p.weight = init_uniform<T>(Shape{out, in}, in, seed);
    p.bias = zeros<T>(Shape{out});
    return p;
}

template <typename T>
LstmParams<T> init_lstm(std::size_t in, std::size_t hidden, std::uint64_t seed) {
    if (hidden == 0) throw ShapeError("init_lstm: hidden size must be >= 1");
    LstmParams<T> p;
    p.w_input = init_uniform<T>(Shape{4 * hidden, in}, in, seed);
    p.w_hidden = init_uniform<T>(Shape{4 * hidden, hidden}, hidden, seed + 1);
    p.bias = zeros<T>(Shape{4 * hidden});
    return p;
}

}  // namespace t4d
