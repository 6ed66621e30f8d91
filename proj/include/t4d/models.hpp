#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "t4d/common.hpp"
#include "t4d/conv4d.hpp"
#include "t4d/nn.hpp"
#include "t4d/tensor.hpp"

namespace t4d {

// Shared architecture knobs for all three models. The stage ladder follows the
// 1-1-3-1 / 128-256-512-1024 layout; desk-scale runs shrink the channels but
// keep the structure.
struct ModelConfig {
    std::vector<std::size_t> stage_depths{1, 1, 3, 1};
    std::size_t stem_channels = 128;
    std::vector<std::size_t> stage_channels{128, 256, 512, 1024};
    std::size_t final_channels = 1024;
    std::size_t num_classes = 3;
    std::size_t spatial_kernel = 3;
    std::size_t temporal_kernel = 3;
    std::size_t lstm_hidden = 256;
    std::array<std::size_t, 4> input_geometry{32, 16, 16, 16};  // (T, X, Y, Z)
    // Downsampling conv extent for stem and stage transitions. 3 pads by 1 and
    // accepts any extent; 2 is an exact patchify that needs even extents.
    std::size_t down_kernel = 3;

    void validate() const {
        if (stage_depths.size() != 4 || stage_channels.size() != 4)
            throw ConfigError("model config: stage_depths and stage_channels must both have length 4");
        if (final_channels != stage_channels.back())
            throw ConfigError("model config: final_channels must equal the last stage's channels");
        if (stem_channels != stage_channels.front())
            throw ConfigError("model config: stem_channels must equal the first stage's channels");
        if (num_classes < 2) throw ConfigError("model config: need at least 2 classes");
        for (std::size_t d : stage_depths)
            if (d == 0) throw ConfigError("model config: stage depths must be >= 1");
        if (down_kernel != 2 && down_kernel != 3) throw ConfigError("model config: down_kernel must be 2 or 3");
        if (spatial_kernel % 2 == 0 || temporal_kernel % 2 == 0)
            throw ConfigError("model config: block kernels must be odd so stride-1 blocks preserve shape");
    }
};

// ---- stateful layers (cache what backward needs) ----

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    if (dst.data.empty()) {
        dst = src;
        return;
    }
    check_same_shape(dst, src, "accumulate");
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst[i] += src[i];
}

template <typename T>
struct Conv4dLayer {
    std::string name;
    Conv4dSpec spec;
    Conv4dParams<T> params;
    Conv4dParams<T> grads;  // allocated on first backward
    Tensor<T> cached_input;
    bool tapped = false;
    Tensor<T> tap_out, tap_grad;

    void init(std::uint64_t seed) {
        const std::size_t fan_in =
            spec.in_channels * spec.kernel[0] * spec.kernel[1] * spec.kernel[2] * spec.kernel[3];
        params.weight = init_uniform<T>(
            Shape{spec.out_channels, spec.in_channels, spec.kernel[0], spec.kernel[1], spec.kernel[2], spec.kernel[3]},
            fan_in, seed);
        params.bias = zeros<T>(Shape{spec.out_channels});
    }

    Tensor<T> forward(const Tensor<T>& x, bool retain) {
        if (retain) cached_input = x;
        auto out = conv4d_forward(spec, params, x);
        if (tapped && retain) tap_out = out;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        if (cached_input.data.empty()) throw Error("conv layer '" + name + "': backward without retained forward");
        if (tapped) tap_grad = grad_out;
        auto g = conv4d_backward(spec, params, cached_input, grad_out);
        accumulate(grads.weight, g.weight);
        accumulate(grads.bias, g.bias);
        return std::move(g.input);
    }
};

template <typename T>
struct LayerNormLayer {
    Tensor<T> gamma, beta;
    Tensor<T> ggamma, gbeta;
    Tensor<T> cached_input;

    void init(std::size_t channels) {
        gamma = full<T>(Shape{channels}, T(1));
        beta = zeros<T>(Shape{channels});
    }
    Tensor<T> forward(const Tensor<T>& x, bool retain) {
        if (retain) cached_input = x;
        return layernorm_forward(x, gamma, beta, 1);
    }
    Tensor<T> backward(const Tensor<T>& grad_out) {
        auto g = layernorm_backward(cached_input, gamma, beta, 1, grad_out);
        accumulate(ggamma, g.gamma);
        accumulate(gbeta, g.beta);
        return std::move(g.input);
    }
};

template <typename T>
struct GeluLayer {
    Tensor<T> cached_input;
    Tensor<T> forward(const Tensor<T>& x, bool retain) {
        if (retain) cached_input = x;
        return gelu_forward(x);
    }
    Tensor<T> backward(const Tensor<T>& grad_out) { return gelu_backward(cached_input, grad_out); }
};

// Residual block: Conv4D -> channel layernorm -> pointwise expand x4 -> GELU
// -> pointwise contract -> add input. Channel-preserving by construction.
//
// Tap semantics: tapping the main conv, a transition, or the stem records
// that conv's raw output and its gradient. Tapping an `_expand` layer
// records the post-GELU activation and the gradient at the same point; this
// is the block's nonnegative feature map, which CAM-style channel weighting
// assumes.
template <typename T>
struct Block4d {
    Conv4dLayer<T> conv;
    LayerNormLayer<T> ln;
    Conv4dLayer<T> expand;
    GeluLayer<T> act;
    Conv4dLayer<T> contract;

    void build(const std::string& name, std::size_t channels, std::size_t kt, std::size_t ks, std::uint64_t seed) {
        conv.name = name;
        conv.spec.in_channels = channels;
        conv.spec.out_channels = channels;
        conv.spec.kernel = {kt, ks, ks, ks};
        conv.spec.stride = {1, 1, 1, 1};
        conv.spec.padding = {kt / 2, ks / 2, ks / 2, ks / 2};
        conv.init(seed);
        ln.init(channels);
        expand.name = name + "_expand";
        expand.spec.in_channels = channels;
        expand.spec.out_channels = 4 * channels;
        expand.init(seed + 1);
        contract.name = name + "_contract";
        contract.spec.in_channels = 4 * channels;
        contract.spec.out_channels = channels;
        contract.init(seed + 2);
    }

    Tensor<T> forward(const Tensor<T>& x, bool retain) {
        auto y = conv.forward(x, retain);
        y = ln.forward(y, retain);
        y = expand.forward(y, retain);
        y = act.forward(y, retain);
        if (expand.tapped && retain) expand.tap_out = y;
        y = contract.forward(y, retain);
        check_same_shape(x, y, "block residual");
        for (std::size_t i = 0; i < y.data.size(); ++i) y[i] += x[i];
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        auto g = contract.backward(grad_out);
        Tensor<T> g_act;
        if (expand.tapped) g_act = g;  // gradient at the post-GELU tap point
        g = act.backward(g);
        g = expand.backward(g);
        if (expand.tapped) expand.tap_grad = std::move(g_act);
        g = ln.backward(g);
        g = conv.backward(g);
        for (std::size_t i = 0; i < g.data.size(); ++i) g[i] += grad_out[i];
        return g;
    }
};

// ---- trunk: stem + four stages with transitions ----

// temporal=true gives the 4D trunk (Model A): temporal kernel/stride active.
// temporal=false forces kT=1 and no temporal stride (Models B and C).
template <typename T>
struct Trunk {
    Conv4dLayer<T> stem;
    std::vector<std::vector<Block4d<T>>> stages;
    std::vector<Conv4dLayer<T>> transitions;

    void build(const ModelConfig& cfg, bool temporal, std::size_t in_channels, std::uint64_t seed) {
        const std::size_t dk = cfg.down_kernel;
        const std::size_t dpad = (dk == 3) ? 1 : 0;
        const std::size_t kt = temporal ? cfg.temporal_kernel : 1;
        const std::size_t ks = cfg.spatial_kernel;
        // temporal_kernel == 1 removes the temporal extent from every conv,
        // including stem and transitions (the Model C degenerate case).
        const std::size_t tdk = (temporal && cfg.temporal_kernel > 1) ? dk : 1;
        const std::size_t tdpad = (tdk == 3) ? 1 : 0;
        const std::size_t tstride = temporal ? 2 : 1;

        stem.name = "stem";
        stem.spec.in_channels = in_channels;
        stem.spec.out_channels = cfg.stem_channels;
        stem.spec.kernel = {tdk, dk, dk, dk};
        stem.spec.stride = {tstride, 2, 2, 2};
        stem.spec.padding = {tdpad, dpad, dpad, dpad};
        stem.init(seed);

        stages.resize(4);
        std::uint64_t s = seed + 100;
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t b = 0; b < cfg.stage_depths[i]; ++b) {
                Block4d<T> blk;
                blk.build("stage" + std::to_string(i) + "_block" + std::to_string(b), cfg.stage_channels[i], kt, ks,
                          s);
                s += 10;
                stages[i].push_back(std::move(blk));
            }
            if (i + 1 < 4) {
                Conv4dLayer<T> down;
                down.name = "stage" + std::to_string(i + 1) + "_down";
                down.spec.in_channels = cfg.stage_channels[i];
                down.spec.out_channels = cfg.stage_channels[i + 1];
                down.spec.kernel = {tdk, dk, dk, dk};
                down.spec.stride = {tstride, 2, 2, 2};
                down.spec.padding = {tdpad, dpad, dpad, dpad};
                down.init(s);
                s += 10;
                transitions.push_back(std::move(down));
            }
        }
    }

    Tensor<T> forward(const Tensor<T>& x, bool retain) {
        Tensor<T> y;
        try {
            y = stem.forward(x, retain);
        } catch (const GeometryError& e) {
            throw GeometryError("stem: " + std::string(e.what()));
        }
        for (std::size_t i = 0; i < 4; ++i) {
            try {
                for (auto& blk : stages[i]) y = blk.forward(y, retain);
                if (i + 1 < 4) y = transitions[i].forward(y, retain);
            } catch (const GeometryError& e) {
                throw GeometryError("stage " + std::to_string(i) + ": " + std::string(e.what()));
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        Tensor<T> g = grad_out;
        for (std::size_t i = 4; i-- > 0;) {
            if (i + 1 < 4) g = transitions[i].backward(g);
            for (std::size_t b = stages[i].size(); b-- > 0;) g = stages[i][b].backward(g);
        }
        return stem.backward(g);
    }

    void collect(std::vector<Tensor<T>*>& params, std::vector<Tensor<T>*>& grads) {
        auto both = [&](Conv4dLayer<T>& l) {
            params.push_back(&l.params.weight);
            params.push_back(&l.params.bias);
            if (l.grads.weight.data.empty()) l.grads.weight = zeros<T>(l.params.weight.shape);
            if (l.grads.bias.data.empty()) l.grads.bias = zeros<T>(l.params.bias.shape);
            grads.push_back(&l.grads.weight);
            grads.push_back(&l.grads.bias);
        };
        both(stem);
        for (std::size_t i = 0; i < 4; ++i) {
            for (auto& blk : stages[i]) {
                both(blk.conv);
                params.push_back(&blk.ln.gamma);
                params.push_back(&blk.ln.beta);
                if (blk.ln.ggamma.data.empty()) blk.ln.ggamma = zeros<T>(blk.ln.gamma.shape);
                if (blk.ln.gbeta.data.empty()) blk.ln.gbeta = zeros<T>(blk.ln.beta.shape);
                grads.push_back(&blk.ln.ggamma);
                grads.push_back(&blk.ln.gbeta);
                both(blk.expand);
                both(blk.contract);
            }
            if (i + 1 < 4) both(transitions[i]);
        }
    }

    std::vector<Conv4dLayer<T>*> conv_layers() {
        std::vector<Conv4dLayer<T>*> out{&stem};
        for (std::size_t i = 0; i < 4; ++i) {
            for (auto& blk : stages[i]) {
                out.push_back(&blk.conv);
                out.push_back(&blk.expand);
                out.push_back(&blk.contract);
            }
            if (i + 1 < 4) out.push_back(&transitions[i]);
        }
        return out;
    }
};

// ---- common model interface ----

enum class ModelKind { a4d, b_lstm, c_channels };

inline const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::a4d: return "A";
        case ModelKind::b_lstm: return "B";
        case ModelKind::c_channels: return "C";
    }
    return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "A" || s == "a" || s == "4d") return ModelKind::a4d;
    if (s == "B" || s == "b" || s == "lstm" || s == "3d-lstm") return ModelKind::b_lstm;
    if (s == "C" || s == "c" || s == "channels" || s == "3d-chan") return ModelKind::c_channels;
    throw ConfigError("unknown model kind '" + s + "' (expected 4d, 3d-lstm, or 3d-chan)");
}

template <typename T>
class Model {
  public:
    virtual ~Model() = default;
    virtual ModelKind kind() const = 0;
    virtual const ModelConfig& config() const = 0;
    // x: (N, 1, T, X, Y, Z); returns logits (N, num_classes). retain=true
    // caches activations so backward() can run.
    virtual Tensor<T> forward(const Tensor<T>& x, bool retain) = 0;
    virtual Tensor<T> backward(const Tensor<T>& grad_logits) = 0;
    // Parallel arrays in a fixed order: stem, stages in order, head.
    virtual std::vector<Tensor<T>*> parameters() = 0;
    virtual std::vector<Tensor<T>*> gradients() = 0;
    // Conv layers by name, for saliency taps and kernel extraction.
    virtual std::vector<Conv4dLayer<T>*> conv_layers() = 0;

    void zero_grad() {
        for (auto* g : gradients()) g->fill(T(0));
    }
    std::size_t count_parameters() {
        std::size_t n = 0;
        for (auto* p : parameters()) n += p->data.size();
        return n;
    }
    Conv4dLayer<T>* find_conv(const std::string& name) {
        for (auto* l : conv_layers())
            if (l->name == name) return l;
        throw ConfigError("no conv layer named '" + name + "'");
    }
    void set_tap(const std::string& name) {
        for (auto* l : conv_layers()) l->tapped = false;
        find_conv(name)->tapped = true;
    }
};

namespace detail {

template <typename T>
inline void check_model_input(const ModelConfig& cfg, const Tensor<T>& x, std::size_t want_channels) {
    if (x.shape.rank() != 6 || x.shape[1] != want_channels)
        throw ShapeError("model input must be (N," + std::to_string(want_channels) + ",T,X,Y,Z), got " +
                         x.shape.str());
    const std::array<std::size_t, 4> got{x.shape[2], x.shape[3], x.shape[4], x.shape[5]};
    if (got != cfg.input_geometry)
        throw ShapeError("model input geometry (" + std::to_string(got[0]) + "," + std::to_string(got[1]) + "," +
                         std::to_string(got[2]) + "," + std::to_string(got[3]) + ") does not match configured (" +
                         std::to_string(cfg.input_geometry[0]) + "," + std::to_string(cfg.input_geometry[1]) + "," +
                         std::to_string(cfg.input_geometry[2]) + "," + std::to_string(cfg.input_geometry[3]) + ")");
}

}  // namespace detail

// Model A: the 4D CNN. Strided Conv4D stem, four Block4d stages with stride-2
// transitions, global average pool, linear head.
template <typename T>
class ModelA : public Model<T> {
  public:
    ModelA(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        trunk_.build(cfg_, /*temporal=*/true, /*in_channels=*/1, seed);
        head_ = init_linear<T>(cfg_.final_channels, cfg_.num_classes, seed + 7919);
    }

    ModelKind kind() const override { return ModelKind::a4d; }
    const ModelConfig& config() const override { return cfg_; }

    Tensor<T> forward(const Tensor<T>& x, bool retain) override {
        detail::check_model_input(cfg_, x, 1);
        auto y = trunk_.forward(x, retain);
        pooled_shape_ = y.shape;
        auto feats = global_avg_pool(y);
        if (retain) cached_feats_ = feats;
        return linear_forward(head_, feats);
    }

    Tensor<T> backward(const Tensor<T>& grad_logits) override {
        auto hg = linear_backward(head_, cached_feats_, grad_logits);
        accumulate(head_gw_, hg.weight);
        accumulate(head_gb_, hg.bias);
        auto g = global_avg_pool_backward(pooled_shape_, hg.input);
        return trunk_.backward(g);
    }

    std::vector<Tensor<T>*> parameters() override {
        std::vector<Tensor<T>*> p, g;
        trunk_.collect(p, g);
        p.push_back(&head_.weight);
        p.push_back(&head_.bias);
        return p;
    }
    std::vector<Tensor<T>*> gradients() override {
        std::vector<Tensor<T>*> p, g;
        trunk_.collect(p, g);
        if (head_gw_.data.empty()) head_gw_ = zeros<T>(head_.weight.shape);
        if (head_gb_.data.empty()) head_gb_ = zeros<T>(head_.bias.shape);
        g.push_back(&head_gw_);
        g.push_back(&head_gb_);
        return g;
    }
    std::vector<Conv4dLayer<T>*> conv_layers() override { return trunk_.conv_layers(); }

    std::size_t pooled_feature_count() const { return cfg_.final_channels; }

  private:
    ModelConfig cfg_;
    Trunk<T> trunk_;
    LinearParams<T> head_;
    Tensor<T> head_gw_, head_gb_;
    Tensor<T> cached_feats_;
    Shape pooled_shape_;
};

// Model B: shared-weight 3D CNN per frame (time batched into N), pooled
// features stacked into the sequence matrix S, LSTM, linear head on the final
// hidden state.
template <typename T>
class ModelB : public Model<T> {
  public:
    ModelB(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        trunk_.build(cfg_, /*temporal=*/false, /*in_channels=*/1, seed);
        lstm_ = init_lstm<T>(cfg_.final_channels, cfg_.lstm_hidden, seed + 4177);
        head_ = init_linear<T>(cfg_.lstm_hidden, cfg_.num_classes, seed + 7919);
    }

    ModelKind kind() const override { return ModelKind::b_lstm; }
    const ModelConfig& config() const override { return cfg_; }

    // (N,1,T,X,Y,Z) -> frames (N*T,1,1,X,Y,Z); same memory order, so the move
    // is a reshape.
    Tensor<T> forward(const Tensor<T>& x, bool retain) override {
        detail::check_model_input(cfg_, x, 1);
        const std::size_t n = x.shape[0];
        const std::size_t steps = x.shape[2];
        auto frames = reshape(x, Shape{n * steps, 1, 1, x.shape[3], x.shape[4], x.shape[5]});
        auto y = trunk_.forward(frames, retain);
        pooled_shape_ = y.shape;
        auto feats = global_avg_pool(y);  // (N*T, F)
        batch_ = n;
        steps_ = steps;

        Tensor<T> logits{Shape{n, cfg_.num_classes}};
        if (retain) {
            caches_.assign(n, LstmCache<T>{});
            cached_h_.assign(n, Tensor<T>{});
            cached_s_.assign(n, Tensor<T>{});
        }
        for (std::size_t i = 0; i < n; ++i) {
            Tensor<T> s{Shape{steps, cfg_.final_channels}};
            std::copy(feats.ptr() + i * steps * cfg_.final_channels,
                      feats.ptr() + (i + 1) * steps * cfg_.final_channels, s.ptr());
            Tensor<T> h = lstm_sequence_forward(lstm_, s, retain ? &caches_[i] : nullptr);
            if (retain) {
                cached_h_[i] = h;
                cached_s_[i] = s;
            }
            auto row = linear_forward(head_, reshape(h, Shape{1, cfg_.lstm_hidden}));
            std::copy(row.ptr(), row.ptr() + cfg_.num_classes, logits.ptr() + i * cfg_.num_classes);
        }
        return logits;
    }

    Tensor<T> backward(const Tensor<T>& grad_logits) override {
        Tensor<T> gfeats{Shape{batch_ * steps_, cfg_.final_channels}};
        for (std::size_t i = 0; i < batch_; ++i) {
            Tensor<T> grow{Shape{1, cfg_.num_classes}};
            std::copy(grad_logits.ptr() + i * cfg_.num_classes, grad_logits.ptr() + (i + 1) * cfg_.num_classes,
                      grow.ptr());
            auto hg = linear_backward(head_, reshape(cached_h_[i], Shape{1, cfg_.lstm_hidden}), grow);
            accumulate(head_gw_, hg.weight);
            accumulate(head_gb_, hg.bias);
            auto lg = lstm_sequence_backward(lstm_, cached_s_[i], caches_[i],
                                             reshape(hg.input, Shape{cfg_.lstm_hidden}));
            accumulate(lstm_gwx_, lg.w_input);
            accumulate(lstm_gwh_, lg.w_hidden);
            accumulate(lstm_gb_, lg.bias);
            std::copy(lg.input.ptr(), lg.input.ptr() + steps_ * cfg_.final_channels,
                      gfeats.ptr() + i * steps_ * cfg_.final_channels);
        }
        auto g = global_avg_pool_backward(pooled_shape_, gfeats);
        auto gin = trunk_.backward(g);
        return reshape(gin, Shape{batch_, 1, steps_, cfg_.input_geometry[1], cfg_.input_geometry[2],
                                  cfg_.input_geometry[3]});
    }

    std::vector<Tensor<T>*> parameters() override {
        std::vector<Tensor<T>*> p, g;
        trunk_.collect(p, g);
        p.push_back(&lstm_.w_input);
        p.push_back(&lstm_.w_hidden);
        p.push_back(&lstm_.bias);
        p.push_back(&head_.weight);
        p.push_back(&head_.bias);
        return p;
    }
    std::vector<Tensor<T>*> gradients() override {
        std::vector<Tensor<T>*> p, g;
        trunk_.collect(p, g);
        auto ensure = [](Tensor<T>& t, const Shape& s) {
            if (t.data.empty()) t = zeros<T>(s);
        };
        ensure(lstm_gwx_, lstm_.w_input.shape);
        ensure(lstm_gwh_, lstm_.w_hidden.shape);
        ensure(lstm_gb_, lstm_.bias.shape);
        ensure(head_gw_, head_.weight.shape);
        ensure(head_gb_, head_.bias.shape);
        g.push_back(&lstm_gwx_);
        g.push_back(&lstm_gwh_);
        g.push_back(&lstm_gb_);
        g.push_back(&head_gw_);
        g.push_back(&head_gb_);
        return g;
    }
    std::vector<Conv4dLayer<T>*> conv_layers() override { return trunk_.conv_layers(); }

    // The sequence matrix S of the most recent retained forward, per sample.
    const Tensor<T>& feature_sequence(std::size_t i) const { return cached_s_.at(i); }

  private:
    ModelConfig cfg_;
    Trunk<T> trunk_;
    LstmParams<T> lstm_;
    LinearParams<T> head_;
    Tensor<T> lstm_gwx_, lstm_gwh_, lstm_gb_, head_gw_, head_gb_;
    Shape pooled_shape_;
    std::vector<LstmCache<T>> caches_;
    std::vector<Tensor<T>> cached_h_, cached_s_;
    std::size_t batch_ = 0, steps_ = 0;
};

// Model C: time samples become input channels of a 3D CNN.
template <typename T>
class ModelC : public Model<T> {
  public:
    ModelC(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        trunk_.build(cfg_, /*temporal=*/false, /*in_channels=*/cfg_.input_geometry[0], seed);
        head_ = init_linear<T>(cfg_.final_channels, cfg_.num_classes, seed + 7919);
    }

    ModelKind kind() const override { return ModelKind::c_channels; }
    const ModelConfig& config() const override { return cfg_; }

    Tensor<T> forward(const Tensor<T>& x, bool retain) override {
        detail::check_model_input(cfg_, x, 1);
        // (N,1,T,X,Y,Z) and (N,T,1,X,Y,Z) share one row-major layout.
        auto chans = reshape(x, Shape{x.shape[0], x.shape[2], 1, x.shape[3], x.shape[4], x.shape[5]});
        auto y = trunk_.forward(chans, retain);
        pooled_shape_ = y.shape;
        auto feats = global_avg_pool(y);
        if (retain) cached_feats_ = feats;
        return linear_forward(head_, feats);
    }

    Tensor<T> backward(const Tensor<T>& grad_logits) override {
        auto hg = linear_backward(head_, cached_feats_, grad_logits);
        accumulate(head_gw_, hg.weight);
        accumulate(head_gb_, hg.bias);
        auto g = global_avg_pool_backward(pooled_shape_, hg.input);
        auto gin = trunk_.backward(g);
        return reshape(gin, Shape{gin.shape[0], 1, gin.shape[1], gin.shape[3], gin.shape[4], gin.shape[5]});
    }

    std::vector<Tensor<T>*> parameters() override {
        std::vector<Tensor<T>*> p, g;
        trunk_.collect(p, g);
        p.push_back(&head_.weight);
        p.push_back(&head_.bias);
        return p;
    }
    std::vector<Tensor<T>*> gradients() override {
        std::vector<Tensor<T>*> p, g;
        trunk_.collect(p, g);
        if (head_gw_.data.empty()) head_gw_ = zeros<T>(head_.weight.shape);
        if (head_gb_.data.empty()) head_gb_ = zeros<T>(head_.bias.shape);
        g.push_back(&head_gw_);
        g.push_back(&head_gb_);
        return g;
    }
    std::vector<Conv4dLayer<T>*> conv_layers() override { return trunk_.conv_layers(); }

  private:
    ModelConfig cfg_;
    Trunk<T> trunk_;
    LinearParams<T> head_;
    Tensor<T> head_gw_, head_gb_;
    Tensor<T> cached_feats_;
    Shape pooled_shape_;
};

template <typename T>
std::unique_ptr<Model<T>> make_model(ModelKind kind, const ModelConfig& cfg, std::uint64_t seed) {
    switch (kind) {
        case ModelKind::a4d: return std::make_unique<ModelA<T>>(cfg, seed);
        case ModelKind::b_lstm: return std::make_unique<ModelB<T>>(cfg, seed);
        case ModelKind::c_channels: return std::make_unique<ModelC<T>>(cfg, seed);
    }
    throw ConfigError("make_model: bad kind");
}

}  // namespace t4d
