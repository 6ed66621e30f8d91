#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "t4d/common.hpp"
#include "t4d/models.hpp"
#include "t4d/pipeline.hpp"
#include "t4d/tensor.hpp"

namespace t4d {

// ---- loss ----

struct LossSpec {
    std::vector<double> class_weights{959.0 / 602.0, 959.0 / 210.0, 959.0 / 147.0};

    static LossSpec uniform(std::size_t num_classes) {
        LossSpec s;
        s.class_weights.assign(num_classes, 1.0);
        return s;
    }
    void validate(std::size_t num_classes) const {
        if (class_weights.size() != num_classes)
            throw ConfigError("loss: " + std::to_string(class_weights.size()) + " weights for " +
                              std::to_string(num_classes) + " classes");
        for (double w : class_weights)
            if (!(w > 0)) throw ConfigError("loss: class weights must be positive");
    }
};

template <typename T>
struct CeResult {
    double loss = 0;        // weighted mean of per-sample negative log likelihoods
    double weight_sum = 0;  // sum of per-sample weights (for exact aggregation)
    Tensor<T> grad_logits;
};

template <typename T>
CeResult<T> weighted_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                                   const LossSpec& spec) {
    if (logits.shape.rank() != 2) throw ShapeError("cross_entropy: logits must be (N,K), got " + logits.shape.str());
    const std::size_t n = logits.shape[0], k = logits.shape[1];
    if (labels.size() != n) throw ShapeError("cross_entropy: label count mismatch");
    spec.validate(k);
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw RangeError("cross_entropy: label " + std::to_string(y) + " out of range");

    CeResult<T> r;
    r.grad_logits = Tensor<T>(logits.shape);
    std::vector<double> p(k);
    double wnll = 0, wsum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = logits.ptr() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double denom = 0;
        for (std::size_t j = 0; j < k; ++j) {
            p[j] = std::exp(static_cast<double>(row[j]) - mx);
            denom += p[j];
        }
        const double lse = mx + std::log(denom);
        const double w = spec.class_weights[static_cast<std::size_t>(labels[i])];
        wnll += w * (lse - static_cast<double>(row[static_cast<std::size_t>(labels[i])]));
        wsum += w;
        T* g = r.grad_logits.ptr() + i * k;
        for (std::size_t j = 0; j < k; ++j) {
            double d = w * (p[j] / denom);
            if (j == static_cast<std::size_t>(labels[i])) d -= w;
            g[j] = static_cast<T>(d);
        }
    }
    // Gradients carry the 1/Σw factor of the weighted mean.
    const T inv = static_cast<T>(1.0 / wsum);
    for (std::size_t i = 0; i < n * k; ++i) r.grad_logits.ptr()[i] *= inv;
    r.loss = wnll / wsum;
    r.weight_sum = wsum;
    return r;
}

// ---- optimizer ----

struct OptimizerConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

template <typename T>
struct OptimizerState {
    OptimizerConfig cfg;
    std::size_t step = 0;
    std::vector<Tensor<T>> m, v;

    void init(const std::vector<Tensor<T>*>& params) {
        step = 0;
        m.clear();
        v.clear();
        for (const Tensor<T>* p : params) {
            m.push_back(zeros<T>(p->shape));
            v.push_back(zeros<T>(p->shape));
        }
    }
};

template <typename T>
void adamw_step(OptimizerState<T>& state, const std::vector<Tensor<T>*>& params,
                const std::vector<Tensor<T>*>& grads) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw ShapeError("adamw: parameter/gradient/state count mismatch");
    state.step += 1;
    const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<T>& theta = *params[pi];
        const Tensor<T>& g = *grads[pi];
        check_same_shape(theta, g, "adamw gradient");
        check_same_shape(theta, state.m[pi], "adamw moment");
        T* th = theta.ptr();
        const T* gp = g.ptr();
        T* mp = state.m[pi].ptr();
        T* vp = state.v[pi].ptr();
        const std::size_t count = theta.shape.count();
        for (std::size_t i = 0; i < count; ++i) {
            const double gi = gp[i];
            const double mi = b1 * mp[i] + (1 - b1) * gi;
            const double vi = b2 * vp[i] + (1 - b2) * gi * gi;
            mp[i] = static_cast<T>(mi);
            vp[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            th[i] = static_cast<T>(th[i] - state.cfg.lr * (mhat / (std::sqrt(vhat) + state.cfg.eps) +
                                                           state.cfg.weight_decay * th[i]));
        }
    }
}

// ---- schedule ----

struct ScheduleSpec {
    double lr_max = 1e-3;
    double lr_min = 0.0;
    std::size_t total_steps = 1;

    void validate() const {
        if (!(0 <= lr_min && lr_min <= lr_max)) throw ConfigError("schedule: need 0 <= lr_min <= lr_max");
        if (total_steps < 1) throw ConfigError("schedule: total_steps must be >= 1");
    }
};

inline double cosine_lr(const ScheduleSpec& s, std::size_t t) {
    s.validate();
    if (t == 0) return s.lr_max;
    if (t >= s.total_steps) return s.lr_min;
    // cos(pi/2) rounds to ~6e-17 rather than 0; pin the midpoint exactly.
    if (2 * t == s.total_steps) return 0.5 * (s.lr_max + s.lr_min);
    const double frac = static_cast<double>(t) / static_cast<double>(s.total_steps);
    constexpr double pi = 3.1415926535897932384626433832795;
    return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(pi * frac));
}

// ---- evaluation ----

struct EvalReport {
    std::size_t num_classes = 0;
    std::vector<std::size_t> confusion;  // row = true class, col = predicted
    std::size_t total = 0;
    double accuracy = 0;
    double sensitivity = 0;  // binary: disease class (index 1) positive; multi-class: macro OVR
    double specificity = 0;
    std::vector<double> per_class_sensitivity, per_class_specificity;

    std::size_t at(std::size_t truth, std::size_t pred) const { return confusion[truth * num_classes + pred]; }
};

inline EvalReport report_from_confusion(const std::vector<std::size_t>& confusion, std::size_t k) {
    if (confusion.size() != k * k) throw ShapeError("evaluate: confusion matrix size mismatch");
    EvalReport r;
    r.num_classes = k;
    r.confusion = confusion;
    std::size_t total = 0, correct = 0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            total += confusion[i * k + j];
            if (i == j) correct += confusion[i * k + j];
        }
    if (total == 0) throw RangeError("evaluate: empty test set");
    r.total = total;
    r.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    r.per_class_sensitivity.resize(k);
    r.per_class_specificity.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t tp = confusion[c * k + c], fn = 0, fp = 0;
        for (std::size_t j = 0; j < k; ++j)
            if (j != c) {
                fn += confusion[c * k + j];
                fp += confusion[j * k + c];
            }
        const std::size_t tn = total - tp - fn - fp;
        r.per_class_sensitivity[c] = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        r.per_class_specificity[c] = (tn + fp) ? static_cast<double>(tn) / static_cast<double>(tn + fp) : 0.0;
    }
    if (k == 2) {
        // Disease class (index 1) is positive; CN (index 0) is negative.
        r.sensitivity = r.per_class_sensitivity[1];
        r.specificity = r.per_class_specificity[1];
    } else {
        double ssum = 0, psum = 0;
        for (std::size_t c = 0; c < k; ++c) {
            ssum += r.per_class_sensitivity[c];
            psum += r.per_class_specificity[c];
        }
        r.sensitivity = ssum / static_cast<double>(k);
        r.specificity = psum / static_cast<double>(k);
    }
    return r;
}

namespace detail {

template <typename T>
Tensor<T> stack_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& ids, std::size_t begin,
                      std::size_t end) {
    const Shape& vs = samples[ids[begin]].volume.shape;
    Tensor<T> batch(Shape{end - begin, vs[0], vs[1], vs[2], vs[3], vs[4]});
    const std::size_t per = vs.count();
    for (std::size_t i = begin; i < end; ++i) {
        const Tensor<float>& v = samples[ids[i]].volume;
        if (v.shape != vs) throw ShapeError("batch: sample volume shapes differ");
        T* dst = batch.ptr() + (i - begin) * per;
        for (std::size_t j = 0; j < per; ++j) dst[j] = static_cast<T>(v.ptr()[j]);
    }
    return batch;
}

}  // namespace detail

template <typename T>
std::vector<int> predict(Model<T>& model, const std::vector<Sample>& samples, const std::vector<std::size_t>& ids,
                         std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("predict: batch_size must be positive");
    std::vector<int> preds;
    preds.reserve(ids.size());
    for (std::size_t b = 0; b < ids.size(); b += batch_size) {
        const std::size_t e = std::min(ids.size(), b + batch_size);
        const auto logits = model.forward(detail::stack_batch<T>(samples, ids, b, e), false);
        const std::size_t k = logits.shape[1];
        for (std::size_t i = 0; i < e - b; ++i) {
            const T* row = logits.ptr() + i * k;
            std::size_t arg = 0;
            for (std::size_t j = 1; j < k; ++j)
                if (row[j] > row[arg]) arg = j;
            preds.push_back(static_cast<int>(arg));
        }
    }
    return preds;
}

template <typename T>
EvalReport evaluate(Model<T>& model, const std::vector<Sample>& samples, const std::vector<std::size_t>& ids,
                    std::size_t batch_size) {
    if (ids.empty()) throw RangeError("evaluate: empty test set");
    const std::size_t k = model.config().num_classes;
    const auto preds = predict(model, samples, ids, batch_size);
    std::vector<std::size_t> confusion(k * k, 0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int y = samples[ids[i]].label;
        if (y < 0 || static_cast<std::size_t>(y) >= k) throw RangeError("evaluate: label out of range");
        confusion[static_cast<std::size_t>(y) * k + static_cast<std::size_t>(preds[i])]++;
    }
    return report_from_confusion(confusion, k);
}

// ---- training loop ----

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 2;
    OptimizerConfig opt;  // opt.lr is overwritten by the schedule each step
    // total_steps 0 = derive as epochs * steps_per_epoch inside train_loop.
    ScheduleSpec schedule{1e-3, 0.0, 0};
    LossSpec loss;
    bool augment = true;
    std::uint64_t seed = 0;
};

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0;
    double lr = 0;
    double val_accuracy = -1;  // -1 when no validation set
};

template <typename T>
struct TrainResult {
    std::vector<EpochLog> log;
    std::vector<Tensor<T>> best_params;
    double best_val_accuracy = -1;
    std::size_t best_epoch = 0;
};

template <typename T>
std::vector<Tensor<T>> snapshot_parameters(Model<T>& model) {
    std::vector<Tensor<T>> out;
    for (const Tensor<T>* p : model.parameters()) out.push_back(*p);
    return out;
}

template <typename T>
void restore_parameters(Model<T>& model, const std::vector<Tensor<T>>& snapshot) {
    auto params = model.parameters();
    if (params.size() != snapshot.size()) throw ShapeError("restore: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        check_same_shape(*params[i], snapshot[i], "restore parameter");
        *params[i] = snapshot[i];
    }
}

// Trains on every train index not in val_fold; validates on val_fold when it
// names a fold (pass plan.folds or larger to train on all folds without
// validation, in which case the final parameters are the checkpoint).
template <typename T>
TrainResult<T> train_loop(Model<T>& model, const std::vector<Sample>& samples, const SplitPlan& plan,
                          std::size_t val_fold, const TrainConfig& cfg) {
    if (cfg.batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (cfg.epochs == 0) throw ConfigError("train: epochs must be positive");
    std::vector<std::size_t> train_ids, val_ids;
    for (std::size_t j = 0; j < plan.train_indices.size(); ++j) {
        if (val_fold < plan.folds && static_cast<std::size_t>(plan.fold_of[j]) == val_fold)
            val_ids.push_back(plan.train_indices[j]);
        else
            train_ids.push_back(plan.train_indices[j]);
    }
    if (train_ids.empty()) throw RangeError("train: empty training set");
    cfg.loss.validate(model.config().num_classes);

    const std::size_t steps_per_epoch = (train_ids.size() + cfg.batch_size - 1) / cfg.batch_size;
    ScheduleSpec sched = cfg.schedule;
    if (sched.total_steps == 0) sched.total_steps = cfg.epochs * steps_per_epoch;
    sched.validate();

    OptimizerState<T> opt;
    opt.cfg = cfg.opt;
    opt.init(model.parameters());

    std::mt19937_64 rng(cfg.seed);
    const std::size_t t_extent = samples[train_ids[0]].volume.shape[1];
    std::uniform_int_distribution<std::int64_t> offset_dist(0, static_cast<std::int64_t>(t_extent) - 1);

    TrainResult<T> result;
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(train_ids.begin(), train_ids.end(), rng);
        std::vector<Sample> shifted;
        const std::vector<Sample>* source = &samples;
        std::vector<std::size_t> batch_ids = train_ids;
        if (cfg.augment) {
            shifted.reserve(train_ids.size());
            for (std::size_t id : train_ids) {
                Sample s;
                s.label = samples[id].label;
                s.volume = circular_time_shift(samples[id].volume, offset_dist(rng));
                shifted.push_back(std::move(s));
            }
            source = &shifted;
            batch_ids.resize(shifted.size());
            for (std::size_t i = 0; i < batch_ids.size(); ++i) batch_ids[i] = i;
        }

        double wnll = 0, wsum = 0, lr = 0;
        for (std::size_t b = 0; b < batch_ids.size(); b += cfg.batch_size) {
            const std::size_t e = std::min(batch_ids.size(), b + cfg.batch_size);
            const auto x = detail::stack_batch<T>(*source, batch_ids, b, e);
            std::vector<int> labels;
            for (std::size_t i = b; i < e; ++i) labels.push_back((*source)[batch_ids[i]].label);
            const auto logits = model.forward(x, true);
            const auto ce = weighted_cross_entropy(logits, labels, cfg.loss);
            wnll += ce.loss * ce.weight_sum;
            wsum += ce.weight_sum;
            model.zero_grad();
            model.backward(ce.grad_logits);
            lr = cosine_lr(sched, step);
            opt.cfg.lr = lr;
            adamw_step(opt, model.parameters(), model.gradients());
            ++step;
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = wnll / wsum;
        log.lr = lr;
        if (!val_ids.empty()) {
            log.val_accuracy = evaluate(model, samples, val_ids, cfg.batch_size).accuracy;
            if (log.val_accuracy > result.best_val_accuracy) {
                result.best_val_accuracy = log.val_accuracy;
                result.best_epoch = epoch;
                result.best_params = snapshot_parameters(model);
            }
        }
        result.log.push_back(log);
    }
    if (result.best_params.empty()) {
        result.best_params = snapshot_parameters(model);
        result.best_epoch = cfg.epochs;
    }
    return result;
}

}  // namespace t4d
