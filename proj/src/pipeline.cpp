#include "t4d/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace t4d {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void check_volume(const Tensor<float>& volume, const char* what) {
    if (volume.shape.rank() != 5)
        throw ShapeError(std::string(what) + ": expected a rank-5 volume, got " + volume.shape.str());
}

}  // namespace

Tensor<float> discard_initial(const Tensor<float>& volume, std::size_t n) {
    check_volume(volume, "discard_initial");
    const std::size_t t = volume.shape[1];
    if (n >= t)
        throw RangeError("discard_initial: cannot drop " + std::to_string(n) + " of " + std::to_string(t) + " frames");
    const std::size_t c = volume.shape[0];
    const std::size_t frame = volume.shape[2] * volume.shape[3] * volume.shape[4];
    Tensor<float> out(Shape{c, t - n, volume.shape[2], volume.shape[3], volume.shape[4]});
    for (std::size_t ci = 0; ci < c; ++ci) {
        const float* src = volume.ptr() + (ci * t + n) * frame;
        float* dst = out.ptr() + ci * (t - n) * frame;
        std::copy(src, src + (t - n) * frame, dst);
    }
    return out;
}

std::vector<std::size_t> bandpass_kept_bins(std::size_t t_extent, const PreprocessConfig& cfg) {
    cfg.validate();
    const double fs = 1.0 / cfg.tr_seconds;
    std::vector<std::size_t> bins;
    for (std::size_t k = 1; k <= t_extent / 2; ++k) {
        const double f = static_cast<double>(k) * fs / static_cast<double>(t_extent);
        if (f >= cfg.band_low_hz && f <= cfg.band_high_hz) bins.push_back(k);
    }
    return bins;
}

Tensor<float> bandpass(const Tensor<float>& volume, const PreprocessConfig& cfg) {
    check_volume(volume, "bandpass");
    const std::size_t t = volume.shape[1];
    if (t < 4) throw RangeError("bandpass: need at least 4 frames, got " + std::to_string(t));
    const auto bins = bandpass_kept_bins(t, cfg);

    const std::size_t c = volume.shape[0];
    const std::size_t frame = volume.shape[2] * volume.shape[3] * volume.shape[4];

    // Basis tables for the retained bins; the bin weight folds in the 2/T
    // synthesis factor (1/T at the Nyquist bin, which has no conjugate pair).
    std::vector<double> cos_tab(bins.size() * t), sin_tab(bins.size() * t), weight(bins.size());
    for (std::size_t bi = 0; bi < bins.size(); ++bi) {
        const double k = static_cast<double>(bins[bi]);
        weight[bi] = (2 * bins[bi] == t) ? 1.0 / static_cast<double>(t) : 2.0 / static_cast<double>(t);
        for (std::size_t s = 0; s < t; ++s) {
            const double theta = kTwoPi * k * static_cast<double>(s) / static_cast<double>(t);
            cos_tab[bi * t + s] = std::cos(theta);
            sin_tab[bi * t + s] = std::sin(theta);
        }
    }

    const std::size_t zext = volume.shape[4];
    const std::size_t rows = c * frame / zext;
    Tensor<float> out(volume.shape);
    parallel_for(static_cast<std::int64_t>(rows), [&](std::int64_t row) {
        std::vector<double> series(t), kept(t);
        const std::size_t ci = static_cast<std::size_t>(row) / (frame / zext);
        const std::size_t base = (static_cast<std::size_t>(row) % (frame / zext)) * zext;
        for (std::size_t vz = 0; vz < zext; ++vz) {
            const std::size_t sp = base + vz;
            const float* src = volume.ptr() + ci * t * frame + sp;
            for (std::size_t s = 0; s < t; ++s) series[s] = src[s * frame];
            std::fill(kept.begin(), kept.end(), 0.0);
            for (std::size_t bi = 0; bi < bins.size(); ++bi) {
                const double* ct = cos_tab.data() + bi * t;
                const double* st = sin_tab.data() + bi * t;
                double a = 0, b = 0;
                for (std::size_t s = 0; s < t; ++s) {
                    a += series[s] * ct[s];
                    b += series[s] * st[s];
                }
                a *= weight[bi];
                b *= weight[bi];
                for (std::size_t s = 0; s < t; ++s) kept[s] += a * ct[s] + b * st[s];
            }
            float* dst = out.ptr() + ci * t * frame + sp;
            for (std::size_t s = 0; s < t; ++s) dst[s * frame] = static_cast<float>(kept[s]);
        }
    });
    return out;
}

Tensor<float> zscore_per_voxel(const Tensor<float>& volume, double eps) {
    check_volume(volume, "zscore_per_voxel");
    const std::size_t t = volume.shape[1];
    if (t < 2) throw RangeError("zscore_per_voxel: need at least 2 frames");
    const std::size_t c = volume.shape[0];
    const std::size_t frame = volume.shape[2] * volume.shape[3] * volume.shape[4];

    const std::size_t zext = volume.shape[4];
    Tensor<float> out(volume.shape);
    parallel_for(static_cast<std::int64_t>(c * frame / zext), [&](std::int64_t row) {
        std::vector<float> sorted(t);
        const std::size_t ci = static_cast<std::size_t>(row) / (frame / zext);
        const std::size_t base = (static_cast<std::size_t>(row) % (frame / zext)) * zext;
        for (std::size_t vz = 0; vz < zext; ++vz) {
            const std::size_t sp = base + vz;
            const float* src = volume.ptr() + ci * t * frame + sp;
            // Statistics accumulate in value-sorted order so any permutation
            // of the series (circular shifts in particular) produces bitwise
            // identical mean and sigma.
            for (std::size_t s = 0; s < t; ++s) sorted[s] = src[s * frame];
            std::sort(sorted.begin(), sorted.end());
            double mean = 0;
            for (float x : sorted) mean += x;
            mean /= static_cast<double>(t);
            double var = 0;
            for (float x : sorted) {
                const double d = x - mean;
                var += d * d;
            }
            var /= static_cast<double>(t);
            const double inv = 1.0 / (std::sqrt(var) + eps);
            float* dst = out.ptr() + ci * t * frame + sp;
            for (std::size_t s = 0; s < t; ++s)
                dst[s * frame] = static_cast<float>((src[s * frame] - mean) * inv);
        }
    });
    return out;
}

Tensor<float> circular_time_shift(const Tensor<float>& volume, std::int64_t offset) {
    check_volume(volume, "circular_time_shift");
    const std::int64_t t = static_cast<std::int64_t>(volume.shape[1]);
    const std::size_t c = volume.shape[0];
    const std::size_t frame = volume.shape[2] * volume.shape[3] * volume.shape[4];
    Tensor<float> out(volume.shape);
    for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::int64_t dst_t = 0; dst_t < t; ++dst_t) {
            std::int64_t src_t = (dst_t - offset) % t;
            if (src_t < 0) src_t += t;
            const float* src = volume.ptr() + (ci * static_cast<std::size_t>(t) + static_cast<std::size_t>(src_t)) * frame;
            float* dst = out.ptr() + (ci * static_cast<std::size_t>(t) + static_cast<std::size_t>(dst_t)) * frame;
            std::copy(src, src + frame, dst);
        }
    }
    return out;
}

Tensor<float> preprocess_volume(const Tensor<float>& volume, const PreprocessConfig& cfg) {
    cfg.validate();
    Tensor<float> v = discard_initial(volume, cfg.discard_frames);
    v = bandpass(v, cfg);
    return zscore_per_voxel(v, cfg.zscore_eps);
}

SplitPlan make_splits(const std::vector<Sample>& samples, std::size_t num_classes, std::size_t test_per_class,
                      std::size_t folds, std::uint64_t seed) {
    if (num_classes == 0) throw ConfigError("make_splits: num_classes must be positive");
    if (folds == 0) throw ConfigError("make_splits: folds must be positive");
    for (const auto& s : samples)
        if (s.label < 0 || static_cast<std::size_t>(s.label) >= num_classes)
            throw RangeError("make_splits: label " + std::to_string(s.label) + " out of range");

    // Group sessions by subject; a subject lands wholly in train or test.
    std::map<std::string, std::vector<std::size_t>> by_subject;
    for (std::size_t i = 0; i < samples.size(); ++i) by_subject[samples[i].subject_id].push_back(i);

    std::vector<std::string> subjects;
    subjects.reserve(by_subject.size());
    for (const auto& [id, _] : by_subject) subjects.push_back(id);
    std::mt19937_64 rng(seed);
    std::shuffle(subjects.begin(), subjects.end(), rng);

    std::vector<std::size_t> need(num_classes, test_per_class);
    std::vector<std::string> test_subjects, train_subjects;
    for (const auto& id : subjects) {
        std::vector<std::size_t> contrib(num_classes, 0);
        for (std::size_t i : by_subject[id]) contrib[static_cast<std::size_t>(samples[i].label)]++;
        bool fits = false, overshoot = false;
        for (std::size_t cl = 0; cl < num_classes; ++cl) {
            if (contrib[cl] > need[cl]) overshoot = true;
            if (contrib[cl] > 0 && contrib[cl] <= need[cl]) fits = true;
        }
        if (fits && !overshoot) {
            for (std::size_t cl = 0; cl < num_classes; ++cl) need[cl] -= contrib[cl];
            test_subjects.push_back(id);
        } else {
            train_subjects.push_back(id);
        }
    }
    for (std::size_t cl = 0; cl < num_classes; ++cl)
        if (need[cl] != 0)
            throw SplitError("make_splits: class " + std::to_string(cl) + " short " + std::to_string(need[cl]) +
                             " test sessions");
    if (train_subjects.size() < folds)
        throw SplitError("make_splits: only " + std::to_string(train_subjects.size()) + " train subjects for " +
                         std::to_string(folds) + " folds");

    SplitPlan plan;
    plan.folds = folds;
    std::map<std::string, int> fold_of_subject;
    std::shuffle(train_subjects.begin(), train_subjects.end(), rng);
    for (std::size_t i = 0; i < train_subjects.size(); ++i)
        fold_of_subject[train_subjects[i]] = static_cast<int>(i % folds);

    std::sort(test_subjects.begin(), test_subjects.end());
    for (const auto& id : test_subjects)
        for (std::size_t i : by_subject[id]) plan.test_indices.push_back(i);
    std::sort(plan.test_indices.begin(), plan.test_indices.end());

    std::sort(train_subjects.begin(), train_subjects.end());
    for (const auto& id : train_subjects)
        for (std::size_t i : by_subject[id]) plan.train_indices.push_back(i);
    std::sort(plan.train_indices.begin(), plan.train_indices.end());
    plan.fold_of.reserve(plan.train_indices.size());
    for (std::size_t i : plan.train_indices) plan.fold_of.push_back(fold_of_subject[samples[i].subject_id]);
    return plan;
}

Dataset generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
    if (cfg.num_classes < 1 || cfg.num_classes > 3)
        throw ConfigError("generate_synthetic: supports 1 to 3 classes");
    for (std::size_t d : cfg.geometry)
        if (d == 0) throw ConfigError("generate_synthetic: geometry extents must be positive");
    const std::size_t t = cfg.geometry[0], x = cfg.geometry[1], y = cfg.geometry[2], z = cfg.geometry[3];
    if (cfg.sessions_per_subject == 0) throw ConfigError("generate_synthetic: sessions_per_subject must be positive");

    // Modulation frequency sits on a DFT bin inside the analysis band so the
    // planted signal survives bandpass filtering exactly.
    const double fs = 1.0 / cfg.tr_seconds;
    const double target_bin = 0.04 * static_cast<double>(t) * cfg.tr_seconds;  // bin of ~0.04 Hz
    std::size_t bin = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(target_bin)));
    bin = std::min(bin, t / 2 > 0 ? t / 2 : std::size_t{1});
    const double f1 = static_cast<double>(bin) * fs / static_cast<double>(t);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const double half = cfg.drift_voxels / 2.0;
    const std::array<double, 3> base{static_cast<double>(x) / 2.0 - 0.5, static_cast<double>(y) / 2.0 - 0.5,
                                     static_cast<double>(z) / 2.0 - 0.5};
    // The drift runs diagonally in X and Y; static classes draw their fixed
    // center uniformly along the same segment so every frame of every class
    // shows one blob somewhere on that segment.
    const std::array<double, 3> dir{1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0), 0.0};

    Dataset ds;
    ds.geometry = cfg.geometry;
    ds.num_classes = cfg.num_classes;
    const double inv2s2 = 1.0 / (2.0 * cfg.blob_sigma * cfg.blob_sigma);
    const double cutoff2 = 9.0 * cfg.blob_sigma * cfg.blob_sigma;  // truncate the Gaussian at 3 sigma

    std::size_t subject_counter = 0;
    for (std::size_t cl = 0; cl < cfg.num_classes; ++cl) {
        for (std::size_t si = 0; si < cfg.samples_per_class; si += cfg.sessions_per_subject) {
            const std::string subject = "subj" + std::to_string(subject_counter++);
            const std::size_t sessions = std::min(cfg.sessions_per_subject, cfg.samples_per_class - si);
            for (std::size_t se = 0; se < sessions; ++se) {
                SyntheticMeta meta;
                meta.label = static_cast<int>(cl);
                meta.phase = uni(rng) * kTwoPi;
                meta.freq_hz = (cl == 1) ? f1 : 0.0;
                // Every class draws its amplitude from the class-1 per-frame
                // amplitude law so single-frame intensity is uninformative.
                meta.amplitude = cfg.amplitude * (1.0 + cfg.modulation_depth * std::sin(uni(rng) * kTwoPi));
                const double jx = (uni(rng) - 0.5) * 2.0, jy = (uni(rng) - 0.5) * 2.0, jz = (uni(rng) - 0.5) * 2.0;
                const double along = (uni(rng) - 0.5) * cfg.drift_voxels;
                if (cl == 2) {
                    for (int a = 0; a < 3; ++a) {
                        meta.center[a] = base[a] - half * dir[a] + std::array<double, 3>{jx, jy, jz}[a];
                        meta.drift[a] = cfg.drift_voxels * dir[a];
                    }
                } else {
                    for (int a = 0; a < 3; ++a) {
                        meta.center[a] = base[a] + along * dir[a] + std::array<double, 3>{jx, jy, jz}[a];
                        meta.drift[a] = 0.0;
                    }
                }

                Sample s;
                s.label = meta.label;
                s.subject_id = subject;
                s.session_id = subject + "_s" + std::to_string(se);
                s.volume = Tensor<float>(Shape{1, t, x, y, z});
                float* out = s.volume.ptr();
                if (cfg.noise_sigma > 0) {
                    for (std::size_t i = 0; i < s.volume.shape.count(); ++i)
                        out[i] = static_cast<float>(gauss(rng) * cfg.noise_sigma);
                } else {
                    std::fill(out, out + s.volume.shape.count(), 0.0f);
                }
                for (std::size_t ft = 0; ft < t; ++ft) {
                    const auto c = meta.center_at(ft, t);
                    double amp = meta.amplitude;
                    if (cl == 1)
                        amp = cfg.amplitude *
                              (1.0 + cfg.modulation_depth *
                                         std::sin(kTwoPi * f1 * static_cast<double>(ft) * cfg.tr_seconds + meta.phase));
                    float* fr = out + ft * x * y * z;
                    const std::int64_t x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(c[0] - 3 * cfg.blob_sigma));
                    const std::int64_t x1 = std::min<std::int64_t>(static_cast<std::int64_t>(x) - 1,
                                                                   static_cast<std::int64_t>(c[0] + 3 * cfg.blob_sigma) + 1);
                    const std::int64_t y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(c[1] - 3 * cfg.blob_sigma));
                    const std::int64_t y1 = std::min<std::int64_t>(static_cast<std::int64_t>(y) - 1,
                                                                   static_cast<std::int64_t>(c[1] + 3 * cfg.blob_sigma) + 1);
                    const std::int64_t z0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(c[2] - 3 * cfg.blob_sigma));
                    const std::int64_t z1 = std::min<std::int64_t>(static_cast<std::int64_t>(z) - 1,
                                                                   static_cast<std::int64_t>(c[2] + 3 * cfg.blob_sigma) + 1);
                    for (std::int64_t vx = x0; vx <= x1; ++vx)
                        for (std::int64_t vy = y0; vy <= y1; ++vy)
                            for (std::int64_t vz = z0; vz <= z1; ++vz) {
                                const double dx = static_cast<double>(vx) - c[0];
                                const double dy = static_cast<double>(vy) - c[1];
                                const double dz = static_cast<double>(vz) - c[2];
                                const double r2 = dx * dx + dy * dy + dz * dz;
                                if (r2 > cutoff2) continue;
                                fr[(static_cast<std::size_t>(vx) * y + static_cast<std::size_t>(vy)) * z +
                                   static_cast<std::size_t>(vz)] += static_cast<float>(amp * std::exp(-r2 * inv2s2));
                            }
                }
                ds.samples.push_back(std::move(s));
                ds.meta.push_back(meta);
            }
        }
    }
    return ds;
}

}  // namespace t4d
