#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "t4d/common.hpp"
#include "t4d/tensor.hpp"

namespace t4d {

// One scan session. The volume is (1, T, X, Y, Z); subject identity governs
// split exclusivity while each session trains as an independent sample.
struct Sample {
    Tensor<float> volume;
    int label = 0;
    std::string subject_id;
    std::string session_id;
};

struct SplitPlan {
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> test_indices;
    std::vector<int> fold_of;  // parallel to train_indices, in [0, folds)
    std::size_t folds = 1;
};

struct PreprocessConfig {
    std::size_t discard_frames = 20;
    double band_low_hz = 0.01;
    double band_high_hz = 0.1;
    double tr_seconds = 3.0;
    double zscore_eps = 1e-8;

    double nyquist_hz() const { return 0.5 / tr_seconds; }
    void validate() const {
        if (tr_seconds <= 0) throw ConfigError("preprocess: tr_seconds must be positive");
        if (!(0 < band_low_hz && band_low_hz < band_high_hz && band_high_hz < nyquist_hz()))
            throw ConfigError("preprocess: need 0 < low < high < Nyquist (" + std::to_string(nyquist_hz()) + " Hz)");
    }
};

// Planted-pattern ground truth carried alongside each synthetic sample.
struct SyntheticMeta {
    int label = 0;
    std::array<double, 3> center{};  // blob center at t=0 (X,Y,Z voxels)
    std::array<double, 3> drift{};   // total displacement over the run (class 2)
    double freq_hz = 0;              // amplitude modulation frequency (class 1)
    double phase = 0;
    double amplitude = 0;

    std::array<double, 3> center_at(std::size_t t, std::size_t steps) const {
        const double u = (steps > 1) ? static_cast<double>(t) / static_cast<double>(steps - 1) : 0.0;
        return {center[0] + u * drift[0], center[1] + u * drift[1], center[2] + u * drift[2]};
    }
};

struct SyntheticConfig {
    std::array<std::size_t, 4> geometry{32, 16, 16, 16};  // (T, X, Y, Z)
    std::size_t num_classes = 3;
    std::size_t samples_per_class = 60;
    double noise_sigma = 0.1;
    double tr_seconds = 3.0;
    double amplitude = 1.0;
    double modulation_depth = 0.6;
    double blob_sigma = 2.0;
    double drift_voxels = 5.0;
    std::size_t sessions_per_subject = 1;
};

struct Dataset {
    std::vector<Sample> samples;
    std::vector<SyntheticMeta> meta;  // empty for non-synthetic data
    std::array<std::size_t, 4> geometry{};
    std::size_t num_classes = 0;
};

// ---- temporal preprocessing (time axis = dims[1] of a rank-5 volume) ----

Tensor<float> discard_initial(const Tensor<float>& volume, std::size_t n);
Tensor<float> bandpass(const Tensor<float>& volume, const PreprocessConfig& cfg);
Tensor<float> zscore_per_voxel(const Tensor<float>& volume, double eps);
Tensor<float> circular_time_shift(const Tensor<float>& volume, std::int64_t offset);

// discard -> bandpass -> zscore.
Tensor<float> preprocess_volume(const Tensor<float>& volume, const PreprocessConfig& cfg);

// DFT bin frequencies retained by the band for a length-T series.
std::vector<std::size_t> bandpass_kept_bins(std::size_t t_extent, const PreprocessConfig& cfg);

// ---- splitting ----

SplitPlan make_splits(const std::vector<Sample>& samples, std::size_t num_classes, std::size_t test_per_class,
                      std::size_t folds, std::uint64_t seed);

// ---- synthetic data ----

Dataset generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed);

}  // namespace t4d
