#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "t4d/models.hpp"
#include "t4d/pipeline.hpp"
#include "t4d/tensor.hpp"
#include "t4d/train.hpp"

namespace t4d {

using nlohmann::json;

// ---- T4D tensor files ----
// Layout: "T4D1" | version u16 LE | dtype u8 (0 = float32 LE) | ndim u8 |
// ndim x u32 LE dims | row-major float32 payload.

std::vector<std::uint8_t> encode_t4d(const Tensor<float>& t);
Tensor<float> decode_t4d(const std::uint8_t* data, std::size_t size);

void write_t4d(const std::string& path, const Tensor<float>& t);
Tensor<float> read_t4d(const std::string& path);

// ---- raw file helpers ----

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::uint8_t* data, std::size_t size);
void write_text_file(const std::string& path, const std::string& text);

// Comma-separated series with a one-line header; one row per index.
void write_series_csv(const std::string& path, const std::vector<std::string>& columns,
                      const std::vector<std::vector<double>>& rows);

// ---- dataset directory (manifest.json + samples/NNNN.t4d) ----

void write_dataset(const std::string& dir, const Dataset& ds, const json& provenance);
Dataset read_dataset(const std::string& dir);
json read_dataset_provenance(const std::string& dir);

// ---- model config / split / report JSON ----

json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const json& j);
json split_to_json(const SplitPlan& plan);
SplitPlan split_from_json(const json& j);
json report_to_json(const EvalReport& r);
std::string report_to_table(const EvalReport& r);

// ---- checkpoints ----
// Layout: "T4DC" | u32 LE header length | JSON header | parameter tensors as
// concatenated T4D blobs in Model::parameters() order.

struct Checkpoint {
    ModelKind kind = ModelKind::a4d;
    ModelConfig config;
    std::unique_ptr<Model<float>> model;
    json header;  // full header, including "split" and "epoch_log" when present
};

void save_checkpoint(const std::string& path, Model<float>& model, const json& extra);
Checkpoint load_checkpoint(const std::string& path);

// Every CLI run drops a manifest with the full configuration and seed.
void write_run_manifest(const std::string& dir, const std::string& command, const json& args);

}  // namespace t4d
